import numpy as np
import pytest

from monoheight.errors import DivergenceFault, ValidationError
from monoheight.nn import SGD, ModelParams, init_params, load_checkpoint, make_layout, save_checkpoint, sgd_step
from monoheight.nn.params import MAGIC, fans

LAYOUT = make_layout([("dense0.W", (6, 4)), ("dense0.b", (4,)), ("conv0.K", (3, 2, 3, 3)), ("conv0.b", (3,))])


def test_layout_is_contiguous():
    offsets = [(s.offset, s.size) for s in LAYOUT.values()]
    assert offsets == [(0, 24), (24, 4), (28, 54), (82, 3)]
    with pytest.raises(ValidationError):
        ModelParams(np.zeros(10), LAYOUT, 0)


def test_init_is_deterministic_with_zero_biases():
    a, b = init_params(LAYOUT, 7), init_params(LAYOUT, 7)
    assert a.values.tobytes() == b.values.tobytes()
    assert init_params(LAYOUT, 8).values.tobytes() != a.values.tobytes()
    assert np.all(a.view("dense0.b") == 0) and np.all(a.view("conv0.b") == 0)
    assert np.abs(a.view("dense0.W")).max() <= np.sqrt(6 / 10)


def test_slot_init_independent_of_other_slots():
    other = make_layout([("extra.W", (5, 5)), ("dense0.W", (6, 4))])
    np.testing.assert_array_equal(init_params(other, 3).view("dense0.W"), init_params(LAYOUT, 3).view("dense0.W"))


@pytest.mark.parametrize("shape", [(300, 400), (32, 16, 14, 14)])
def test_glorot_variance(shape):
    params = init_params(make_layout([("w", shape)]), 0)
    assert params.values.size >= 1e5
    fan_in, fan_out = fans(params.layout["w"])
    expected = 2.0 / (fan_in + fan_out)
    assert abs(params.values.var() / expected - 1) < 0.10


def test_views_share_the_flat_buffer():
    p = init_params(LAYOUT, 0)
    t = p.tensor("dense0.W")
    t.data[0, 0] = 42.0
    assert p.values[0] == 42.0
    t.grad[1, 1] = 3.0
    assert p.grad[5] == 3.0
    p.zero_grad()
    assert not p.grad.any()


def test_sgd_lr_zero_keeps_params():
    p = init_params(LAYOUT, 0)
    before = p.values.copy()
    p.grad[...] = 1.0
    SGD(p, lr=0.0).step()
    np.testing.assert_array_equal(p.values, before)


def test_sgd_quadratic_recurrence():
    # loss theta^2, lr 0.1, no momentum: theta_{t+1} = 0.8 theta_t
    theta, v = np.array([1.0]), np.zeros(1)
    trajectory = []
    for t in range(200):
        sgd_step(theta, 2 * theta, v, lr=0.1, momentum=0.0)
        trajectory.append(theta[0])
    np.testing.assert_allclose(trajectory[:5], 0.8 ** np.arange(1, 6), rtol=1e-12)
    first_below = next(t for t, x in enumerate(trajectory, 1) if abs(x) < 1e-6)
    assert first_below == 62  # smallest t with 0.8**t < 1e-6
    assert abs(trajectory[-1]) < 1e-6


def test_sgd_momentum_matches_hand_recurrence():
    theta, v = np.array([1.0]), np.zeros(1)
    th, vel = 1.0, 0.0
    for _ in range(20):
        sgd_step(theta, 2 * theta, v, lr=0.05, momentum=0.9)
        vel = 0.9 * vel + 2 * th
        th = th - 0.05 * vel
    assert theta[0] == pytest.approx(th, rel=1e-12)


def test_sgd_trajectory_is_bitwise_reproducible():
    def run():
        p = init_params(LAYOUT, 5)
        opt = SGD(p, lr=0.01)
        for _ in range(10):
            p.grad[...] = np.sin(p.values)
            opt.step()
        return p.values.tobytes()

    assert run() == run()


def test_sgd_non_finite_gradient():
    p = init_params(LAYOUT, 0)
    opt = SGD(p, lr=0.1)
    opt.step()
    p.grad[3] = np.nan
    with pytest.raises(DivergenceFault) as info:
        opt.step()
    assert info.value.step == 2


def test_checkpoint_round_trip_and_bytes(tmp_path):
    p = init_params(LAYOUT, 9)
    meta = {"config_hash": "abc", "kind": "shallow"}
    save_checkpoint(tmp_path / "a.ckpt", p, meta)
    save_checkpoint(tmp_path / "b.ckpt", init_params(LAYOUT, 9), meta)
    raw = (tmp_path / "a.ckpt").read_bytes()
    assert raw == (tmp_path / "b.ckpt").read_bytes()
    assert raw.startswith(MAGIC)
    q, meta2 = load_checkpoint(tmp_path / "a.ckpt")
    assert q.values.tobytes() == p.values.tobytes() and meta2 == meta and q.seed == 9
    assert list(q.layout) == list(p.layout)


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint\n")
    with pytest.raises(ValidationError):
        load_checkpoint(bad)
    p = init_params(LAYOUT, 0)
    save_checkpoint(bad, p, {})
    bad.write_bytes(bad.read_bytes()[:-8])
    with pytest.raises(ValidationError):
        load_checkpoint(bad)

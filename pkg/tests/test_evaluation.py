import csv
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monoheight import evaluation as ev
from monoheight.errors import EmptyInput, SpecError, TooSmall
from monoheight.records import N_JOINTS, AnnotatedExample, Gender
from monoheight.regressors import RegressorSpec, StreamSpec, TrainConfig

errors_st = st.lists(st.floats(-40, 40), min_size=1, max_size=60)


def fake_examples(n, per_subject=1, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        g = (Gender.FEMALE, Gender.MALE, Gender.UNKNOWN)[i % 3]
        out.append(AnnotatedExample(
            f"s{i // per_subject:04d}", f"img{i:05d}", (0, 0, 50, 100), (10, 5, 10, 10),
            rng.normal(size=2 * N_JOINTS), np.ones(N_JOINTS), rng.normal(size=6),
            float(170 + 8 * rng.normal()), g,
        ))
    return out


# --- metrics ----------------------------------------------------------------------------


def test_mae_examples():
    assert ev.mae([170, 180], [170, 180]) == 0.0
    assert ev.mae([170, 180], [172, 176]) == 3.0
    assert ev.mae([180, 170], [176, 172]) == 3.0
    with pytest.raises(EmptyInput):
        ev.mae([], [])


def test_histogram_examples():
    assert ev.cumulative_error_histogram([1, 3, 5], [0, 0, 0], [2, 4, 6]) == [(2.0, 1 / 3), (4.0, 2 / 3), (6.0, 1.0)]
    flat = ev.cumulative_error_histogram([5, 6], [5, 6])
    assert [f for _, f in flat] == [1.0] * 31
    with pytest.raises(SpecError):
        ev.cumulative_error_histogram([1], [0], [2, 1])
    with pytest.raises(SpecError):
        ev.cumulative_error_histogram([9], [0], [1, 2])


@given(errors_st)
def test_histogram_monotone_and_complete(errs):
    curve = ev.cumulative_error_histogram(errs, [0.0] * len(errs))
    fractions = [f for _, f in curve]
    assert all(b >= a for a, b in zip(fractions, fractions[1:]))
    assert fractions[-1] == 1.0 and curve[0][0] == 0.0


@given(st.lists(st.tuples(st.floats(-30, 30), st.sampled_from(list(Gender))), min_size=1, max_size=60))
def test_group_maes_combine_to_overall(rows):
    errs, genders = zip(*rows)
    report = ev.evaluate_predictions(np.array(errs) + 170, np.full(len(errs), 170.0), genders)
    total = sum(n * m for g, (n, m) in report.groups.items() if g != "all" and n)
    assert report.groups["all"][0] == sum(n for g, (n, _) in report.groups.items() if g != "all")
    assert total / report.groups["all"][0] == pytest.approx(report.mae_all, rel=1e-12, abs=1e-12)


def test_report_csv(tmp_path):
    report = ev.evaluate_predictions([170, 180], [172, 176], [Gender.FEMALE, Gender.FEMALE])
    report.write(tmp_path / "r.csv", tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows == [["group", "n", "mae"], ["all", "2", "3.000000"], ["female", "2", "3.000000"],
                    ["male", "0", "nan"], ["unknown", "0", "nan"]]
    hist = list(csv.reader(open(tmp_path / "h.csv")))
    assert hist[0] == ["threshold_cm", "fraction"] and hist[3] == ["2.000000", "0.500000"]


# --- splits -----------------------------------------------------------------------------


def test_largest_remainder():
    assert ev.largest_remainder(100, (0.8, 0.15, 0.05)) == [80, 15, 5]
    assert ev.largest_remainder(7, (0.8, 0.15, 0.05)) == [5, 1, 1]
    assert sum(ev.largest_remainder(101, (0.8, 0.15, 0.05))) == 101


def test_split_by_example_sizes_and_determinism():
    exs = fake_examples(100)
    spec = ev.SplitSpec(mode=ev.SplitMode.BY_EXAMPLE, seed=3)
    split = ev.split_dataset(exs, spec)
    assert [len(split[n]) for n in ("train", "test", "val")] == [80, 15, 5]
    assert ev.split_dataset(exs, spec) == split
    assert ev.split_dataset(exs[::-1], spec) == split
    assert ev.split_dataset(exs, replace(spec, seed=4)) != split
    ev.check_split(split, [e.example_id for e in exs])


@given(st.integers(3, 200), st.integers(1, 5), st.integers(0, 1000), st.sampled_from(list(ev.SplitMode)))
def test_split_partition_properties(n, per_subject, seed, mode):
    exs = fake_examples(n, per_subject)
    n_units = n if mode is ev.SplitMode.BY_EXAMPLE else math.ceil(n / per_subject)
    if n_units < 3:
        with pytest.raises(TooSmall):
            ev.split_dataset(exs, ev.SplitSpec(mode=mode, seed=seed))
        return
    split = ev.split_dataset(exs, ev.SplitSpec(mode=mode, seed=seed))
    ids = [i for name in ev.SPLIT_NAMES for i in split[name]]
    assert sorted(ids) == sorted(e.example_id for e in exs)
    if mode is ev.SplitMode.BY_EXAMPLE:
        assert [len(split[s]) for s in ("train", "test", "val")] == ev.largest_remainder(n, (0.8, 0.15, 0.05))
    owner = {}
    for name in ev.SPLIT_NAMES:
        for i in split[name]:
            sid = i.split("/")[1]
            if mode is ev.SplitMode.BY_SUBJECT:
                assert owner.setdefault(sid, name) == name


def test_split_too_small_and_round_trip():
    with pytest.raises(TooSmall):
        ev.split_dataset(fake_examples(2), ev.SplitSpec(mode=ev.SplitMode.BY_EXAMPLE))
    with pytest.raises(SpecError):
        ev.SplitSpec(fractions=(0.5, 0.3, 0.3))
    split = ev.split_dataset(fake_examples(30))
    assert ev.Split.from_dict(split.to_dict()) == split


def test_select_keeps_id_order():
    exs = fake_examples(10)
    got = ev.select(exs, [exs[7].example_id, exs[2].example_id])
    assert [e.example_id for e in got] == [exs[2].example_id, exs[7].example_id]


# --- experiments ------------------------------------------------------------------------


def _tiny_config():
    mlp = StreamSpec(widths=(8, 8))
    return ev.ExperimentConfig(
        shallow=RegressorSpec("shallow", widths=(16, 16, 16)),
        deep=RegressorSpec("deep", face_stream=mlp, body_stream=mlp, fusion_width=8),
        train=TrainConfig(max_epochs=3),
    )


def test_ablation_grid_smoke(small_examples, tmp_path):
    exs = small_examples[:100]
    split = ev.split_dataset(exs, ev.SplitSpec(mode=ev.SplitMode.BY_EXAMPLE))
    cells = ev.run_ablation_grid(exs, split, _tiny_config())
    assert [(f, a) for f, a, _ in cells] == [(f, a) for f in ("body", "face", "both") for a in ev.ARCHS]
    assert all(math.isfinite(m) for _, _, m in cells)
    ev.write_grid(tmp_path / "grid.csv", cells)
    assert (tmp_path / "grid.csv").read_text().splitlines()[0] == "features,arch,mae"


def test_nested_subsamples():
    ids = [f"x{i}" for i in range(50)]
    a, b, c = ev.nested_subsamples(ids, [5, 20, 50], seed=2)
    assert set(a) <= set(b) <= set(c) and len(set(c)) == 50
    assert ev.nested_subsamples(ids[::-1], [5], seed=2)[0] == a


def test_size_curve_smoke(small_examples, tmp_path):
    split = ev.split_dataset(small_examples)
    curve = ev.dataset_size_curve(small_examples, split, [10], _tiny_config())
    assert [(s, g) for s, g, _ in curve.points] == [(10, "female"), (10, "male")]
    assert set(curve.reference) == {"female", "male"}
    curve.write(tmp_path / "curve.csv")
    assert (tmp_path / "curve.csv").read_text().splitlines()[0] == "size,gender,mae"
    with pytest.raises(SpecError):
        ev.dataset_size_curve(small_examples, split, [20, 10], _tiny_config())
    with pytest.raises(SpecError):
        ev.dataset_size_curve(small_examples, split, [len(split.train) + 1], _tiny_config())


def test_crossover_size():
    curve = ev.SizeCurve(
        [(10, "female", 9.0), (100, "female", 5.0), (1000, "female", 4.0),
         (10, "male", 5.0), (100, "male", 7.0), (1000, "male", 6.5)],
        {"female": 6.0, "male": 6.0},
    )
    assert ev.crossover_size(curve) == {"female": 100, "male": None}

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monoheight.errors import AmbiguousUnit, DescriptorDimMismatch, HeightOutOfRange, ValidationError
from monoheight.records import (
    N_JOINTS,
    AnnotatedExample,
    Detection,
    DetectionSet,
    Gender,
    PoseRecord,
    Subject,
    build_subject_store,
    read_examples,
    read_subjects,
    unit_parse_height,
    validate_subject,
    write_jsonl,
)


def test_validate_subject_accepts_in_range():
    s = validate_subject({"id": "a", "height_cm": 170.1, "descriptor": [0.0] * 8}, d_face=8)
    assert s.height_cm == 170.1
    assert s.gender is Gender.UNKNOWN


def test_validate_subject_rejects_short_height():
    with pytest.raises(HeightOutOfRange):
        validate_subject({"id": "a", "height_cm": 95, "descriptor": [0.0] * 8})


def test_validate_subject_rejects_wrong_descriptor_length():
    with pytest.raises(DescriptorDimMismatch):
        validate_subject({"id": "a", "height_cm": 170, "descriptor": [0.0] * 7}, d_face=8)


def test_validate_subject_rejects_empty_id():
    with pytest.raises(ValidationError):
        validate_subject({"id": "", "height_cm": 170, "descriptor": [0.0]})


def test_validate_subject_parses_text_heights():
    s = validate_subject({"id": "a", "height_cm": "1.78m", "descriptor": [1.0]})
    assert s.height_cm == 178.0


@pytest.mark.parametrize(
    "text, cm",
    [("1.93", 193.0), ("170.1", 170.1), ("1.78m", 178.0), ("178cm", 178.0), ("178", 178.0), (" 1.57 M ", 157.0)],
)
def test_unit_parse_height(text, cm):
    assert unit_parse_height(text) == cm


@pytest.mark.parametrize("text", ["50", "3", "99.9", "tall", "", "1.7ft", "-170"])
def test_unit_parse_height_rejects(text):
    with pytest.raises(AmbiguousUnit):
        unit_parse_height(text)


def test_store_rejects_duplicates_and_mixed_dims():
    a = Subject("a", 170.0, Gender.FEMALE, np.zeros(3))
    with pytest.raises(ValidationError):
        build_subject_store([a, Subject("a", 171.0, Gender.MALE, np.zeros(3))])
    with pytest.raises(DescriptorDimMismatch):
        build_subject_store([a, Subject("b", 171.0, Gender.MALE, np.zeros(4))])


def test_detection_requires_positive_box():
    with pytest.raises(ValidationError):
        Detection((0, 0, 0, 5), [1.0])


def test_pose_confidence_range():
    joints = np.zeros((N_JOINTS, 3))
    joints[0, 2] = 1.5
    with pytest.raises(ValidationError):
        PoseRecord("i", (joints,))


def test_records_are_immutable():
    d = Detection((0, 0, 1, 1), [1.0, 2.0])
    with pytest.raises(ValueError):
        d.descriptor[0] = 5.0


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(
    st.lists(finite, min_size=1, max_size=6),
    st.tuples(finite, finite, st.floats(0.1, 1e3), st.floats(0.1, 1e3)),
    st.booleans(),
)
def test_detection_set_round_trip(desc, bbox, with_features):
    det = Detection(bbox, desc, [1.5, -2.0] if with_features else None)
    ds = DetectionSet("img", (det,), ("a", "b"), (640, 480))
    back = DetectionSet.from_dict(json.loads(json.dumps(ds.to_dict())))
    assert back.to_dict() == ds.to_dict()
    assert back.detections[0].bbox == det.bbox
    np.testing.assert_array_equal(back.detections[0].descriptor, det.descriptor)


@given(st.lists(st.floats(0, 1), min_size=N_JOINTS, max_size=N_JOINTS), finite)
def test_pose_round_trip(conf, shift):
    joints = np.column_stack([np.arange(N_JOINTS) + shift, np.arange(N_JOINTS) * 2.0, conf])
    rec = PoseRecord("i", (joints,))
    back = PoseRecord.from_dict(json.loads(json.dumps(rec.to_dict())))
    np.testing.assert_array_equal(back.persons[0], rec.persons[0])


def test_example_and_subject_files_round_trip(tmp_path, small_examples, small_population):
    path = tmp_path / "ex.jsonl"
    write_jsonl(path, small_examples[:20])
    back = read_examples(path)
    assert [b.to_dict() for b in back] == [e.to_dict() for e in small_examples[:20]]
    spath = tmp_path / "subjects.jsonl"
    write_jsonl(spath, small_population.subjects[:10])
    assert [s.to_dict() for s in read_subjects(spath)] == [s.to_dict() for s in small_population.subjects[:10]]


def test_example_id_and_gender_parsing():
    e = AnnotatedExample("s1", "img1", (0, 0, 10, 40), (0, 0, 5, 5), np.zeros(2 * N_JOINTS), np.ones(N_JOINTS),
                         [1.0], 170.0, "m")
    assert e.example_id == "img1/s1"
    assert e.gender is Gender.MALE

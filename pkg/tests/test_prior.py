"""Co-occurrence prior construction, serialization, and annotation parsing."""

import json

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphprior.prior import (
    Annotations,
    Box,
    ImageRecord,
    PriorMatrix,
    build_prior,
    load_annotations,
    load_prior,
    save_prior,
)

B = Box(0.0, 0.0, 1.0, 1.0)


def ann_from_class_sets(class_sets, num_classes):
    """Images given as bags of class ids, every object on the same unit box."""
    images = [ImageRecord(id=i, objects=[(c, B) for c in bag])
              for i, bag in enumerate(class_sets)]
    cats = [(c, f"c{c}") for c in range(num_classes)]
    return Annotations(images=images, categories=cats)


# ------------------------------------------------------------- hand counts


def test_pair_always_together_has_rate_one():
    ann = ann_from_class_sets([[0, 1], [0, 1], [0, 1]], 3)
    t = build_prior(ann, 3).values
    assert t[0, 1] == 1.0 and t[1, 0] == 1.0


def test_pair_never_together_has_rate_zero():
    ann = ann_from_class_sets([[0], [1], [0], [1]], 2)
    t = build_prior(ann, 2).values
    assert t[0, 1] == 0.0


def test_jaccard_counts_one_joint_of_three():
    # class 0 in images {0, 1}, class 1 in images {1, 2}: joint 1, union 3
    ann = ann_from_class_sets([[0], [0, 1], [1]], 2)
    t = build_prior(ann, 2).values
    npt.assert_allclose(t[0, 1], 1.0 / 3.0)
    npt.assert_allclose(t[1, 0], 1.0 / 3.0)


def test_diagonal_is_repeat_rate():
    # class 0 appears in 3 images, twice in exactly 1 of them
    ann = ann_from_class_sets([[0, 0], [0], [0, 1]], 2)
    t = build_prior(ann, 2).values
    npt.assert_allclose(t[0, 0], 1.0 / 3.0)
    assert t[1, 1] == 0.0


def test_absent_class_keeps_zero_row_without_smoothing():
    ann = ann_from_class_sets([[0, 1], [1]], 3)
    t = build_prior(ann, 3).values
    npt.assert_array_equal(t[2], 0.0)
    npt.assert_array_equal(t[:, 2], 0.0)


def test_smoothing_eps_floors_every_entry():
    ann = ann_from_class_sets([[0, 1], [1]], 3)
    t = build_prior(ann, 3, smoothing_eps=0.05).values
    assert (t >= 0.05).all() and (t <= 1.0).all()
    assert t[0, 1] == 0.5  # observed rates are untouched by the floor


def test_build_prior_rejects_bad_inputs():
    with pytest.raises(ValueError, match="num_classes"):
        build_prior(ann_from_class_sets([], 1), 0)
    ann = Annotations(images=[ImageRecord(id=0, objects=[(5, B)])],
                      categories=[(5, "far")])
    with pytest.raises(ValueError, match=r"category id 5 out of range"):
        build_prior(ann, 2)


# -------------------------------------------------------------- invariance


@settings(deadline=None, max_examples=30)
@given(st.lists(st.lists(st.integers(0, 4), min_size=1, max_size=4),
                min_size=1, max_size=8),
       st.randoms(use_true_random=False))
def test_prior_invariant_to_image_and_object_order(class_sets, rnd):
    base = build_prior(ann_from_class_sets(class_sets, 5), 5).values
    shuffled = [list(bag) for bag in class_sets]
    for bag in shuffled:
        rnd.shuffle(bag)
    rnd.shuffle(shuffled)
    npt.assert_array_equal(build_prior(ann_from_class_sets(shuffled, 5), 5).values,
                           base)


@settings(deadline=None, max_examples=30)
@given(st.lists(st.lists(st.integers(0, 3), min_size=1, max_size=3),
                min_size=1, max_size=6))
def test_prior_invariant_to_duplicating_every_image(class_sets):
    base = build_prior(ann_from_class_sets(class_sets, 4), 4).values
    doubled = build_prior(ann_from_class_sets(class_sets + class_sets, 4), 4).values
    npt.assert_allclose(doubled, base, atol=1e-15)


@settings(deadline=None, max_examples=30)
@given(st.lists(st.lists(st.integers(0, 4), min_size=1, max_size=5),
                min_size=1, max_size=8))
def test_prior_is_symmetric_and_bounded(class_sets):
    t = build_prior(ann_from_class_sets(class_sets, 5), 5).values
    npt.assert_array_equal(t, t.T)
    assert (t >= 0.0).all() and (t <= 1.0).all()


# ------------------------------------------------------------ round trips


def test_prior_round_trip(tmp_path):
    ann = ann_from_class_sets([[0, 1, 1], [0, 2], [1, 2], [2]], 3)
    t = build_prior(ann, 3)
    path = tmp_path / "prior.csv"
    save_prior(t, path)
    npt.assert_allclose(load_prior(path).values, t.values, atol=1e-12)


def test_load_prior_validates_and_names_offending_entry(tmp_path):
    path = tmp_path / "prior.csv"
    path.write_text("0.1,0.2\n0.3,0.1\n")
    with pytest.raises(ValueError, match=r"not symmetric at \(0, 1\)"):
        load_prior(path)
    path.write_text("0.1,1.5\n1.5,0.1\n")
    with pytest.raises(ValueError, match=r"out of \[0, 1\] at \(0, 1\)"):
        load_prior(path)
    path.write_text("0.1,0.2,0.2\n0.2,0.1,0.3\n")
    with pytest.raises(ValueError, match="square"):
        load_prior(path)


# ------------------------------------------------------- annotation parsing


def coco_doc():
    return {
        "images": [{"id": 0}, {"id": 1}],
        "annotations": [
            {"image_id": 0, "category_id": 0, "bbox": [0, 0, 10, 10]},
            {"image_id": 0, "category_id": 1, "bbox": [5, 5, 4, 4]},
            {"image_id": 1, "category_id": 1, "bbox": [1, 1, 2, 2]},
        ],
        "categories": [{"id": 0, "name": "cat"}, {"id": 1, "name": "dog"}],
    }


def write_json(tmp_path, doc, name="ann.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_load_annotations_parses_boxes_as_xywh(tmp_path):
    ann = load_annotations(write_json(tmp_path, coco_doc()))
    assert [img.id for img in ann.images] == [0, 1]
    assert ann.categories == [(0, "cat"), (1, "dog")]
    cid, box = ann.images[0].objects[0]
    assert cid == 0
    assert (box.x_min, box.y_min, box.x_max, box.y_max) == (0.0, 0.0, 10.0, 10.0)


def test_load_annotations_then_build_prior(tmp_path):
    ann = load_annotations(write_json(tmp_path, coco_doc()))
    t = build_prior(ann, 2).values
    # classes co-occur in image 0 only; class 1 appears in both images
    npt.assert_allclose(t[0, 1], 0.5)
    assert t[1, 1] == 0.0


def test_load_annotations_error_cases(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.json"):
        load_annotations(tmp_path / "missing.json")

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError, match="not valid JSON"):
        load_annotations(bad)

    doc = coco_doc()
    del doc["categories"]
    with pytest.raises(ValueError, match="'categories'"):
        load_annotations(write_json(tmp_path, doc))

    doc = coco_doc()
    doc["annotations"][0]["image_id"] = 99
    with pytest.raises(ValueError, match="unknown image id 99"):
        load_annotations(write_json(tmp_path, doc))

    doc = coco_doc()
    doc["annotations"][0]["bbox"] = [0, 0, -1, 5]
    with pytest.raises(ValueError, match="non-positive bbox"):
        load_annotations(write_json(tmp_path, doc))

    doc = coco_doc()
    doc["images"].append({"id": 0})
    with pytest.raises(ValueError, match="duplicate image id 0"):
        load_annotations(write_json(tmp_path, doc))


# -------------------------------------------------------------- structures


def test_box_validates_extent():
    with pytest.raises(ValueError, match="degenerate box"):
        Box(0.0, 0.0, 0.0, 1.0)
    assert Box(0.0, 0.0, 2.0, 3.0).area == 6.0


def test_annotations_reject_unknown_category_reference():
    with pytest.raises(ValueError, match="unknown category id 7"):
        Annotations(images=[ImageRecord(id=0, objects=[(7, B)])],
                    categories=[(0, "only")])


def test_prior_matrix_validates_on_construction():
    with pytest.raises(ValueError, match="square"):
        PriorMatrix(values=np.zeros((2, 3)))
    with pytest.raises(ValueError, match=r"out of \[0, 1\]"):
        PriorMatrix(values=np.array([[0.0, 2.0], [2.0, 0.0]]))
    ok = PriorMatrix(values=np.array([[0.5, 0.1], [0.1, 0.0]]))
    assert ok.num_classes == 2

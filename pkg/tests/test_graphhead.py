"""Probabilistic edge graphs: expectation edges, IoU matching, oracle edges."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphprior.graphhead import (
    SceneGraph,
    build_edges,
    build_oracle_edges,
    check_class_probs,
    connected_subset,
    iou,
    match_proposals,
)
from graphprior.prior import Box, PriorMatrix
from graphprior.tensorcore import Rng, softmax_rows


def prior3():
    return PriorMatrix(values=np.array([[0.2, 0.5, 0.0],
                                        [0.5, 0.1, 0.4],
                                        [0.0, 0.4, 0.3]]))


def one_hot(classes, num_classes):
    p = np.zeros((len(classes), num_classes))
    p[np.arange(len(classes)), classes] = 1.0
    return p


def random_probs(rng, n, c):
    return softmax_rows(rng.normal(n, c))


# ------------------------------------------------------------- build_edges


def test_one_hot_rows_reduce_to_table_lookup():
    t = prior3()
    classes = [2, 0, 1, 0]
    e = build_edges(one_hot(classes, 3), t)
    expect = t.values[np.ix_(classes, classes)]
    npt.assert_array_equal(e, expect)


def test_uniform_rows_give_mean_of_prior():
    t = prior3()
    p = np.full((2, 3), 1.0 / 3.0)
    e = build_edges(p, t)
    npt.assert_allclose(e, t.values.mean(), atol=1e-15)


def test_identity_prior_distinct_one_hots_have_zero_off_diagonal():
    t = PriorMatrix(values=np.eye(3))
    e = build_edges(one_hot([0, 1, 2], 3), t)
    npt.assert_array_equal(e, np.eye(3))


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_edges_symmetric_and_bounded_by_prior_max(seed):
    rng = Rng(seed)
    t = prior3()
    e = build_edges(random_probs(rng, 5, 3), t)
    npt.assert_allclose(e, e.T, atol=1e-12)
    assert (e >= 0.0).all()
    assert (e <= t.values.max() + 1e-12).all()


def test_edges_equivariant_under_node_permutation():
    rng = Rng(3)
    p = random_probs(rng, 6, 3)
    e = build_edges(p, prior3())
    perm = [4, 0, 5, 2, 1, 3]
    e_perm = build_edges(p[perm], prior3())
    npt.assert_allclose(e_perm, e[np.ix_(perm, perm)], atol=1e-15)


def test_check_class_probs_rejects_bad_rows():
    with pytest.raises(ValueError, match="row 1 sums to"):
        check_class_probs("p", [[0.5, 0.5], [0.9, 0.2]])
    with pytest.raises(ValueError, match=r"outside \[0, 1\]"):
        check_class_probs("p", [[1.2, -0.2]])
    with pytest.raises(ValueError, match="expected 3 cols"):
        check_class_probs("p", [[0.5, 0.5]], num_classes=3)


# --------------------------------------------------------------------- IoU


def test_iou_half_overlapping_unit_squares():
    a = Box(0.0, 0.0, 1.0, 1.0)
    b = Box(0.5, 0.0, 1.5, 1.0)
    npt.assert_allclose(iou(a, b), 1.0 / 3.0)


def test_iou_identity_and_disjoint():
    a = Box(0.0, 0.0, 2.0, 2.0)
    assert iou(a, a) == 1.0
    assert iou(a, Box(5.0, 5.0, 6.0, 6.0)) == 0.0
    # touching edges have zero intersection area
    assert iou(a, Box(2.0, 0.0, 3.0, 2.0)) == 0.0


def test_iou_is_symmetric():
    a = Box(0.0, 0.0, 4.0, 2.0)
    b = Box(1.0, 1.0, 3.0, 5.0)
    assert iou(a, b) == iou(b, a)


# ---------------------------------------------------------------- matching


def test_match_proposals_threshold_and_best_target():
    gt = [Box(0.0, 0.0, 10.0, 10.0), Box(20.0, 20.0, 30.0, 30.0)]
    props = [Box(1.0, 1.0, 11.0, 11.0),    # strong overlap with gt 0
             Box(21.0, 19.0, 31.0, 29.0),  # strong overlap with gt 1
             Box(50.0, 50.0, 60.0, 60.0)]  # matches nothing
    assert match_proposals(props, gt) == [0, 1, None]


def test_match_proposals_respects_custom_threshold():
    gt = [Box(0.0, 0.0, 1.0, 1.0)]
    half = [Box(0.5, 0.0, 1.5, 1.0)]  # IoU exactly 1/3
    assert match_proposals(half, gt, iou_thresh=0.5) == [None]
    assert match_proposals(half, gt, iou_thresh=1.0 / 3.0) == [0]


# ------------------------------------------------------------ oracle edges


def test_oracle_edges_zero_rows_for_unmatched_proposals():
    t = prior3()
    gt = [(0, Box(0.0, 0.0, 10.0, 10.0)), (1, Box(20.0, 20.0, 30.0, 30.0))]
    props = [Box(0.0, 0.0, 10.0, 10.0),
             Box(20.0, 20.0, 30.0, 30.0),
             Box(50.0, 50.0, 60.0, 60.0)]
    e = build_oracle_edges(props, gt, t)
    npt.assert_array_equal(e[2], 0.0)
    npt.assert_array_equal(e[:, 2], 0.0)
    assert e[0, 1] == t.values[0, 1]
    assert e[0, 0] == t.values[0, 0]


def test_oracle_edges_equal_one_hot_build_when_all_matched():
    t = prior3()
    gt = [(2, Box(0.0, 0.0, 10.0, 10.0)), (0, Box(20.0, 20.0, 30.0, 30.0)),
          (1, Box(40.0, 0.0, 50.0, 10.0))]
    props = [box for _c, box in gt]
    oracle = build_oracle_edges(props, gt, t)
    lookup = build_edges(one_hot([2, 0, 1], 3), t)
    npt.assert_array_equal(oracle, lookup)


def test_oracle_edges_validate_class_ids():
    with pytest.raises(ValueError, match="class id 9 out of range"):
        build_oracle_edges([Box(0, 0, 1, 1)], [(9, Box(0, 0, 1, 1))], prior3())


# --------------------------------------------------------- connected subset


def test_connected_subset_keeps_components_with_mass():
    e = np.array([[0.0, 1.0, 0.0],
                  [1.0, 0.0, 0.0],
                  [0.0, 0.0, 0.0]])
    assert connected_subset([0, 1, 2], e) == [0, 1]


def test_connected_subset_cascades_row_removal():
    # node 2 hangs off node 3 only; dropping 3 (all-zero) kills 2 as well
    e = np.zeros((4, 4))
    e[0, 1] = e[1, 0] = 1.0
    e[2, 3] = 1.0  # asymmetric on purpose: row 3 has no mass
    assert connected_subset([0, 1, 2, 3], e) == [0, 1]


def test_connected_subset_empty_cases():
    assert connected_subset([], np.zeros((0, 0))) == []
    assert connected_subset([0, 1], np.zeros((2, 2))) == []


def test_connected_subset_self_loop_counts_as_mass():
    e = np.diag([0.5, 0.0])
    assert connected_subset([0, 1], e) == [0]


# ------------------------------------------------------------- scene graph


def test_scene_graph_validates_edge_shape():
    with pytest.raises(ValueError, match="graph edges"):
        SceneGraph(nodes=np.ones((3, 2)), edges=np.ones((2, 2)))
    g = SceneGraph(nodes=np.ones((3, 2)), edges=np.ones((3, 3)))
    assert g.num_nodes == 3

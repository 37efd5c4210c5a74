"""Doubly stochastic graph attention: forward contracts, Sinkhorn, gradients.

The recomputation oracle here rebuilds the whole forward pass from raw numpy
(including its own normalization loop) so it shares no code with the module
under test.
"""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphprior.graphhead import SceneGraph
from graphprior.messagepassing import (
    SCORE_CLAMP,
    MPLayerParams,
    MPParams,
    attention_scores,
    init_mp_params,
    mp_layer,
    propagate,
    propagate_grad,
    sinkhorn_ds,
)
from graphprior.tensorcore import Rng, finite_diff_grad


def rand_layer(rng, d_in, d_out, slope=0.2):
    return MPLayerParams(w=rng.normal(d_in, d_out) * 0.3,
                         attn=rng.normal(2 * d_out) * 0.3,
                         leaky_slope=slope)


def rand_graph(rng, n, d):
    edges = rng.uniform(n, n) + 0.1
    edges = 0.5 * (edges + edges.T)
    return SceneGraph(nodes=rng.normal(n, d), edges=edges)


# ------------------------------------------------------ recomputation oracle


def oracle_sinkhorn(m, iters, tol):
    x = np.array(m, dtype=np.float64)
    for _ in range(iters):
        x = x / x.sum(axis=1, keepdims=True)
        x = x / x.sum(axis=0, keepdims=True)
        if np.abs(x.sum(axis=1) - 1.0).max() <= tol:
            break
    return x


def oracle_layer(f, e, layer, iters, tol, with_residual):
    z = np.asarray(f) @ layer.w
    d = layer.out_dim
    s = (z @ layer.attn[:d])[:, None] + (z @ layer.attn[d:])[None, :]
    l = np.where(s >= 0.0, s, layer.leaky_slope * s)
    ahat = np.exp(np.clip(l, -SCORE_CLAMP, SCORE_CLAMP)) * e
    alpha = oracle_sinkhorn(ahat, iters, tol)
    pre = alpha @ z + (f if with_residual else 0.0)
    return 1.0 / (1.0 + np.exp(-pre)), alpha


def oracle_propagate(g, params):
    f, e = g.nodes, g.edges
    for i, layer in enumerate(params.layers):
        with_residual = i > 0 and layer.in_dim == layer.out_dim
        f, e = oracle_layer(f, e, layer, params.ds_iters, params.ds_tol, with_residual)
    return np.concatenate([g.nodes, f], axis=1)


# ---------------------------------------------------------------- attention


def test_attention_zero_edges_gate_everything_off():
    rng = Rng(0)
    layer = rand_layer(rng, 4, 3)
    ahat = attention_scores(rng.normal(5, 4), np.zeros((5, 5)), layer)
    npt.assert_array_equal(ahat, 0.0)


def test_attention_zero_vector_passes_edges_through():
    rng = Rng(1)
    layer = MPLayerParams(w=rng.normal(4, 3), attn=np.zeros(6))
    e = rng.uniform(5, 5)
    npt.assert_array_equal(attention_scores(rng.normal(5, 4), e, layer), e)


def test_attention_identical_features_scale_edges_by_one_constant():
    rng = Rng(2)
    layer = rand_layer(rng, 4, 3)
    f = np.tile(rng.normal(1, 4), (6, 1))
    e = rng.uniform(6, 6) + 0.05
    ahat = attention_scores(f, e, layer)
    ratio = ahat / e
    npt.assert_allclose(ratio, ratio[0, 0], rtol=1e-12)


def test_attention_saturates_at_score_clamp():
    layer = MPLayerParams(w=np.full((1, 1), 100.0), attn=np.array([100.0, 100.0]))
    e = np.array([[1.0]])
    ahat = attention_scores(np.array([[1.0]]), e, layer)
    npt.assert_allclose(ahat, np.exp(SCORE_CLAMP))
    # deeper into the cap changes nothing
    layer2 = MPLayerParams(w=np.full((1, 1), 200.0), attn=np.array([100.0, 100.0]))
    npt.assert_array_equal(attention_scores(np.array([[1.0]]), e, layer2), ahat)


# ----------------------------------------------------------------- sinkhorn


def test_sinkhorn_constant_matrix_goes_uniform():
    out = sinkhorn_ds(np.ones((2, 2)))
    npt.assert_array_equal(out, np.full((2, 2), 0.5))


def test_sinkhorn_permutation_matrix_is_fixed_point():
    p = np.eye(4)[[2, 0, 3, 1]]
    npt.assert_array_equal(sinkhorn_ds(p), p)


def test_sinkhorn_hand_case_converges_within_default_iters():
    out = sinkhorn_ds(np.array([[1.0, 2.0], [3.0, 4.0]]))
    npt.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
    npt.assert_allclose(out.sum(axis=0), 1.0, atol=1e-6)


@settings(deadline=None, max_examples=60)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_sinkhorn_row_and_col_sums(seed, n):
    # near-zero entries converge slowly; grant iterations, judge the sums
    m = Rng(seed).uniform(n, n) + 1e-3
    out = sinkhorn_ds(m, iters=5000)
    npt.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
    npt.assert_allclose(out.sum(axis=0), 1.0, atol=1e-6)
    assert (out >= 0.0).all()


def test_sinkhorn_rejects_zero_rows_cols_negatives_and_non_square():
    m = np.array([[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ValueError, match="row 1 is all zero"):
        sinkhorn_ds(m)
    with pytest.raises(ValueError, match="column 1 is all zero"):
        sinkhorn_ds(m.T)
    with pytest.raises(ValueError, match=r"negative entry at \(0, 1\)"):
        sinkhorn_ds(np.array([[1.0, -1.0], [1.0, 1.0]]))
    with pytest.raises(ValueError, match="square"):
        sinkhorn_ds(np.ones((2, 3)))


def test_sinkhorn_matches_oracle_loop():
    m = Rng(7).uniform(5, 5) + 0.01
    npt.assert_allclose(sinkhorn_ds(m, iters=40, tol=1e-9),
                        oracle_sinkhorn(m, 40, 1e-9), atol=1e-13)


# ----------------------------------------------------------------- mp_layer


def test_mp_layer_single_node_is_plain_transform():
    rng = Rng(3)
    layer = rand_layer(rng, 4, 3)
    f = rng.normal(1, 4)
    f_out, e_out = mp_layer(f, np.array([[0.7]]), layer)
    npt.assert_allclose(f_out, 1.0 / (1.0 + np.exp(-(f @ layer.w))), atol=1e-12)
    npt.assert_array_equal(e_out, np.array([[1.0]]))


def test_mp_layer_zero_parameters_output_half():
    rng = Rng(4)
    layer = MPLayerParams(w=np.zeros((4, 3)), attn=np.zeros(6))
    f_out, e_out = mp_layer(rng.normal(5, 4), rng.uniform(5, 5) + 0.1, layer)
    npt.assert_array_equal(f_out, np.full((5, 3), 0.5))
    npt.assert_allclose(e_out.sum(axis=1), 1.0, atol=1e-6)


def test_mp_layer_output_strictly_inside_unit_interval():
    rng = Rng(5)
    layer = rand_layer(rng, 4, 4)
    f_out, _ = mp_layer(rng.normal(6, 4) * 3.0, rng.uniform(6, 6) + 0.1, layer)
    assert ((f_out > 0.0) & (f_out < 1.0)).all()


# ---------------------------------------------------------------- propagate


def test_propagate_matches_recomputation_oracle():
    rng = Rng(6)
    params = MPParams(layers=[rand_layer(rng, 4, 3), rand_layer(rng, 3, 3)],
                      ds_iters=25, ds_tol=1e-9)
    g = rand_graph(rng, 5, 4)
    npt.assert_allclose(propagate(g, params), oracle_propagate(g, params), atol=1e-12)


def test_propagate_concatenates_original_features():
    rng = Rng(7)
    params = MPParams(layers=[rand_layer(rng, 4, 2)])
    g = rand_graph(rng, 3, 4)
    out = propagate(g, params)
    assert out.shape == (3, 4 + 2)
    npt.assert_array_equal(out[:, :4], g.nodes)
    assert ((out[:, 4:] > 0.0) & (out[:, 4:] < 1.0)).all()


def test_propagate_golden_values_regression():
    # frozen from the recomputation oracle; guards the numeric path end to end
    rng = Rng(20)
    params = MPParams(layers=[rand_layer(rng, 2, 2), rand_layer(rng, 2, 2)],
                      ds_iters=30, ds_tol=1e-12)
    g = rand_graph(rng, 2, 2)
    expected = np.array([
        [0.7605829737259787, 0.4043907147771622, 0.6496953757427413, 0.5543066474841588],
        [-0.7496819708850113, -0.7835885973727027, 0.651403418273654, 0.5557499863664318],
    ])
    out = propagate(g, params)
    npt.assert_allclose(out, expected, atol=1e-12)
    npt.assert_allclose(out, oracle_propagate(g, params), atol=1e-12)


def test_propagate_equivariant_under_node_permutation():
    rng = Rng(8)
    params = MPParams(layers=[rand_layer(rng, 4, 3), rand_layer(rng, 3, 3)],
                      ds_iters=30, ds_tol=0.0)
    g = rand_graph(rng, 6, 4)
    perm = [3, 0, 5, 1, 4, 2]
    gp = SceneGraph(nodes=g.nodes[perm].copy(),
                    edges=g.edges[np.ix_(perm, perm)].copy())
    npt.assert_allclose(propagate(gp, params), propagate(g, params)[perm], atol=1e-11)


def test_propagate_validates_feature_dim():
    rng = Rng(9)
    params = MPParams(layers=[rand_layer(rng, 4, 3)])
    with pytest.raises(ValueError, match="node dim 3 != first layer input 4"):
        propagate(rand_graph(rng, 5, 3), params)


# ---------------------------------------------------------------- gradients


def graph_scalar(params, nodes, edges, upstream):
    out = propagate(SceneGraph(nodes=nodes, edges=edges), params)
    return float((out * upstream).sum())


def test_propagate_grad_nodes_and_edges_match_finite_differences():
    rng = Rng(10)
    params = MPParams(layers=[rand_layer(rng, 3, 2), rand_layer(rng, 2, 2)],
                      ds_iters=12, ds_tol=0.0)
    g = rand_graph(rng, 4, 3)
    upstream = rng.normal(4, 3 + 2)
    d_nodes, d_edges, _ = propagate_grad(g, params, upstream)
    fd_nodes = finite_diff_grad(lambda x: graph_scalar(params, x, g.edges, upstream),
                                g.nodes)
    fd_edges = finite_diff_grad(lambda x: graph_scalar(params, g.nodes, x, upstream),
                                g.edges)
    npt.assert_allclose(d_nodes, fd_nodes, atol=1e-7)
    npt.assert_allclose(d_edges, fd_edges, atol=1e-7)


def test_propagate_grad_params_match_finite_differences():
    rng = Rng(11)
    params = MPParams(layers=[rand_layer(rng, 3, 2), rand_layer(rng, 2, 2)],
                      ds_iters=12, ds_tol=0.0)
    g = rand_graph(rng, 4, 3)
    upstream = rng.normal(4, 5)
    _, _, grads = propagate_grad(g, params, upstream)
    for i, layer in enumerate(params.layers):
        def f_w(x, i=i):
            saved = params.layers[i].w
            params.layers[i].w = x
            try:
                return graph_scalar(params, g.nodes, g.edges, upstream)
            finally:
                params.layers[i].w = saved
        fd_w = finite_diff_grad(f_w, layer.w)
        npt.assert_allclose(grads[f"layer{i}.w"], fd_w, atol=1e-7)

        def f_a(x, i=i):
            saved = params.layers[i].attn
            params.layers[i].attn = x
            try:
                return graph_scalar(params, g.nodes, g.edges, upstream)
            finally:
                params.layers[i].attn = saved
        fd_a = finite_diff_grad(f_a, layer.attn)
        npt.assert_allclose(grads[f"layer{i}.attn"], fd_a, atol=1e-7)


def test_propagate_grad_handles_exactly_zero_edges():
    # the gate is a product, so a zero edge still carries gradient
    rng = Rng(12)
    params = MPParams(layers=[rand_layer(rng, 3, 2)], ds_iters=12, ds_tol=0.0)
    g = rand_graph(rng, 4, 3)
    g.edges[0, 2] = 0.0
    g.edges[2, 0] = 0.0
    upstream = rng.normal(4, 5)
    _, d_edges, _ = propagate_grad(g, params, upstream)
    fd_edges = finite_diff_grad(lambda x: graph_scalar(params, g.nodes, x, upstream),
                                g.edges)
    npt.assert_allclose(d_edges, fd_edges, atol=1e-7)
    assert abs(d_edges[0, 2]) > 0.0


# --------------------------------------------------------------------- init


def test_init_mp_params_shapes_bounds_and_determinism():
    params = init_mp_params([5, 4, 4], Rng(13))
    assert [(l.in_dim, l.out_dim) for l in params.layers] == [(5, 4), (4, 4)]
    for layer in params.layers:
        bound_w = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        assert (np.abs(layer.w) <= bound_w).all()
        bound_a = np.sqrt(6.0 / (2 * layer.out_dim + 1))
        assert (np.abs(layer.attn) <= bound_a).all()
    again = init_mp_params([5, 4, 4], Rng(13))
    for a, b in zip(params.named_arrays(), again.named_arrays()):
        npt.assert_array_equal(a[1], b[1])


def test_param_validation():
    with pytest.raises(ValueError, match="at least one layer"):
        MPParams(layers=[])
    rng = Rng(14)
    with pytest.raises(ValueError, match="layer dim mismatch: 3 feeds 4"):
        MPParams(layers=[rand_layer(rng, 5, 3), rand_layer(rng, 4, 2)])
    with pytest.raises(ValueError, match="attn"):
        MPLayerParams(w=np.ones((3, 2)), attn=np.ones(3))
    with pytest.raises(ValueError, match="layer_dims"):
        init_mp_params([4], rng)

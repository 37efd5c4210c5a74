"""Graph-attention message passing with doubly stochastic attention.

One layer computes

    z        = f @ w                                   (shared transform)
    s_ij     = leaky_relu(a1 . z_i + a2 . z_j)         (attn = [a1 | a2])
    ahat_ij  = exp(min(s_ij, 30)) * e_ij               (edge-gated scores)
    alpha    = sinkhorn(ahat)                          (doubly stochastic)
    f_out    = sigmoid(alpha @ z + residual)           (residual on layers > 1
                                                        when dims match)
    e_out    = alpha

and propagate() stacks layers, threading e_out into the next layer's gate and
returning [original features | final enhanced features]. The backward pass is
hand-derived; Sinkhorn is differentiated by unrolling exactly the
normalization steps that executed in the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphhead import SceneGraph
from .tensorcore import as_matrix, as_vector, sigmoid

__all__ = [
    "SCORE_CLAMP",
    "MPLayerParams",
    "MPParams",
    "attention_scores",
    "sinkhorn_ds",
    "mp_layer",
    "propagate",
    "propagate_forward",
    "propagate_backward",
    "propagate_grad",
    "init_mp_params",
]

# Exponent cap for attention scores, applied at both ends: the upper cap
# prevents overflow, the lower one keeps exp from underflowing a connected
# row to exact zero (Langevin-refined nodes can push scores arbitrarily far).
# Treated as a hard stop in the backward pass: entries at either cap
# contribute zero gradient.
SCORE_CLAMP = 30.0


@dataclass
class MPLayerParams:
    """One layer: transform w (d_in x d_out) and attention vector (2 * d_out)."""

    w: np.ndarray
    attn: np.ndarray
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.w = as_matrix("layer w", self.w)
        self.attn = as_vector("layer attn", self.attn, size=2 * self.w.shape[1])
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]


@dataclass
class MPParams:
    layers: list[MPLayerParams] = field(default_factory=list)
    ds_iters: int = 50
    ds_tol: float = 1e-6

    def __post_init__(self):
        if not self.layers:
            raise ValueError("MPParams needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dim mismatch: {prev.out_dim} feeds {nxt.in_dim}"
                )
        if self.ds_iters < 1:
            raise ValueError(f"ds_iters must be >= 1, got {self.ds_iters}")
        if self.ds_tol < 0.0:
            raise ValueError(f"ds_tol must be >= 0, got {self.ds_tol}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"layer{i}.w", layer.w))
            out.append((f"layer{i}.attn", layer.attn))
        return out


def attention_scores(f, e, layer: MPLayerParams) -> np.ndarray:
    """Edge-gated exponentiated attention scores (pre-normalization)."""
    ahat, _cache = _attention_forward(
        as_matrix("attention features", f, cols=layer.in_dim),
        as_matrix("attention edges", e),
        layer,
    )
    return ahat


def _attention_forward(f: np.ndarray, e: np.ndarray, layer: MPLayerParams):
    z = f @ layer.w
    a1 = layer.attn[: layer.out_dim]
    a2 = layer.attn[layer.out_dim:]
    row = z @ a1
    col = z @ a2
    s = row[:, None] + col[None, :]
    l = np.where(s >= 0.0, s, layer.leaky_slope * s)
    exp_lc = np.exp(np.clip(l, -SCORE_CLAMP, SCORE_CLAMP))
    ahat = exp_lc * e
    cache = {"f": f, "e": e, "z": z, "s": s, "l": l, "exp_lc": exp_lc}
    return ahat, cache


def _attention_backward(cache, layer: MPLayerParams, dahat: np.ndarray):
    """Grads through ahat = exp(clamp(leaky(s))) * e; returns (dz, de, dattn)."""
    e = cache["e"]
    z = cache["z"]
    exp_lc = cache["exp_lc"]
    de = dahat * exp_lc
    dl = dahat * e * exp_lc
    dl = np.where(np.abs(cache["l"]) <= SCORE_CLAMP, dl, 0.0)  # hard stop at the caps
    ds = dl * np.where(cache["s"] >= 0.0, 1.0, layer.leaky_slope)
    drow = ds.sum(axis=1)
    dcol = ds.sum(axis=0)
    a1 = layer.attn[: layer.out_dim]
    a2 = layer.attn[layer.out_dim:]
    dz = np.outer(drow, a1) + np.outer(dcol, a2)
    dattn = np.concatenate([z.T @ drow, z.T @ dcol])
    return dz, de, dattn


def sinkhorn_ds(m, iters: int = 50, tol: float = 1e-6) -> np.ndarray:
    """Project a nonnegative matrix toward the doubly stochastic set.

    Alternates row and column normalization until the worst row/column sum
    deviates from 1 by at most tol, or iters full passes ran. Errors on
    negative entries and on any all-zero row or column.
    """
    m = as_matrix("sinkhorn input", m)
    if (m < 0.0).any():
        i, j = np.argwhere(m < 0.0)[0]
        raise ValueError(f"sinkhorn input has negative entry at ({i}, {j}): {m[i, j]}")
    out, _tape = _sinkhorn_forward(m, iters, tol)
    return out


def _sinkhorn_forward(m: np.ndarray, iters: int, tol: float):
    """Row/col normalization with a tape of executed steps for the backward.

    Entry signs are not checked here: attention gating guarantees
    nonnegativity in real use, and the gradient oracle needs to wiggle
    exactly-zero edges. Zero rows/columns are still rejected (the graph is
    disconnected under a zero prior).
    """
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"sinkhorn input must be square, got shape {m.shape}")
    rows = m.sum(axis=1)
    cols = m.sum(axis=0)
    if (rows == 0.0).any():
        raise ValueError(
            f"sinkhorn: row {int(np.argmax(rows == 0.0))} is all zero "
            "(graph disconnected under zero prior)"
        )
    if (cols == 0.0).any():
        raise ValueError(
            f"sinkhorn: column {int(np.argmax(cols == 0.0))} is all zero "
            "(graph disconnected under zero prior)"
        )
    x = m.copy()
    tape: list[tuple[str, np.ndarray]] = []
    for _ in range(iters):
        tape.append(("row", x))
        x = x / x.sum(axis=1, keepdims=True)
        tape.append(("col", x))
        x = x / x.sum(axis=0, keepdims=True)
        # column sums are exactly 1 here; convergence rides on the row sums
        if np.abs(x.sum(axis=1) - 1.0).max() <= tol:
            break
    return x, tape


def _sinkhorn_backward(grad: np.ndarray, tape) -> np.ndarray:
    """Reverse the executed normalization steps.

    For row normalization x' = x / r with r the row sums:
    dx = (g - rowsum(g * x')) / r, and symmetrically for columns.
    """
    g = grad
    for axis, before in reversed(tape):
        if axis == "row":
            r = before.sum(axis=1, keepdims=True)
            after = before / r
            g = (g - (g * after).sum(axis=1, keepdims=True)) / r
        else:
            c = before.sum(axis=0, keepdims=True)
            after = before / c
            g = (g - (g * after).sum(axis=0, keepdims=True)) / c
    return g


def _layer_forward(f: np.ndarray, e: np.ndarray, layer: MPLayerParams,
                   ds_iters: int, ds_tol: float, with_residual: bool):
    ahat, attn_cache = _attention_forward(f, e, layer)
    alpha, tape = _sinkhorn_forward(ahat, ds_iters, ds_tol)
    pre = alpha @ attn_cache["z"]
    if with_residual:
        pre = pre + f
    f_out = sigmoid(pre)
    cache = {
        "attn": attn_cache,
        "tape": tape,
        "alpha": alpha,
        "f_out": f_out,
        "with_residual": with_residual,
    }
    return f_out, alpha, cache


def _layer_backward(cache, layer: MPLayerParams, df_out: np.ndarray, de_out: np.ndarray):
    attn_cache = cache["attn"]
    z = attn_cache["z"]
    alpha = cache["alpha"]
    f_out = cache["f_out"]

    dpre = df_out * f_out * (1.0 - f_out)
    dalpha = dpre @ z.T + de_out
    dz = alpha.T @ dpre
    dahat = _sinkhorn_backward(dalpha, cache["tape"])
    dz_attn, de_in, dattn = _attention_backward(attn_cache, layer, dahat)
    dz = dz + dz_attn
    dw = attn_cache["f"].T @ dz
    df_in = dz @ layer.w.T
    if cache["with_residual"]:
        df_in = df_in + dpre
    return df_in, de_in, dw, dattn


def mp_layer(f, e, layer: MPLayerParams, ds_iters: int = 50, ds_tol: float = 1e-6):
    """Single message-passing layer; returns (f_out, e_out)."""
    f = as_matrix("mp_layer features", f, cols=layer.in_dim)
    e = as_matrix("mp_layer edges", e, rows=f.shape[0], cols=f.shape[0])
    f_out, e_out, _cache = _layer_forward(f, e, layer, ds_iters, ds_tol, with_residual=False)
    return f_out, e_out


def propagate_forward(g: SceneGraph, params: MPParams):
    """Run all layers; returns ([original | enhanced], per-layer caches)."""
    if g.nodes.shape[1] != params.in_dim:
        raise ValueError(
            f"propagate: node dim {g.nodes.shape[1]} != first layer input {params.in_dim}"
        )
    f = g.nodes
    e = g.edges
    caches = []
    for i, layer in enumerate(params.layers):
        with_residual = i > 0 and layer.in_dim == layer.out_dim
        f, e, cache = _layer_forward(f, e, layer, params.ds_iters, params.ds_tol, with_residual)
        caches.append(cache)
    out = np.concatenate([g.nodes, f], axis=1)
    return out, caches


def propagate(g: SceneGraph, params: MPParams) -> np.ndarray:
    """Enhanced node features: [original F | final layer output]."""
    out, _caches = propagate_forward(g, params)
    return out


def propagate_backward(caches, params: MPParams, upstream: np.ndarray):
    """Backward through propagate given upstream on the concatenated output.

    Returns (d_nodes, d_edges, grads) with grads keyed like named_arrays().
    """
    n = upstream.shape[0]
    d_in = params.in_dim
    d_direct = upstream[:, :d_in]
    df = upstream[:, d_in:]
    de = np.zeros((n, n), dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(len(params.layers))):
        df, de, dw, dattn = _layer_backward(caches[i], params.layers[i], df, de)
        grads[f"layer{i}.w"] = dw
        grads[f"layer{i}.attn"] = dattn
    return df + d_direct, de, grads


def propagate_grad(g: SceneGraph, params: MPParams, upstream) -> tuple[np.ndarray, np.ndarray, dict]:
    """Gradients of <upstream, propagate(g)> w.r.t. nodes, edges, and params."""
    out, caches = propagate_forward(g, params)
    upstream = as_matrix("propagate upstream", upstream, rows=out.shape[0], cols=out.shape[1])
    return propagate_backward(caches, params, upstream)


def _glorot(rng, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return (rng.uniform(rows, cols) * 2.0 - 1.0) * bound


def init_mp_params(layer_dims: list[int], rng, leaky_slope: float = 0.2,
                   ds_iters: int = 50, ds_tol: float = 1e-6) -> MPParams:
    """Seeded init: weights uniform in +-sqrt(6 / (fan_in + fan_out)).

    layer_dims = [d_in, d_1, ..., d_L]; vectors are treated as n x 1 for the
    fan computation.
    """
    if len(layer_dims) < 2:
        raise ValueError("layer_dims needs at least input and one output dim")
    layers = []
    for d_in, d_out in zip(layer_dims, layer_dims[1:]):
        w = _glorot(rng, d_in, d_out)
        attn = _glorot(rng, 2 * d_out, 1)[:, 0]
        layers.append(MPLayerParams(w=w, attn=attn, leaky_slope=leaky_slope))
    return MPParams(layers=layers, ds_iters=ds_iters, ds_tol=ds_tol)

"""Finite-difference verification of every analytic gradient in the package.

Each block compares a hand-derived gradient against central differences of
the matching scalar function on small random problems. The composite-loss
blocks difference cd_loss_frozen_value, which freezes the Langevin sample and
the locked parameter copies so its exact gradient equals the truncated and
locked gradients the implementation reports.

Sinkhorn runs with tol 0 here so the iteration count is fixed: a tolerance
that is met a different number of iterations away under a wiggled input would
contaminate the finite differences with a discontinuity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import EnergyParams, SgldConfig, energy, energy_grad, init_energy_params
from .graphhead import SceneGraph
from .messagepassing import MPParams, init_mp_params, propagate, propagate_grad
from .prior import PriorMatrix
from .tensorcore import Rng, derive_seed, finite_diff_grad, softmax_rows
from .training import (
    ClassifierParams,
    TrainConfig,
    cd_loss,
    cd_loss_frozen_value,
    classify,
    classify_backward,
    cross_entropy,
    cross_entropy_grad,
    init_classifier,
    make_frozen_sample,
)

__all__ = ["BlockResult", "GradcheckReport", "run_gradcheck", "GRADCHECK_BLOCKS"]

TOL = 1e-4

GRADCHECK_BLOCKS = (
    "mp.nodes", "mp.edges", "mp.params",
    "energy.nodes", "energy.edges", "energy.theta",
    "classifier",
    "cd.theta", "cd.phi", "cd.mp",
)

# small problem dims: N nodes, D features, C classes
_N = 4
_D = 5
_C = 6
_MP_DIMS = [_D, 3, 3]
_DS_ITERS = 12


@dataclass
class BlockResult:
    name: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= TOL


@dataclass
class GradcheckReport:
    seeds: int
    blocks: list[BlockResult]

    @property
    def all_passed(self) -> bool:
        return all(b.passed for b in self.blocks)


_ZERO_NORM = 1e-8  # below this both sides count as numerically zero


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Frobenius relative error, absolute for numerically-zero pairs.

    A gradient that is exactly zero (for example an attention vector whose
    score matrix stays separable, so Sinkhorn quotients it out) shows up as
    roundoff on both sides; dividing two roundoff norms is meaningless, so
    pairs below _ZERO_NORM are compared absolutely instead. A real defect
    always leaves one side measurable and takes the relative branch.
    """
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    diff = float(np.linalg.norm(a - b))
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom <= _ZERO_NORM:
        return diff
    return diff / denom


def _fd_wrt(arr: np.ndarray, value_fn) -> np.ndarray:
    """Finite differences w.r.t. arr, mutating it in place per evaluation."""
    def probe(x):
        arr[...] = x
        return value_fn()

    base = arr.copy()
    try:
        return finite_diff_grad(probe, base)
    finally:
        arr[...] = base


def _named_errs(params, analytic: dict, value_fn) -> float:
    worst = 0.0
    for name, arr in params.named_arrays():
        worst = max(worst, _rel_err(analytic[name], _fd_wrt(arr, value_fn)))
    return worst


def _random_graph(rng: Rng) -> SceneGraph:
    nodes = 0.5 * rng.normal(_N, _D)
    e = 0.05 + 0.95 * rng.uniform(_N, _N)
    return SceneGraph(nodes=nodes, edges=(e + e.T) / 2.0)


def _random_prior(rng: Rng) -> PriorMatrix:
    t = 0.05 + 0.9 * rng.uniform(_C, _C)
    return PriorMatrix(values=(t + t.T) / 2.0)


def _check_seed(seed: int, errs: dict[str, float], perturb: str | None) -> None:
    rng = Rng(derive_seed(seed, "gradcheck"))
    g = _random_graph(rng.spawn("graph"))
    mp = init_mp_params(_MP_DIMS, rng.spawn("mp"), ds_iters=_DS_ITERS, ds_tol=0.0)
    theta = init_energy_params(_D, 3, 3, 4, rng.spawn("energy"))
    clf = init_classifier(_D + _MP_DIMS[-1], _C, rng.spawn("clf"))
    upstream = rng.spawn("up").normal(_N, _D + _MP_DIMS[-1])

    def bump(name: str, grad):
        if perturb == name:
            if isinstance(grad, dict):
                grad[next(iter(grad))] += 1e-2
            else:
                grad += 1e-2
        return grad

    def record(name: str, err: float) -> None:
        errs[name] = max(errs.get(name, 0.0), err)

    # message passing
    d_nodes, d_edges, d_mp = propagate_grad(g, mp, upstream)
    mp_value = lambda: float(np.sum(upstream * propagate(g, mp)))
    record("mp.nodes", _rel_err(bump("mp.nodes", d_nodes), _fd_wrt(g.nodes, mp_value)))
    record("mp.edges", _rel_err(bump("mp.edges", d_edges), _fd_wrt(g.edges, mp_value)))
    record("mp.params", _named_errs(mp, bump("mp.params", d_mp), mp_value))

    # energy
    dn_e, de_e, d_theta = energy_grad(g, theta)
    e_value = lambda: energy(g, theta)
    record("energy.nodes", _rel_err(bump("energy.nodes", dn_e), _fd_wrt(g.nodes, e_value)))
    record("energy.edges", _rel_err(bump("energy.edges", de_e), _fd_wrt(g.edges, e_value)))
    record("energy.theta", _named_errs(theta, bump("energy.theta", d_theta), e_value))

    # classifier on plain features
    x = rng.spawn("x").normal(_N, _D + _MP_DIMS[-1])
    label_rng = rng.spawn("labels")
    labels = [label_rng.randint(0, _C) for _ in range(_N)]
    probs = classify(x, clf)
    dx, dw, db = classify_backward(x, probs, cross_entropy_grad(probs, labels), clf)
    c_value = lambda: cross_entropy(classify(x, clf), labels)
    err = _rel_err(bump("classifier", dx), _fd_wrt(x, c_value))
    err = max(err, _rel_err(dw, _fd_wrt(clf.w, c_value)))
    err = max(err, _rel_err(db, _fd_wrt(clf.b, c_value)))
    record("classifier", err)

    # composite loss with lock semantics
    prior = _random_prior(rng.spawn("prior"))
    base_probs = softmax_rows(rng.spawn("base").normal(_N, _C))
    gt_graph = _random_graph(rng.spawn("gt"))
    cd_cfg = TrainConfig(sgld=SgldConfig(steps=3, step_size=0.3, noise_var=1e-4))
    res = cd_loss(gt_graph, labels, base_probs, theta, clf, mp, prior,
                  cd_cfg, Rng(derive_seed(seed, "cd-noise")))
    frozen = make_frozen_sample(res, theta, clf)
    cd_value = lambda: cd_loss_frozen_value(gt_graph, labels, base_probs, theta,
                                            clf, mp, prior, cd_cfg.loss_weights, frozen)
    record("cd.theta", _named_errs(theta, bump("cd.theta", res.grad_theta), cd_value))
    record("cd.phi", _named_errs(clf, bump("cd.phi", res.grad_clf), cd_value))
    record("cd.mp", _named_errs(mp, bump("cd.mp", res.grad_mp), cd_value))


def run_gradcheck(seeds: int = 20, base_seed: int = 0,
                  perturb: str | None = None) -> GradcheckReport:
    """Check every block over the given number of seeds.

    perturb names a block whose analytic gradient is deliberately corrupted,
    as a negative control proving the harness can fail.
    """
    if perturb is not None and perturb not in GRADCHECK_BLOCKS:
        raise ValueError(f"unknown gradcheck block {perturb!r}, expected one of {GRADCHECK_BLOCKS}")
    errs: dict[str, float] = {}
    for i in range(seeds):
        _check_seed(base_seed + i, errs, perturb)
    blocks = [BlockResult(name=name, max_rel_err=errs[name]) for name in GRADCHECK_BLOCKS]
    return GradcheckReport(seeds=seeds, blocks=blocks)

"""Classification losses and contrastive-divergence training.

The composite loss has five terms. Writing E for the energy under theta, z
for labels, and q for the short-run Langevin sampler started at G0:

    (1) -log p(z | ground-truth graph)        trains classifier + messaging
    (2) +E(ground-truth graph)                data phase, trains theta
    (3) -E(sampled graph), sample constant    sample phase, trains theta
    (4) +E(sampled graph), theta locked       shapes the sampler start
    (5) -log p_lock(z | sampled graph)        classifier locked

Terms (4)/(5) differentiate only through the sampler's initial state G0
(gradient truncated through the Langevin steps): G0's edge matrix is built
from the model's own predictions via E0 = P @ T @ P.T, which is the live path
back to the classifier and message-passing parameters. Gradients are
hand-derived; cd_loss_frozen_value is the matching value function whose exact
gradient equals the truncated/locked gradients, for finite-difference checks.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .graphhead import (SceneGraph, build_edges, check_class_probs,
                        connected_subset, match_proposals)
from .energy import EnergyParams, SgldConfig, energy, energy_grad, sgld_refine, init_energy_params
from .messagepassing import MPParams, init_mp_params, propagate_backward, propagate_forward
from .prior import PriorMatrix
from .tensorcore import Rng, as_matrix, derive_seed, softmax_rows, softmax_rows_grad

__all__ = [
    "PROB_FLOOR",
    "ClassifierParams",
    "TrainConfig",
    "ModelSpec",
    "TrainingDiverged",
    "cross_entropy",
    "cross_entropy_grad",
    "classify",
    "classify_backward",
    "task_loss",
    "CdLossResult",
    "FrozenSample",
    "cd_loss",
    "make_frozen_sample",
    "cd_loss_frozen_value",
    "sgd_step",
    "init_classifier",
    "init_model",
    "TrainScene",
    "prepare_training_scene",
    "MetricsRow",
    "TrainResult",
    "train",
]

PROB_FLOOR = 1e-12

TRAIN_MODES = ("baseline", "gp", "gpr")


@dataclass
class ClassifierParams:
    w: np.ndarray  # (d, c)
    b: np.ndarray  # (c,)

    def __post_init__(self):
        self.w = as_matrix("classifier w", self.w)
        b = np.asarray(self.b, dtype=np.float64)
        if b.shape != (self.w.shape[1],):
            raise ValueError(f"classifier b shape {b.shape} != ({self.w.shape[1]},)")
        self.b = b

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [("w", self.w), ("b", self.b)]


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    sgld: SgldConfig = field(default_factory=SgldConfig)
    seed: int = 0
    loss_weights: tuple[float, float, float, float, float] = (1.0, 1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if len(self.loss_weights) != 5:
            raise ValueError("loss_weights must have exactly 5 entries")


@dataclass
class ModelSpec:
    """Dimensions for one model build; defaults are the desk-scale setup."""

    feature_dim: int = 32
    num_classes: int = 20
    mp_layer_dims: tuple[int, ...] = (16, 16)
    ds_iters: int = 50
    ds_tol: float = 1e-6
    mp_leaky_slope: float = 0.2
    energy_edge_dim: int = 16
    energy_pool_dim: int = 16
    energy_hidden_dim: int = 32
    energy_leaky_slope: float = 0.2


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; message names epoch and scene."""


def cross_entropy(probs, labels) -> float:
    """Mean negative log-probability of the labels, floored at 1e-12."""
    p = as_matrix("cross_entropy probs", probs)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != p.shape[0]:
        raise ValueError(f"labels shape {labels.shape} does not match {p.shape[0]} rows")
    if labels.size == 0:
        raise ValueError("cross_entropy: empty labels")
    if ((labels < 0) | (labels >= p.shape[1])).any():
        bad = int(labels[(labels < 0) | (labels >= p.shape[1])][0])
        raise ValueError(f"label {bad} out of range [0, {p.shape[1]})")
    picked = p[np.arange(p.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def cross_entropy_grad(probs: np.ndarray, labels) -> np.ndarray:
    """d cross_entropy / d probs; zero below the floor (hard stop)."""
    labels = np.asarray(labels, dtype=np.int64)
    n = probs.shape[0]
    d = np.zeros_like(probs)
    rows = np.arange(n)
    picked = probs[rows, labels]
    live = picked >= PROB_FLOOR
    d[rows[live], labels[live]] = -1.0 / (n * picked[live])
    return d


def classify(x, clf: ClassifierParams) -> np.ndarray:
    """Per-node class probabilities: softmax(x @ w + b)."""
    x = as_matrix("classify input", x, cols=clf.w.shape[0])
    return softmax_rows(x @ clf.w + clf.b)


def classify_backward(x: np.ndarray, probs: np.ndarray, dprobs: np.ndarray,
                      clf: ClassifierParams):
    """Backward of classify: upstream on probs -> (dx, dw, db)."""
    dlogits = softmax_rows_grad(probs, dprobs)
    dw = x.T @ dlogits
    db = dlogits.sum(axis=0)
    dx = dlogits @ clf.w.T
    return dx, dw, db


def task_loss(p_enhanced, p_base, labels) -> float:
    """Cross entropy of the enhanced predictions plus that of the base ones."""
    return cross_entropy(p_enhanced, labels) + cross_entropy(p_base, labels)


def _zero_grads(params) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.named_arrays()}


def _acc(dst: dict, src: dict, scale: float = 1.0) -> None:
    for name, g in src.items():
        dst[name] += scale * g


@dataclass
class CdLossResult:
    loss: float
    terms: np.ndarray                 # the five unweighted term values
    grad_theta: dict[str, np.ndarray]
    grad_clf: dict[str, np.ndarray]
    grad_mp: dict[str, np.ndarray]
    init_edges: np.ndarray | None     # E0 = P T P^T at the sampler start
    sampled: SceneGraph | None        # Langevin terminal state
    energy_pull: dict[str, np.ndarray] | None = None
    """Gradient of E(gt)^2 + E(sampled)^2 w.r.t. theta, or None when either
    contrastive phase is switched off. The energy scale is unconstrained by
    the loss itself (only differences matter), so the training loop applies
    this as a decay toward zero magnitude, next to ordinary weight decay."""


def cd_loss(gt_graph: SceneGraph, labels, base_probs, theta: EnergyParams,
            clf: ClassifierParams, mp: MPParams, prior: PriorMatrix,
            cfg: TrainConfig, rng: Rng, init_nodes=None) -> CdLossResult:
    """Five-term contrastive-divergence loss and its gradients.

    The positive phase runs on gt_graph (observed node features paired with
    ground-truth edges); the sampler starts from (init_nodes or gt nodes, E0),
    where E0 comes from the
    model's own predictions on the base-probability edge graph; rng drives the
    Langevin noise. Terms with zero loss_weights are skipped entirely and
    reported as 0. A label of -1 marks an unmatched proposal: it takes part
    in every graph but is skipped by the cross-entropy terms.
    """
    w = cfg.loss_weights
    base_probs = check_class_probs("base probs", base_probs, prior.num_classes)
    terms = np.zeros(5)
    grad_theta = _zero_grads(theta)
    grad_clf = _zero_grads(clf)
    grad_mp = _zero_grads(mp)

    labels = np.asarray(labels, dtype=np.int64)
    if w[0] != 0.0:
        # unmatched proposals have all-zero gt edge rows, so the connected
        # subgraph is exactly the co-occurring labeled part
        keep_gt = connected_subset(list(range(gt_graph.num_nodes)), gt_graph.edges)
        if keep_gt:
            sub_gt = SceneGraph(nodes=gt_graph.nodes[keep_gt].copy(),
                                edges=gt_graph.edges[np.ix_(keep_gt, keep_gt)].copy())
            enh, caches = propagate_forward(sub_gt, mp)
            probs = classify(enh, clf)
            terms[0] = cross_entropy(probs, labels[keep_gt])
            dx, dw, db = classify_backward(
                enh, probs, cross_entropy_grad(probs, labels[keep_gt]), clf)
            grad_clf["w"] += w[0] * dw
            grad_clf["b"] += w[0] * db
            _, _, g_mp = propagate_backward(caches, mp, w[0] * dx)
            _acc(grad_mp, g_mp)

    d_theta_gt = None
    if w[1] != 0.0:
        terms[1] = energy(gt_graph, theta)
        _, _, d_theta_gt = energy_grad(gt_graph, theta)
        _acc(grad_theta, d_theta_gt, w[1])

    init_edges = None
    sampled = None
    energy_pull = None
    if w[2] != 0.0 or w[3] != 0.0 or w[4] != 0.0:
        obs = gt_graph.nodes if init_nodes is None else as_matrix(
            "init nodes", init_nodes, rows=gt_graph.num_nodes, cols=gt_graph.nodes.shape[1])
        base_graph = SceneGraph(nodes=obs.copy(), edges=build_edges(base_probs, prior))
        enh_p, caches_p = propagate_forward(base_graph, mp)
        p_pred = classify(enh_p, clf)
        init_edges = build_edges(p_pred, prior)
        g0 = SceneGraph(nodes=obs.copy(), edges=init_edges)
        sampled = sgld_refine(g0, theta, cfg.sgld, rng)

        # the chain's [0, 1] clamp is a hard stop: coordinates that finish on
        # the boundary have zero sensitivity to G0, and Sinkhorn's backward is
        # ill-conditioned exactly there
        interior = (sampled.edges > 0.0) & (sampled.edges < 1.0)

        d_e0 = np.zeros_like(init_edges)
        if w[2] != 0.0 or w[3] != 0.0:
            e_val = energy(sampled, theta)
            _dn, de_t, d_theta_t = energy_grad(sampled, theta)
            terms[2] = -e_val
            terms[3] = e_val
            _acc(grad_theta, d_theta_t, -w[2])
            # term (4): theta locked, gradient only through the edges of G0
            d_e0 += w[3] * np.where(interior, de_t, 0.0)
            if d_theta_gt is not None:
                energy_pull = _zero_grads(theta)
                _acc(energy_pull, d_theta_gt, 2.0 * terms[1])
                _acc(energy_pull, d_theta_t, 2.0 * e_val)
        if w[4] != 0.0:
            # refinement can clamp a row to zero; classify the connected
            # subgraph only, a frozen choice made by the sample itself.
            # Unlabeled survivors join the propagation but not the loss.
            keep = connected_subset(list(range(gt_graph.num_nodes)), sampled.edges)
            lab_rows = [r for r, i in enumerate(keep) if labels[i] >= 0]
            if keep and lab_rows:
                sub = SceneGraph(nodes=sampled.nodes[keep].copy(),
                                 edges=sampled.edges[np.ix_(keep, keep)].copy())
                enh_t, caches_t = propagate_forward(sub, mp)
                p_t = classify(enh_t, clf)
                sub_labels = labels[keep][lab_rows]
                terms[4] = cross_entropy(p_t[lab_rows], sub_labels)
                ce_grad = np.zeros_like(p_t)
                ce_grad[lab_rows] = cross_entropy_grad(p_t[lab_rows], sub_labels)
                dx_t, _dw_lock, _db_lock = classify_backward(
                    enh_t, p_t, ce_grad, clf)  # classifier locked
                _dn_t, de_sample, g_mp_t = propagate_backward(caches_t, mp, w[4] * dx_t)
                _acc(grad_mp, g_mp_t)
                # already carries w[4] via the upstream scale
                sub_interior = interior[np.ix_(keep, keep)]
                d_e0[np.ix_(keep, keep)] += np.where(sub_interior, de_sample, 0.0)

        if d_e0.any():
            # E0 = P T P^T, T symmetric: dP = (dE0 + dE0^T) P T
            dp_pred = (d_e0 + d_e0.T) @ p_pred @ prior.values
            dx_p, dw_p, db_p = classify_backward(enh_p, p_pred, dp_pred, clf)
            grad_clf["w"] += dw_p
            grad_clf["b"] += db_p
            _, _, g_mp_p = propagate_backward(caches_p, mp, dx_p)
            _acc(grad_mp, g_mp_p)

    loss = float(np.dot(np.asarray(w, dtype=np.float64), terms))
    return CdLossResult(loss=loss, terms=terms, grad_theta=grad_theta,
                        grad_clf=grad_clf, grad_mp=grad_mp,
                        init_edges=init_edges, sampled=sampled,
                        energy_pull=energy_pull)


@dataclass
class FrozenSample:
    """Base-point quantities held constant while finite-differencing cd_loss.

    edges holds the full sampled edge matrix (term 3 sees a fully frozen
    sample); edge_shift = sampled edges - E0 so terms (4)/(5) see
    E0(params) + edge_shift on interior coordinates, while entries the chain
    clamped to the [0, 1] boundary stay pinned at the sampled value (the
    clamp is a hard stop, so they are locally constant in the parameters).
    theta and clf are deep copies emulating the locks in terms (4) and (5).
    """

    nodes: np.ndarray
    edges: np.ndarray
    edge_shift: np.ndarray
    interior: np.ndarray
    theta: EnergyParams
    clf: ClassifierParams


def make_frozen_sample(result: CdLossResult, theta: EnergyParams,
                       clf: ClassifierParams) -> FrozenSample:
    if result.sampled is None or result.init_edges is None:
        raise ValueError("cd_loss result has no sampled graph (all sample weights zero?)")
    e = result.sampled.edges
    return FrozenSample(
        nodes=result.sampled.nodes.copy(),
        edges=e.copy(),
        edge_shift=e - result.init_edges,
        interior=(e > 0.0) & (e < 1.0),
        theta=copy.deepcopy(theta),
        clf=copy.deepcopy(clf),
    )


def cd_loss_frozen_value(gt_graph: SceneGraph, labels, base_probs,
                         theta: EnergyParams, clf: ClassifierParams, mp: MPParams,
                         prior: PriorMatrix, weights, frozen: FrozenSample,
                         init_nodes=None) -> float:
    """Loss value with lock semantics emulated by freezing.

    The exact gradient of this function w.r.t. (theta, clf, mp) equals the
    gradients cd_loss reports, so central differences on it are the oracle
    for the truncated and locked paths.
    """
    w = weights
    labels = np.asarray(labels, dtype=np.int64)
    total = 0.0
    if w[0] != 0.0:
        keep_gt = connected_subset(list(range(gt_graph.num_nodes)), gt_graph.edges)
        if keep_gt:
            sub_gt = SceneGraph(nodes=gt_graph.nodes[keep_gt].copy(),
                                edges=gt_graph.edges[np.ix_(keep_gt, keep_gt)].copy())
            enh, _ = propagate_forward(sub_gt, mp)
            total += w[0] * cross_entropy(classify(enh, clf), labels[keep_gt])
    if w[1] != 0.0:
        total += w[1] * energy(gt_graph, theta)
    if w[2] != 0.0:
        total += -w[2] * energy(SceneGraph(nodes=frozen.nodes.copy(),
                                           edges=frozen.edges.copy()), theta)
    if w[3] != 0.0 or w[4] != 0.0:
        obs = gt_graph.nodes if init_nodes is None else init_nodes
        base_graph = SceneGraph(nodes=obs.copy(), edges=build_edges(base_probs, prior))
        enh_p, _ = propagate_forward(base_graph, mp)
        e0 = build_edges(classify(enh_p, clf), prior)
        moved = SceneGraph(nodes=frozen.nodes.copy(),
                           edges=np.where(frozen.interior,
                                          e0 + frozen.edge_shift, frozen.edges))
        if w[3] != 0.0:
            total += w[3] * energy(moved, frozen.theta)
        if w[4] != 0.0:
            # subset fixed by the frozen sample, as in cd_loss
            keep = connected_subset(list(range(moved.num_nodes)), frozen.edges)
            lab_rows = [r for r, i in enumerate(keep) if labels[i] >= 0]
            if keep and lab_rows:
                sub = SceneGraph(nodes=moved.nodes[keep].copy(),
                                 edges=moved.edges[np.ix_(keep, keep)].copy())
                enh_t, _ = propagate_forward(sub, mp)
                p_t = classify(enh_t, frozen.clf)
                total += w[4] * cross_entropy(p_t[lab_rows], labels[keep][lab_rows])
    return total


# per-scene energy gradients are heavy-tailed (one large graph can spike the
# norm 400x over the healthy ceiling of ~9, and momentum turns a single spike
# into runaway parameter growth), so each group is clipped before the step
GRAD_CLIP_NORM = 10.0

# the contrastive loss constrains only energy differences; whenever the
# sampler cannot fully close the gap to the data graph, the residual gradient
# grows the energy scale without bound. Decaying E(gt)^2 + E(sampled)^2
# anchors the scale near zero while leaving the shape of the landscape free
ENERGY_DECAY = 0.03


def clip_grads(grads: dict[str, np.ndarray],
               max_norm: float = GRAD_CLIP_NORM) -> dict[str, np.ndarray]:
    """Scale the gradient dict so its global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not np.isfinite(total) or total <= max_norm:
        return grads
    scale = max_norm / total
    return {name: scale * g for name, g in grads.items()}


def sgd_step(params, grads: dict[str, np.ndarray], cfg: TrainConfig,
             state: dict[str, np.ndarray], prefix: str = "") -> None:
    """SGD with momentum and weight decay, updating params in place.

    v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
    Momentum buffers live in state keyed by prefix + array name.
    """
    for name, arr in params.named_arrays():
        g = grads[name] + cfg.weight_decay * arr
        key = prefix + name
        prev = state.get(key)
        v = g if prev is None else cfg.momentum * prev + g
        state[key] = v
        arr -= cfg.lr * v


def _glorot(rng, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return (rng.uniform(rows, cols) * 2.0 - 1.0) * bound


def init_classifier(in_dim: int, num_classes: int, rng) -> ClassifierParams:
    return ClassifierParams(w=_glorot(rng, in_dim, num_classes),
                            b=np.zeros(num_classes))


def init_model(spec: ModelSpec, seed: int):
    """Seeded parameter init for the full model; returns (mp, theta, clf)."""
    rng = Rng(derive_seed(seed, "init"))
    mp = init_mp_params([spec.feature_dim, *spec.mp_layer_dims], rng,
                        leaky_slope=spec.mp_leaky_slope,
                        ds_iters=spec.ds_iters, ds_tol=spec.ds_tol)
    theta = init_energy_params(spec.feature_dim, spec.energy_edge_dim,
                               spec.energy_pool_dim, spec.energy_hidden_dim,
                               rng, leaky_slope=spec.energy_leaky_slope)
    clf = init_classifier(spec.feature_dim + spec.mp_layer_dims[-1],
                          spec.num_classes, rng)
    return mp, theta, clf


@dataclass
class TrainScene:
    """Per-scene training graph restricted to IoU-matched proposals."""

    gt_graph: SceneGraph       # observed node features + oracle edges
    base_probs: np.ndarray
    labels: np.ndarray


def prepare_training_scene(scene, prior: PriorMatrix,
                           iou_thresh: float = 0.5) -> TrainScene | None:
    """Match proposals to ground truth and build the training graph.

    The data-phase graph pairs the features actually observed for matched
    proposals with ground-truth edges (prior lookups between true classes).
    Unmatched proposals carry no label and are dropped: their features are
    indistinguishable from hard rare-class detections, so keeping them in
    the positive phase teaches the energy to disconnect exactly the nodes
    the refinement should be rescuing. Returns None when nothing matches.
    """
    gt_boxes = [box for _cid, box in scene.gt]
    classes = [cid for cid, _box in scene.gt]
    matched = match_proposals(scene.proposals, gt_boxes, iou_thresh)
    keep = [i for i, m in enumerate(matched) if m is not None]
    if not keep:
        return None
    labels = np.array([classes[matched[i]] for i in keep], dtype=np.int64)
    edges = prior.values[np.ix_(labels, labels)].copy()
    return TrainScene(
        gt_graph=SceneGraph(nodes=scene.features[keep].copy(), edges=edges),
        base_probs=scene.base_probs[keep].copy(),
        labels=labels,
    )


@dataclass
class MetricsRow:
    epoch: int
    terms: tuple[float, float, float, float, float]
    total_loss: float
    train_accuracy: float


@dataclass
class TrainResult:
    mp: MPParams
    theta: EnergyParams
    clf: ClassifierParams
    metrics: list[MetricsRow]


def _mode_weights(cfg: TrainConfig, mode: str):
    if mode == "gp":
        return (cfg.loss_weights[0], 0.0, 0.0, 0.0, 0.0)
    return cfg.loss_weights


def train(scenes, cfg: TrainConfig, prior: PriorMatrix, spec: ModelSpec,
          mode: str = "gpr", iou_thresh: float = 0.5) -> TrainResult:
    """SGD training loop over prepared scenes.

    mode selects what trains: "baseline" trains nothing (metrics only), "gp"
    trains classifier + message passing on term (1), "gpr" runs the full
    five-term loss and also trains the energy parameters. Deterministic for a
    fixed cfg.seed; per-scene Langevin noise is sub-seeded by
    (seed, "train", epoch, scene index). Aborts with TrainingDiverged naming
    the epoch and scene if the loss goes non-finite.
    """
    from .scenes import prediction_accuracy, run_inference  # runtime import, avoids a cycle

    if mode not in TRAIN_MODES:
        raise ValueError(f"unknown training mode {mode!r}, expected one of {TRAIN_MODES}")
    mp, theta, clf = init_model(spec, cfg.seed)
    state: dict[str, np.ndarray] = {}
    weights = _mode_weights(cfg, mode)
    eff_cfg = dataclasses.replace(cfg, loss_weights=weights)

    prepared: list[tuple[int, TrainScene]] = []
    for i, scene in enumerate(scenes):
        ts = prepare_training_scene(scene, prior, iou_thresh)
        if ts is not None:
            prepared.append((i, ts))
    if not prepared and mode != "baseline" and cfg.epochs > 0:
        raise ValueError("no scene has any matched proposal; nothing to train on")

    metrics: list[MetricsRow] = []
    for epoch in range(1, cfg.epochs + 1):
        term_sums = np.zeros(5)
        loss_sum = 0.0
        if mode != "baseline":
            for i, ts in prepared:
                rng = Rng(derive_seed(cfg.seed, "train", epoch, i))
                res = cd_loss(ts.gt_graph, ts.labels, ts.base_probs, theta, clf,
                              mp, prior, eff_cfg, rng)
                if not np.isfinite(res.loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, scene {i}")
                sgd_step(mp, clip_grads(res.grad_mp), cfg, state, prefix="mp.")
                sgd_step(clf, clip_grads(res.grad_clf), cfg, state, prefix="clf.")
                if mode == "gpr":
                    g_theta = res.grad_theta
                    if res.energy_pull is not None:
                        g_theta = {name: g + ENERGY_DECAY * res.energy_pull[name]
                                   for name, g in g_theta.items()}
                    sgd_step(theta, clip_grads(g_theta), cfg, state,
                             prefix="energy.")
                term_sums += res.terms
                loss_sum += res.loss

        denom = max(len(prepared), 1)
        correct = 0
        total = 0
        for i, scene in enumerate(scenes):
            rng = Rng(derive_seed(cfg.seed, "train-acc", epoch, i))
            probs, _boxes = run_inference(scene, mode, mp, theta, clf, prior,
                                          cfg.sgld, iou_thresh=iou_thresh, rng=rng)
            c, t = prediction_accuracy(probs, scene, iou_thresh)
            correct += c
            total += t
        acc = correct / total if total else 0.0
        metrics.append(MetricsRow(
            epoch=epoch,
            terms=tuple(float(v) for v in term_sums / denom),
            total_loss=float(loss_sum / denom),
            train_accuracy=float(acc),
        ))
    return TrainResult(mp=mp, theta=theta, clf=clf, metrics=metrics)

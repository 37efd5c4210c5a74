"""Synthetic scenes with planted co-occurrence structure, plus evaluation.

The generator stands in for a base detector and its dataset. Classes are
partitioned into templates (groups that co-occur); each scene draws its
objects from a single template, so the true prior is block structured and
known by construction. A few classes per template are rare: they join a scene
only with probability rare_class_fraction, their simulated features carry
extra noise inversely proportional to their expected frequency, and each rare
class has a lookalike partner in another template whose embedding sits almost
on top of its own. Features alone therefore split the pair near 50/50, while
the co-occurrence structure separates them exactly. That gives a weak base
detector exactly where graph context has the most to add, which is the effect
the rare-class report measures.

Evaluation is AP at a single IoU threshold with all-point interpolation, plus
argmax accuracy over IoU-matched proposals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb

import numpy as np

from .graphhead import (SceneGraph, build_edges, build_oracle_edges, check_class_probs,
                        connected_subset, iou, match_proposals)
from .energy import EnergyParams, SgldConfig, sgld_refine
from .messagepassing import MPParams, propagate
from .prior import Annotations, Box, ImageRecord, PriorMatrix, build_prior
from .tensorcore import Rng, derive_seed
from .training import ClassifierParams, classify

__all__ = [
    "INFERENCE_MODES",
    "SceneConfig",
    "Scene",
    "World",
    "Benchmark",
    "build_world",
    "generate_scenes",
    "generate_dataset",
    "make_benchmark",
    "scenes_to_annotations",
    "export_annotations",
    "run_inference",
    "prediction_accuracy",
    "EvalReport",
    "evaluate",
    "spearman_rank",
    "RareClassRow",
    "RareClassReport",
    "rare_class_report",
]

INFERENCE_MODES = ("baseline", "gp", "gpr", "oracle")

# canvas geometry for generated boxes
CANVAS = 100.0
CENTER_MARGIN = 10.0
SIZE_MIN = 8.0
SIZE_MAX = 20.0

# base-detector surrogate
PROBE_TEMP = 0.125          # probe logits are similarities divided by this
PROBE_NOISE = 0.01          # fixed perturbation of the probe weights
LABEL_NOISE_MIX = 0.8       # corrupted rows move this far toward uniform
DISTRACTOR_FEATURE_SCALE = 0.5
RARITY_GAIN = 0.5           # extra feature noise grows with 1/frequency ...
RARITY_CAP = 6.0            # ... up to this multiple of class_embedding_noise
TWIN_GAP = 0.4              # embedding distance between a rare class and its lookalike


@dataclass
class SceneConfig:
    num_classes: int = 20
    num_templates: int = 4
    classes_per_template: int = 5
    objects_min: int = 8
    objects_max: int = 14
    feature_dim: int = 32
    class_embedding_noise: float = 0.12
    label_noise: float = 0.1
    distractor_rate: float = 0.4
    box_jitter: float = 0.1
    rare_class_fraction: float = 0.2

    def __post_init__(self):
        if self.num_classes < 1 or self.num_templates < 1 or self.classes_per_template < 1:
            raise ValueError("num_classes, num_templates, classes_per_template must be >= 1")
        if self.num_templates * self.classes_per_template > self.num_classes:
            raise ValueError(
                f"{self.num_templates} templates x {self.classes_per_template} classes "
                f"exceed num_classes = {self.num_classes}")
        if not 1 <= self.objects_min <= self.objects_max:
            raise ValueError(
                f"need 1 <= objects_min <= objects_max, got [{self.objects_min}, {self.objects_max}]")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.class_embedding_noise < 0.0:
            raise ValueError("class_embedding_noise must be >= 0")
        for name in ("label_noise", "distractor_rate", "box_jitter", "rare_class_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")


@dataclass
class Scene:
    """One generated image: ground truth plus simulated detector output."""

    gt: list[tuple[int, Box]]
    proposals: list[Box]
    features: np.ndarray   # (num proposals, feature_dim)
    base_probs: np.ndarray  # (num proposals, num classes), row stochastic

    def __post_init__(self):
        n = len(self.proposals)
        if self.features.shape[0] != n or self.base_probs.shape[0] != n:
            raise ValueError(
                f"scene rows disagree: {n} proposals, {self.features.shape[0]} feature rows, "
                f"{self.base_probs.shape[0]} probability rows")


@dataclass
class World:
    """Fixed per-dataset structure shared by every scene.

    rare_multiplier holds the per-class feature-noise multiplier (commons near
    1, rare classes larger); expected_share is the analytic probability that a
    ground-truth object carries each class.
    """

    config: SceneConfig
    embeddings: np.ndarray        # (C, D), unit rows
    probe: np.ndarray             # (D, C), base detector logit map
    templates: list[list[int]]
    rare_classes: frozenset[int]
    expected_share: np.ndarray    # (C,)
    rare_multiplier: np.ndarray   # (C,)


def _mean_inverse(base: int, m: int, q: float) -> float:
    """E[1 / (base + K)] for K ~ Binomial(m, q)."""
    return sum(comb(m, k) * q**k * (1.0 - q) ** (m - k) / (base + k) for k in range(m + 1))


def _rare_count(classes_per_template: int) -> int:
    if classes_per_template < 2:
        return 0
    return max(1, round(classes_per_template / 3))


def build_world(cfg: SceneConfig, seed: int) -> World:
    """Deterministic embeddings, probe, and template layout for one dataset.

    Draw order is fixed: embeddings, lookalike displacement vectors, probe
    perturbation.
    """
    rng = Rng(derive_seed(seed, "world"))
    c, d = cfg.num_classes, cfg.feature_dim
    emb = rng.normal(c, d)
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)

    cpt = cfg.classes_per_template
    templates = [list(range(t * cpt, (t + 1) * cpt)) for t in range(cfg.num_templates)]
    n_rare = _rare_count(cpt)
    rare = frozenset(cid for tpl in templates for cid in tpl[cpt - n_rare:])

    # Rare classes form cross-template lookalike pairs: the partner's
    # embedding sits only TWIN_GAP away, so features barely separate the two
    # and co-occurrence context is what disambiguates. The gap still dominates
    # the probe perturbation, keeping the zero-noise limit argmax-exact.
    for t in range(0, cfg.num_templates - 1, 2):
        for ra, rb in zip(templates[t][cpt - n_rare:], templates[t + 1][cpt - n_rare:]):
            u = rng.normal(1, d)[0]
            v = emb[ra] + TWIN_GAP * u / np.linalg.norm(u)
            emb[rb] = v / np.linalg.norm(v)

    probe = (emb.T + PROBE_NOISE * rng.normal(d, c)) / PROBE_TEMP

    share = np.zeros(c)
    q = cfg.rare_class_fraction
    n_common = cpt - n_rare
    for tpl in templates:
        for cid in tpl[:n_common]:
            share[cid] = _mean_inverse(n_common, n_rare, q) / cfg.num_templates
        for cid in tpl[n_common:]:
            share[cid] = q * _mean_inverse(n_common + 1, n_rare - 1, q) / cfg.num_templates

    used = share > 0.0
    mean_share = share[used].mean() if used.any() else 1.0
    mult = np.full(c, RARITY_CAP)
    mult[used] = np.minimum(RARITY_CAP, RARITY_GAIN * mean_share / share[used])
    return World(config=cfg, embeddings=emb, probe=probe, templates=templates,
                 rare_classes=rare, expected_share=share, rare_multiplier=mult)


def _draw_box(rng: Rng) -> Box:
    cx = CENTER_MARGIN + (CANVAS - 2 * CENTER_MARGIN) * rng.uniform()
    cy = CENTER_MARGIN + (CANVAS - 2 * CENTER_MARGIN) * rng.uniform()
    w = SIZE_MIN + (SIZE_MAX - SIZE_MIN) * rng.uniform()
    h = SIZE_MIN + (SIZE_MAX - SIZE_MIN) * rng.uniform()
    return Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _jitter_box(box: Box, jitter: float, rng: Rng) -> Box:
    w = box.x_max - box.x_min
    h = box.y_max - box.y_min
    cx = (box.x_min + box.x_max) / 2 + jitter * w * (2 * rng.uniform() - 1)
    cy = (box.y_min + box.y_max) / 2 + jitter * h * (2 * rng.uniform() - 1)
    w *= 1 + jitter * (2 * rng.uniform() - 1)
    h *= 1 + jitter * (2 * rng.uniform() - 1)
    return Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _generate_scene(cfg: SceneConfig, world: World, rng: Rng) -> Scene:
    # draw order is part of the determinism contract: template, rare-class
    # coins, object count, classes, gt boxes, proposal jitter, distractor
    # boxes, features (gt noise, rarity noise, distractor), label-noise coins
    tpl = world.templates[rng.randint(0, len(world.templates))]
    n_rare = _rare_count(cfg.classes_per_template)
    n_common = cfg.classes_per_template - n_rare
    present = list(tpl[:n_common])
    for cid in tpl[n_common:]:
        if rng.uniform() < cfg.rare_class_fraction:
            present.append(cid)

    n_obj = rng.randint(cfg.objects_min, cfg.objects_max + 1)
    classes = [present[rng.randint(0, len(present))] for _ in range(n_obj)]
    gt_boxes = [_draw_box(rng) for _ in range(n_obj)]
    proposals = [_jitter_box(b, cfg.box_jitter, rng) for b in gt_boxes]
    n_distr = int(round(cfg.distractor_rate * n_obj))
    proposals += [_draw_box(rng) for _ in range(n_distr)]

    sigma = cfg.class_embedding_noise
    feats = world.embeddings[classes] + sigma * rng.normal(n_obj, cfg.feature_dim)
    feats += (sigma * world.rare_multiplier[classes])[:, None] * rng.normal(n_obj, cfg.feature_dim)
    distr_feats = DISTRACTOR_FEATURE_SCALE * rng.normal(n_distr, cfg.feature_dim)
    features = np.vstack([feats, distr_feats])

    scores = features @ world.probe
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    for i in range(probs.shape[0]):
        if rng.uniform() < cfg.label_noise:
            probs[i] = (1 - LABEL_NOISE_MIX) * probs[i] + LABEL_NOISE_MIX / cfg.num_classes

    return Scene(gt=list(zip(classes, gt_boxes)), proposals=proposals,
                 features=features, base_probs=probs)


def generate_scenes(cfg: SceneConfig, world: World, num_scenes: int, seed: int,
                    stream: str = "scene") -> list[Scene]:
    """Scenes with independent per-index sub-seeds (order-parallel safe)."""
    return [_generate_scene(cfg, world, Rng(derive_seed(seed, stream, i)))
            for i in range(num_scenes)]


def scenes_to_annotations(scenes: list[Scene], num_classes: int) -> Annotations:
    images = [ImageRecord(id=i + 1, objects=list(s.gt)) for i, s in enumerate(scenes)]
    categories = [(c, f"class_{c:02d}") for c in range(num_classes)]
    return Annotations(images=images, categories=categories)


def export_annotations(scenes: list[Scene], num_classes: int, path) -> None:
    """Write ground truth in the annotation JSON the prior builder ingests."""
    payload = {
        "images": [{"id": i + 1} for i in range(len(scenes))],
        "annotations": [
            {"image_id": i + 1, "category_id": cid,
             "bbox": [box.x_min, box.y_min, box.x_max - box.x_min, box.y_max - box.y_min]}
            for i, s in enumerate(scenes) for cid, box in s.gt
        ],
        "categories": [{"id": c, "name": f"class_{c:02d}"} for c in range(num_classes)],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def generate_dataset(cfg: SceneConfig, num_scenes: int, seed: int):
    """Scenes plus the prior built from their own ground truth."""
    world = build_world(cfg, seed)
    scenes = generate_scenes(cfg, world, num_scenes, seed)
    prior = build_prior(scenes_to_annotations(scenes, cfg.num_classes), cfg.num_classes)
    return scenes, prior


@dataclass
class Benchmark:
    world: World
    train_scenes: list[Scene]
    test_scenes: list[Scene]
    prior: PriorMatrix


def make_benchmark(cfg: SceneConfig, num_train: int, num_test: int, seed: int,
                   smoothing_eps: float = 0.0) -> Benchmark:
    """Train/test split sharing one world; prior counted on train only."""
    world = build_world(cfg, seed)
    train = generate_scenes(cfg, world, num_train, seed, stream="train-scene")
    test = generate_scenes(cfg, world, num_test, seed, stream="test-scene")
    prior = build_prior(scenes_to_annotations(train, cfg.num_classes),
                        cfg.num_classes, smoothing_eps)
    return Benchmark(world=world, train_scenes=train, test_scenes=test, prior=prior)


def run_inference(scene: Scene, mode: str, mp: MPParams, theta: EnergyParams,
                  clf: ClassifierParams, prior: PriorMatrix, sgld_cfg: SgldConfig,
                  iou_thresh: float = 0.5, rng: Rng | None = None):
    """Class probabilities and boxes for one scene under the chosen mode.

    baseline passes base_probs through; gp builds edges from base_probs and
    classifies propagated features; gpr refines the graph by Langevin descent
    first; oracle uses ground-truth edges instead. Propagation always runs on
    the connected subgraph (oracle rows for unmatched proposals are all zero,
    and refinement can clamp a row away); proposals outside it keep their base
    probabilities. Boxes are returned unchanged in every mode.
    """
    if mode not in INFERENCE_MODES:
        raise ValueError(f"unknown inference mode {mode!r}, expected one of {INFERENCE_MODES}")
    boxes = list(scene.proposals)
    if mode == "baseline":
        return scene.base_probs.copy(), boxes

    if mode == "oracle":
        edges = build_oracle_edges(scene.proposals, scene.gt, prior, iou_thresh)
        nodes = scene.features
    else:
        base = check_class_probs("base probs", scene.base_probs, prior.num_classes)
        g = SceneGraph(nodes=scene.features.copy(), edges=build_edges(base, prior))
        if mode == "gpr":
            g = sgld_refine(g, theta, sgld_cfg, rng)
        edges, nodes = g.edges, g.nodes

    keep = connected_subset(list(range(len(boxes))), edges)
    probs = scene.base_probs.copy()
    if keep:
        sub = SceneGraph(nodes=nodes[keep].copy(),
                         edges=edges[np.ix_(keep, keep)].copy())
        probs[keep] = classify(propagate(sub, mp), clf)
    return probs, boxes


def prediction_accuracy(probs: np.ndarray, scene: Scene, iou_thresh: float = 0.5):
    """(correct, matched) counts of argmax class over IoU-matched proposals."""
    gt_boxes = [b for _c, b in scene.gt]
    classes = [c for c, _b in scene.gt]
    matched = match_proposals(scene.proposals, gt_boxes, iou_thresh)
    correct = 0
    total = 0
    for i, m in enumerate(matched):
        if m is None:
            continue
        total += 1
        if int(np.argmax(probs[i])) == classes[m]:
            correct += 1
    return correct, total


@dataclass
class EvalReport:
    per_class_ap: np.ndarray
    map: float
    per_class_frequency: np.ndarray
    accuracy: float


def _ap_all_point(tp: np.ndarray, fp: np.ndarray, num_gt: int) -> float:
    ctp = np.cumsum(tp)
    cfp = np.cumsum(fp)
    recall = ctp / num_gt
    precision = ctp / np.maximum(ctp + cfp, 1.0)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def evaluate(predictions: list[np.ndarray], scenes: list[Scene], num_classes: int,
             iou_thresh: float = 0.5) -> EvalReport:
    """AP per class at one IoU threshold, their mean, and argmax accuracy.

    Every proposal contributes one detection per class, scored by that class's
    probability. Detections are ranked by score (ties broken by scene then
    proposal index) and matched greedily against unused ground truth of the
    class. Classes without ground truth get AP 0 and are excluded from the
    mean.
    """
    if len(predictions) != len(scenes):
        raise ValueError(f"{len(predictions)} prediction sets for {len(scenes)} scenes")
    for probs, scene in zip(predictions, scenes):
        if probs.shape != (len(scene.proposals), num_classes):
            raise ValueError(
                f"prediction shape {probs.shape} != ({len(scene.proposals)}, {num_classes})")

    gt_count = np.zeros(num_classes, dtype=np.int64)
    for s in scenes:
        for cid, _box in s.gt:
            gt_count[cid] += 1

    per_class_ap = np.zeros(num_classes)
    for c in range(num_classes):
        if gt_count[c] == 0:
            continue
        dets = [(float(predictions[si][pi, c]), si, pi)
                for si, s in enumerate(scenes) for pi in range(len(s.proposals))]
        dets.sort(key=lambda t: (-t[0], t[1], t[2]))
        class_gt = [[(gi, box) for gi, (cid, box) in enumerate(s.gt) if cid == c]
                    for s in scenes]
        used = [set() for _ in scenes]
        tp = np.zeros(len(dets))
        fp = np.zeros(len(dets))
        for k, (_score, si, pi) in enumerate(dets):
            box = scenes[si].proposals[pi]
            best_iou = 0.0
            best_gi = None
            for gi, gt_box in class_gt[si]:
                if gi in used[si]:
                    continue
                v = iou(box, gt_box)
                if v > best_iou:
                    best_iou = v
                    best_gi = gi
            if best_gi is not None and best_iou >= iou_thresh:
                tp[k] = 1.0
                used[si].add(best_gi)
            else:
                fp[k] = 1.0
        per_class_ap[c] = _ap_all_point(tp, fp, int(gt_count[c]))

    live = gt_count > 0
    mean_ap = float(per_class_ap[live].mean()) if live.any() else 0.0
    freq = gt_count / max(int(gt_count.sum()), 1)

    correct = 0
    total = 0
    for probs, scene in zip(predictions, scenes):
        c_ok, c_all = prediction_accuracy(probs, scene, iou_thresh)
        correct += c_ok
        total += c_all
    acc = correct / total if total else 0.0
    return EvalReport(per_class_ap=per_class_ap, map=mean_ap,
                      per_class_frequency=freq, accuracy=float(acc))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rank(x, y) -> tuple[float, bool]:
    """Spearman correlation with average ranks for ties.

    Returns (value, defined); undefined (constant input or fewer than two
    points) reports (0.0, False).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"spearman inputs must be equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        return 0.0, False
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    vx = rx - rx.mean()
    vy = ry - ry.mean()
    denom = np.sqrt((vx ** 2).sum() * (vy ** 2).sum())
    if denom == 0.0:
        return 0.0, False
    return float((vx * vy).sum() / denom), True


@dataclass
class RareClassRow:
    class_id: int
    frequency: float
    delta_ap: float


@dataclass
class RareClassReport:
    rows: list[RareClassRow]
    spearman: float
    spearman_defined: bool


def rare_class_report(baseline: EvalReport, improved: EvalReport) -> RareClassReport:
    """Per-class AP deltas against frequency, most frequent first.

    The Spearman correlation is taken over classes that actually occur; a
    negative value means improvement concentrates on rare classes.
    """
    freq = baseline.per_class_frequency
    delta = improved.per_class_ap - baseline.per_class_ap
    order = sorted(range(len(freq)), key=lambda c: (-freq[c], c))
    rows = [RareClassRow(class_id=c, frequency=float(freq[c]), delta_ap=float(delta[c]))
            for c in order]
    live = freq > 0.0
    if live.sum() >= 2:
        corr, defined = spearman_rank(freq[live], delta[live])
    else:
        corr, defined = 0.0, False
    return RareClassReport(rows=rows, spearman=corr, spearman_defined=defined)

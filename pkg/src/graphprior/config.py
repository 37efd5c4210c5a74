"""Run configuration: INI files with strict key checking.

Every experiment is described by one file with sections [run], [scene], [mp],
[energy], [sgld], [train], [prior], and [eval]. Unknown sections or keys are
rejected by name so typos cannot silently fall back to defaults. Every
command writes the fully resolved configuration (after CLI overrides) next to
its outputs.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .energy import SgldConfig
from .scenes import INFERENCE_MODES, SceneConfig
from .training import ModelSpec, TrainConfig

__all__ = [
    "RunConfig",
    "load_config",
    "parse_config_text",
    "default_config_text",
    "resolved_config_text",
]


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in s.split(","))


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(p.strip()) for p in s.split(","))


@dataclass
class RunConfig:
    seed: int = 7
    mode: str = "gpr"
    train_scenes: int = 500
    test_scenes: int = 100
    scene: SceneConfig = field(default_factory=SceneConfig)
    mp_layer_dims: tuple[int, ...] = (16, 16)
    ds_iters: int = 50
    ds_tol: float = 1e-6
    mp_leaky_slope: float = 0.2
    energy_edge_dim: int = 2
    energy_pool_dim: int = 8
    energy_hidden_dim: int = 8
    energy_leaky_slope: float = 0.2
    # per-scene contrastive divergence only stays bounded when the chains move
    # edges alone; node updates at the default step size push samples far off
    # the data manifold and the coupled parameter updates grow without bound
    sgld: SgldConfig = field(default_factory=lambda: SgldConfig(update_nodes=False))
    epochs: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    loss_weights: tuple[float, float, float, float, float] = (1.0, 1.0, 1.0, 1.0, 1.0)
    smoothing_eps: float = 0.0
    iou_thresh: float = 0.5

    def __post_init__(self):
        if self.mode not in INFERENCE_MODES:
            raise ValueError(f"run.mode must be one of {INFERENCE_MODES}, got {self.mode!r}")
        if self.train_scenes < 1 or self.test_scenes < 1:
            raise ValueError("run.train_scenes and run.test_scenes must be >= 1")
        if not self.mp_layer_dims:
            raise ValueError("mp.layer_dims must list at least one dimension")
        if not 0.0 < self.iou_thresh < 1.0:
            raise ValueError(f"eval.iou_thresh must be in (0, 1), got {self.iou_thresh}")
        if self.smoothing_eps < 0.0:
            raise ValueError(f"prior.smoothing_eps must be >= 0, got {self.smoothing_eps}")

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            feature_dim=self.scene.feature_dim,
            num_classes=self.scene.num_classes,
            mp_layer_dims=self.mp_layer_dims,
            ds_iters=self.ds_iters,
            ds_tol=self.ds_tol,
            mp_leaky_slope=self.mp_leaky_slope,
            energy_edge_dim=self.energy_edge_dim,
            energy_pool_dim=self.energy_pool_dim,
            energy_hidden_dim=self.energy_hidden_dim,
            energy_leaky_slope=self.energy_leaky_slope,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, momentum=self.momentum,
                           weight_decay=self.weight_decay, sgld=self.sgld,
                           seed=self.seed, loss_weights=self.loss_weights)


# section -> key -> (value parser, getter on a RunConfig)
_SCHEMA = {
    "run": {
        "seed": (int, lambda c: c.seed),
        "mode": (lambda s: s.strip(), lambda c: c.mode),
        "train_scenes": (int, lambda c: c.train_scenes),
        "test_scenes": (int, lambda c: c.test_scenes),
    },
    "scene": {
        "num_classes": (int, lambda c: c.scene.num_classes),
        "num_templates": (int, lambda c: c.scene.num_templates),
        "classes_per_template": (int, lambda c: c.scene.classes_per_template),
        "objects_min": (int, lambda c: c.scene.objects_min),
        "objects_max": (int, lambda c: c.scene.objects_max),
        "feature_dim": (int, lambda c: c.scene.feature_dim),
        "class_embedding_noise": (float, lambda c: c.scene.class_embedding_noise),
        "label_noise": (float, lambda c: c.scene.label_noise),
        "distractor_rate": (float, lambda c: c.scene.distractor_rate),
        "box_jitter": (float, lambda c: c.scene.box_jitter),
        "rare_class_fraction": (float, lambda c: c.scene.rare_class_fraction),
    },
    "mp": {
        "layer_dims": (_parse_ints, lambda c: c.mp_layer_dims),
        "ds_iters": (int, lambda c: c.ds_iters),
        "ds_tol": (float, lambda c: c.ds_tol),
        "leaky_slope": (float, lambda c: c.mp_leaky_slope),
    },
    "energy": {
        "edge_dim": (int, lambda c: c.energy_edge_dim),
        "pool_dim": (int, lambda c: c.energy_pool_dim),
        "hidden_dim": (int, lambda c: c.energy_hidden_dim),
        "leaky_slope": (float, lambda c: c.energy_leaky_slope),
    },
    "sgld": {
        "steps": (int, lambda c: c.sgld.steps),
        "step_size": (float, lambda c: c.sgld.step_size),
        "noise_var": (float, lambda c: c.sgld.noise_var),
        "update_nodes": (_parse_bool, lambda c: c.sgld.update_nodes),
        "update_edges": (_parse_bool, lambda c: c.sgld.update_edges),
    },
    "train": {
        "epochs": (int, lambda c: c.epochs),
        "lr": (float, lambda c: c.lr),
        "momentum": (float, lambda c: c.momentum),
        "weight_decay": (float, lambda c: c.weight_decay),
        "loss_weights": (_parse_floats, lambda c: c.loss_weights),
    },
    "prior": {
        "smoothing_eps": (float, lambda c: c.smoothing_eps),
    },
    "eval": {
        "iou_thresh": (float, lambda c: c.iou_thresh),
    },
}


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Parse INI text into a RunConfig, rejecting unknown sections and keys."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ValueError(f"{source}: {e}") from e
    if parser.defaults():
        raise ValueError(f"{source}: [DEFAULT] section is not supported")

    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"{source}: unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"{source}: unknown key {key!r} in section [{section}]")
            parse = _SCHEMA[section][key][0]
            try:
                values[section][key] = parse(raw)
            except ValueError as e:
                raise ValueError(f"{source}: bad value for [{section}] {key}: {e}") from e

    def get(section: str, key: str, default):
        return values.get(section, {}).get(key, default)

    base = RunConfig()
    scene = SceneConfig(**{k: get("scene", k, getattr(base.scene, k))
                           for k in _SCHEMA["scene"]})
    sgld = SgldConfig(steps=get("sgld", "steps", base.sgld.steps),
                      step_size=get("sgld", "step_size", base.sgld.step_size),
                      noise_var=get("sgld", "noise_var", base.sgld.noise_var),
                      update_nodes=get("sgld", "update_nodes", base.sgld.update_nodes),
                      update_edges=get("sgld", "update_edges", base.sgld.update_edges))
    lw = tuple(get("train", "loss_weights", base.loss_weights))
    if len(lw) != 5:
        raise ValueError(f"{source}: train.loss_weights needs exactly 5 values, got {len(lw)}")
    return RunConfig(
        seed=get("run", "seed", base.seed),
        mode=get("run", "mode", base.mode),
        train_scenes=get("run", "train_scenes", base.train_scenes),
        test_scenes=get("run", "test_scenes", base.test_scenes),
        scene=scene,
        mp_layer_dims=tuple(get("mp", "layer_dims", base.mp_layer_dims)),
        ds_iters=get("mp", "ds_iters", base.ds_iters),
        ds_tol=get("mp", "ds_tol", base.ds_tol),
        mp_leaky_slope=get("mp", "leaky_slope", base.mp_leaky_slope),
        energy_edge_dim=get("energy", "edge_dim", base.energy_edge_dim),
        energy_pool_dim=get("energy", "pool_dim", base.energy_pool_dim),
        energy_hidden_dim=get("energy", "hidden_dim", base.energy_hidden_dim),
        energy_leaky_slope=get("energy", "leaky_slope", base.energy_leaky_slope),
        sgld=sgld,
        epochs=get("train", "epochs", base.epochs),
        lr=get("train", "lr", base.lr),
        momentum=get("train", "momentum", base.momentum),
        weight_decay=get("train", "weight_decay", base.weight_decay),
        loss_weights=lw,
        smoothing_eps=get("prior", "smoothing_eps", base.smoothing_eps),
        iou_thresh=get("eval", "iou_thresh", base.iou_thresh),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ValueError(f"cannot read config {path}: {e}") from e
    return parse_config_text(text, source=str(path))


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolved_config_text(cfg: RunConfig) -> str:
    """Stable INI rendering of every setting, defaults included."""
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_parse, getter) in keys.items():
            lines.append(f"{key} = {_render(getter(cfg))}")
        lines.append("")
    return "\n".join(lines)


def default_config_text() -> str:
    """Reference configuration: all keys at their documented defaults."""
    return resolved_config_text(RunConfig())

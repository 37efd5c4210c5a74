"""Named-section text bundles for parameter checkpoints.

Format, line by line:

    graphprior-bundle 1
    manifest <count>
    <name> <rows> <cols>          (one manifest line per section, in order)
    section <name>
    <rows CSV lines, repr floats>
    ...

Vectors are stored as single-row sections; scalars as 1x1. Loading validates
the manifest against the sections actually present, so a truncated or
reshuffled file fails loudly instead of silently misassigning weights.
"""

from __future__ import annotations

import numpy as np

from .energy import EnergyParams
from .messagepassing import MPLayerParams, MPParams
from .training import ClassifierParams

__all__ = [
    "save_bundle",
    "load_bundle",
    "save_checkpoint",
    "load_checkpoint",
]

_HEADER = "graphprior-bundle 1"


def save_bundle(path, sections: list[tuple[str, np.ndarray]]) -> None:
    """Write named 2-D arrays; names must be unique and space-free."""
    seen = set()
    rows2d: list[np.ndarray] = []
    for name, arr in sections:
        if " " in name or not name:
            raise ValueError(f"bad section name {name!r}")
        if name in seen:
            raise ValueError(f"duplicate section name {name!r}")
        seen.add(name)
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 1:
            a = a.reshape(1, -1)
        if a.ndim != 2:
            raise ValueError(f"section {name!r} is not a matrix: shape {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError(f"section {name!r} has non-finite entries")
        rows2d.append(a)

    lines = [_HEADER, f"manifest {len(sections)}"]
    for (name, _), a in zip(sections, rows2d):
        lines.append(f"{name} {a.shape[0]} {a.shape[1]}")
    for (name, _), a in zip(sections, rows2d):
        lines.append(f"section {name}")
        for row in a:
            lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_bundle(path) -> dict[str, np.ndarray]:
    """Read a bundle back; returns sections in file order."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise ValueError(f"cannot read bundle {path}: {e}") from e
    if not lines or lines[0] != _HEADER:
        raise ValueError(f"{path}: missing bundle header {_HEADER!r}")
    if len(lines) < 2 or not lines[1].startswith("manifest "):
        raise ValueError(f"{path}: missing manifest line")
    try:
        count = int(lines[1].split()[1])
    except (IndexError, ValueError) as e:
        raise ValueError(f"{path}: bad manifest count line {lines[1]!r}") from e

    manifest: list[tuple[str, int, int]] = []
    pos = 2
    for _ in range(count):
        if pos >= len(lines):
            raise ValueError(f"{path}: manifest truncated at line {pos + 1}")
        parts = lines[pos].split()
        if len(parts) != 3:
            raise ValueError(f"{path}: bad manifest entry {lines[pos]!r}")
        name, r, c = parts[0], int(parts[1]), int(parts[2])
        manifest.append((name, r, c))
        pos += 1

    out: dict[str, np.ndarray] = {}
    for name, r, c in manifest:
        if pos >= len(lines) or lines[pos] != f"section {name}":
            found = lines[pos] if pos < len(lines) else "<end of file>"
            raise ValueError(f"{path}: expected 'section {name}', found {found!r}")
        pos += 1
        if pos + r > len(lines):
            raise ValueError(f"{path}: section {name!r} truncated")
        rows = []
        for i in range(r):
            vals = lines[pos + i].split(",")
            if len(vals) != c:
                raise ValueError(
                    f"{path}: section {name!r} row {i} has {len(vals)} values, manifest says {c}")
            rows.append([float(v) for v in vals])
        out[name] = np.array(rows, dtype=np.float64).reshape(r, c)
        pos += r
    if pos != len(lines):
        raise ValueError(f"{path}: {len(lines) - pos} unexpected trailing lines")
    return out


def save_checkpoint(path, mp: MPParams, theta: EnergyParams, clf: ClassifierParams) -> None:
    """One bundle holding message passing, energy, and classifier weights."""
    sections: list[tuple[str, np.ndarray]] = [
        ("mp.hyper", np.array([[float(mp.ds_iters), mp.ds_tol, mp.layers[0].leaky_slope]])),
    ]
    for i, layer in enumerate(mp.layers):
        sections.append((f"mp.layer{i}.w", layer.w))
        sections.append((f"mp.layer{i}.attn", layer.attn))
    sections.append(("energy.hyper", np.array([[theta.leaky_slope]])))
    for name, arr in theta.named_arrays():
        sections.append((f"energy.{name}", arr))
    sections.append(("clf.w", clf.w))
    sections.append(("clf.b", clf.b))
    save_bundle(path, sections)


def load_checkpoint(path):
    """Rebuild (mp, theta, clf) from a checkpoint bundle."""
    data = load_bundle(path)

    def take(name: str) -> np.ndarray:
        if name not in data:
            raise ValueError(f"{path}: checkpoint missing section {name!r}")
        return data.pop(name)

    hyper = take("mp.hyper")
    if hyper.shape != (1, 3):
        raise ValueError(f"{path}: mp.hyper must be 1x3, got {hyper.shape}")
    ds_iters = int(hyper[0, 0])
    ds_tol = float(hyper[0, 1])
    mp_slope = float(hyper[0, 2])
    layers = []
    i = 0
    while f"mp.layer{i}.w" in data:
        w = take(f"mp.layer{i}.w")
        attn = take(f"mp.layer{i}.attn").reshape(-1)
        layers.append(MPLayerParams(w=w, attn=attn, leaky_slope=mp_slope))
        i += 1
    if not layers:
        raise ValueError(f"{path}: checkpoint has no message-passing layers")
    mp = MPParams(layers=layers, ds_iters=ds_iters, ds_tol=ds_tol)

    e_hyper = take("energy.hyper")
    theta = EnergyParams(
        w_edge=take("energy.w_edge"),
        w_pool=take("energy.w_pool"),
        v_pool=take("energy.v_pool").reshape(-1),
        w1=take("energy.w1"),
        b1=take("energy.b1").reshape(-1),
        w2=take("energy.w2").reshape(-1),
        b2=take("energy.b2").reshape(-1),
        leaky_slope=float(e_hyper[0, 0]),
    )
    clf = ClassifierParams(w=take("clf.w"), b=take("clf.b").reshape(-1))
    if data:
        raise ValueError(f"{path}: unknown checkpoint sections {sorted(data)}")
    return mp, theta, clf

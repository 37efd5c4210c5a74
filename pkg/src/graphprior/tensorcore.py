"""Dense float64 matrix helpers, seeded randomness, and a finite-difference oracle.

Everything operates on plain 2-D numpy arrays (row-major, float64). Public
entry points validate shapes and finiteness and raise ValueError naming the
offending operand. The finite-difference gradient here is the independent
oracle used to check every hand-derived backward pass in the package, so it
deliberately shares no code with them.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

__all__ = [
    "as_matrix",
    "as_vector",
    "matmul",
    "softmax_rows",
    "softmax_rows_grad",
    "leaky_relu",
    "sigmoid",
    "finite_diff_grad",
    "save_matrix_csv",
    "load_matrix_csv",
    "derive_seed",
    "Rng",
]


def as_matrix(name: str, value, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a float64 2-D array and validate shape and finiteness."""
    m = np.asarray(value, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D matrix, got array of shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"{name}: expected {rows} rows, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"{name}: expected {cols} cols, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name}: non-finite entries")
    return m


def as_vector(name: str, value, size: int | None = None) -> np.ndarray:
    m = np.asarray(value, dtype=np.float64)
    if m.ndim != 1:
        raise ValueError(f"{name}: expected a 1-D vector, got array of shape {m.shape}")
    if size is not None and m.shape[0] != size:
        raise ValueError(f"{name}: expected length {size}, got {m.shape[0]}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name}: non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Validated matrix product."""
    a = as_matrix("matmul lhs", a)
    b = as_matrix("matmul rhs", b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety."""
    m = as_matrix("softmax_rows input", m)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_grad(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Backward of softmax_rows: upstream on probabilities -> grad on logits."""
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)


def leaky_relu(m, slope: float = 0.2) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu: slope must be in (0, 1), got {slope}")
    m = np.asarray(m, dtype=np.float64)
    return np.where(m >= 0.0, m, slope * m)


def sigmoid(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(m)
    pos = m >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    em = np.exp(m[~pos])
    out[~pos] = em / (1.0 + em)
    return out


def finite_diff_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function over array entries.

    Evaluates f at x +- h per entry in double precision. Raises if any
    evaluation is non-finite. This is the package's gradient oracle; keep it
    free of any shared code with the analytic backward passes.
    """
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f(x))
        x[idx] = orig - h
        fm = float(f(x))
        x[idx] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"finite_diff_grad: non-finite evaluation at index {idx}")
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def save_matrix_csv(path, m) -> None:
    """Write a matrix as CSV: one row per line, '.' decimal separator, no header.

    Values are written with repr so a load round-trips bit-exactly.
    """
    m = as_matrix("save_matrix_csv input", m)
    lines = [",".join(repr(float(v)) for v in row) for row in m]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def load_matrix_csv(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        rows = []
        for ln, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise ValueError(f"{path}: line {ln + 1}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    width = len(rows[0])
    for ln, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"{path}: line {ln + 1} has {len(row)} fields, expected {width}")
    return as_matrix(str(path), np.array(rows, dtype=np.float64))


def derive_seed(root: int, *parts) -> int:
    """Stable 64-bit sub-seed from a root seed and a label path.

    sha256 over "root/part/part/..."; every random stream in the package is
    derived this way so one root seed pins the whole run.
    """
    h = hashlib.sha256()
    h.update(str(int(root)).encode("ascii"))
    for p in parts:
        h.update(b"/")
        h.update(str(p).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


class Rng:
    """Deterministic random stream.

    Uniform doubles come from a counter-based Philox generator; normal draws
    are produced by Box-Muller from two uniform draws, so the whole sequence
    is a documented function of the seed.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, *shape) -> np.ndarray | float:
        """Uniform doubles in [0, 1). No shape -> scalar float."""
        if not shape:
            return float(self._gen.random())
        return self._gen.random(shape)

    def normal(self, *shape) -> np.ndarray | float:
        """Standard normals via Box-Muller; consumes 2 uniforms per pair."""
        n = 1 if not shape else int(np.prod(shape))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1]: keeps log finite
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        if not shape:
            return float(z[0])
        return z.reshape(shape)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi), drawn from the uniform stream."""
        if hi <= lo:
            raise ValueError(f"randint: empty range [{lo}, {hi})")
        return lo + int(self.uniform() * (hi - lo))

    def spawn(self, *labels) -> "Rng":
        """Independent child stream for a labelled purpose."""
        return Rng(derive_seed(self.seed, *labels))

"""Small numeric and formatting helpers."""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``."""
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def fmt_float(x) -> str:
    """Shortest exact decimal representation; round-trips through float()."""
    return repr(float(x))


def fmt_floats(values) -> str:
    return " ".join(fmt_float(v) for v in np.asarray(values, dtype=np.float64).ravel())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tree_digest(root) -> dict[str, str]:
    """SHA-256 of every file under ``root``, keyed by relative path."""
    root = Path(root)
    return {
        str(p.relative_to(root)): file_digest(p)
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }

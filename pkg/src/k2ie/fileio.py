"""
Events CSV reading and writing.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def save_events(path, events) -> None:
    """Header ``x1,...,xd`` then one row per event at full precision."""
    X = np.asarray(events, dtype=float)
    if X.ndim != 2:
        raise ValueError("events must have shape (n, d)")
    header = ",".join(f"x{i + 1}" for i in range(X.shape[1]))
    lines = [header] + [",".join(repr(float(v)) for v in row) for row in X]
    Path(path).write_text("\n".join(lines) + "\n")


def load_events(path, dim: int | None = None) -> np.ndarray:
    """Read an events CSV; an empty body gives shape ``(0, d)``."""
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise ValueError(f"{path}: missing header")
    cols = [c.strip() for c in text[0].split(",")]
    if cols != [f"x{i + 1}" for i in range(len(cols))]:
        raise ValueError(f"{path}: header must be x1,...,xd")
    d = len(cols)
    if dim is not None and d != dim:
        raise ValueError(f"{path}: {d} columns but the domain has dimension {dim}")
    rows = [r for r in text[1:] if r.strip()]
    if not rows:
        return np.empty((0, d))
    try:
        X = np.array([[float(v) for v in r.split(",")] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"{path}: ragged rows")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{path}: non-finite coordinate")
    return X

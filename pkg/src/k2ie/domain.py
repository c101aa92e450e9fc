"""
Observation windows built from disjoint axis-aligned hyper-rectangles.

A :class:`Domain` is immutable once constructed. Rectangles are closed, so
points on a shared face belong to both; :meth:`Domain.locate` resolves such
ties to the lower-index rectangle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DomainError(ValueError):
    """Raised for malformed or overlapping rectangles."""


def as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to a float array of shape ``(n, dim)``.

    A 1-d array is read as a single point when ``dim > 1`` and as ``n``
    scalar locations when ``dim == 1``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if dim > 1 else x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"points of shape {x.shape} do not match dimension {dim}")
    return x


@dataclass(frozen=True)
class HyperRect:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or len(lo) == 0:
            raise DomainError(f"lo/hi dimension mismatch: {lo} vs {hi}")
        for a, b in zip(lo, hi):
            if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
                raise DomainError(f"degenerate rectangle side [{a}, {b}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def sides(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.hi) + np.asarray(self.lo))

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def overlaps(self, other: "HyperRect") -> bool:
        # interiors intersect iff every axis has a positive-length overlap
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        return bool(np.all(hi > lo))


class Domain:
    """Union of ``J`` pairwise-disjoint hyper-rectangles of equal dimension.

    Parameters
    ----------
    rects : sequence of HyperRect or (lo, hi) pairs
        The rectangles, in the order that defines tie-breaking.
    """

    def __init__(self, rects):
        rects = tuple(r if isinstance(r, HyperRect) else HyperRect(*r) for r in rects)
        if not rects:
            raise DomainError("a domain needs at least one rectangle")
        dims = {r.dim for r in rects}
        if len(dims) != 1:
            raise DomainError(f"rectangles of mixed dimension {sorted(dims)}")
        for j in range(len(rects)):
            for k in range(j + 1, len(rects)):
                if rects[j].overlaps(rects[k]):
                    raise DomainError(f"rectangles {j} and {k} overlap")
        self._rects = rects
        self._lo = np.array([r.lo for r in rects])
        self._hi = np.array([r.hi for r in rects])

    @classmethod
    def box(cls, lo, hi) -> "Domain":
        return cls([HyperRect(lo, hi)])

    @classmethod
    def grid(cls, lo, hi, cells_per_axis) -> "Domain":
        """Regular partition of the box ``[lo, hi]`` into equal cells.

        Cells are ordered with the first axis varying slowest.
        """
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        counts = np.broadcast_to(np.atleast_1d(cells_per_axis), lo.shape)
        edges = [np.linspace(a, b, int(c) + 1) for a, b, c in zip(lo, hi, counts)]
        rects = []
        for idx in np.ndindex(*[int(c) for c in counts]):
            rlo = [edges[i][k] for i, k in enumerate(idx)]
            rhi = [edges[i][k + 1] for i, k in enumerate(idx)]
            rects.append(HyperRect(rlo, rhi))
        return cls(rects)

    @property
    def rects(self) -> tuple[HyperRect, ...]:
        return self._rects

    @property
    def dim(self) -> int:
        return self._rects[0].dim

    def __len__(self) -> int:
        return len(self._rects)

    def __iter__(self):
        return iter(self._rects)

    def __eq__(self, other):
        return isinstance(other, Domain) and self._rects == other._rects

    def __hash__(self):
        return hash(self._rects)

    def __repr__(self):
        return f"Domain(dim={self.dim}, J={len(self)}, measure={self.measure:g})"

    @property
    def volumes(self) -> np.ndarray:
        return np.prod(self._hi - self._lo, axis=1)

    @property
    def measure(self) -> float:
        return float(self.volumes.sum())

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis bounding box ``(min_j lo_j, max_j hi_j)`` of the union."""
        return self._lo.min(axis=0), self._hi.max(axis=0)

    def _as_points(self, x) -> np.ndarray:
        return as_points(x, self.dim)

    def locate(self, x) -> np.ndarray:
        """Index of the first rectangle containing each point, ``-1`` if none."""
        x = self._as_points(x)
        inside = np.all(
            (x[:, None, :] >= self._lo[None]) & (x[:, None, :] <= self._hi[None]), axis=2
        )
        out = np.where(inside.any(axis=1), inside.argmax(axis=1), -1)
        return out

    def contains(self, x):
        """Membership test; a scalar bool for a single point, else an array."""
        single = np.ndim(x) == 0 or (np.ndim(x) == 1 and self.dim > 1)
        single = single or (np.ndim(x) == 1 and np.size(x) == 1)
        res = self.locate(x) >= 0
        return bool(res[0]) if single else res

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` i.i.d. uniform points on the union, shape ``(n, d)``."""
        if n < 0:
            raise ValueError("n must be non-negative")
        if n == 0:
            return np.empty((0, self.dim))
        w = self.volumes / self.volumes.sum()
        which = rng.choice(len(self), size=n, p=w) if len(self) > 1 else np.zeros(n, int)
        u = rng.random((n, self.dim))
        return self._lo[which] + u * (self._hi[which] - self._lo[which])

    def subset(self, keep) -> "Domain":
        keep = np.asarray(keep, dtype=bool)
        return Domain([r for r, k in zip(self._rects, keep) if k])

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "rects": [{"lo": list(r.lo), "hi": list(r.hi)} for r in self._rects],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Domain":
        try:
            rects = [HyperRect(r["lo"], r["hi"]) for r in data["rects"]]
        except (KeyError, TypeError) as exc:
            raise DomainError(f"malformed domain description: {exc}") from exc
        dom = cls(rects)
        if "dim" in data and int(data["dim"]) != dom.dim:
            raise DomainError(f"declared dim {data['dim']} but rectangles are {dom.dim}-d")
        return dom


def load_domain(path) -> Domain:
    return Domain.from_dict(json.loads(Path(path).read_text()))


def save_domain(domain: Domain, path) -> None:
    Path(path).write_text(json.dumps(domain.to_dict(), indent=2) + "\n")

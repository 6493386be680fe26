"""Projectable convex sets.

Every set here has a closed-form Euclidean projection, a finite diameter and a
dictionary form used by the experiment configuration. Projections accept a
single point of shape ``(dim,)`` or a stack of points of shape ``(..., dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

__all__ = [
    "ConvexSetSpec",
    "Box",
    "Ball",
    "Simplex",
    "Product",
    "project",
    "diameter",
    "contains",
    "distance",
    "box_bounds",
    "set_from_dict",
]


def _frozen(a):
    a = np.array(a, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


class ConvexSetSpec:
    """Base class for nonempty compact convex sets."""

    dim: int

    def project(self, w):
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check(self, w):
        w = np.asarray(w, dtype=float)
        if w.ndim == 0 or w.shape[-1] != self.dim:
            raise InputError(f"expected trailing dimension {self.dim}, got shape {w.shape}")
        return w


@dataclass(frozen=True, eq=False)
class Box(ConvexSetSpec):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _frozen(self.lo), _frozen(self.hi)
        if lo.shape != hi.shape or lo.size == 0:
            raise InputError("box bounds must be nonempty and of equal length")
        if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InputError("box requires finite bounds with lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    def project(self, w):
        return np.clip(self._check(w), self.lo, self.hi)

    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def to_dict(self):
        return {"box": {"lo": self.lo.tolist(), "hi": self.hi.tolist()}}


@dataclass(frozen=True, eq=False)
class Ball(ConvexSetSpec):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = _frozen(self.center)
        if c.size == 0:
            raise InputError("ball center must be nonempty")
        if not self.radius > 0 or not np.isfinite(self.radius):
            raise InputError("ball radius must be positive and finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.size

    def project(self, w):
        d = self._check(w) - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        scale = np.where(r > self.radius, self.radius / np.where(r > 0, r, 1.0), 1.0)
        return self.center + d * scale

    def diameter(self):
        return 2.0 * self.radius

    def to_dict(self):
        return {"ball": {"center": self.center.tolist(), "radius": self.radius}}


@dataclass(frozen=True, eq=False)
class Simplex(ConvexSetSpec):
    """Probability simplex ``{x >= 0, sum(x) = 1}``."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InputError("simplex dimension must be a positive integer")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dim(self):
        return self.n

    def project(self, w):
        # sort-and-threshold; ties handled by including all equal components
        w = self._check(w)
        u = -np.sort(-w, axis=-1)
        css = np.cumsum(u, axis=-1) - 1.0
        j = np.arange(1, self.n + 1)
        active = u - css / j > 0
        rho = self.n - 1 - np.argmax(active[..., ::-1], axis=-1)
        theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1.0)
        return np.maximum(w - theta, 0.0)

    def diameter(self):
        return float(np.sqrt(2.0)) if self.n > 1 else 0.0

    def to_dict(self):
        return {"simplex": {"dim": self.n}}


@dataclass(frozen=True, eq=False)
class Product(ConvexSetSpec):
    parts: tuple = field(default_factory=tuple)

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts or not all(isinstance(p, ConvexSetSpec) for p in parts):
            raise InputError("product needs at least one ConvexSetSpec factor")
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "offsets", np.cumsum([0] + [p.dim for p in parts]))

    @property
    def dim(self):
        return int(self.offsets[-1])

    def blocks(self, w):
        return [w[..., a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def project(self, w):
        w = self._check(w)
        return np.concatenate([p.project(b) for p, b in zip(self.parts, self.blocks(w))], axis=-1)

    def diameter(self):
        return float(np.sqrt(sum(p.diameter() ** 2 for p in self.parts)))

    def to_dict(self):
        return {"product": [p.to_dict() for p in self.parts]}


def project(s: ConvexSetSpec, w):
    """Euclidean projection of ``w`` onto ``s``."""
    return s.project(w)


def diameter(s: ConvexSetSpec) -> float:
    return s.diameter()


def distance(s: ConvexSetSpec, x):
    """Distance from ``x`` (or each row of a stack) to ``s``."""
    x = np.asarray(x, dtype=float)
    return np.linalg.norm(x - s.project(x), axis=-1)


def contains(s: ConvexSetSpec, x, tol: float = 0.0) -> bool:
    if tol < 0:
        raise InputError("tol must be nonnegative")
    return bool(distance(s, x) <= tol)


def box_bounds(s: ConvexSetSpec):
    """Return ``(lo, hi)`` when ``s`` is a box or a product of boxes, else None."""
    if isinstance(s, Box):
        return s.lo, s.hi
    if isinstance(s, Product):
        bounds = [box_bounds(p) for p in s.parts]
        if any(b is None for b in bounds):
            return None
        return (np.concatenate([b[0] for b in bounds]), np.concatenate([b[1] for b in bounds]))
    return None


def set_from_dict(d: dict) -> ConvexSetSpec:
    """Inverse of ``to_dict``; raises InputError on malformed input."""
    if not isinstance(d, dict) or len(d) != 1:
        raise InputError(f"set spec must be a single-key mapping, got {d!r}")
    (kind, body), = d.items()
    try:
        if kind == "box":
            return Box(body["lo"], body["hi"])
        if kind == "ball":
            return Ball(body["center"], body["radius"])
        if kind == "simplex":
            return Simplex(body["dim"])
        if kind == "product":
            return Product(tuple(set_from_dict(p) for p in body))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed {kind} spec: {exc}") from exc
    raise InputError(f"unknown set variant {kind!r}")

"""Zeroth-order gradient estimators for spherically smoothed implicit costs.

``h_eval`` arguments are vectorised callables: given points of shape
``(..., n)`` they return values of shape ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .game import HierarchicalGame, OracleCounter, implicit_cost, implicit_cost_inexact

__all__ = [
    "SmoothingConfig",
    "sample_sphere",
    "sample_sphere_batch",
    "sample_ball_batch",
    "fd_directional",
    "spherical_grad",
    "minibatch_H",
    "smoothed_value_mc",
    "spherical_grad_inexact",
    "player_cost",
]


@dataclass(frozen=True)
class SmoothingConfig:
    delta: float
    b: int = 1

    def validate(self, delta0: float):
        if not 0 < self.delta <= delta0:
            raise ConfigError(f"smoothing radius {self.delta} must lie in (0, {delta0}]")
        if int(self.b) != self.b or self.b < 1:
            raise ConfigError("batch size must be a positive integer")
        return self


def sample_sphere_batch(n: int, size: int, rng):
    """``size`` i.i.d. uniform unit vectors: normalised standard Gaussians."""
    if int(n) != n or n < 1:
        raise InputError("sphere dimension must be a positive integer")
    g = rng.standard_normal((size, n))
    r = np.linalg.norm(g, axis=1)
    bad = r == 0.0
    while np.any(bad):
        g[bad] = rng.standard_normal((int(bad.sum()), n))
        r[bad] = np.linalg.norm(g[bad], axis=1)
        bad = r == 0.0
    return g / r[:, None]


def sample_sphere(n: int, rng):
    return sample_sphere_batch(n, 1, rng)[0]


def sample_ball_batch(n: int, size: int, rng):
    """Uniform points in the unit ball: sphere draw scaled by ``U**(1/n)``."""
    w = sample_sphere_batch(n, size, rng)
    return w * rng.random(size)[:, None] ** (1.0 / n)


def fd_directional(h_eval, x, w, delta: float):
    """Forward difference ``(h(x + delta w) - h(x)) / delta``."""
    if not delta > 0:
        raise InputError("delta must be positive")
    x = np.asarray(x, dtype=float)
    return (h_eval(x + delta * np.asarray(w)) - h_eval(x)) / delta


def spherical_grad(h_eval, x, delta: float, w):
    """Single-direction estimator ``n * w * fd_directional(h, x, w, delta)``.

    ``w`` may be a stack of directions ``(b, n)``; the result then has one
    row per direction.
    """
    w = np.asarray(w, dtype=float)
    return w.shape[-1] * w * np.asarray(fd_directional(h_eval, x, w, delta))[..., None]


def minibatch_H(h_eval, x, delta: float, b: int, rng, counter: OracleCounter | None = None,
                return_draws=False):
    """Average of ``b`` independent single-direction estimators at ``x``.

    ``h(x)`` is evaluated once and shared by all draws.
    """
    if int(b) != b or b < 1:
        raise InputError("batch size must be a positive integer")
    if not delta > 0:
        raise InputError("delta must be positive")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    W = sample_sphere_batch(n, int(b), rng)
    if counter is not None:
        counter.w_samples += int(b)
    draws = n * W * ((h_eval(x + delta * W) - h_eval(x)) / delta)[:, None]
    if return_draws:
        return draws.mean(axis=0), draws, W
    return draws.mean(axis=0)


def smoothed_value_mc(h_eval, x, delta: float, samples: int, rng, full_output=False):
    """Monte-Carlo estimate of the ball average ``E h(x + delta U)``."""
    if int(samples) != samples or samples < 1:
        raise InputError("samples must be a positive integer")
    x = np.asarray(x, dtype=float)
    vals = h_eval(x + delta * sample_ball_batch(x.shape[-1], int(samples), rng))
    mean = float(vals.mean())
    if full_output:
        se = float(vals.std(ddof=1) / np.sqrt(samples)) if samples > 1 else float("inf")
        return mean, se
    return mean


def player_cost(game: HierarchicalGame, i: int, eps: float = 0.0, tol=None):
    """Vectorised ``h_i`` (``eps == 0``) or ``h_i^eps`` for player ``i``."""
    if eps < 0:
        raise InputError("eps must be nonnegative")
    if eps == 0.0:
        return lambda p: implicit_cost(game, i, p, tol)
    return lambda p: implicit_cost_inexact(game, i, p, eps)


def spherical_grad_inexact(game: HierarchicalGame, i: int, x_i, delta: float, eps: float, w, rng=None):
    """Single-direction estimator built on the ``eps``-inexact implicit cost.

    ``eps == 0`` runs the exact follower solve, reproducing
    :func:`spherical_grad` on the exact oracle bit for bit.
    """
    if not 0 < delta <= game.delta0:
        raise ConfigError(f"smoothing radius {delta} must lie in (0, {game.delta0}]")
    return spherical_grad(player_cost(game, i, eps), x_i, delta, w)

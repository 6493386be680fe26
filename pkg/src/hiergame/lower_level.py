"""Follower problems: affine strongly monotone VIs and their solvers.

The follower map is ``phi(x, y) = B y - d - P x`` on a projectable set ``Y``.
Both solvers run the projected fixed-point iteration

    y <- proj_Y(y - step * phi(x, y)),   y0 = proj_Y(0),

which contracts with factor ``rho = sqrt(1 - 2 step mu + step**2 L**2)``.
All routines accept one leader point ``x`` of shape ``(n_i,)`` or a stack of
points ``(batch, n_i)``; each point stops independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, InputError
from .geometry import ConvexSetSpec

__all__ = [
    "LowerLevelVI",
    "ViSolverConfig",
    "default_config",
    "contraction_factor",
    "solve_vi_exact",
    "solve_vi_inexact",
    "inexact_iteration_count",
    "residual",
]


@dataclass(frozen=True, eq=False)
class LowerLevelVI:
    B: np.ndarray
    d: np.ndarray
    P: np.ndarray
    Y: ConvexSetSpec

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        d = np.asarray(self.d, dtype=float).reshape(-1)
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        m = B.shape[0]
        if B.shape != (m, m) or d.shape != (m,) or P.shape[0] != m or self.Y.dim != m:
            raise InputError("inconsistent lower-level dimensions")
        for a in (B, d, P):
            a.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "P", P)
        mu = float(np.linalg.eigvalsh(0.5 * (B + B.T)).min())
        if mu <= 0:
            raise ConfigError(f"lower-level map is not strongly monotone (mu={mu:.3g})")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "L", float(np.linalg.norm(B, 2)))

    @property
    def m(self):
        return self.B.shape[0]

    @property
    def n(self):
        return self.P.shape[1]

    def phi(self, x, y):
        return y @ self.B.T - self.d - x @ self.P.T

    def solution_map_lipschitz(self):
        """Lipschitz constant ||P|| / mu of x -> y(x)."""
        return float(np.linalg.norm(self.P, 2)) / self.mu


@dataclass(frozen=True)
class ViSolverConfig:
    step: float
    max_iters: int = 100_000
    tol: float = 1e-12


def default_config(vi: LowerLevelVI, tol=1e-12, max_iters=100_000) -> ViSolverConfig:
    """Step ``mu / L**2``, the minimiser of the contraction factor."""
    return ViSolverConfig(step=vi.mu / vi.L**2, max_iters=max_iters, tol=tol)


def contraction_factor(vi: LowerLevelVI, cfg: ViSolverConfig) -> float:
    g = cfg.step
    rho2 = 1.0 - 2.0 * g * vi.mu + g * g * vi.L**2
    if not g > 0 or rho2 >= 1.0:
        raise ConfigError(f"step {g} does not give a contraction (need 0 < step < 2 mu / L^2)")
    return math.sqrt(max(rho2, 0.0))


def _prepare(vi, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (vi.n,) or x.ndim > 2:
        raise InputError(f"leader point must have shape ({vi.n},) or (batch, {vi.n}), got {x.shape}")
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    y = np.broadcast_to(vi.Y.project(np.zeros(vi.m)), (x2.shape[0], vi.m)).copy()
    return single, x2, y


def _step(vi, x, y, step):
    return vi.Y.project(y - step * vi.phi(x, y))


def solve_vi_exact(vi: LowerLevelVI, x_i, cfg: ViSolverConfig | None = None, full_output=False):
    """Solve the follower VI until the natural residual is at most ``cfg.tol``.

    Returns ``y`` (same leading shape as ``x_i``) or ``(y, info)`` when
    ``full_output`` is set; ``info`` holds per-point ``iterations`` and the
    history of the largest active residual.
    """
    cfg = cfg or default_config(vi)
    contraction_factor(vi, cfg)
    single, x, y = _prepare(vi, x_i)
    iters = np.zeros(x.shape[0], dtype=int)
    active = np.arange(x.shape[0])
    history = []
    for k in range(cfg.max_iters + 1):
        ya = y[active]
        y_next = _step(vi, x[active], ya, cfg.step)
        r = np.linalg.norm(y_next - ya, axis=-1)
        history.append(float(r.max()))
        y[active] = y_next
        done = r <= cfg.tol
        iters[active] = k + 1
        active = active[~done]
        if active.size == 0:
            break
    else:
        raise ConvergenceError("lower-level solve did not reach tolerance", history[-1], cfg.max_iters)
    out = y[0] if single else y
    if full_output:
        return out, {"iterations": iters[0] if single else iters, "residuals": history}
    return out


def inexact_iteration_count(rho: float, first_gap, eps: float, diam: float):
    """Smallest k with ``rho**k * first_gap / (1 - rho) <= eps`` (vectorised)."""
    first_gap = np.asarray(first_gap, dtype=float)
    k = np.zeros(first_gap.shape, dtype=int)
    if eps >= diam:
        return k
    need = first_gap / (1.0 - rho) > eps
    if rho == 0.0:
        k[need] = 1
        return k
    with np.errstate(divide="ignore"):
        ratio = np.log(eps * (1.0 - rho) / np.where(need, first_gap, 1.0)) / math.log(rho)
    k[need] = np.ceil(ratio[need]).astype(int)
    return np.maximum(k, 0)


def solve_vi_inexact(vi: LowerLevelVI, x_i, eps: float, cfg: ViSolverConfig | None = None,
                     full_output=False):
    """Return ``y_eps`` with ``||y_eps - y(x_i)|| <= eps`` guaranteed.

    The iteration count comes from the a-priori contraction bound
    ``rho**k ||y1 - y0|| / (1 - rho)``; no solution is needed to certify it.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    cfg = cfg or default_config(vi)
    rho = contraction_factor(vi, cfg)
    single, x, y0 = _prepare(vi, x_i)
    y1 = _step(vi, x, y0, cfg.step)
    k = inexact_iteration_count(rho, np.linalg.norm(y1 - y0, axis=-1), eps, vi.Y.diameter())
    if k.max(initial=0) > cfg.max_iters:
        raise ConvergenceError("inexact solve needs more iterations than allowed",
                               float("nan"), int(k.max()))
    y = np.where((k >= 1)[:, None], y1, y0)
    for j in range(2, int(k.max(initial=0)) + 1):
        sel = k >= j
        y[sel] = _step(vi, x[sel], y[sel], cfg.step)
    out = y[0] if single else y
    if full_output:
        return out, {"iterations": k[0] if single else k, "rho": rho}
    return out


def residual(vi: LowerLevelVI, x_i, y, cfg: ViSolverConfig | None = None):
    """Natural residual ``||y - proj_Y(y - step phi(x, y))||``."""
    cfg = cfg or default_config(vi)
    x = np.asarray(x_i, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.linalg.norm(y - _step(vi, x, y, cfg.step), axis=-1)

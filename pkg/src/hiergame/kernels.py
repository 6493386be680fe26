"""Backend selection for the hot loops.

Two interchangeable backends implement ``implicit_values`` and
``sfbf_inner``:

* ``compiled``: the Cython extension ``_ckernels``, restricted to games whose
  leader and follower sets are all boxes (every built-in benchmark);
* ``python``: the numpy reference in ``_pykernels``, valid for any game.

The default is ``compiled`` when the extension imports and the game is
supported, ``python`` otherwise. ``HIERGAME_BACKEND=python`` (or
``compiled``) overrides the default process-wide.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from . import _pykernels
from .errors import ConfigError, ConvergenceError, NumericError
from .geometry import box_bounds
from .lower_level import contraction_factor

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None

__all__ = ["HAVE_COMPILED", "default_backend", "resolve", "implicit_values", "sfbf_inner",
           "supports_compiled"]

log = logging.getLogger(__name__)

HAVE_COMPILED = _ckernels is not None
_COST_KIND = {"zero": 0, "bilinear": 1, "quadratic_in_y": 2}


def default_backend() -> str:
    env = os.environ.get("HIERGAME_BACKEND", "").strip().lower()
    if env in ("python", "compiled"):
        return env
    if env:
        log.warning("ignoring unknown HIERGAME_BACKEND=%r", env)
    return "compiled" if HAVE_COMPILED else "python"


def supports_compiled(game) -> bool:
    if not HAVE_COMPILED:
        return False
    boxes = list(game.sets) + [vi.Y for vi in game.lower]
    return all(box_bounds(s) is not None for s in boxes)


def _pack(game):
    cached = getattr(game, "_cpack", None)
    if cached is not None:
        return cached
    N = game.N
    n_off = np.asarray(game.offsets, dtype=np.intp)
    m_off = np.cumsum([0] + [vi.m for vi in game.lower]).astype(np.intp)

    def flat(mats):
        offs = np.cumsum([0] + [m.size for m in mats]).astype(np.intp)
        data = np.concatenate([np.ascontiguousarray(m, dtype=float).ravel() for m in mats]) \
            if offs[-1] else np.zeros(1)
        return data, offs[:-1].copy()

    B, B_off = flat([vi.B for vi in game.lower])
    P, P_off = flat([vi.P for vi in game.lower])
    A_list, c_list = [], []
    for vi, cost, s in zip(game.lower, game.costs, game.sets):
        A_list.append(cost.A if cost.kind == "bilinear" else np.zeros((s.dim, vi.m)))
        c_list.append(cost.c if cost.kind == "quadratic_in_y" else np.zeros(vi.m))
    A, A_off = flat(A_list)
    ylo = np.concatenate([box_bounds(vi.Y)[0] for vi in game.lower]).astype(float)
    yhi = np.concatenate([box_bounds(vi.Y)[1] for vi in game.lower]).astype(float)
    xlo = np.concatenate([box_bounds(s)[0] for s in game.sets]).astype(float)
    xhi = np.concatenate([box_bounds(s)[1] for s in game.sets]).astype(float)
    cfgs = game.solver_configs
    Ms, qs = game.oracle.component_stack()
    pack = _ckernels.CPack({
        "N": N, "n": game.n, "n_off": n_off, "m_off": m_off,
        "B": B, "B_off": B_off, "P": P, "P_off": P_off, "A": A, "A_off": A_off,
        "d": np.concatenate([vi.d for vi in game.lower]).astype(float),
        "c": np.concatenate(c_list).astype(float),
        "ylo": ylo, "yhi": yhi, "xlo": xlo, "xhi": xhi,
        "gam_y": np.array([c.step for c in cfgs], dtype=float),
        "rho": np.array([contraction_factor(vi, c) for vi, c in zip(game.lower, cfgs)], dtype=float),
        "ytol": np.array([c.tol for c in cfgs], dtype=float),
        "ymax": np.array([c.max_iters for c in cfgs], dtype=np.intp),
        "ydiam": np.array([vi.Y.diameter() for vi in game.lower], dtype=float),
        "kind": np.array([_COST_KIND[c.kind] for c in game.costs], dtype=np.intp),
        "Ms": np.ascontiguousarray(Ms, dtype=float),
        "qs": np.ascontiguousarray(qs, dtype=float),
    })
    object.__setattr__(game, "_cpack", pack)
    return pack


def resolve(game, backend: str | None = None) -> str:
    """Name of the backend that will run ``game``.

    An explicit ``backend='compiled'`` on an unsupported game is an error;
    the automatic choice falls back to ``python`` quietly.
    """
    if backend is None:
        backend = default_backend()
        if backend == "compiled" and not supports_compiled(game):
            return "python"
        return backend
    if backend not in ("python", "compiled"):
        raise ConfigError(f"unknown backend {backend!r}")
    if backend == "compiled" and not supports_compiled(game):
        reason = "extension not built" if not HAVE_COMPILED else "game has non-box sets"
        raise ConfigError(f"compiled backend unavailable: {reason}")
    return backend


def implicit_values(game, i, pts, eps=0.0, backend=None):
    """``h_i`` (``eps == 0``) or ``h_i^eps`` at each row of ``pts``."""
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
    if resolve(game, backend) == "python":
        return _pykernels.implicit_values(game, i, pts, float(eps))
    out = _ckernels.implicit_values(_pack(game), int(i), pts, float(eps))
    if out is None:
        raise ConvergenceError("lower-level solve did not reach tolerance", float("nan"),
                               game.solver_configs[i].max_iters)
    return out


def sfbf_inner(game, xbar, F, gamma, eta, delta, eps, idx, noise, W, backend=None, epoch=-1):
    """Run the inner loop on the selected backend.

    Returns ``(z_K, z_half, solves)``; raises :class:`NumericError` on a
    non-finite iterate.
    """
    xbar = np.ascontiguousarray(xbar, dtype=float)
    F = np.ascontiguousarray(F, dtype=float)
    idx = np.ascontiguousarray(idx, dtype=np.intp)
    noise = np.ascontiguousarray(noise, dtype=float)
    W = np.ascontiguousarray(W, dtype=float)
    args = (xbar, F, float(gamma), float(eta), float(delta), float(eps), idx, noise, W)
    if resolve(game, backend) == "python":
        z, zh, solves, status, bad = _pykernels.sfbf_inner(game, *args)
    else:
        z, zh, solves, status, bad = _ckernels.sfbf_inner(_pack(game), *args)
    if status == 2:
        raise ConvergenceError(f"lower-level solve failed at epoch {epoch}, step {bad}",
                               float("nan"), -1)
    if status != 0:
        raise NumericError(f"non-finite iterate at epoch {epoch}, inner step {bad}", epoch, bad)
    return z, zh, solves

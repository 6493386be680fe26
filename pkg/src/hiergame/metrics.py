"""Deterministic ground truth for affine mixed variational inequalities.

The problems handled here have the form: find ``x`` in ``X`` with

    <M x + q, z - x> + h(z) - h(x) >= 0   for all z in X,

with ``h(x) = 0.5 x'Qx + r'x + s`` convex. This is exactly the upper-level
problem of a benchmark game once the follower responses are substituted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, ConvergenceError, InputError
from .game import _enlarged_vertices
from .geometry import ConvexSetSpec, Product, box_bounds

__all__ = [
    "MviProblem",
    "GapConfig",
    "gap",
    "gap_maximizer",
    "natural_residual",
    "solve_mvi",
    "least_norm",
    "tik_path_check",
    "oracle_count",
    "assemble_mvi",
]

_PSD_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MviProblem:
    M: np.ndarray
    q: np.ndarray
    Q: np.ndarray
    r: np.ndarray
    s: float
    X: ConvexSetSpec

    def __post_init__(self):
        n = self.X.dim
        for name, shape in (("M", (n, n)), ("q", (n,)), ("Q", (n, n)), ("r", (n,))):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != shape:
                raise InputError(f"{name} must have shape {shape}, got {a.shape}")
            object.__setattr__(self, name, a)
        if not np.allclose(self.Q, self.Q.T, atol=1e-12):
            raise InputError("Q must be symmetric")

    @property
    def n(self):
        return self.X.dim

    def check_monotone(self):
        lam_m = np.linalg.eigvalsh(0.5 * (self.M + self.M.T)).min()
        lam_q = np.linalg.eigvalsh(self.Q).min()
        if lam_m < -_PSD_TOL or lam_q < -_PSD_TOL:
            raise ConfigError(f"problem is not monotone/convex (min eig sym(M)={lam_m:.3g}, Q={lam_q:.3g})")

    def V(self, x):
        return self.M @ x + self.q

    def h(self, x):
        return 0.5 * x @ self.Q @ x + self.r @ x + self.s

    def grad_h(self, x):
        return self.Q @ x + self.r

    def field(self, x, eta=0.0):
        return self.M @ x + self.q + self.Q @ x + self.r + eta * x


@dataclass(frozen=True)
class GapConfig:
    tol: float = 1e-12
    max_iters: int = 200_000


def _gap_objective(p, x, z):
    return p.V(z) @ (x - z) + p.h(x) - p.h(z)


def gap_maximizer(problem: MviProblem, x, cfg: GapConfig | None = None):
    """Maximiser ``z`` and value of the inner sup defining the gap."""
    cfg = cfg or GapConfig()
    problem.check_monotone()
    x = np.asarray(x, dtype=float)
    p = problem
    # objective is concave with Hessian -(M + M' + Q)
    L = max(float(np.linalg.norm(p.M + p.M.T + p.Q, 2)), 1e-12)
    lin = p.M.T @ x - p.q - p.r
    H = p.M + p.M.T + p.Q
    z = p.X.project(x)
    for _ in range(cfg.max_iters):
        grad = lin - H @ z
        z_next = p.X.project(z + grad / L)
        if L * np.linalg.norm(z_next - z) <= cfg.tol:
            z = z_next
            break
        z = z_next
    else:
        raise ConvergenceError("gap maximisation did not converge", L * np.linalg.norm(z_next - z),
                               cfg.max_iters)
    return z, float(_gap_objective(p, x, z))


def gap(problem: MviProblem, x, cfg: GapConfig | None = None) -> float:
    """Gap function ``sup_z <V(z), x - z> + h(x) - h(z)`` over ``z`` in X.

    Computed by projected gradient ascent from ``z = x``; the ascent is
    monotone, so the returned value is never below the trivial bound 0.
    """
    return gap_maximizer(problem, x, cfg)[1]


def natural_residual(problem: MviProblem, x, eta=0.0):
    return float(np.linalg.norm(x - problem.X.project(x - problem.field(x, eta))))


def solve_mvi(problem: MviProblem, eta: float = 0.0, tol: float = 1e-12, x0=None,
              max_iters: int = 1_000_000):
    """Deterministic forward-backward-forward solve of the ``eta``-regularised MVI.

    Fixed step ``0.9 / (||M|| + ||Q|| + eta)``; stops once the natural
    residual of the projected point is at most ``tol``. For ``eta > 0`` the
    output approximates the unique Tikhonov point ``s(eta)``; for ``eta = 0``
    it is some solution, not necessarily the least-norm one.
    """
    if eta < 0:
        raise InputError("eta must be nonnegative")
    problem.check_monotone()
    p = problem
    step = 0.9 / (np.linalg.norm(p.M, 2) + np.linalg.norm(p.Q, 2) + eta)
    x = p.X.project(np.zeros(p.n) if x0 is None else np.asarray(x0, dtype=float))
    A = p.M + p.Q + eta * np.eye(p.n)
    c = p.q + p.r
    Fx = A @ x + c
    res = np.inf
    for _ in range(max_iters):
        y = p.X.project(x - step * Fx)
        Fy = A @ y + c
        res = np.linalg.norm(y - p.X.project(y - Fy))
        if res <= tol:
            return y
        x = y - step * (Fy - Fx)
        Fx = A @ x + c
    raise ConvergenceError("forward-backward-forward solve did not converge", float(res), max_iters)


def least_norm(problem: MviProblem, tol: float = 1e-8, eta0: float = 1.0, max_halvings: int = 80,
               inner_tol: float = 1e-13):
    """Least-norm solution via Tikhonov continuation ``eta_j = eta0 * 2**-j``."""
    prev = solve_mvi(problem, eta0, tol=inner_tol)
    eta = eta0
    for _ in range(max_halvings):
        eta *= 0.5
        cur = solve_mvi(problem, eta, tol=inner_tol, x0=prev)
        if np.linalg.norm(cur - prev) <= tol:
            return cur
        prev = cur
    raise ConvergenceError("Tikhonov continuation budget exhausted", float(np.linalg.norm(cur - prev)),
                           max_halvings)


def tik_path_check(problem: MviProblem, etas, tol: float = 1e-10, x_ln=None):
    """Check ``|eta_t - eta_{t-1}| / eta_t * ||x_ln|| >= ||s_t - s_{t-1}|| - 2 tol``.

    ``etas`` must be strictly decreasing and positive; a constant pair is
    also accepted (both sides vanish). Returns a report dict.
    """
    etas = [float(e) for e in etas]
    if any(e <= 0 for e in etas) or any(b > a for a, b in zip(etas, etas[1:])):
        raise InputError("etas must be positive and non-increasing")
    if x_ln is None:
        x_ln = least_norm(problem, tol=tol)
    norm_ln = float(np.linalg.norm(x_ln))
    path = []
    x0 = None
    for e in etas:
        x0 = solve_mvi(problem, e, tol=min(tol, 1e-12), x0=x0)
        path.append(x0)
    pairs = []
    for t in range(1, len(etas)):
        lhs = abs(etas[t] - etas[t - 1]) / etas[t] * norm_ln
        rhs = float(np.linalg.norm(path[t] - path[t - 1]))
        pairs.append({"eta_prev": etas[t - 1], "eta": etas[t], "lhs": lhs, "rhs": rhs,
                      "ok": lhs >= rhs - 2 * tol})
    return {"ok": all(p["ok"] for p in pairs), "pairs": pairs, "least_norm": x_ln,
            "path": np.array(path)}


def oracle_count(T: int, K: int, b_list, N: int) -> int:
    """Total random variables drawn: ``2 K T N + 2 N sum(b_t)``."""
    b_list = [int(b) for b in b_list]
    if len(b_list) != T:
        raise InputError("b_list must have one entry per outer epoch")
    return 2 * K * T * N + 2 * N * sum(b_list)


def _followers_interior(game):
    for s, vi in zip(game.sets, game.lower):
        xb, yb = box_bounds(s), box_bounds(vi.Y)
        if xb is None or yb is None:
            return False
        V = _enlarged_vertices(s, game.delta0)
        Y = np.linalg.solve(vi.B, (vi.d + V @ vi.P.T).T).T
        if np.any(Y <= yb[0]) or np.any(Y >= yb[1]):
            return False
    return True


def assemble_mvi(game) -> MviProblem:
    """Upper-level MVI of a benchmark game with its analytic implicit costs."""
    if not _followers_interior(game):
        raise InputError("assemble_mvi needs box sets with followers interior on X + delta0 B")
    parts = [game.analytic_implicit(i) for i in range(game.N)]
    Q = scipy.linalg.block_diag(*[np.atleast_2d(p[0]) for p in parts])
    r = np.concatenate([p[1] for p in parts])
    s = float(sum(p[2] for p in parts))
    return MviProblem(game.oracle.M, game.oracle.q, Q, r, s, Product(tuple(game.sets)))

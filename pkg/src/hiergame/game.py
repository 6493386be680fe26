"""Hierarchical N-player games with affine leaders and affine followers.

A game couples

* a stochastic leader field ``V(x) = M x + q`` observed through additive
  Gaussian noise or through uniformly sampled finite-sum components,
* per-player follower VIs ``B y - d - P x`` (see :mod:`hiergame.lower_level`),
* coupling costs ``g_i(x_i, y_i)`` that turn the follower response into the
  implicit cost ``h_i(x_i) = g_i(x_i, y_i(x_i))``.

Three benchmark instances with known equilibria are available through
:func:`make_benchmark`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InputError
from .geometry import Box, ConvexSetSpec, Product, box_bounds, distance
from .lower_level import (
    LowerLevelVI,
    ViSolverConfig,
    default_config,
    solve_vi_exact,
    solve_vi_inexact,
)

__all__ = [
    "StrategyProfile",
    "UpperLevelOracle",
    "CouplingCost",
    "HierarchicalGame",
    "OracleCounter",
    "LowerLevelVI",
    "sample_upper_gradient",
    "true_upper_gradient",
    "minibatch_V",
    "implicit_cost",
    "implicit_cost_inexact",
    "make_benchmark",
    "BENCHMARKS",
]

BENCHMARKS = ("quad-duopoly", "nonunique-line", "hier-chain")
DELTA0 = 0.25
# Benchmark followers stay uniquely solvable (and interior) well beyond X + DELTA0 B.
# The wider query domain admits anchors that the unprojected full step pushes
# slightly outside X.
DOMAIN_RADIUS = 1.0


@dataclass
class OracleCounter:
    """Random-variable counts; one xi or one W draw per player is one unit."""

    xi_samples: int = 0
    w_samples: int = 0
    lower_level_solves: int = 0

    def as_dict(self):
        return {"xi_samples": self.xi_samples, "w_samples": self.w_samples,
                "lower_level_solves": self.lower_level_solves}


@dataclass(frozen=True, eq=False)
class StrategyProfile:
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks",
                           tuple(np.asarray(b, dtype=float).reshape(-1) for b in self.blocks))

    @property
    def n(self):
        return sum(b.size for b in self.blocks)

    def flatten(self):
        return np.concatenate(self.blocks)

    @classmethod
    def unflatten(cls, x, dims):
        x = np.asarray(x, dtype=float)
        if x.shape != (sum(dims),):
            raise InputError(f"profile of length {sum(dims)} expected, got shape {x.shape}")
        offs = np.cumsum([0, *dims])
        return cls(tuple(x[a:b].copy() for a, b in zip(offs[:-1], offs[1:])))


@dataclass(frozen=True, eq=False)
class UpperLevelOracle:
    """Stochastic oracle for ``V(x) = M x + q``.

    ``affine_gaussian`` adds ``noise_scale * N(0, I)`` to ``V(x)``.
    ``finite_sum`` picks one of ``len(components)`` pairs ``(M_j, q_j)``
    uniformly; their average must equal ``(M, q)``.
    """

    M: np.ndarray
    q: np.ndarray
    noise_scale: np.ndarray
    mode: str = "affine_gaussian"
    components: tuple = ()

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        q = np.asarray(self.q, dtype=float).reshape(-1)
        n = q.size
        sigma = np.broadcast_to(np.asarray(self.noise_scale, dtype=float), (n,)).copy()
        if M.shape != (n, n):
            raise InputError("M must be n x n with n = len(q)")
        if np.any(sigma < 0):
            raise InputError("noise_scale must be nonnegative")
        if self.mode not in ("affine_gaussian", "finite_sum"):
            raise InputError(f"unknown oracle mode {self.mode!r}")
        comps = tuple((np.asarray(Mj, dtype=float), np.asarray(qj, dtype=float))
                      for Mj, qj in self.components)
        if self.mode == "finite_sum":
            if not comps:
                raise InputError("finite_sum mode needs components")
            Ms = np.stack([c[0] for c in comps])
            qs = np.stack([c[1] for c in comps])
            if not (np.allclose(Ms.mean(0), M, atol=1e-12) and np.allclose(qs.mean(0), q, atol=1e-12)):
                raise InputError("finite_sum components must average to (M, q)")
        for a in (M, q, sigma):
            a.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "noise_scale", sigma)
        object.__setattr__(self, "components", comps)

    @property
    def n(self):
        return self.q.size

    def component_stack(self):
        """``(Ms, qs)`` stacks; Gaussian mode yields the single pair ``(M, q)``."""
        if self.mode == "finite_sum":
            return (np.stack([c[0] for c in self.components]),
                    np.stack([c[1] for c in self.components]))
        return self.M[None], self.q[None]

    @property
    def lipschitz(self):
        Ms, _ = self.component_stack()
        return float(max(np.linalg.norm(Mj, 2) for Mj in Ms))

    @property
    def variance_bound(self):
        """``M_V`` with ``E||V_hat - V||^2 <= M_V**2``; exact in Gaussian mode."""
        if self.mode == "affine_gaussian":
            return float(np.linalg.norm(self.noise_scale))
        return float("nan")


@dataclass(frozen=True, eq=False)
class CouplingCost:
    """``bilinear``: x^T A y; ``quadratic_in_y``: 0.5||y||^2 + c^T y; ``zero``."""

    kind: str
    A: np.ndarray | None = None
    c: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "bilinear":
            object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        elif self.kind == "quadratic_in_y":
            object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(-1))
        elif self.kind != "zero":
            raise InputError(f"unknown coupling cost {self.kind!r}")

    def value(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "bilinear":
            return np.sum(x * (y @ self.A.T), axis=-1)
        if self.kind == "quadratic_in_y":
            return 0.5 * np.sum(y * y, axis=-1) + y @ self.c
        return np.zeros(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))

    def grad_y(self, x, y):
        if self.kind == "bilinear":
            return np.asarray(x, dtype=float) @ self.A
        if self.kind == "quadratic_in_y":
            return np.asarray(y, dtype=float) + self.c
        return np.zeros_like(np.asarray(y, dtype=float))


@dataclass(frozen=True, eq=False)
class HierarchicalGame:
    name: str
    sets: tuple
    oracle: UpperLevelOracle
    lower: tuple
    costs: tuple
    delta0: float = DELTA0
    domain_radius: float | None = None
    lipschitz_h: tuple = ()
    lipschitz_y: tuple = ()   # L_{2,i}: Lipschitz constant of g_i(x_i, .)
    solver_configs: tuple = ()
    ground_truth: dict = field(default_factory=dict)
    x0: np.ndarray | None = None

    def __post_init__(self):
        N = len(self.sets)
        if not (len(self.lower) == len(self.costs) == N) or N == 0:
            raise InputError("sets, lower and costs must have one entry per player")
        dims = [s.dim for s in self.sets]
        if sum(dims) != self.oracle.n:
            raise InputError("oracle dimension does not match the strategy sets")
        for s, vi in zip(self.sets, self.lower):
            if vi.n != s.dim:
                raise InputError("follower coupling P must have n_i columns")
        object.__setattr__(self, "sets", tuple(self.sets))
        radius = self.delta0 if self.domain_radius is None else float(self.domain_radius)
        if not self.delta0 > 0 or radius < self.delta0:
            raise InputError("need 0 < delta0 <= domain_radius")
        object.__setattr__(self, "domain_radius", radius)
        object.__setattr__(self, "lower", tuple(self.lower))
        object.__setattr__(self, "costs", tuple(self.costs))
        if not self.solver_configs:
            object.__setattr__(self, "solver_configs", tuple(default_config(vi) for vi in self.lower))
        object.__setattr__(self, "X", Product(tuple(self.sets)))
        object.__setattr__(self, "offsets", np.cumsum([0, *dims]))
        x0 = self.X.project(np.zeros(sum(dims))) if self.x0 is None else np.asarray(self.x0, float)
        object.__setattr__(self, "x0", x0)

    @property
    def N(self):
        return len(self.sets)

    @property
    def dims(self):
        return [s.dim for s in self.sets]

    @property
    def n(self):
        return int(self.offsets[-1])

    def block(self, x, i):
        return np.asarray(x)[..., self.offsets[i]:self.offsets[i + 1]]

    def profile(self, x):
        return StrategyProfile.unflatten(x, self.dims)

    def in_enlarged(self, x, i=None, slack=0.0):
        """True iff ``x`` lies in the oracle domain ``X + domain_radius * B``.

        Checks player ``i``'s block only when ``i`` is given.
        """
        s = self.X if i is None else self.sets[i]
        lim = self.domain_radius + slack
        return bool(np.all(distance(s, x) <= lim * (1 + 1e-12) + 1e-15))

    def analytic_implicit(self, i):
        """Quadratic data ``(Q, r, s)`` with ``h_i(x) = 0.5 x'Qx + r'x + s``.

        Valid while the follower solution ``B^{-1}(d + P x)`` stays interior in
        ``Y_i``; every benchmark is built so that this holds on ``X_{i,delta0}``.
        """
        vi, cost = self.lower[i], self.costs[i]
        Binv = np.linalg.inv(vi.B)
        G = Binv @ vi.P
        e = Binv @ vi.d
        if cost.kind == "bilinear":
            AG = cost.A @ G
            return AG + AG.T, cost.A @ e, 0.0
        if cost.kind == "quadratic_in_y":
            return G.T @ G, G.T @ (e + cost.c), float(0.5 * e @ e + cost.c @ e)
        k = vi.n
        return np.zeros((k, k)), np.zeros(k), 0.0


def _as_profile_array(game, x):
    if isinstance(x, StrategyProfile):
        x = x.flatten()
    x = np.asarray(x, dtype=float)
    if x.shape != (game.n,):
        raise InputError(f"strategy profile of length {game.n} expected, got shape {x.shape}")
    return x


def true_upper_gradient(game: HierarchicalGame, x):
    x = _as_profile_array(game, x)
    return game.oracle.M @ x + game.oracle.q


def _check_domain(game, x):
    if not game.in_enlarged(x):
        raise DomainError(f"point {x} lies outside X + {game.domain_radius}*B")


def _sample_fields(game, x, b, rng):
    """``b`` i.i.d. oracle samples at ``x``, each player drawing its own xi."""
    o = game.oracle
    if o.mode == "affine_gaussian":
        return (o.M @ x + o.q) + o.noise_scale * rng.standard_normal((b, game.n))
    Ms, qs = o.component_stack()
    vals = Ms @ x + qs
    idx = rng.integers(len(Ms), size=(b, game.N))
    out = np.empty((b, game.n))
    for i in range(game.N):
        a, c = game.offsets[i], game.offsets[i + 1]
        out[:, a:c] = vals[idx[:, i], a:c]
    return out


def sample_upper_gradient(game: HierarchicalGame, x, rng, counter: OracleCounter | None = None):
    """One draw ``V_hat(x, xi)``; counts one xi per player."""
    x = _as_profile_array(game, x)
    _check_domain(game, x)
    if counter is not None:
        counter.xi_samples += game.N
    return _sample_fields(game, x, 1, rng)[0]


def minibatch_V(game: HierarchicalGame, x, b: int, rng, counter: OracleCounter | None = None):
    """Average of ``b`` independent oracle draws at ``x``."""
    if int(b) != b or b < 1:
        raise InputError("batch size must be a positive integer")
    x = _as_profile_array(game, x)
    _check_domain(game, x)
    if counter is not None:
        counter.xi_samples += int(b) * game.N
    o = game.oracle
    if o.mode == "affine_gaussian":
        # average the noise, not the samples, so noise_scale = 0 returns V(x) exactly
        return (o.M @ x + o.q) + o.noise_scale * rng.standard_normal((int(b), game.n)).mean(axis=0)
    return _sample_fields(game, x, int(b), rng).mean(axis=0)


def _solver_cfg(game, i, tol):
    cfg = game.solver_configs[i]
    if tol is not None:
        cfg = ViSolverConfig(step=cfg.step, max_iters=cfg.max_iters, tol=tol)
    return cfg


def _check_block_domain(game, i, x_i):
    if not game.in_enlarged(x_i, i):
        raise DomainError(f"player {i} point lies outside X_i + {game.domain_radius}*B")


def implicit_cost(game: HierarchicalGame, i: int, x_i, tol=None):
    """``h_i(x_i)`` with the follower solved to natural residual ``tol``."""
    x_i = np.asarray(x_i, dtype=float)
    _check_block_domain(game, i, x_i)
    y = solve_vi_exact(game.lower[i], x_i, _solver_cfg(game, i, tol))
    return game.costs[i].value(x_i, y)


def implicit_cost_inexact(game: HierarchicalGame, i: int, x_i, eps: float, rng=None):
    """``h_i^eps(x_i) = g_i(x_i, y^eps)`` with ``||y^eps - y(x_i)|| <= eps``.

    The follower solve is deterministic, so ``rng`` is accepted for interface
    symmetry only.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    x_i = np.asarray(x_i, dtype=float)
    _check_block_domain(game, i, x_i)
    y = solve_vi_inexact(game.lower[i], x_i, eps, game.solver_configs[i])
    return game.costs[i].value(x_i, y)


# -- benchmark construction -------------------------------------------------

def _vertices(lo, hi):
    return np.array(list(itertools.product(*zip(lo, hi))), dtype=float)


def _enlarged_vertices(s: ConvexSetSpec, delta0):
    lo, hi = box_bounds(s)
    return _vertices(lo - delta0, hi + delta0)


def _lipschitz_constants(sets, lower, costs, delta0):
    """``L_{h_i}`` and ``L_{2,i}`` over the box hull of ``X_i + delta0 B``.

    Both gradients are affine in the leader point (interior followers), so
    their norms peak at the hull's vertices.
    """
    Lh, L2 = [], []
    for s, vi, cost in zip(sets, lower, costs):
        V = _enlarged_vertices(s, delta0)
        Binv = np.linalg.inv(vi.B)
        Y = (vi.d + V @ vi.P.T) @ Binv.T
        if cost.kind == "bilinear":
            AG = cost.A @ Binv @ vi.P
            grad = V @ (AG + AG.T).T + cost.A @ Binv @ vi.d
            Lh.append(float(np.linalg.norm(grad, axis=1).max()))
            L2.append(float(np.linalg.norm(V @ cost.A, axis=1).max()))
        elif cost.kind == "quadratic_in_y":
            G = Binv @ vi.P
            grad = (Y + cost.c) @ G
            Lh.append(float(np.linalg.norm(grad, axis=1).max()))
            # margin 1 keeps the bound valid for follower errors eps <= 1
            L2.append(float(np.linalg.norm(Y + cost.c, axis=1).max()) + 1.0)
        else:
            Lh.append(0.0)
            L2.append(0.0)
    return tuple(Lh), tuple(L2)


def _finite_sum_components(M, q, scale, m, seed):
    rng = np.random.default_rng(seed)
    n = q.size
    E = rng.standard_normal((m, n, n)) * scale / np.sqrt(n)
    e = rng.standard_normal((m, n)) * scale
    E -= E.mean(0)
    e -= e.mean(0)
    return tuple((M + E[j], q + e[j]) for j in range(m))


def _build(name, sets, M, q, lower, costs, noise_scale, oracle_mode, components, x0,
           ground_truth, delta0=DELTA0, domain_radius=DOMAIN_RADIUS):
    comps = ()
    if oracle_mode == "finite_sum":
        comps = _finite_sum_components(M, q, noise_scale, components, seed=len(q) * 7919)
    oracle = UpperLevelOracle(M, q, noise_scale, mode=oracle_mode, components=comps)
    Lh, L2 = _lipschitz_constants(sets, lower, costs, delta0)
    return HierarchicalGame(name=name, sets=tuple(sets), oracle=oracle, lower=tuple(lower),
                            costs=tuple(costs), delta0=delta0,
                            domain_radius=domain_radius, lipschitz_h=Lh, lipschitz_y=L2,
                            ground_truth=ground_truth, x0=x0)


def make_benchmark(name: str, noise_scale: float | None = None, oracle_mode="affine_gaussian",
                   components: int = 8, block_dim: int | None = None, x0=None) -> HierarchicalGame:
    """Build one of the benchmark games listed in :data:`BENCHMARKS`.

    Parameters
    ----------
    name : str
        ``quad-duopoly``, ``nonunique-line`` or ``hier-chain``.
    noise_scale : float, optional
        Per-coordinate standard deviation of the leader noise (default 0.5).
    oracle_mode : str
        ``affine_gaussian`` or ``finite_sum``.
    components : int
        Number of finite-sum components when ``oracle_mode='finite_sum'``.
    block_dim : int, optional
        Per-player dimension; only ``hier-chain`` accepts values other than
        its default of 2.
    x0 : array_like, optional
        Starting profile; defaults to the projection of the origin.
    """
    sigma = 0.5 if noise_scale is None else float(noise_scale)
    if name == "quad-duopoly":
        if block_dim not in (None, 1):
            raise InputError("quad-duopoly has scalar players")
        sets = [Box([-1.0], [1.0]), Box([-1.0], [1.0])]
        M = np.array([[2.0, 1.0], [1.0, 2.0]])
        q = np.array([-1.0, -1.0])
        lower = [LowerLevelVI(np.eye(1), np.zeros(1), np.eye(1), Box([-2.0], [2.0])) for _ in range(2)]
        costs = [CouplingCost("bilinear", A=np.eye(1)) for _ in range(2)]
        x_star = np.linalg.solve(M + 2.0 * np.eye(2), -q)
        truth = {"x_star": x_star, "least_norm": x_star, "unique": True,
                 "description": "unique interior equilibrium (0.2, 0.2)"}
        return _build(name, sets, M, q, lower, costs, sigma, oracle_mode, components, x0, truth)

    if name == "nonunique-line":
        if block_dim not in (None, 1):
            raise InputError("nonunique-line has scalar players")
        sets = [Box([0.0], [1.0]), Box([0.0], [1.0])]
        M = np.ones((2, 2))
        q = np.array([-1.0, -1.0])
        lower = [LowerLevelVI(np.eye(1), np.zeros(1), np.zeros((1, 1)), Box([-1.0], [1.0]))
                 for _ in range(2)]
        costs = [CouplingCost("zero") for _ in range(2)]
        truth = {"x_star": np.array([0.5, 0.5]), "least_norm": np.array([0.5, 0.5]),
                 "unique": False, "description": "segment x1 + x2 = 1 inside [0, 1]^2"}
        return _build(name, sets, M, q, lower, costs, sigma, oracle_mode, components, x0, truth)

    if name == "hier-chain":
        k = 2 if block_dim is None else int(block_dim)
        if k < 1:
            raise InputError("block_dim must be positive")
        n = 2 * k
        # fixed-seed construction: M = 0.6 I + PSD + skew, so V is monotone, not symmetric
        rng = np.random.default_rng(20240601 + k)
        U = rng.uniform(-0.5, 0.5, (n, n))
        S = rng.uniform(-0.5, 0.5, (n, n))
        M = 0.6 * np.eye(n) + 0.3 * (U @ U.T) / n + 0.5 * (S - S.T)
        q = rng.uniform(-0.5, 0.5, n)
        B = np.eye(k) + 0.2 * np.ones((k, k)) / k
        half = 2.0 + 2.0 * np.sqrt(k)
        sets, lower, costs = [], [], []
        for _ in range(2):
            d = rng.uniform(-0.5, 0.5, k)
            sets.append(Box(-np.ones(k), np.ones(k)))
            lower.append(LowerLevelVI(B, d, np.eye(k), Box(-half * np.ones(k), half * np.ones(k))))
            costs.append(CouplingCost("quadratic_in_y", c=np.zeros(k)))
        game = _build(name, sets, M, q, lower, costs, sigma, oracle_mode, components, x0, {})
        from .metrics import assemble_mvi, solve_mvi
        x_star = solve_mvi(assemble_mvi(game), 0.0, tol=1e-13)
        game.ground_truth.update({"x_star": x_star, "least_norm": x_star, "unique": True,
                                  "description": "unique equilibrium of the assembled affine MVI"})
        return game

    raise InputError(f"unknown benchmark {name!r}; choose from {BENCHMARKS}")

"""Variance-reduced hierarchical game solver and its step-size schedules.

The outer loop (:func:`vrhgs`) anchors each epoch at ``x^t`` with
mini-batch estimates of the leader field and of the smoothed implicit-cost
gradient. The inner loop (:func:`sfbf`) then runs ``K`` stochastic
forward-backward-forward steps whose corrections reuse one fresh oracle draw
at two points, so the noise cancels to first order.

Setting ``eps_t > 0`` in the schedule swaps every implicit-cost evaluation
for its ``eps_t``-inexact counterpart.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError, InputError
from .game import HierarchicalGame, OracleCounter, minibatch_V
from .geometry import distance
from .smoothing import minibatch_H, sample_sphere_batch

__all__ = [
    "Schedule",
    "EpochInputs",
    "RunReport",
    "Streams",
    "theorem_gap_schedule",
    "inexact_gap_schedule",
    "as_convergence_schedule",
    "explicit_schedule",
    "check_schedule_conditions",
    "sfbf",
    "vrhgs",
]

log = logging.getLogger(__name__)

XI_TAG = 0
W_TAG = 1
_SLOPE_SLACK = 1e-3


# -- schedules ----------------------------------------------------------------

def _ro(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Schedule:
    """Per-epoch parameters of a run.

    ``generator`` optionally maps an integer array of epoch indices to a
    dict with keys ``gamma, eta, delta, b, eps``; it lets
    :func:`check_schedule_conditions` look past ``T``.
    """

    T: int
    K: int
    gamma: np.ndarray
    eta: np.ndarray
    delta: np.ndarray
    b: np.ndarray
    eps: np.ndarray
    name: str = "explicit"
    params: dict = field(default_factory=dict)
    generator: Callable | None = None

    def __post_init__(self):
        for key in ("gamma", "eta", "delta", "eps"):
            object.__setattr__(self, key, _ro(np.ravel(getattr(self, key))))
        b = np.ravel(np.asarray(self.b))
        if b.size and not np.all(np.asarray(b, dtype=float) == np.round(b)):
            raise ConfigError("batch sizes must be integers")
        object.__setattr__(self, "b", _ro(b, dtype=np.int64))

    def validate(self, delta0: float):
        """Raise :class:`ConfigError` unless the run is well-posed."""
        T = self.T
        if int(T) != T or T < 1:
            raise ConfigError("T must be a positive integer")
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError("K must be a positive integer")
        for key in ("gamma", "eta", "delta", "b", "eps"):
            if getattr(self, key).shape != (T,):
                raise ConfigError(f"{key} must have one entry per epoch ({T})")
            if not np.all(np.isfinite(getattr(self, key))):
                raise ConfigError(f"{key} must be finite")
        if np.any(self.gamma <= 0) or np.any(self.eta <= 0):
            raise ConfigError("gamma and eta must be positive")
        ge = self.gamma * self.eta
        if np.any(ge >= 0.5):
            t = int(np.argmax(ge >= 0.5))
            raise ConfigError(f"gamma_t * eta_t = {ge[t]:.4g} at t={t}; must lie in (0, 1/2)")
        if np.any(self.delta <= 0) or np.any(self.delta > delta0):
            raise ConfigError(f"delta_t must lie in (0, {delta0}]")
        if np.any(self.b < 1):
            raise ConfigError("batch sizes must be at least 1")
        if np.any(self.eps < 0):
            raise ConfigError("eps_t must be nonnegative")
        return self

    def eta_prev(self):
        """``eta_{t-1}`` with the convention ``eta_{-1} = eta_0``."""
        return np.concatenate([self.eta[:1], self.eta[:-1]])

    def to_dict(self):
        return {"name": self.name, "params": dict(self.params), "T": int(self.T), "K": int(self.K),
                "gamma": self.gamma.tolist(), "eta": self.eta.tolist(),
                "delta": self.delta.tolist(), "b": [int(v) for v in self.b],
                "eps": self.eps.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(T=d["T"], K=d["K"], gamma=d["gamma"], eta=d["eta"], delta=d["delta"],
                   b=d["b"], eps=d["eps"], name=d.get("name", "explicit"),
                   params=dict(d.get("params", {})))


def _check_T(T, lo=4):
    if isinstance(T, bool) or int(T) != T or T < lo:
        raise InputError(f"T must be an integer >= {lo} (so that delta_t = 1/T <= 0.25), got {T}")
    return int(T)


def theorem_gap_schedule(T: int) -> Schedule:
    """``gamma = eta = delta = 1/T``, ``K = T`` and ``b_t = T**2``."""
    T = _check_T(T)
    c = np.full(T, 1.0 / T)
    return Schedule(T=T, K=T, gamma=c, eta=c, delta=c, b=np.full(T, T * T), eps=np.zeros(T),
                    name="theorem_gap", params={"T": T})


def inexact_gap_schedule(T: int, exact: bool = False) -> Schedule:
    """:func:`theorem_gap_schedule` with follower accuracy ``eps_t = 1/T**2``.

    ``exact=True`` keeps ``eps_t = 0`` and so reproduces the exact schedule.
    """
    base = theorem_gap_schedule(T)
    eps = np.zeros(base.T) if exact else np.full(base.T, 1.0 / base.T**2)
    return Schedule(T=base.T, K=base.K, gamma=base.gamma, eta=base.eta, delta=base.delta,
                    b=base.b, eps=eps, name="inexact_gap", params={"T": base.T, "exact": bool(exact)})


def _as_sequences(t, gamma0, eta0, delta0):
    s = np.asarray(t, dtype=float) + 1.0
    return {"gamma": gamma0 * s**-0.6, "eta": eta0 * s**-0.25,
            "delta": np.minimum(delta0, s**-0.5), "b": np.ceil(s**0.5).astype(np.int64),
            "eps": np.zeros(s.shape)}


def as_convergence_schedule(T: int, gamma0: float, eta0: float, K: int = 5,
                            delta0: float = 0.25) -> Schedule:
    """Polynomially decaying schedule for last-iterate convergence.

    ``gamma_t = gamma0 (t+1)^-0.6``, ``eta_t = eta0 (t+1)^-0.25``,
    ``delta_t = min(delta0, (t+1)^-0.5)`` and ``b_t = ceil((t+1)^0.5)``.
    """
    T = _check_T(T, lo=1)
    if not (gamma0 > 0 and eta0 > 0):
        raise InputError("gamma0 and eta0 must be positive")
    if gamma0 * eta0 >= 0.5:
        raise InputError(f"gamma0 * eta0 = {gamma0 * eta0:.4g} must be below 1/2")
    if int(K) != K or K < 1:
        raise InputError("K must be a positive integer")

    def gen(t):
        return _as_sequences(t, gamma0, eta0, delta0)

    seq = gen(np.arange(T))
    return Schedule(T=T, K=int(K), name="as_convergence", generator=gen,
                    params={"T": T, "gamma0": gamma0, "eta0": eta0, "K": int(K)}, **seq)


def explicit_schedule(T: int, K: int, generator: Callable, name="explicit", params=None) -> Schedule:
    """Schedule from a closed-form ``generator(t) -> {gamma, eta, delta, b, eps}``.

    Missing ``delta``, ``b`` and ``eps`` default to 0.25, 1 and 0.
    """
    def gen(t):
        t = np.asarray(t)
        out = dict(generator(t))
        out.setdefault("delta", np.full(t.shape, 0.25))
        out.setdefault("b", np.ones(t.shape, dtype=np.int64))
        out.setdefault("eps", np.zeros(t.shape))
        return {k: np.broadcast_to(np.asarray(v), t.shape) for k, v in out.items()}

    return Schedule(T=int(T), K=int(K), name=name, params=dict(params or {}), generator=gen,
                    **gen(np.arange(int(T))))


def _tail_slope(values, t):
    """Least-squares slope of ``log values`` against ``log(t + 1)``.

    Returns ``-inf`` when the tail is identically zero.
    """
    v = np.asarray(values, dtype=float)
    if np.all(v == 0):
        return -math.inf
    if np.any(v <= 0):
        return math.nan
    return float(np.polyfit(np.log(t + 1.0), np.log(v), 1)[0])


def check_schedule_conditions(schedule: Schedule, horizon: int = 1_000_000) -> dict:
    """Numerically assess the last-iterate convergence conditions.

    Limits and series are judged by their power-law behaviour on the tail
    ``[horizon/10, horizon]``:

    * (a) ``gamma/eta`` and ``delta/eta`` decay; ``sum gamma^2`` converges
      (slope of ``gamma^2`` below -1); ``sum gamma eta`` diverges (slope of
      ``gamma eta`` at least -1).
    * (b) ``gamma_t eta_t`` in ``(0, 1/2)`` up to the horizon and ``eta``
      decays.
    * (c) the series term ``((eta_t - eta_{t-1})/eta_t)^2 (1 + 1/(gamma eta))``
      has slope below -1 and the limit term (series term divided by
      ``gamma eta``) decays.

    Absolute magnitudes at the horizon are reported under ``info``. A
    schedule without a generator cannot be extended past ``T``; asking for a
    longer horizon yields ``applicable=False`` and all flags ``None``.
    """
    horizon = int(horizon)
    if horizon < 10:
        raise InputError("horizon must be at least 10")
    if schedule.generator is None and horizon > schedule.T:
        return {"applicable": False, "a_ok": None, "b_ok": None, "c_ok": None, "partial_sums": {},
                "reason": f"finite-horizon schedule (T={schedule.T}); conditions not applicable",
                "horizon": horizon}
    t = np.arange(horizon)
    if schedule.generator is not None:
        seq = schedule.generator(t)
        g, e, d = (np.asarray(seq[k], dtype=float) for k in ("gamma", "eta", "delta"))
    else:
        g, e, d = (getattr(schedule, k)[:horizon] for k in ("gamma", "eta", "delta"))
    e_prev = np.concatenate([e[:1], e[:-1]])
    ge = g * e
    series = ((e - e_prev) / e) ** 2 * (1.0 + 1.0 / ge)
    limit = series / ge
    tail = slice(horizon // 10, horizon)
    tt = t[tail]
    sl = {
        "gamma_over_eta": _tail_slope(g[tail] / e[tail], tt),
        "delta_over_eta": _tail_slope(d[tail] / e[tail], tt),
        "gamma_sq": _tail_slope(g[tail] ** 2, tt),
        "gamma_eta": _tail_slope(ge[tail], tt),
        "eta": _tail_slope(e[tail], tt),
        "c_series": _tail_slope(series[tail], tt),
        "c_limit": _tail_slope(limit[tail], tt),
    }
    a_ok = (sl["gamma_over_eta"] < -_SLOPE_SLACK and sl["delta_over_eta"] < -_SLOPE_SLACK
            and sl["gamma_sq"] < -1 - _SLOPE_SLACK and sl["gamma_eta"] >= -1 - _SLOPE_SLACK)
    b_ok = bool(np.all((ge > 0) & (ge < 0.5))) and sl["eta"] < -_SLOPE_SLACK
    c_ok = sl["c_series"] < -1 - _SLOPE_SLACK and sl["c_limit"] < -_SLOPE_SLACK
    head = float(np.sum(g[:horizon // 10] ** 2))
    partial = {
        "sum_gamma_sq": float(np.sum(g ** 2)),
        "sum_gamma_eta": float(np.sum(ge)),
        "sum_gamma_eta_head": float(np.sum(ge[:horizon // 10])),
        "sum_c_series": float(np.sum(series)),
    }
    info = {
        "gamma_over_eta_at_horizon": float(g[-1] / e[-1]),
        "delta_over_eta_at_horizon": float(d[-1] / e[-1]),
        "gamma_sq_tail_over_head": float(np.sum(g[tail] ** 2) / head) if head > 0 else math.nan,
        "c_limit_at_horizon": float(limit[-1]),
    }
    return {"applicable": True, "a_ok": bool(a_ok), "b_ok": bool(b_ok), "c_ok": bool(c_ok),
            "ok": bool(a_ok and b_ok and c_ok), "slopes": sl, "partial_sums": partial,
            "info": info, "horizon": horizon}


# -- random streams -------------------------------------------------------------

class Streams:
    """Independent ``xi`` and ``W`` generators for one replica.

    Stream ``tag`` of replica ``r`` is seeded by
    ``SeedSequence(master_seed, spawn_key=(r, tag))`` and drives a Philox
    bit generator.
    """

    def __init__(self, master_seed: int, replica: int = 0):
        if int(master_seed) != master_seed or master_seed < 0 or master_seed >= 2**64:
            raise InputError("master_seed must be an unsigned 64-bit integer")
        if int(replica) != replica or replica < 0:
            raise InputError("replica must be a nonnegative integer")
        self.master_seed = int(master_seed)
        self.replica = int(replica)
        self.xi = self._gen(XI_TAG)
        self.w = self._gen(W_TAG)

    def _gen(self, tag):
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.replica, tag))
        return np.random.Generator(np.random.Philox(ss))


# -- inner loop -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EpochInputs:
    """Anchor ``x_bar`` with its mini-batch field ``V_bar`` and gradient ``H_bar``."""

    x_bar: np.ndarray
    V_bar: np.ndarray
    H_bar: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.x_bar), np.shape(self.V_bar), np.shape(self.H_bar)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 1:
            raise InputError("x_bar, V_bar and H_bar must be vectors of one common length")


def _draw_inner(game, K, streams):
    o = game.oracle
    if o.mode == "affine_gaussian":
        noise = o.noise_scale * streams.xi.standard_normal((K, game.n))
        idx = np.zeros((K, game.N), dtype=np.intp)
    else:
        noise = np.zeros((K, game.n))
        idx = streams.xi.integers(len(o.components), size=(K, game.N)).astype(np.intp)
    W = np.concatenate([sample_sphere_batch(d, K, streams.w) for d in game.dims], axis=1)
    return idx, noise, W


def sfbf(inputs: EpochInputs, gamma: float, eta: float, delta: float, eps: float, K: int,
         game: HierarchicalGame, streams: Streams, counter: OracleCounter | None = None,
         backend: str | None = None, epoch: int = -1):
    """``K`` stochastic forward-backward-forward steps from ``inputs.x_bar``.

    Each step projects ``z_k - gamma (V_bar + eta x_bar + H_bar)`` onto X,
    then applies the unprojected correction built from one fresh ``xi`` and
    one fresh direction ``W`` per player, evaluated at both the half-step
    point and the anchor. ``eps > 0`` uses inexact follower solves.

    Returns
    -------
    z_K : ndarray
        Last inner iterate (may lie slightly outside X).
    z_bar : ndarray
        Mean of the half-step points.
    trace : dict
        ``z_half`` (K x n) and the number of follower ``solves``.
    """
    if eps < 0:
        raise InputError("eps must be nonnegative")
    if int(K) != K or K < 1:
        raise InputError("K must be a positive integer")
    x_bar = np.asarray(inputs.x_bar, dtype=float)
    if x_bar.shape != (game.n,):
        raise InputError(f"anchor must have length {game.n}, got shape {x_bar.shape}")
    F = np.asarray(inputs.V_bar, dtype=float) + eta * x_bar + np.asarray(inputs.H_bar, dtype=float)
    idx, noise, W = _draw_inner(game, int(K), streams)
    if counter is not None:
        counter.xi_samples += int(K) * game.N
        counter.w_samples += int(K) * game.N
    z, z_half, solves = kernels.sfbf_inner(game, x_bar, F, gamma, eta, delta, eps, idx, noise, W,
                                           backend=backend, epoch=epoch)
    if counter is not None:
        counter.lower_level_solves += int(solves)
    return z, z_half.mean(axis=0), {"z_half": z_half, "solves": int(solves)}


# -- outer loop -------------------------------------------------------------------

_ARRAY_FIELDS = ("x0", "last_iterates", "epoch_averages", "running_averages", "weighted_average",
                 "gap_series", "dist_series")
_INT_FIELDS = ("xi_series", "w_series")


@dataclass(eq=False)
class RunReport:
    """Everything a run produced; ``t``-indexed series have one entry per epoch.

    ``last_iterates[t]`` is ``x^{t+1}``, ``running_averages[t]`` the
    ``gamma``-weighted average of the first ``t + 1`` epoch averages and
    ``gap_series[t]`` its gap (``nan`` where not evaluated). ``xi_series`` and
    ``w_series`` hold the cumulative draw counts after each epoch.
    """

    seed: int
    replica: int
    schedule: dict
    backend: str
    x0: np.ndarray
    last_iterates: np.ndarray
    epoch_averages: np.ndarray
    running_averages: np.ndarray
    weighted_average: np.ndarray
    gap_series: np.ndarray
    dist_series: np.ndarray
    oracle_counts: dict
    xi_series: np.ndarray = None
    w_series: np.ndarray = None
    game: str = ""
    wall_time: float = 0.0
    epoch_wall_ms: list = field(default_factory=list)

    @property
    def final_gap(self):
        return float(self.gap_series[-1])

    @property
    def final_dist(self):
        return float(self.dist_series[-1])

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("seed", "replica", "schedule", "backend", "game",
                                           "oracle_counts", "wall_time", "epoch_wall_ms")}
        for k in _ARRAY_FIELDS + _INT_FIELDS:
            d[k] = np.asarray(getattr(self, k)).tolist()
        d["oracle_counts"] = dict(self.oracle_counts)
        return d

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        for k in _ARRAY_FIELDS:
            kw[k] = np.array([np.nan if v is None else v for v in np.ravel(d[k])] if np.ndim(d[k]) <= 1
                             else d[k], dtype=float)
        for k in _INT_FIELDS:
            kw[k] = np.asarray(d[k], dtype=np.int64)
        return cls(**kw)

    def __eq__(self, other):
        """Field-wise equality ignoring timing; arrays compare exactly (nan == nan)."""
        if not isinstance(other, RunReport):
            return NotImplemented
        for k in ("seed", "replica", "schedule", "backend", "game", "oracle_counts"):
            if getattr(self, k) != getattr(other, k):
                return False
        return (all(np.array_equal(getattr(self, k), getattr(other, k), equal_nan=True)
                    for k in _ARRAY_FIELDS)
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in _INT_FIELDS))


def _default_gap_problem(game):
    from .metrics import assemble_mvi

    try:
        return assemble_mvi(game)
    except InputError:
        return None


def vrhgs(game: HierarchicalGame, schedule: Schedule, rng=0, *, replica: int = 0, x0=None,
          backend: str | None = None, gap_problem="auto", x_ref="auto", trace_every: int = 1,
          gap_cfg=None, timing: bool = False) -> RunReport:
    """Run the variance-reduced outer loop for ``schedule.T`` epochs.

    Parameters
    ----------
    game : HierarchicalGame
    schedule : Schedule
        Validated against ``game.delta0`` before any work.
    rng : int or Streams
        Master seed (streams derived with ``replica``) or ready-made streams.
    x0 : array_like, optional
        Starting profile; defaults to ``game.x0``.
    backend : {'python', 'compiled'}, optional
        Kernel backend; see :mod:`hiergame.kernels`.
    gap_problem : MviProblem, None or 'auto'
        Problem used for the gap series; ``'auto'`` assembles it when the
        game admits a closed form.
    x_ref : array_like, None or 'auto'
        Reference point for ``dist_series``; ``'auto'`` uses the game's
        least-norm solution when known.
    trace_every : int
        Evaluate the gap every ``trace_every`` epochs (and always at the end).
    timing : bool
        Record per-epoch wall-clock times.
    """
    from .metrics import gap as gap_fn

    schedule.validate(game.delta0)
    if int(trace_every) != trace_every or trace_every < 1:
        raise InputError("trace_every must be a positive integer")
    streams = rng if isinstance(rng, Streams) else Streams(rng, replica)
    backend_name = kernels.resolve(game, backend)
    if isinstance(gap_problem, str):
        gap_problem = _default_gap_problem(game)
    if isinstance(x_ref, str):
        x_ref = game.ground_truth.get("least_norm")
    x = np.array(game.x0 if x0 is None else x0, dtype=float)
    if x.shape != (game.n,):
        raise InputError(f"x0 must have length {game.n}")
    start = x.copy()

    T, K, n = schedule.T, schedule.K, game.n
    counter = OracleCounter()
    last = np.empty((T, n))
    avgs = np.empty((T, n))
    running = np.empty((T, n))
    gaps = np.full(T, np.nan)
    dists = np.full(T, np.nan)
    xi_cum = np.zeros(T, dtype=np.int64)
    w_cum = np.zeros(T, dtype=np.int64)
    wsum = np.zeros(n)
    gsum = 0.0
    epoch_ms = []
    t_start = time.perf_counter()

    for t in range(T):
        t0 = time.perf_counter()
        gamma, eta, delta = (float(v[t]) for v in (schedule.gamma, schedule.eta, schedule.delta))
        b, eps = int(schedule.b[t]), float(schedule.eps[t])
        slack = game.domain_radius - delta
        dist = float(distance(game.X, x))
        if dist > slack * (1 + 1e-12) + 1e-15:
            raise DomainError(f"epoch {t}: anchor is {dist:.3g} from X, more than "
                              f"domain_radius - delta_t = {slack:.3g}")
        V_bar = minibatch_V(game, x, b, streams.xi, counter)
        H_bar = np.empty(n)
        for i in range(game.N):
            a, c = game.offsets[i], game.offsets[i + 1]

            def h_eval(p, i=i):
                return kernels.implicit_values(game, i, p, eps, backend=backend_name)

            H_bar[a:c] = minibatch_H(h_eval, x[a:c], delta, b, streams.w, counter)
            counter.lower_level_solves += b + 1
        z, z_bar, _ = sfbf(EpochInputs(x, V_bar, H_bar), gamma, eta, delta, eps, K, game, streams,
                           counter, backend=backend_name, epoch=t)
        x = z
        last[t] = z
        avgs[t] = z_bar
        wsum += gamma * z_bar
        gsum += gamma
        running[t] = wsum / gsum
        xi_cum[t], w_cum[t] = counter.xi_samples, counter.w_samples
        if x_ref is not None:
            dists[t] = float(np.linalg.norm(z - np.asarray(x_ref)))
        if gap_problem is not None and ((t + 1) % trace_every == 0 or t == T - 1):
            gaps[t] = gap_fn(gap_problem, running[t], gap_cfg)
        if timing:
            epoch_ms.append((time.perf_counter() - t0) * 1e3)
        log.debug("epoch %d: gap=%s dist=%s", t, gaps[t], dists[t])

    return RunReport(seed=streams.master_seed, replica=streams.replica, schedule=schedule.to_dict(),
                     backend=backend_name, x0=start, last_iterates=last, epoch_averages=avgs,
                     running_averages=running, weighted_average=running[-1].copy(),
                     gap_series=gaps, dist_series=dists, oracle_counts=counter.as_dict(),
                     xi_series=xi_cum, w_series=w_cum,
                     game=game.name, wall_time=time.perf_counter() - t_start,
                     epoch_wall_ms=epoch_ms)

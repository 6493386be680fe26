import copy

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hiergame.errors import ConfigError, DomainError, InputError, NumericError
from hiergame.game import OracleCounter, make_benchmark
from hiergame.metrics import oracle_count
from hiergame.smoothing import sample_sphere_batch
from hiergame.solver import (
    EpochInputs,
    RunReport,
    Schedule,
    Streams,
    as_convergence_schedule,
    check_schedule_conditions,
    explicit_schedule,
    inexact_gap_schedule,
    sfbf,
    theorem_gap_schedule,
    vrhgs,
)


def _h_quad(game, i, x):
    Q, r, s = game.analytic_implicit(i)
    return 0.5 * x @ Q @ x + r @ x + s


# -- schedules ------------------------------------------------------------------

def test_theorem_gap_schedule():
    s = theorem_gap_schedule(10)
    assert s.K == 10 and s.T == 10
    np.testing.assert_array_equal(s.gamma, 0.1)
    np.testing.assert_array_equal(s.b, 100)
    np.testing.assert_allclose(s.gamma * s.eta, 0.01)
    np.testing.assert_array_equal(s.eps, 0.0)
    with pytest.raises(InputError):
        theorem_gap_schedule(3)
    with pytest.raises(ValueError):
        s.gamma[0] = 1.0


def test_inexact_gap_schedule():
    s = inexact_gap_schedule(10)
    np.testing.assert_allclose(s.eps, 0.01)
    np.testing.assert_allclose(s.eps / s.delta, 0.1)
    e = inexact_gap_schedule(10, exact=True)
    ref = theorem_gap_schedule(10)
    for key in ("gamma", "eta", "delta", "b", "eps"):
        np.testing.assert_array_equal(getattr(e, key), getattr(ref, key))
    with pytest.raises(InputError):
        inexact_gap_schedule(2)


def test_as_convergence_schedule():
    s = as_convergence_schedule(50, 0.5, 0.5)
    assert s.gamma[0] == 0.5 and s.eta[0] == 0.5 and s.K == 5
    t = np.arange(50) + 1.0
    np.testing.assert_allclose(s.gamma / s.eta, t**-0.35, rtol=1e-12)
    assert np.all(s.delta <= 0.25) and s.b[-1] == np.ceil(np.sqrt(50))
    with pytest.raises(InputError):
        as_convergence_schedule(10, 1.0, 0.5)


def test_schedule_validation():
    s = Schedule(T=2, K=1, gamma=[1.0, 1.0], eta=[0.6, 0.1], delta=[0.1, 0.1], b=[1, 1], eps=[0, 0])
    with pytest.raises(ConfigError, match="t=0"):
        s.validate(0.25)
    bad_delta = Schedule(T=1, K=1, gamma=[0.1], eta=[0.1], delta=[0.3], b=[1], eps=[0])
    with pytest.raises(ConfigError):
        bad_delta.validate(0.25)
    short = Schedule(T=3, K=1, gamma=[0.1], eta=[0.1], delta=[0.1], b=[1], eps=[0])
    with pytest.raises(ConfigError):
        short.validate(0.25)
    with pytest.raises(ConfigError):
        vrhgs(make_benchmark("quad-duopoly"), bad_delta)


def test_schedule_conditions():
    rep = check_schedule_conditions(as_convergence_schedule(10, 0.5, 0.5), horizon=10**6)
    assert rep["applicable"] and rep["a_ok"] and rep["b_ok"] and rep["c_ok"] and rep["ok"]
    fin = check_schedule_conditions(theorem_gap_schedule(10), horizon=10**6)
    assert not fin["applicable"] and "finite-horizon" in fin["reason"]
    harmonic = explicit_schedule(10, 1, lambda t: {"gamma": 1.0 / (t + 1.0), "eta": np.ones(t.shape)})
    rep = check_schedule_conditions(harmonic, horizon=10**6)
    assert rep["applicable"] and not rep["b_ok"] and not rep["ok"]


def test_schedule_dict_round_trip():
    s = as_convergence_schedule(12, 0.5, 0.5)
    r = Schedule.from_dict(s.to_dict())
    for key in ("gamma", "eta", "delta", "b", "eps"):
        np.testing.assert_array_equal(getattr(r, key), getattr(s, key))
    assert r.to_dict() == s.to_dict()


# -- inner loop ---------------------------------------------------------------------

def test_sfbf_fixed_point_without_noise():
    game = make_benchmark("nonunique-line", noise_scale=0.0)
    x = np.array([0.3, 0.7])
    V = game.oracle.M @ x + game.oracle.q
    z, zbar, tr = sfbf(EpochInputs(x, V, np.zeros(2)), 0.1, 0.0, 0.1, 0.0, 5, game, Streams(1))
    np.testing.assert_array_equal(z, x)
    np.testing.assert_array_equal(tr["z_half"], np.tile(x, (5, 1)))
    np.testing.assert_array_equal(zbar, x)


def _single_tseng(game, xbar, V, H, gamma, eta, delta, seed):
    """Straight-line reimplementation of one inner step."""
    st_ = Streams(seed)
    noise = game.oracle.noise_scale * st_.xi.standard_normal((1, game.n))[0]
    W = np.concatenate([sample_sphere_batch(d, 1, st_.w)[0] for d in game.dims])
    zh = game.X.project(xbar - gamma * (V + eta * xbar + H))
    M, q = game.oracle.M, game.oracle.q
    out = np.empty(game.n)
    for i in range(game.N):
        a, c = game.offsets[i], game.offsets[i + 1]
        w = W[a:c]
        n_i = c - a
        Hz = n_i * w * (_h_quad(game, i, zh[a:c] + delta * w) - _h_quad(game, i, zh[a:c])) / delta
        Hx = n_i * w * (_h_quad(game, i, xbar[a:c] + delta * w) - _h_quad(game, i, xbar[a:c])) / delta
        vz = (M @ zh + q + noise)[a:c] + eta * zh[a:c]
        vx = (M @ xbar + q + noise)[a:c] + eta * xbar[a:c]
        out[a:c] = zh[a:c] - gamma * ((vz + Hz) - (vx + Hx))
    return out, zh


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_sfbf_single_step_matches_reference(duopoly, backend):
    xbar = np.array([0.4, -0.3])
    V = np.array([0.1, -0.2])
    H = np.array([0.05, 0.02])
    z, zbar, tr = sfbf(EpochInputs(xbar, V, H), 0.2, 0.1, 0.1, 0.0, 1, duopoly, Streams(77),
                       backend=backend)
    ref, zh = _single_tseng(duopoly, xbar, V, H, 0.2, 0.1, 0.1, 77)
    np.testing.assert_allclose(zbar, zh, atol=1e-15)
    np.testing.assert_allclose(z, ref, atol=1e-12)
    assert tr["solves"] == 2 + 3 * 2


def test_sfbf_draw_counts(chain):
    c = OracleCounter()
    x = chain.x0
    sfbf(EpochInputs(x, np.zeros(4), np.zeros(4)), 0.05, 0.05, 0.1, 0.0, 7, chain, Streams(3), c)
    assert c.xi_samples == 7 * 2 and c.w_samples == 7 * 2


def test_sfbf_half_steps_feasible(line):
    x = np.array([0.9, 0.1])
    z, _, tr = sfbf(EpochInputs(x, np.array([-5.0, 5.0]), np.zeros(2)), 0.2, 0.1, 0.1, 0.0, 10,
                    line, Streams(5))
    for zh in tr["z_half"]:
        np.testing.assert_array_equal(line.X.project(zh), zh)
    assert np.all(np.isfinite(z))


def test_variance_reduction_zero_correction():
    game = make_benchmark("quad-duopoly", noise_scale=0.0)
    x = np.array([0.3, -0.2])
    # V_bar + eta x + H_bar = 0 keeps the half-step at x
    F = np.array([0.5, -0.1])
    z, _, tr = sfbf(EpochInputs(x, F, -F), 0.3, 0.0, 0.1, 0.0, 4, game, Streams(11))
    np.testing.assert_array_equal(tr["z_half"], np.tile(x, (4, 1)))
    np.testing.assert_array_equal(z, x)


def test_sfbf_input_errors(duopoly):
    with pytest.raises(InputError):
        EpochInputs(np.zeros(2), np.zeros(3), np.zeros(2))
    with pytest.raises(InputError):
        sfbf(EpochInputs(np.zeros(3), np.zeros(3), np.zeros(3)), 0.1, 0.1, 0.1, 0.0, 1, duopoly,
             Streams(0))
    with pytest.raises(InputError):
        sfbf(EpochInputs(np.zeros(2), np.zeros(2), np.zeros(2)), 0.1, 0.1, 0.1, -1.0, 1, duopoly,
             Streams(0))


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_sfbf_blow_up_raises(duopoly, backend):
    with pytest.raises(NumericError) as exc:
        sfbf(EpochInputs(np.zeros(2), np.array([np.nan, 0.0]), np.zeros(2)), 0.1, 0.1, 0.1, 0.0, 3,
             duopoly, Streams(0), backend=backend, epoch=4)
    assert exc.value.epoch == 4


# -- outer loop ---------------------------------------------------------------------

def test_vrhgs_single_epoch_by_hand():
    game = make_benchmark("quad-duopoly", noise_scale=0.0)
    s = Schedule(T=1, K=1, gamma=[0.2], eta=[0.1], delta=[0.1], b=[3], eps=[0.0])
    x0 = np.array([0.5, -0.5])
    rep = vrhgs(game, s, 9, x0=x0)
    st_ = Streams(9)
    st_.xi.standard_normal((3, 2))
    H = np.empty(2)
    for i in range(2):
        W = sample_sphere_batch(1, 3, st_.w)
        vals = np.array([_h_quad(game, i, x0[i:i + 1] + 0.1 * w) for w in W])
        H[i] = np.mean(W[:, 0] * (vals - _h_quad(game, i, x0[i:i + 1])) / 0.1)
    V = game.oracle.M @ x0 + game.oracle.q
    zh = game.X.project(x0 - 0.2 * (V + 0.1 * x0 + H))
    st_.xi.standard_normal((1, 2))
    W = np.concatenate([sample_sphere_batch(1, 1, st_.w)[0] for _ in range(2)])
    corr = np.empty(2)
    for i in range(2):
        fz = (_h_quad(game, i, zh[i:i + 1] + 0.1 * W[i:i + 1]) - _h_quad(game, i, zh[i:i + 1])) / 0.1
        fx = (_h_quad(game, i, x0[i:i + 1] + 0.1 * W[i:i + 1]) - _h_quad(game, i, x0[i:i + 1])) / 0.1
        corr[i] = (game.oracle.M @ (zh - x0))[i] + 0.1 * (zh - x0)[i] + W[i] * (fz - fx)
    np.testing.assert_allclose(rep.epoch_averages[0], zh, atol=1e-14)
    np.testing.assert_allclose(rep.last_iterates[0], zh - 0.2 * corr, atol=1e-12)
    np.testing.assert_allclose(rep.weighted_average, zh, atol=1e-14)


def test_vrhgs_oracle_counts(chain):
    s = theorem_gap_schedule(4)
    rep = vrhgs(chain, s, 5, gap_problem=None)
    oc = rep.oracle_counts
    assert oc["xi_samples"] + oc["w_samples"] == oracle_count(4, 4, [16] * 4, 2)
    assert np.all(np.diff(rep.xi_series) > 0) and np.all(np.diff(rep.w_series) > 0)
    assert oc["lower_level_solves"] == 4 * 2 * (16 + 1) + 4 * (2 + 3 * 4 * 2)


def test_vrhgs_reproducible_and_backends_agree(duopoly):
    s = theorem_gap_schedule(5)
    a = vrhgs(duopoly, s, 123, replica=2, backend="python")
    b = vrhgs(duopoly, s, 123, replica=2, backend="python")
    assert a == b
    c = vrhgs(duopoly, s, 123, replica=2, backend="compiled")
    np.testing.assert_allclose(c.last_iterates, a.last_iterates, atol=1e-12)
    d = vrhgs(duopoly, s, 123, replica=3, backend="python")
    assert not np.array_equal(d.last_iterates, a.last_iterates)


def test_inexact_zero_eps_equals_exact(chain):
    a = vrhgs(chain, theorem_gap_schedule(4), 8, gap_problem=None)
    b = vrhgs(chain, inexact_gap_schedule(4, exact=True), 8, gap_problem=None)
    for k in ("last_iterates", "epoch_averages", "running_averages"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))


def test_weighted_average_is_convex_combination(line):
    s = as_convergence_schedule(8, 0.5, 0.5)
    rep = vrhgs(line, s, 1, gap_problem=None)
    w = s.gamma / s.gamma.sum()
    assert abs(w.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(rep.weighted_average, w @ rep.epoch_averages, atol=1e-12)


def test_vrhgs_gap_series(duopoly):
    rep = vrhgs(duopoly, theorem_gap_schedule(6), 2, trace_every=4)
    assert np.isnan(rep.gap_series[0]) and np.isfinite(rep.gap_series[3])
    assert np.isfinite(rep.final_gap) and rep.final_gap >= 0
    assert rep.final_dist == pytest.approx(np.linalg.norm(rep.last_iterates[-1] - [0.2, 0.2]))


def test_vrhgs_domain_guard(duopoly):
    with pytest.raises(DomainError):
        vrhgs(duopoly, theorem_gap_schedule(4), 0, x0=[3.0, 0.0])


def test_run_report_json_round_trip(duopoly):
    import json
    rep = vrhgs(duopoly, theorem_gap_schedule(4), 4, trace_every=2, timing=True)
    back = RunReport.from_dict(json.loads(json.dumps(rep.to_dict(), allow_nan=True)))
    assert back == rep
    other = copy.deepcopy(rep)
    other.last_iterates[0, 0] += 1e-16 + abs(other.last_iterates[0, 0]) * 1e-15
    assert other != rep


@given(st.integers(0, 2**64 - 1), st.integers(0, 1000))
def test_streams_are_deterministic(seed, replica):
    a, b = Streams(seed, replica), Streams(seed, replica)
    assert a.xi.random() == b.xi.random() and a.w.random() == b.w.random()


def test_streams_reject_bad_seed():
    with pytest.raises(InputError):
        Streams(-1)
    with pytest.raises(InputError):
        Streams(2**64)

import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hiergame import kernels
from hiergame.errors import ConfigError
from hiergame.game import implicit_cost, implicit_cost_inexact, make_benchmark
from hiergame.geometry import Ball
from hiergame.solver import EpochInputs, Streams, sfbf, theorem_gap_schedule, vrhgs

needs_compiled = pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="extension not built")


def _ball_game(duopoly):
    return dataclasses.replace(duopoly, sets=(Ball([0.0], 1.0), Ball([0.0], 1.0)), x0=None)


def test_backend_env_override(monkeypatch, duopoly):
    monkeypatch.setenv("HIERGAME_BACKEND", "python")
    assert kernels.default_backend() == "python"
    assert kernels.resolve(duopoly) == "python"
    monkeypatch.setenv("HIERGAME_BACKEND", "bogus")
    assert kernels.default_backend() == ("compiled" if kernels.HAVE_COMPILED else "python")


def test_unsupported_game_falls_back(duopoly):
    game = _ball_game(duopoly)
    assert not kernels.supports_compiled(game)
    assert kernels.resolve(game) == "python"
    with pytest.raises(ConfigError):
        kernels.resolve(game, "compiled")
    with pytest.raises(ConfigError):
        kernels.resolve(duopoly, "fortran")


@needs_compiled
@pytest.mark.parametrize("name", ["quad-duopoly", "nonunique-line", "hier-chain"])
@pytest.mark.parametrize("eps", [0.0, 1e-3])
def test_implicit_values_agree(name, eps, rng):
    game = make_benchmark(name)
    for i in range(game.N):
        pts = rng.uniform(-0.9, 1.9, (20, game.dims[i]))
        a = kernels.implicit_values(game, i, pts, eps, backend="python")
        b = kernels.implicit_values(game, i, pts, eps, backend="compiled")
        np.testing.assert_allclose(b, a, rtol=1e-13, atol=1e-14)
        ref = implicit_cost(game, i, pts) if eps == 0 else implicit_cost_inexact(game, i, pts, eps)
        np.testing.assert_allclose(a, ref, rtol=1e-13, atol=1e-14)


@needs_compiled
@pytest.mark.parametrize("name,mode", [("quad-duopoly", "affine_gaussian"),
                                       ("hier-chain", "affine_gaussian"),
                                       ("hier-chain", "finite_sum")])
def test_sfbf_backends_agree(name, mode, rng):
    game = make_benchmark(name, oracle_mode=mode)
    x = game.X.project(rng.uniform(-1, 1, game.n))
    inp = EpochInputs(x, rng.standard_normal(game.n), rng.standard_normal(game.n))
    for eps in (0.0, 1e-4):
        a = sfbf(inp, 0.1, 0.1, 0.1, eps, 6, game, Streams(21), backend="python")
        b = sfbf(inp, 0.1, 0.1, 0.1, eps, 6, game, Streams(21), backend="compiled")
        np.testing.assert_allclose(b[0], a[0], atol=1e-12)
        np.testing.assert_allclose(b[2]["z_half"], a[2]["z_half"], atol=1e-12)
        assert a[2]["solves"] == b[2]["solves"]


@needs_compiled
@given(st.integers(0, 10_000))
def test_runs_agree_across_backends(seed):
    game = make_benchmark("hier-chain")
    s = theorem_gap_schedule(4)
    a = vrhgs(game, s, seed, backend="python", gap_problem=None)
    b = vrhgs(game, s, seed, backend="compiled", gap_problem=None)
    np.testing.assert_allclose(b.last_iterates, a.last_iterates, atol=1e-10)
    assert a.oracle_counts == b.oracle_counts


def test_python_backend_runs_non_box_game(duopoly):
    game = _ball_game(duopoly)
    rep = vrhgs(game, theorem_gap_schedule(4), 0, gap_problem=None)
    assert rep.backend == "python" and np.all(np.isfinite(rep.last_iterates))

import numpy as np
import pytest

from hiergame.errors import ConfigError, InputError
from hiergame.geometry import Box, Product
from hiergame.metrics import (
    GapConfig,
    MviProblem,
    assemble_mvi,
    gap,
    gap_maximizer,
    least_norm,
    natural_residual,
    oracle_count,
    solve_mvi,
    tik_path_check,
)


@pytest.fixture(scope="module")
def duo_mvi():
    from hiergame.game import make_benchmark
    return assemble_mvi(make_benchmark("quad-duopoly"))


@pytest.fixture(scope="module")
def line_mvi():
    from hiergame.game import make_benchmark
    return assemble_mvi(make_benchmark("nonunique-line"))


def test_assembled_problems(duo_mvi, line_mvi, chain):
    np.testing.assert_array_equal(duo_mvi.M, [[2, 1], [1, 2]])
    np.testing.assert_allclose(duo_mvi.Q, 2 * np.eye(2), atol=1e-15)
    np.testing.assert_allclose(duo_mvi.r, 0, atol=1e-15)
    np.testing.assert_array_equal(line_mvi.Q, np.zeros((2, 2)))
    p = assemble_mvi(chain)
    Binv = np.linalg.inv(chain.lower[0].B)
    np.testing.assert_allclose(p.Q[:2, :2], Binv.T @ Binv, atol=1e-14)


def test_gap_at_solution_and_brute_force(duo_mvi, line_mvi, rng):
    assert abs(gap(duo_mvi, [0.2, 0.2])) <= 1e-8
    z, val = gap_maximizer(line_mvi, [0.0, 0.0])
    g = np.linspace(0, 1, 1001)
    Z1, Z2 = np.meshgrid(g, g)
    s = Z1 + Z2
    brute = np.max(-(s - 1) * s)
    assert val == pytest.approx(0.25, abs=1e-12)
    assert val == pytest.approx(brute, abs=1e-6)
    assert z.sum() == pytest.approx(0.5, abs=1e-9)
    for _ in range(50):
        x = duo_mvi.X.project(rng.uniform(-2, 2, 2))
        assert gap(duo_mvi, x) >= 0.0


def test_gap_maximizer_first_order(duo_mvi):
    x = np.array([0.9, -0.4])
    z, _ = gap_maximizer(duo_mvi, x, GapConfig(tol=1e-12))
    p = duo_mvi
    grad = p.M.T @ x - p.q - p.r - (p.M + p.M.T + p.Q) @ z
    assert np.linalg.norm(z - p.X.project(z + grad)) <= 1e-10


def test_gap_rejects_non_monotone():
    p = MviProblem(-np.eye(2), np.zeros(2), np.zeros((2, 2)), np.zeros(2), 0.0,
                   Product((Box([0], [1]), Box([0], [1]))))
    with pytest.raises(ConfigError):
        gap(p, [0.5, 0.5])


def test_solve_mvi_examples(duo_mvi, line_mvi):
    np.testing.assert_allclose(solve_mvi(line_mvi, 1.0), [1 / 3, 1 / 3], atol=1e-10)
    np.testing.assert_allclose(solve_mvi(line_mvi, 0.01), [1 / 2.01] * 2, atol=1e-10)
    np.testing.assert_allclose(solve_mvi(duo_mvi, 0.0), [0.2, 0.2], atol=1e-10)
    x = solve_mvi(duo_mvi, 0.0, tol=1e-12)
    assert natural_residual(duo_mvi, x) <= 1e-12
    assert gap(duo_mvi, x) <= 1e-10
    with pytest.raises(InputError):
        solve_mvi(line_mvi, -1.0)


def test_tikhonov_uniqueness_from_different_starts(line_mvi):
    tol, eta = 1e-11, 0.1
    a = solve_mvi(line_mvi, eta, tol=tol, x0=[0, 0])
    b = solve_mvi(line_mvi, eta, tol=tol, x0=[1, 1])
    assert np.linalg.norm(a - b) <= 2 * tol / eta


def test_least_norm(duo_mvi, line_mvi):
    np.testing.assert_allclose(least_norm(line_mvi), [0.5, 0.5], atol=1e-6)
    np.testing.assert_allclose(least_norm(duo_mvi), [0.2, 0.2], atol=1e-8)
    etas = [2.0 ** -j for j in range(12)]
    norms = [np.linalg.norm(solve_mvi(line_mvi, e)) for e in etas]
    assert all(b >= a - 1e-12 for a, b in zip(norms, norms[1:]))
    assert max(norms) <= np.sqrt(2) / 2 + 1e-10


def test_tik_path_check(duo_mvi, line_mvi):
    rep = tik_path_check(line_mvi, [0.5, 0.25, 0.125])
    assert rep["ok"]
    assert rep["pairs"][0]["lhs"] == pytest.approx(np.sqrt(2) / 2, abs=1e-9)
    const = tik_path_check(line_mvi, [0.3, 0.3])
    assert const["pairs"][0]["lhs"] == 0.0 and const["pairs"][0]["rhs"] <= 1e-10 and const["ok"]
    assert tik_path_check(duo_mvi, [1.0, 0.5, 0.25, 0.125])["ok"]
    with pytest.raises(InputError):
        tik_path_check(line_mvi, [0.1, 0.2])


def test_oracle_count():
    assert oracle_count(10, 10, [100] * 10, 2) == 4400
    assert oracle_count(1, 1, [1], 1) == 4
    for T in (4, 8, 16):
        assert oracle_count(T, T, [T * T] * T, 3) == 2 * 3 * T**2 + 2 * 3 * T**3
    with pytest.raises(InputError):
        oracle_count(2, 1, [1], 1)

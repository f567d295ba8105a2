import math

import numpy as np
import pytest

from qcomp.quantizer import quantizer_model
from qcomp.uplink import (SolverOptions, UplinkStatus, build_K, fixed_point_solve,
                          infeasibility_certificate, interference_covariance, mmse_combiner,
                          mmse_combiners, ul_sinr, ul_sinrs, update_map)

from helpers import iid_scenario, random_scenario, scalar_scenario
from oracles import scalar_power


def test_build_K_zero_power_is_identity():
    sc = iid_scenario(0)
    np.testing.assert_allclose(build_K(sc, np.zeros((2, 2)), quantizer_model(2), 1), np.eye(4))


def test_build_K_ideal_is_classic_covariance():
    sc = iid_scenario(1)
    lam = np.array([[1.0, 2.0], [0.5, 3.0]])
    K = build_K(sc, lam, quantizer_model(math.inf), 0)
    ref = np.eye(4, dtype=complex)
    for j in range(2):
        for v in range(2):
            h = sc.h(0, j, v)
            ref += lam[j, v] * np.outer(h, h.conj())
    np.testing.assert_allclose(K, ref, atol=1e-12)


@pytest.mark.parametrize("bits", [1, 3, math.inf])
def test_build_K_scalar(bits):
    K = build_K(scalar_scenario(2.0), np.array([[3.0]]), quantizer_model(bits), 0)
    assert K[0, 0].real == pytest.approx(7.0)


def test_scalar_ideal():
    sol = fixed_point_solve(scalar_scenario(2.0), 1.0, quantizer_model(math.inf))
    assert sol.status is UplinkStatus.OPTIMAL
    assert sol.powers[0, 0] == pytest.approx(0.5, rel=1e-9)


def test_scalar_three_bits():
    q = quantizer_model(3)
    sol = fixed_point_solve(scalar_scenario(1.0), 1.0, q)
    assert sol.powers[0, 0] == pytest.approx(1 / (2 * q.alpha - 1), rel=1e-9)


@pytest.mark.parametrize("bits", [1, 2, 3])
def test_scalar_infeasible_beyond_bound(bits):
    q = quantizer_model(bits)
    sol = fixed_point_solve(scalar_scenario(1.0), 1.01 * q.alpha / q.beta, q)
    assert sol.status is UplinkStatus.INFEASIBLE
    assert sol.combiners is None
    assert not sol.converged


def test_scalar_grid_matches_closed_form():
    for bits in (1, 2, 3):
        q = quantizer_model(bits)
        for frac in (0.05, 0.3, 0.6):
            g = frac * q.alpha / q.beta
            sol = fixed_point_solve(scalar_scenario(3.0), g, q)
            assert sol.powers[0, 0] == pytest.approx(scalar_power(3.0, g, q.alpha, q.beta), rel=1e-9)


def test_iteration_cap_status():
    sol = fixed_point_solve(random_scenario(0), 1.0, quantizer_model(2),
                            SolverOptions(max_iterations=2))
    assert sol.status is UplinkStatus.ITERATION_CAP
    assert sol.iterations == 2


def test_history_is_monotone_from_zero():
    # from zero the iterates of a standard map increase monotonically
    sol = fixed_point_solve(random_scenario(3), 1.0, quantizer_model(3), keep_history=True)
    hist = np.array(sol.history)
    assert np.all(np.diff(hist, axis=0) >= -1e-12 * hist[1:])


def test_fixed_point_property():
    sc, q = random_scenario(4), quantizer_model(2)
    sol = fixed_point_solve(sc, 2.0, q)
    np.testing.assert_allclose(update_map(sc, sol.powers, q, 2.0), sol.powers, rtol=1e-9)


def test_per_user_targets():
    sc, q = random_scenario(5), quantizer_model(3)
    g = np.array([[0.5, 1.0], [2.0, 1.5]])
    sol = fixed_point_solve(sc, g, q)
    np.testing.assert_allclose(ul_sinrs(sol.combiners, sc, sol.powers, q), g, rtol=1e-8)


def test_certificate_not_fired_at_optimum():
    sc, q = random_scenario(6), quantizer_model(2)
    sol = fixed_point_solve(sc, 1.0, q)
    assert not infeasibility_certificate(sc, sol.powers, q, 1.0)
    assert not infeasibility_certificate(sc, np.zeros((2, 2)), q, 1.0)


def test_matched_filter_limit():
    sc, q = iid_scenario(2), quantizer_model(math.inf)
    f = mmse_combiner(sc, np.zeros((2, 2)), q, 1, 0)
    np.testing.assert_allclose(f, sc.h(1, 1, 0))


def test_scalar_combiner_positive_multiple():
    sc = scalar_scenario(2.0)
    f = mmse_combiner(sc, np.array([[0.7]]), quantizer_model(2), 0, 0)
    ratio = f[0] / sc.h(0, 0, 0)[0]
    assert ratio.real > 0 and abs(ratio.imag) < 1e-15


def test_vectorized_combiners_match_direct():
    sc, q = random_scenario(7, n_cells=7, n_users=3, n_antennas=6), quantizer_model(2)
    lam = np.random.default_rng(0).uniform(0, 1e3, (7, 3))
    F = mmse_combiners(sc, lam, q)
    for i in range(7):
        for u in range(3):
            np.testing.assert_allclose(F[i][:, u], mmse_combiner(sc, lam, q, i, u), rtol=1e-8)


def test_mmse_is_locally_optimal():
    rng = np.random.default_rng(8)
    sc, q = iid_scenario(8, n_antennas=5), quantizer_model(2)
    lam = rng.uniform(0.5, 2.0, (2, 2))
    f = mmse_combiner(sc, lam, q, 0, 1)
    best = ul_sinr(f, sc, lam, q, 0, 1)
    for _ in range(100):
        d = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        d *= 1e-3 * np.linalg.norm(f) / np.linalg.norm(d)
        assert ul_sinr(f + d, sc, lam, q, 0, 1) <= best


def test_mmse_matches_generalized_eigenvector():
    # f maximizes a Rayleigh quotient, so it is C^-1 h up to scale
    sc, q = iid_scenario(9, n_antennas=3), quantizer_model(3)
    lam = np.ones((2, 2))
    C = interference_covariance(sc, lam, q, 1, 1)
    h = sc.h(1, 1, 1)
    best = q.alpha ** 2 * lam[1, 1] * np.real(h.conj() @ np.linalg.solve(C, h))
    f = mmse_combiner(sc, lam, q, 1, 1)
    assert ul_sinr(f, sc, lam, q, 1, 1) == pytest.approx(best, rel=1e-10)


def test_sinr_edge_cases():
    sc, q = scalar_scenario(2.0), quantizer_model(math.inf)
    assert ul_sinr(np.array([1.0]), sc, np.array([[0.0]]), q, 0, 0) == 0.0
    assert ul_sinr(np.array([1.0]), sc, np.array([[3.0]]), q, 0, 0) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        ul_sinr(np.zeros(1), sc, np.array([[1.0]]), q, 0, 0)


def test_optimal_sinrs_hit_target():
    sc, q = random_scenario(10, n_cells=7, n_users=4, n_antennas=16), quantizer_model(3)
    sol = fixed_point_solve(sc, 1.0, q)
    assert sol.status is UplinkStatus.OPTIMAL
    np.testing.assert_allclose(ul_sinrs(sol.combiners, sc, sol.powers, q), 1.0, rtol=1e-6)


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tolerance=0)
    with pytest.raises(ValueError):
        SolverOptions(max_iterations=0)
    with pytest.raises(ValueError):
        fixed_point_solve(scalar_scenario(1.0), 1.0, quantizer_model(2), initial=[[-1.0]])

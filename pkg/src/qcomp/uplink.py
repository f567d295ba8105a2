"""Quantization-aware uplink power control with MMSE combining.

Powers are updated with the fixed-point map

    lam_iu <- 1 / (alpha (1 + 1/gamma_iu) h_iiu^H K_i(Lam)^-1 h_iiu)
    K_i(Lam) = s_i I + alpha sum_jv lam_jv h_ijv h_ijv^H + beta diag(H_i Lam H_i^H)

where ``s_i`` is the receiver noise level at BS ``i`` (1 for the joint
problem; the per-cell baseline passes an inflated white level). Arrays of
per-user quantities have shape ``(N_c, N_u)``; combiners have shape
``(N_c, N_b, N_u)`` with ``F[i][:, u] = f_iu``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .quantizer import QuantizerModel, ul_quant_cov
from .scenario import NetworkScenario


# relative changes below this are rounding noise; the rate estimate is meaningless there
_ROUNDOFF = 64 * np.finfo(float).eps


class UplinkStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_CAP = "iteration_cap"


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-10
    max_iterations: int = 10_000
    power_cap: float = 1e12
    initial_power: float = 0.0
    eps: float = 1e-30
    # how often the noise-free infeasibility certificate is evaluated
    certificate_every: int = 50

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.initial_power < 0:
            raise ValueError("initial_power must be nonnegative")


@dataclass(frozen=True, eq=False)
class UplinkSolution:
    powers: np.ndarray
    combiners: np.ndarray | None
    iterations: int
    converged: bool
    status: UplinkStatus
    targets: np.ndarray
    history: list = field(default_factory=list, repr=False)

    @property
    def total_power(self) -> float:
        return float(np.sum(self.powers))


def as_targets(targets, n_cells: int, n_users: int) -> np.ndarray:
    """Broadcast linear SINR targets to ``(N_c, N_u)``."""
    g = np.broadcast_to(np.asarray(targets, dtype=float), (n_cells, n_users)).copy()
    if not np.all(g > 0):
        raise ValueError("SINR targets must be positive")
    return g


def _noise_levels(noise, n_cells):
    s = np.broadcast_to(np.asarray(noise, dtype=float), (n_cells,))
    if np.any(s <= 0):
        raise ValueError("noise level must be positive")
    return s


def _stacked(scenario):
    """``H_i`` for every BS, shape ``(N_c, N_b, N_c*N_u)``."""
    n_c, n_b = scenario.n_cells, scenario.n_antennas
    return scenario.H.transpose(0, 2, 1, 3).reshape(n_c, n_b, -1)


def _gram(scenario: NetworkScenario, powers, q: QuantizerModel, noise, stacked=None):
    """Stack of ``K_i`` for every BS, shape ``(N_c, N_b, N_b)``."""
    n_c, n_b = scenario.n_cells, scenario.n_antennas
    Hst = _stacked(scenario) if stacked is None else stacked
    Hs = Hst * np.sqrt(np.asarray(powers, dtype=float).ravel())
    cov = Hs @ Hs.conj().transpose(0, 2, 1)
    rx = np.real(np.einsum("inn->in", cov))
    K = q.alpha * cov
    idx = np.arange(n_b)
    K[:, idx, idx] += q.beta * rx + np.broadcast_to(np.asarray(noise, dtype=float), (n_c,))[:, None]
    return K


def build_K(scenario: NetworkScenario, powers, q: QuantizerModel, cell_index: int, noise=1.0) -> np.ndarray:
    """``K_i(Lam)`` for BS ``cell_index``."""
    lam = np.asarray(powers, dtype=float)
    if np.any(lam < 0):
        raise ValueError("powers must be nonnegative")
    return _gram(scenario, lam, q, _noise_levels(noise, scenario.n_cells))[cell_index]


def _own(scenario):
    return scenario.H[np.arange(scenario.n_cells), np.arange(scenario.n_cells)]


def _own_quadratic(K, scenario, own=None):
    """``h_iiu^H K_i^-1 h_iiu`` for all users via a Cholesky factor of each K_i."""
    L = np.linalg.cholesky(K)
    z = np.linalg.solve(L, _own(scenario) if own is None else own)
    return np.sum(np.abs(z) ** 2, axis=1)


def update_map(scenario: NetworkScenario, powers, q: QuantizerModel, targets, noise=1.0) -> np.ndarray:
    """One application of the power update map ``F(Lam)``."""
    g = as_targets(targets, scenario.n_cells, scenario.n_users)
    quad = _own_quadratic(_gram(scenario, powers, q, _noise_levels(noise, scenario.n_cells)), scenario)
    return 1.0 / (q.alpha * (1.0 + 1.0 / g) * quad)


def _asymptotic_map(scenario, powers, q, targets):
    """Noise-free version of ``F`` (``K`` without the identity), or None if singular."""
    K = _gram(scenario, powers, q, 0.0)
    try:
        quad = _own_quadratic(K, scenario)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(quad)) or np.any(quad <= 0):
        return None
    return 1.0 / (q.alpha * (1.0 + 1.0 / targets) * quad)


def infeasibility_certificate(scenario, powers, q, targets, slack=1e-12) -> bool:
    """True if ``powers`` proves the targets unattainable.

    For ``F_inf`` the noise-free map, ``F(rho Lam) > rho F_inf(Lam)`` for all
    ``rho > 0``; so ``F_inf(Lam) >= Lam`` on the support of ``Lam`` rules out
    any fixed point (by monotony of ``F``).
    """
    lam = np.asarray(powers, dtype=float)
    if not np.any(lam > 0):
        return False
    g = as_targets(targets, scenario.n_cells, scenario.n_users)
    f_inf = _asymptotic_map(scenario, lam, q, g)
    if f_inf is None:
        return False
    support = lam > 0
    return bool(np.all(f_inf[support] >= lam[support] * (1.0 - slack)))


def fixed_point_solve(scenario: NetworkScenario, targets, q: QuantizerModel,
                      opts: SolverOptions | None = None, *, initial=None, noise=1.0,
                      keep_history: bool = False) -> UplinkSolution:
    """Iterate the power update map to its unique fixed point.

    Stops when the relative change, inflated by the observed contraction
    rate, drops below ``opts.tolerance``. Declares ``INFEASIBLE`` when a power
    exceeds ``opts.power_cap`` or the noise-free certificate fires.
    """
    opts = opts or SolverOptions()
    n_c, n_u = scenario.n_cells, scenario.n_users
    g = as_targets(targets, n_c, n_u)
    if initial is None:
        lam = np.full((n_c, n_u), float(opts.initial_power))
    else:
        lam = np.array(initial, dtype=float).reshape(n_c, n_u)
        if np.any(lam < 0):
            raise ValueError("initial powers must be nonnegative")
    history = [lam.copy()] if keep_history else []
    s_vec = _noise_levels(noise, n_c)
    stacked, own = _stacked(scenario), _own(scenario)
    coef = q.alpha * (1.0 + 1.0 / g)
    prev_change = None
    status = UplinkStatus.ITERATION_CAP
    n = 0
    for n in range(1, opts.max_iterations + 1):
        new = 1.0 / (coef * _own_quadratic(_gram(scenario, lam, q, s_vec, stacked), scenario, own))
        if keep_history:
            history.append(new.copy())
        if not np.all(np.isfinite(new)) or np.max(new) > opts.power_cap:
            lam = new
            status = UplinkStatus.INFEASIBLE
            break
        change = np.max(np.abs(new - lam) / np.maximum(lam, opts.eps))
        lam = new
        rate = change / prev_change if prev_change else None
        prev_change = change
        if change < opts.tolerance:
            # a-posteriori error bound for a linearly contracting sequence
            err = change if rate is None else (change / (1.0 - rate) if rate < 1 else np.inf)
            if err < opts.tolerance or change < _ROUNDOFF:
                status = UplinkStatus.OPTIMAL
                break
        if n % opts.certificate_every == 0 and infeasibility_certificate(scenario, lam, q, g):
            status = UplinkStatus.INFEASIBLE
            break
    else:
        if infeasibility_certificate(scenario, lam, q, g):
            status = UplinkStatus.INFEASIBLE

    combiners = mmse_combiners(scenario, lam, q, noise) if status is UplinkStatus.OPTIMAL else None
    return UplinkSolution(lam, combiners, n, status is UplinkStatus.OPTIMAL, status, g, history)


def interference_covariance(scenario, powers, q, i, u, noise=1.0) -> np.ndarray:
    """Covariance of interference, noise and quantization error seen by ``f_iu``."""
    lam = np.asarray(powers, dtype=float)
    s = _noise_levels(noise, scenario.n_cells)[i]
    H_i = scenario.H_bs(i)
    lam_flat = lam.ravel()
    k = i * scenario.n_users + u
    others = lam_flat.copy()
    others[k] = 0.0
    Hs = H_i * np.sqrt(others)
    a, ab = q.alpha, q.alpha_beta
    C = a * a * (Hs @ Hs.conj().T)
    C += a * s * np.eye(scenario.n_antennas)
    C += ab * np.diag((np.abs(H_i) ** 2) @ lam_flat)
    return C


def mmse_combiner(scenario: NetworkScenario, powers, q: QuantizerModel, i: int, u: int, noise=1.0) -> np.ndarray:
    """``f_iu = C_z^-1 h_iiu`` with ``C_z`` the interference-plus-noise covariance."""
    if np.any(np.asarray(powers) < 0):
        raise ValueError("powers must be nonnegative")
    C = interference_covariance(scenario, powers, q, i, u, noise)
    return cho_solve(cho_factor(C), scenario.h(i, i, u))


def mmse_combiners(scenario: NetworkScenario, powers, q: QuantizerModel, noise=1.0) -> np.ndarray:
    """All MMSE combiners at once.

    Uses ``C_z = alpha (K_i - alpha lam_iu h h^H)`` and Sherman-Morrison, so
    only one factorization per BS is needed.
    """
    lam = np.asarray(powers, dtype=float)
    K = _gram(scenario, lam, q, _noise_levels(noise, scenario.n_cells))
    n_c = scenario.n_cells
    out = np.empty((n_c, scenario.n_antennas, scenario.n_users), dtype=complex)
    for i in range(n_c):
        own = scenario.H[i, i]
        x = cho_solve(cho_factor(K[i]), own)
        quad = np.real(np.sum(own.conj() * x, axis=0))
        out[i] = x / (q.alpha * (1.0 - q.alpha * lam[i] * quad))
    return out


def ul_sinr(f, scenario: NetworkScenario, powers, q: QuantizerModel, i: int, u: int, noise=1.0) -> float:
    """Uplink SINR of user ``(i, u)`` for combiner ``f``, quantization included."""
    f = np.asarray(f)
    if not np.any(f):
        raise ValueError("combiner must be nonzero")
    lam = np.asarray(powers, dtype=float)
    s = _noise_levels(noise, scenario.n_cells)[i]
    H_i = scenario.H_bs(i)
    gains = np.abs(f.conj() @ H_i) ** 2
    k = i * scenario.n_users + u
    a = q.alpha
    lam_flat = lam.ravel()
    interf = a * a * (np.dot(lam_flat, gains) - lam_flat[k] * gains[k])
    cq = np.real(np.diag(ul_quant_cov(H_i, lam_flat, q, noise=s)))
    quant = np.dot(np.abs(f) ** 2, cq)
    thermal = a * a * s * np.real(np.vdot(f, f))
    return float(a * a * lam_flat[k] * gains[k] / (interf + quant + thermal))


def ul_sinrs(combiners, scenario: NetworkScenario, powers, q: QuantizerModel, noise=1.0) -> np.ndarray:
    """``ul_sinr`` for every user, shape ``(N_c, N_u)``."""
    out = np.empty((scenario.n_cells, scenario.n_users))
    for i in range(scenario.n_cells):
        for u in range(scenario.n_users):
            out[i, u] = ul_sinr(combiners[i][:, u], scenario, powers, q, i, u, noise)
    return out

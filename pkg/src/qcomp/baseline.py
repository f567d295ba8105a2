"""Q-Percell: quantization-aware per-cell baseline, plus achieved-SINR reports.

Each BS solves its own single-cell problem while the other cells' signals
are lumped into a fixed noise power, then the noise powers are refreshed
and the cells re-solve until the estimates settle.

Uplink: BS ``i`` sees out-of-cell users (and the quantization error they
cause) as spatially white noise whose per-antenna power is measured from
the current powers. Its combiners therefore cannot steer away from
out-of-cell interferers.

Downlink: the precoders are the per-cell combiners scaled by weights from
the single-cell ``Sigma_ii tau_i = 1 + e_i`` system, where ``e_iu`` is the
interference plus DAC noise that user ``(i, u)`` receives from other BSs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .downlink import JointSolution, build_sigma, dl_sinrs
from .quantizer import QuantizerModel
from .scenario import NetworkScenario
from .uplink import (SolverOptions, UplinkStatus, as_targets, fixed_point_solve,
                     mmse_combiners, ul_sinr)


class PercellStatus(str, enum.Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    ITERATION_CAP = "iteration_cap"


@dataclass(frozen=True)
class PercellOptions:
    inner: SolverOptions = SolverOptions()
    outer_tolerance: float = 1e-8
    max_outer_iterations: int = 500


@dataclass(frozen=True, eq=False)
class PercellSolution:
    powers: np.ndarray
    combiners: np.ndarray
    precoders: np.ndarray
    tau: np.ndarray
    targets: np.ndarray
    outer_iterations: int
    status: PercellStatus
    ul_noise: np.ndarray
    dl_noise: np.ndarray
    per_user_achieved_sinr: np.ndarray
    alpha: float

    @property
    def total_ul_power(self) -> float:
        return float(np.sum(self.powers))

    @property
    def total_dl_power(self) -> float:
        return self.alpha * float(np.sum(np.abs(self.precoders) ** 2))

    @property
    def iterations(self) -> int:
        return self.outer_iterations

    @property
    def optimal(self) -> bool:
        return self.status is PercellStatus.CONVERGED


def _external_ul_noise(scenario, powers):
    """``1 + (1/N_b) sum_{j != i, v} lam_jv ||h_ijv||^2`` for every BS.

    The quantization error of the external signals adds ``beta`` times their
    power and the AQNM gain removes ``beta``, so the white level is
    independent of the resolution.
    """
    norms = np.sum(np.abs(scenario.H) ** 2, axis=2)  # (i, j, v)
    rx = np.einsum("ijv,jv->ij", norms, powers)
    ext = rx.sum(axis=1) - np.diagonal(rx)
    return 1.0 + ext / scenario.n_antennas


def _uplink_phase(scenario, g, q, opts):
    n_c, n_u = scenario.n_cells, scenario.n_users
    lam = np.zeros((n_c, n_u))
    noise = np.ones(n_c)
    views = [scenario.cell_view(i) for i in range(n_c)]
    status = PercellStatus.ITERATION_CAP
    it = 0
    for it in range(1, opts.max_outer_iterations + 1):
        for i in range(n_c):
            sol = fixed_point_solve(views[i], g[i:i + 1], q, opts.inner,
                                    initial=lam[i:i + 1], noise=noise[i])
            lam[i] = sol.powers[0]
            if sol.status is not UplinkStatus.OPTIMAL:
                status = PercellStatus.DIVERGED
        if status is PercellStatus.DIVERGED:
            break
        new = _external_ul_noise(scenario, lam)
        change = np.max(np.abs(new - noise) / noise)
        noise = new
        if change < opts.outer_tolerance:
            status = PercellStatus.CONVERGED
            break
    combiners = np.concatenate(
        [mmse_combiners(views[i], lam[i:i + 1], q, noise[i]) for i in range(n_c)])
    return lam, combiners, noise, status, it


def _downlink_phase(scenario, combiners, g, q, opts):
    n_c, n_u = scenario.n_cells, scenario.n_users
    sigma = build_sigma(combiners, scenario, g, q).reshape(n_c, n_u, n_c, n_u)
    blocks = [sigma[i, :, i, :] for i in range(n_c)]
    # off-cell part only: -sum_{j != i} Sigma[(i,u),(j,v)] tau_jv
    external = sigma.copy()
    for i in range(n_c):
        external[i, :, i, :] = 0.0
    col_norm = np.sum(np.abs(combiners) ** 2, axis=1)

    tau = np.zeros((n_c, n_u))
    noise = np.ones((n_c, n_u))
    status = PercellStatus.ITERATION_CAP
    it = 0
    for it in range(1, opts.max_outer_iterations + 1):
        new_tau = np.empty_like(tau)
        for i in range(n_c):
            try:
                new_tau[i] = np.linalg.solve(blocks[i], noise[i])
            except np.linalg.LinAlgError:
                new_tau[i] = np.nan
        if not np.all(np.isfinite(new_tau)) or np.any(new_tau <= 0):
            status = PercellStatus.DIVERGED
            break
        tau = new_tau
        if q.alpha * np.sum(tau * col_norm) > opts.inner.power_cap:
            status = PercellStatus.DIVERGED
            break
        new = 1.0 - np.einsum("iujv,jv->iu", external, tau)
        change = np.max(np.abs(new - noise) / noise)
        noise = new
        if change < opts.outer_tolerance:
            status = PercellStatus.CONVERGED
            break
    return tau, noise, status, it


def percell_solve(scenario: NetworkScenario, targets, q: QuantizerModel,
                  opts: PercellOptions | None = None) -> PercellSolution:
    """Per-cell iterative solution treating inter-cell interference as noise."""
    opts = opts or PercellOptions()
    g = as_targets(targets, scenario.n_cells, scenario.n_users)
    lam, F, ul_noise, ul_status, ul_it = _uplink_phase(scenario, g, q, opts)
    if np.all(np.isfinite(F)):
        tau, dl_noise, dl_status, dl_it = _downlink_phase(scenario, F, g, q, opts)
    else:
        tau, dl_noise, dl_status, dl_it = (np.zeros_like(lam), np.full_like(lam, np.nan),
                                           PercellStatus.DIVERGED, 0)
    statuses = {ul_status, dl_status}
    if PercellStatus.DIVERGED in statuses:
        status = PercellStatus.DIVERGED
    elif PercellStatus.ITERATION_CAP in statuses:
        status = PercellStatus.ITERATION_CAP
    else:
        status = PercellStatus.CONVERGED
    W = F * np.sqrt(np.maximum(tau, 0.0))[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        achieved = 10 * np.log10(dl_sinrs(W, scenario, q))
    return PercellSolution(lam, F, W, tau, g, ul_it + dl_it, status, ul_noise, dl_noise,
                           achieved, q.alpha)


@dataclass(frozen=True, eq=False)
class SinrReport:
    ul_sinr_db: np.ndarray
    dl_sinr_db: np.ndarray
    target_db: np.ndarray
    total_ul_power: float
    total_dl_power: float
    duality_gap: float

    @property
    def ul_delta_db(self):
        return self.ul_sinr_db - self.target_db

    @property
    def dl_delta_db(self):
        return self.dl_sinr_db - self.target_db

    def under_target(self, tol_db: float = 0.1) -> np.ndarray:
        """Users whose UL or DL SINR falls more than ``tol_db`` short."""
        with np.errstate(invalid="ignore"):
            return (self.ul_delta_db < -tol_db) | (self.dl_delta_db < -tol_db)

    def over_target(self, tol_db: float = 0.1) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return (self.ul_delta_db > tol_db) | (self.dl_delta_db > tol_db)


def _db(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10 * np.log10(np.asarray(x, dtype=float))


def _safe_ul_sinrs(F, scenario, powers, q):
    out = np.full((scenario.n_cells, scenario.n_users), np.nan)
    for i in range(scenario.n_cells):
        for u in range(scenario.n_users):
            f = F[i][:, u]
            if np.any(f) and np.all(np.isfinite(f)):
                out[i, u] = ul_sinr(f, scenario, powers, q, i, u)
    return out


def achieved_sinr_report(solution, scenario: NetworkScenario, q: QuantizerModel) -> SinrReport:
    """Per-user achieved UL/DL SINR (dB) of a Q-iCoMP or Q-Percell solution.

    SINRs are always evaluated on the full network model. Users with zero
    power report ``-inf``; missing precoders report ``nan``.
    """
    powers = np.asarray(solution.powers, dtype=float)
    F = solution.combiners
    if F is None and np.all(np.isfinite(powers)):
        F = mmse_combiners(scenario, powers, q)
    ul = _safe_ul_sinrs(F, scenario, powers, q)
    W = solution.precoders
    if W is None:
        dl = np.full_like(ul, np.nan)
    else:
        dl = dl_sinrs(W, scenario, q)
    total_ul = float(np.sum(powers))
    total_dl = solution.total_dl_power
    gap = abs(total_dl - total_ul) / total_ul if total_ul > 0 else np.nan
    return SinrReport(_db(ul), _db(dl), _db(solution.targets), total_ul, total_dl, gap)


__all__ = ["PercellStatus", "PercellOptions", "PercellSolution", "percell_solve",
           "SinrReport", "achieved_sinr_report", "JointSolution"]

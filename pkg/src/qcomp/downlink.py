"""Downlink precoders from the uplink solution.

The optimal precoder is a scaled uplink MMSE combiner, ``w_iu = sqrt(tau_iu) f_iu``.
The weights solve the linear system ``Sigma tau = 1`` that makes every DL
SINR constraint hold with equality.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .quantizer import QuantizerModel, dl_quant_cov
from .scenario import NetworkScenario
from .uplink import SolverOptions, UplinkSolution, UplinkStatus, as_targets, fixed_point_solve


class DownlinkStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    NON_POSITIVE_TAU = "non_positive_tau"


class TauStatus(str, enum.Enum):
    CONVERGED = "converged"
    ITERATION_CAP = "iteration_cap"


@dataclass(frozen=True, eq=False)
class DownlinkSolution:
    precoders: np.ndarray
    tau: np.ndarray
    total_power: float
    status: DownlinkStatus


@dataclass(frozen=True, eq=False)
class TauResult:
    tau: np.ndarray
    status: TauStatus
    iterations: int


def _coupling_terms(combiners, scenario):
    """``G[j,v,i,u] = f_jv^H h_jiu`` and ``D[j,v,i,u] = f_jv^H diag(h_jiu h_jiu^H) f_jv``."""
    F = np.asarray(combiners)
    G = np.einsum("jnv,jinu->jviu", F.conj(), scenario.H)
    D = np.einsum("jnv,jinu->jviu", np.abs(F) ** 2, np.abs(scenario.H) ** 2)
    return G, D


def build_sigma(combiners, scenario: NetworkScenario, targets, q: QuantizerModel) -> np.ndarray:
    """Real ``(N_c N_u) x (N_c N_u)`` coupling matrix; row ``(i,u)``, column ``(j,v)``."""
    F = np.asarray(combiners)
    if not np.all(np.any(F != 0, axis=1)):
        raise ValueError("combiners must be nonzero")
    n_c, n_u = scenario.n_cells, scenario.n_users
    g = as_targets(targets, n_c, n_u).ravel()
    G, D = _coupling_terms(F, scenario)
    a, ab = q.alpha, q.alpha_beta
    # entry (i,u),(j,v) built from f_jv and h_jiu
    m = n_c * n_u
    cross = (a * a * np.abs(G) ** 2 + ab * D).transpose(2, 3, 0, 1).reshape(m, m)
    own = (np.abs(G) ** 2).transpose(2, 3, 0, 1).reshape(m, m).diagonal()
    sigma = -cross
    k = np.arange(m)
    sigma[k, k] = a * a * own / g - ab * D.transpose(2, 3, 0, 1).reshape(m, m).diagonal()
    return sigma


def solve_tau(sigma):
    """Direct solve of ``Sigma tau = 1``.

    Returns ``(tau, status)``; a singular ``Sigma`` or any non-positive weight
    yields ``NON_POSITIVE_TAU`` and the raw (possibly meaningless) vector.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("sigma must be square")
    ones = np.ones(sigma.shape[0])
    try:
        tau = np.linalg.solve(sigma, ones)
    except np.linalg.LinAlgError:
        return np.full(sigma.shape[0], np.nan), DownlinkStatus.NON_POSITIVE_TAU
    if not np.all(np.isfinite(tau)) or np.any(tau <= 0):
        return tau, DownlinkStatus.NON_POSITIVE_TAU
    return tau, DownlinkStatus.OPTIMAL


def assemble_precoders(combiners, tau, q: QuantizerModel,
                       status: DownlinkStatus = DownlinkStatus.OPTIMAL) -> DownlinkSolution:
    """``w_iu = sqrt(tau_iu) f_iu`` and the radiated power ``alpha sum ||w||^2``."""
    F = np.asarray(combiners)
    n_c, _, n_u = F.shape
    tau = np.asarray(tau, dtype=float).reshape(n_c, n_u)
    if np.any(~(tau > 0)):
        raise ValueError("tau must be positive")
    W = F * np.sqrt(tau)[:, None, :]
    total = q.alpha * float(np.sum(tau * np.sum(np.abs(F) ** 2, axis=1)))
    return DownlinkSolution(W, tau, total, status)


def dl_sinr(precoders, scenario: NetworkScenario, q: QuantizerModel, i: int, u: int) -> float:
    """Downlink SINR of user ``(i, u)`` including DAC quantization noise."""
    W = np.asarray(precoders)
    a = q.alpha
    interf = 0.0
    quant = 0.0
    signal = 0.0
    for j in range(scenario.n_cells):
        h = scenario.h(j, i, u)
        gains = np.abs(h.conj() @ W[j]) ** 2
        if j == i:
            signal = a * a * gains[u]
            gains = np.delete(gains, u)
        interf += a * a * np.sum(gains)
        C = dl_quant_cov(W[j], q)
        quant += np.real(h.conj() @ C @ h)
    # same quantization term written per precoder column
    alt = q.alpha_beta * sum(
        np.sum(np.abs(W[j]) ** 2 * (np.abs(scenario.h(j, i, u)) ** 2)[:, None])
        for j in range(scenario.n_cells))
    if not np.isclose(quant, alt, rtol=1e-9, atol=1e-300):
        raise AssertionError(f"quantization term mismatch: {quant} vs {alt}")
    return float(signal / (interf + quant + 1.0))


def dl_sinrs(precoders, scenario: NetworkScenario, q: QuantizerModel) -> np.ndarray:
    out = np.empty((scenario.n_cells, scenario.n_users))
    for i in range(scenario.n_cells):
        for u in range(scenario.n_users):
            out[i, u] = dl_sinr(precoders, scenario, q, i, u)
    return out


def tau_iterative(combiners, scenario: NetworkScenario, targets, q: QuantizerModel,
                  opts: SolverOptions | None = None, *, sigma=None) -> TauResult:
    """Per-user weight updates, each user holding the others fixed.

    Every user sets the smallest weight that meets its own SINR target given
    the current weights of everyone else (a synchronous Foschini-Miljanic
    step); the iteration is started from the interference-free weights.
    """
    opts = opts or SolverOptions()
    if sigma is None:
        sigma = build_sigma(combiners, scenario, targets, q)
    d = np.diag(sigma).copy()
    off = sigma - np.diag(d)
    tau = 1.0 / d
    if np.any(d <= 0):
        return TauResult(tau, TauStatus.ITERATION_CAP, 0)
    prev_change = None
    for n in range(1, opts.max_iterations + 1):
        new = (1.0 - off @ tau) / d
        if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > opts.power_cap:
            return TauResult(new, TauStatus.ITERATION_CAP, n)
        change = np.max(np.abs(new - tau) / np.maximum(np.abs(tau), opts.eps))
        tau = new
        rate = change / prev_change if prev_change else None
        prev_change = change
        if change < opts.tolerance:
            err = change if rate is None else (change / (1.0 - rate) if rate < 1 else np.inf)
            if err < opts.tolerance or change < 64 * np.finfo(float).eps:
                return TauResult(tau, TauStatus.CONVERGED, n)
    return TauResult(tau, TauStatus.ITERATION_CAP, opts.max_iterations)


@dataclass(frozen=True, eq=False)
class JointSolution:
    """Q-iCoMP result: uplink powers/combiners and the dual downlink precoders."""

    uplink: UplinkSolution
    downlink: DownlinkSolution | None
    sigma: np.ndarray | None = None

    @property
    def status(self) -> str:
        if self.uplink.status is not UplinkStatus.OPTIMAL:
            return self.uplink.status.value
        return self.downlink.status.value

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def targets(self):
        return self.uplink.targets

    @property
    def powers(self):
        return self.uplink.powers

    @property
    def combiners(self):
        return self.uplink.combiners

    @property
    def precoders(self):
        return None if self.downlink is None else self.downlink.precoders

    @property
    def tau(self):
        return None if self.downlink is None else self.downlink.tau

    @property
    def iterations(self) -> int:
        return self.uplink.iterations

    @property
    def total_ul_power(self) -> float:
        return self.uplink.total_power

    @property
    def total_dl_power(self) -> float:
        return np.nan if self.downlink is None else self.downlink.total_power

    @property
    def duality_gap(self) -> float:
        return abs(self.total_dl_power - self.total_ul_power) / self.total_ul_power


def solve_qicomp(scenario: NetworkScenario, targets, q: QuantizerModel,
                 opts: SolverOptions | None = None, **kw) -> JointSolution:
    """Uplink fixed point, MMSE combiners, then ``tau = Sigma^-1 1``."""
    ul = fixed_point_solve(scenario, targets, q, opts, **kw)
    if ul.status is not UplinkStatus.OPTIMAL:
        return JointSolution(ul, None)
    sigma = build_sigma(ul.combiners, scenario, ul.targets, q)
    tau, status = solve_tau(sigma)
    if status is DownlinkStatus.OPTIMAL:
        dl = assemble_precoders(ul.combiners, tau, q)
    else:
        n_c, n_b, n_u = ul.combiners.shape
        dl = DownlinkSolution(np.zeros_like(ul.combiners), tau.reshape(n_c, n_u), np.nan, status)
    return JointSolution(ul, dl, sigma)

"""Additive quantization noise model (AQNM) for low-resolution ADCs/DACs.

The quantizer is linearized as ``Q(r) = alpha * r + q`` with ``alpha = 1 - beta``
and ``beta`` the normalized mean squared error of a scalar MMSE (Lloyd-Max)
quantizer driven by a unit-variance Gaussian. ``beta`` is computed here from
first principles rather than read from a table.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr, ndtri

INF_BITS = math.inf
MAX_BITS = 12


class QuantizerError(ValueError):
    """Invalid resolution or a Lloyd-Max run that failed to converge."""


@dataclass(frozen=True)
class QuantizerModel:
    """AQNM gain pair for a ``bits``-bit quantizer (``math.inf`` = ideal)."""

    bits: float
    alpha: float
    beta: float

    @property
    def is_ideal(self) -> bool:
        return math.isinf(self.bits)

    @property
    def alpha_beta(self) -> float:
        return self.alpha * self.beta


@dataclass(frozen=True)
class ScalarCodebook:
    """Lloyd-Max codebook for a unit-variance real Gaussian source.

    ``thresholds`` holds the ``2**bits - 1`` finite decision boundaries, so
    cell ``k`` is ``(thresholds[k-1], thresholds[k]]`` with open ends.
    """

    bits: int
    thresholds: np.ndarray
    levels: np.ndarray
    distortion: float
    iterations: int

    def quantize(self, x):
        x = np.asarray(x, dtype=float)
        return self.levels[np.searchsorted(self.thresholds, x)]

    def to_json(self) -> str:
        return json.dumps({
            "bits": self.bits,
            "thresholds": self.thresholds.tolist(),
            "levels": self.levels.tolist(),
            "distortion": self.distortion,
            "iterations": self.iterations,
        })


def _phi(t):
    return np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)


def _cell_mass(lo, hi):
    # Tail cells lose all precision with cdf differences; use the survival
    # function on the positive side.
    right = lo >= 0
    return np.where(right, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def _cells(levels):
    t = 0.5 * (levels[1:] + levels[:-1])
    lo = np.concatenate(([-np.inf], t))
    hi = np.concatenate((t, [np.inf]))
    return t, lo, hi


def _centroids(levels):
    t, lo, hi = _cells(levels)
    mass = _cell_mass(lo, hi)
    return (_phi(lo) - _phi(hi)) / mass, lo, hi, mass


def _newton_step(levels):
    """One Newton step on ``levels - centroids(levels) = 0``.

    The Jacobian of the Lloyd map is tridiagonal because each centroid only
    depends on its two boundaries.
    """
    c, lo, hi, mass = _centroids(levels)
    lo_f = np.where(np.isfinite(lo), lo, 0.0)
    hi_f = np.where(np.isfinite(hi), hi, 0.0)
    d_lo = np.where(np.isfinite(lo), _phi(lo_f) * (c - lo_f) / mass, 0.0)
    d_hi = np.where(np.isfinite(hi), _phi(hi_f) * (hi_f - c) / mass, 0.0)
    n = levels.size
    # rows of (I - J) in banded storage
    ab = np.zeros((3, n))
    ab[1] = 1.0 - 0.5 * (d_lo + d_hi)
    ab[0, 1:] = -0.5 * d_hi[:-1]
    ab[2, :-1] = -0.5 * d_lo[1:]
    delta = solve_banded((1, 1), ab, c - levels)
    return levels + delta


def lloyd_max(bits: int, tolerance: float = 1e-12, max_iterations: int = 10_000) -> ScalarCodebook:
    """Design the MMSE scalar quantizer for a unit Gaussian.

    Alternates threshold (midpoint) and level (centroid) updates until the
    largest level movement drops below ``tolerance``. Newton steps on the
    same fixed-point map are interleaved to keep high resolutions tractable;
    they never replace the Lloyd update used for the stopping test.
    """
    if not isinstance(bits, (int, np.integer)) or not 1 <= bits <= MAX_BITS:
        raise QuantizerError(f"bits must be an integer in [1, {MAX_BITS}], got {bits!r}")
    n = 2 ** int(bits)
    # companding start: point density proportional to pdf**(1/3)
    levels = math.sqrt(3.0) * ndtri((np.arange(n) + 0.5) / n)

    for it in range(1, max_iterations + 1):
        new, *_ = _centroids(levels)
        move = np.max(np.abs(new - levels))
        levels = new
        if move < tolerance:
            break
        candidate = _newton_step(levels)
        if np.all(np.diff(candidate) > 0) and np.all(np.isfinite(candidate)):
            levels = candidate
    else:
        raise QuantizerError(f"Lloyd-Max did not converge for bits={bits} "
                             f"(last movement {move:.3e})")

    c, lo, hi, mass = _centroids(levels)
    distortion = float(1.0 - np.sum(mass * levels * levels))
    thresholds = 0.5 * (levels[1:] + levels[:-1])
    return ScalarCodebook(int(bits), thresholds, levels, distortion, it)


@functools.lru_cache(maxsize=None)
def _cached_codebook(bits: int) -> ScalarCodebook:
    return lloyd_max(bits)


def codebook(bits: int) -> ScalarCodebook:
    """Cached Lloyd-Max codebook."""
    return _cached_codebook(int(bits))


def _check_bits(bits):
    if bits is None:
        raise QuantizerError("bits must be given")
    if isinstance(bits, float) and math.isinf(bits) and bits > 0:
        return INF_BITS
    if isinstance(bits, float) and bits.is_integer():
        bits = int(bits)
    if not isinstance(bits, (int, np.integer)) or isinstance(bits, bool):
        raise QuantizerError(f"invalid resolution {bits!r}")
    if bits < 1 or bits > MAX_BITS:
        raise QuantizerError(f"invalid resolution {bits}: expected 1..{MAX_BITS} or inf")
    return int(bits)


def quantizer_model(bits) -> QuantizerModel:
    """AQNM parameters for ``bits`` (an int in 1..12 or ``math.inf``)."""
    bits = _check_bits(bits)
    if math.isinf(bits):
        return QuantizerModel(INF_BITS, 1.0, 0.0)
    beta = codebook(bits).distortion
    return QuantizerModel(bits, 1.0 - beta, beta)


def parse_bits(text) -> float:
    """Parse ``"inf"``/``"∞"`` or an integer resolution."""
    if isinstance(text, (int, float)):
        return _check_bits(text)
    s = str(text).strip().lower()
    if s in {"inf", "infinity", "∞"}:
        return INF_BITS
    try:
        return _check_bits(int(s))
    except ValueError:
        raise QuantizerError(f"invalid resolution {text!r}") from None


def format_bits(bits) -> str:
    return "inf" if math.isinf(bits) else str(int(bits))


def ul_quant_cov(H_i, powers, q: QuantizerModel, noise: float = 1.0) -> np.ndarray:
    """Uplink quantization noise covariance ``ab * diag(H_i Lam H_i^H + I)``.

    ``H_i`` is ``N_b x M`` (all users of the network as seen by one BS) and
    ``powers`` is either the length-``M`` power vector or the diagonal matrix.
    ``noise`` scales the identity (receiver noise variance).
    """
    H_i = np.asarray(H_i)
    lam = np.asarray(powers, dtype=float)
    if lam.ndim == 2:
        lam = np.diag(lam)
    if H_i.ndim != 2 or lam.shape != (H_i.shape[1],):
        raise ValueError(f"dimension mismatch: H_i {H_i.shape}, powers {np.shape(powers)}")
    rx = (np.abs(H_i) ** 2) @ lam + noise
    return np.diag(q.alpha_beta * rx)


def dl_quant_cov(W_i, q: QuantizerModel) -> np.ndarray:
    """Downlink (DAC) quantization noise covariance ``ab * diag(W_i W_i^H)``."""
    W_i = np.asarray(W_i)
    if W_i.ndim == 1:
        W_i = W_i[:, None]
    return np.diag(q.alpha_beta * np.sum(np.abs(W_i) ** 2, axis=1))


def empirical_beta(bits, n_samples: int, rng: np.random.Generator, *, return_stderr: bool = False):
    """Monte-Carlo estimate of ``E|r - Q(r)|^2 / E|r|^2`` for Gaussian input.

    With ``return_stderr`` the delta-method standard error of the ratio is
    returned alongside the estimate.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    bits = _check_bits(bits)
    x = rng.standard_normal(n_samples)
    if math.isinf(bits):
        err = np.zeros_like(x)
    else:
        err = (x - codebook(bits).quantize(x)) ** 2
    sig = x * x
    ratio = float(err.mean() / sig.mean())
    if not return_stderr:
        return ratio
    # ratio estimator: var ~ var(err - ratio * sig) / (n * mean(sig)^2)
    resid = err - ratio * sig
    stderr = float(resid.std(ddof=1) / (math.sqrt(n_samples) * sig.mean()))
    return ratio, stderr

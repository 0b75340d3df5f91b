"""Radius thresholds, phase postcompensation and the two detectors.

The two-stage (TS) detector first decides the ring from ``|y|`` using MAP
thresholds, rotates the observation by the amplitude-dependent correction
angle of that ring, and then picks the nearest symbol phase in the ring.
The maximum-likelihood (ML) detector evaluates the full conditional
density for every symbol.

Sign convention: ``theta_c(R, r) = -arg C_1(R, r)`` and the
postcompensated observation is ``y_tilde = y * exp(-1j * theta_c)``.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_observations
from .analytic import HarmonicsBank
from .channel import ChannelParams

__all__ = [
    "ThresholdFallbackWarning",
    "ThresholdSet",
    "DetectorKind",
    "map_thresholds",
    "pair_thresholds",
    "correction_angle",
    "postcompensate",
    "ts_detect",
    "ml_detect",
    "likelihoods",
    "TwoStageDetector",
    "MLDetector",
]

_BISECTION_STEPS = 200
_ML_CHUNK = 4096


class ThresholdFallbackWarning(RuntimeWarning):
    """A MAP threshold had no sign change on its bracket; the midpoint was used."""


class DetectorKind(str, enum.Enum):
    TWO_STAGE = "two_stage"
    MAX_LIKELIHOOD = "max_likelihood"

    @classmethod
    def parse(cls, value) -> "DetectorKind":
        if isinstance(value, cls):
            return value
        aliases = {"ts": cls.TWO_STAGE, "ml": cls.MAX_LIKELIHOOD}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ValueError(f"unknown detector {value!r}; use two_stage or ml") from None


@dataclass(frozen=True)
class ThresholdSet:
    """Decision radii ``mu_0 = 0 < mu_1 < ... < mu_K = inf``."""

    mu: tuple

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.size < 2 or mu[0] != 0 or not np.isinf(mu[-1]):
            raise ValueError("thresholds must start at 0 and end at infinity")
        if np.any(np.diff(mu) <= 0):
            raise ValueError(f"thresholds must be strictly increasing, got {self.mu}")
        object.__setattr__(self, "mu", tuple(float(v) for v in mu))

    @property
    def n_rings(self) -> int:
        return len(self.mu) - 1

    def ring_of(self, radius) -> np.ndarray:
        """Ring index ``k`` (0-based) with ``mu_k <= radius < mu_{k+1}``."""
        return np.searchsorted(np.asarray(self.mu), radius, side="right") - 1

    def interval(self, k: int) -> tuple:
        return self.mu[k], self.mu[k + 1]


def _log_ratio(mu, r_a, r_b, w_a, w_b, sigma2):
    # log(w_a f(mu|r_a)) - log(w_b f(mu|r_b)); the common log(2 mu / s2) cancels
    return (np.log(w_a / w_b)
            - ((mu - r_a) ** 2 - (mu - r_b) ** 2) / sigma2
            + np.log(special.i0e(2 * mu * r_a / sigma2))
            - np.log(special.i0e(2 * mu * r_b / sigma2)))


def pair_thresholds(r_lo, r_hi, w_lo, w_hi, sigma2: float):
    """Vectorized MAP threshold between adjacent rings.

    Bisects the log-density difference on every bracket ``(r_lo, r_hi)``
    simultaneously until the bracket collapses to adjacent floats.

    Returns
    -------
    mu : ndarray
        Thresholds; the bracket midpoint where there is no sign change.
    ok : ndarray of bool
        False where the midpoint fallback was used.
    """
    r_lo, r_hi, w_lo, w_hi = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                                  for v in (r_lo, r_hi, w_lo, w_hi)))
    lo, hi = r_lo.copy(), r_hi.copy()
    ok = ((_log_ratio(lo, r_lo, r_hi, w_lo, w_hi, sigma2) > 0)
          & (_log_ratio(hi, r_lo, r_hi, w_lo, w_hi, sigma2) < 0))
    active = ok.copy()
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        active &= (mid > lo) & (mid < hi)
        if not active.any():
            break
        pos = _log_ratio(mid, r_lo, r_hi, w_lo, w_hi, sigma2) > 0
        lo = np.where(active & pos, mid, lo)
        hi = np.where(active & ~pos, mid, hi)
    mu = np.where(ok, 0.5 * (lo + hi), 0.5 * (r_lo + r_hi))
    return mu, ok


def map_thresholds(constellation, sigma2: float, warn: bool = True) -> ThresholdSet:
    """MAP radius thresholds for a ring constellation.

    Each interior ``mu_k`` equates the prior-weighted Rice densities of
    rings ``k`` and ``k+1`` (priors proportional to the ring sizes) and is
    found by bisection of the log-density difference on ``(r_k, r_{k+1})``.
    Without a sign change on that bracket the midpoint is used and a
    ``ThresholdFallbackWarning`` is issued unless ``warn`` is false.
    """
    if not sigma2 > 0:
        raise ValueError(f"noise variance must be positive, got {sigma2}")
    r = np.asarray(constellation.radii, dtype=float)
    w = constellation.ring_counts.astype(float)
    mu, ok = pair_thresholds(r[:-1], r[1:], w[:-1], w[1:], sigma2)
    for k in np.nonzero(~ok)[0] if warn else ():
        warnings.warn(
            f"no MAP threshold between radii {r[k]:.6g} and {r[k + 1]:.6g}; using the midpoint",
            ThresholdFallbackWarning, stacklevel=2)
    return ThresholdSet((0.0, *mu.tolist(), np.inf))


def correction_angle(R, r_hat: float, harmonics) -> np.ndarray:
    """Correction angle ``-arg C_1(R, r_hat)`` for detected ring radius ``r_hat``.

    ``harmonics`` is either the harmonics object of ``r_hat`` or a
    :class:`~nlpn_apsk.analytic.HarmonicsBank`.
    """
    h = harmonics[r_hat] if isinstance(harmonics, HarmonicsBank) else harmonics
    if not np.isclose(h.r0, r_hat, rtol=1e-9, atol=1e-15):
        raise ValueError(f"harmonics were built for r={h.r0}, not {r_hat}")
    return h.correction_angle(R)


def postcompensate(y, constellation, thresholds: ThresholdSet, bank: HarmonicsBank):
    """First stage of the TS detector.

    Returns ``(ring, y_tilde)``: the detected ring per observation and the
    observation rotated by the ring's correction angle.
    """
    y = np.asarray(y, dtype=complex)
    radius = np.abs(y)
    ring = thresholds.ring_of(radius)
    angle = np.zeros(y.shape)
    radii = np.asarray(constellation.radii, dtype=float)
    for k in np.unique(ring):
        sel = ring == k
        angle[sel] = bank[radii[k]].correction_angle(radius[sel])
    return ring, y * np.exp(-1j * angle)


_TIE_TOL = 1e-12


def _nearest_phase(phase, ring_phases):
    d = np.abs(np.angle(np.exp(1j * (phase[:, None] - np.asarray(ring_phases)[None, :]))))
    # distances equal up to rounding count as a tie; argmax picks the lowest index
    return np.argmax(d <= d.min(axis=1, keepdims=True) + _TIE_TOL, axis=1)


def ts_detect(y, constellation, thresholds: ThresholdSet, bank: HarmonicsBank):
    """Two-stage detection; returns symbol indices (ring-major order).

    Observations exactly on a phase boundary go to the lower symbol index.
    """
    y = np.asarray(y, dtype=complex)
    scalar = y.ndim == 0
    y = y.reshape(-1)
    if thresholds.n_rings != constellation.n_rings:
        raise ValueError("thresholds and constellation have different ring counts")
    ring, yt = postcompensate(y, constellation, thresholds, bank)
    out = np.empty(y.size, dtype=int)
    offsets = np.concatenate([[0], np.cumsum(constellation.ring_counts)])
    phases = constellation.ring_phases
    for k in np.unique(ring):
        sel = ring == k
        if len(phases[k]) == 1:
            out[sel] = offsets[k]
        else:
            out[sel] = offsets[k] + _nearest_phase(np.angle(yt[sel]), phases[k])
    return int(out[0]) if scalar else out


def likelihoods(y, constellation, bank: HarmonicsBank) -> np.ndarray:
    """Unclipped ``r * f(y | x_i)`` for every symbol; shape ``(n, M)``.

    The common factor ``r = |y|`` is kept so the values stay finite at the
    origin; it does not affect decisions or posteriors.
    """
    y = np.asarray(y, dtype=complex).reshape(-1)
    radius = np.abs(y)
    theta = np.angle(y)
    out = np.empty((y.size, constellation.n_points))
    radii = np.asarray(constellation.radii, dtype=float)
    for k, sl in enumerate(constellation.ring_slices()):
        h = bank[radii[k]]
        psi = np.asarray(constellation.ring_phases[k])
        base = h.amplitude_pdf(radius) / (2 * np.pi)
        dens = np.repeat(base[:, None], psi.size, axis=1)
        if h.m_max:
            m = np.arange(1, h.m_max + 1)
            rot = np.exp(-1j * np.outer(m, psi))
            for lo in range(0, y.size, _ML_CHUNK):
                hi = lo + _ML_CHUNK
                c = h.coefficients(radius[lo:hi]) * np.exp(1j * np.outer(theta[lo:hi], m))
                dens[lo:hi] += (c @ rot).real / np.pi
        out[:, sl] = dens
    return out


def ml_detect(y, constellation, bank: HarmonicsBank):
    """Maximum-likelihood detection; ties go to the lowest symbol index."""
    y = np.asarray(y, dtype=complex)
    scalar = y.ndim == 0
    idx = np.argmax(likelihoods(y, constellation, bank), axis=1)
    return int(idx[0]) if scalar else idx


# ---------------------------------------------------------------------------
# estimator API
# ---------------------------------------------------------------------------

class _DetectorBase(ClassifierMixin, BaseEstimator):
    def __init__(self, constellation=None, channel=None, harmonics="exact",
                 n_harmonic_samples=400_000, random_state=0):
        self.constellation = constellation
        self.channel = channel
        self.harmonics = harmonics
        self.n_harmonic_samples = n_harmonic_samples
        self.random_state = random_state

    def fit(self, X=None, y=None):
        """Prepare thresholds and harmonics from the channel model.

        The detectors are model based; ``X`` and ``y`` are accepted for
        pipeline compatibility and ignored.
        """
        if self.constellation is None or self.channel is None:
            raise ValueError("constellation and channel must be set before fit")
        if not isinstance(self.channel, ChannelParams):
            raise TypeError("channel must be a ChannelParams instance")
        if isinstance(self.harmonics, HarmonicsBank):
            self.bank_ = self.harmonics
        else:
            self.bank_ = HarmonicsBank(self.channel, method=self.harmonics,
                                       n_samples=self.n_harmonic_samples,
                                       seed=self.random_state)
        self.thresholds_ = map_thresholds(self.constellation, self.channel.sigma2)
        self.classes_ = np.arange(self.constellation.n_points)
        self.symbols_ = self.constellation.symbols
        return self


class TwoStageDetector(_DetectorBase):
    """Two-stage detector as a scikit-learn classifier.

    Parameters
    ----------
    constellation : ApskSpec or ring constellation
    channel : ChannelParams
    harmonics : {"exact", "monte_carlo"} or HarmonicsBank
    n_harmonic_samples : int
        Draws per amplitude when ``harmonics="monte_carlo"``.
    random_state : int

    Examples
    --------
    >>> det = TwoStageDetector(spec, ChannelParams(7000)).fit()  # doctest: +SKIP
    >>> det.predict(observations)  # doctest: +SKIP
    """

    def predict(self, X):
        check_is_fitted(self, "thresholds_")
        y = check_observations(X)
        return ts_detect(y, self.constellation, self.thresholds_, self.bank_)

    def postcompensate(self, X):
        """Rotated observations ``y_tilde`` (complex)."""
        check_is_fitted(self, "thresholds_")
        return postcompensate(check_observations(X), self.constellation, self.thresholds_,
                              self.bank_)[1]


class MLDetector(_DetectorBase):
    """Maximum-likelihood detector as a scikit-learn classifier.

    ``predict_proba`` returns symbol posteriors under uniform priors.
    """

    def predict(self, X):
        check_is_fitted(self, "bank_")
        return ml_detect(check_observations(X), self.constellation, self.bank_)

    def predict_proba(self, X):
        check_is_fitted(self, "bank_")
        lik = np.maximum(likelihoods(check_observations(X), self.constellation, self.bank_), 0)
        total = lik.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            post = lik / total
        post[~np.isfinite(post).all(axis=1)] = 1.0 / lik.shape[1]
        return post

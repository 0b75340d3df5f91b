"""Transition probabilities, symbol and bit error probabilities.

Quadrature evaluation of the two-stage detector works ring pair by ring
pair. For a symbol transmitted in ring ``a`` and a decision sector
``[alpha, beta]`` in ring ``b``, the phase integral of the Fourier series
is closed form, so only a radial integral over the annulus of ring ``b``
remains:

    P = F_ab (beta - alpha) / 2pi
        + 1/pi sum_m Re{ H_m e^{-j m theta_i} (e^{j m beta} - e^{j m alpha}) / (j m) },

    H_m = int_annulus C_m(r, r_a) exp(j m theta_c(r, r_b)) dr,

where ``F_ab`` is the Rice mass of the annulus (Marcum Q differences). The
radial integral uses Gauss-Legendre panels split at the bulk of the Rice
density of ring ``a``.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import stats

from .analytic import HarmonicsBank, marcum_q1, marcum_q1_complement
from .channel import ChannelParams, sample_channel
from .constellation import RingGeometry
from .detection import DetectorKind, ThresholdSet, map_thresholds, ml_detect, ts_detect

__all__ = [
    "NumericalError",
    "QuadratureConfig",
    "TransitionMatrix",
    "RingConstellation",
    "qam16",
    "sector_bounds",
    "ring_mass",
    "annulus_masses",
    "transition_matrix_ts",
    "symbol_errors_ts",
    "sep_ts",
    "transition_matrix_mc",
    "transition_matrices_mc",
    "sep",
    "first_stage_error",
    "bep",
    "hamming_distances",
    "awgn_ml_sep",
    "wilson_interval",
]


MIN_MC_SAMPLES = 10_000


class NumericalError(RuntimeError):
    """A numerical result failed its consistency check."""


@dataclass(frozen=True)
class QuadratureConfig:
    """Radial quadrature settings.

    ``nodes`` Gauss-Legendre points per panel; panels break at
    ``r_a +- spread * s`` and the harmonic part is integrated over
    ``r_a +- reach * s`` (``s = sigma / sqrt(2)``), beyond which the Rice
    density is below ``exp(-reach**2 / 2)`` of its peak.
    """

    nodes: int = 64
    spread: float = 6.0
    reach: float = 9.0
    row_tol: float = 1e-4

    def refined(self) -> "QuadratureConfig":
        return QuadratureConfig(2 * self.nodes, self.spread, self.reach, self.row_tol)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Symbol transition probabilities ``P[i, j] = Pr(decide j | sent i)``."""

    probabilities: np.ndarray
    method: str
    sample_count: int | None = None

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {p.shape}")
        object.__setattr__(self, "probabilities", p)

    @property
    def n_points(self) -> int:
        return self.probabilities.shape[0]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["tx"] + [f"rx{j}" for j in range(self.n_points)])
        for i, row in enumerate(self.probabilities):
            writer.writerow([i] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, method: str = "imported") -> "TransitionMatrix":
        text = open(source, encoding="utf-8").read() if os.path.exists(str(source)) else source
        rows = list(csv.reader(io.StringIO(text)))
        body = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
        return cls(body, method)


@dataclass(frozen=True)
class RingConstellation(RingGeometry):
    """Any constellation whose points lie on concentric rings.

    ``ring_phases[k]`` lists the symbol phases of ring ``k`` in symbol
    order; phases within a ring need not be equally spaced.
    """

    radii: tuple
    ring_phases: tuple


def qam16(power: float) -> RingConstellation:
    """16-QAM ``sqrt(P/10) (a + jb)``, ``a, b in {+-1, +-3}``, as three rings.

    Within a ring the symbols are ordered by increasing phase in ``[0, 2pi)``.
    """
    if not power > 0:
        raise ValueError("power must be positive")
    levels = np.array([-3, -1, 1, 3])
    pts = np.sqrt(power / 10) * (levels[:, None] + 1j * levels[None, :]).ravel()
    amp2 = np.round(np.abs(pts) ** 2 / (power / 10)).astype(int)
    radii, phases = [], []
    for a2 in sorted(set(amp2.tolist())):
        ring = pts[amp2 == a2]
        ph = np.sort(np.mod(np.angle(ring), 2 * np.pi))
        radii.append(float(np.sqrt(power / 10 * a2)))
        phases.append(ph)
    return RingConstellation(tuple(radii), tuple(phases))


def sector_bounds(phases) -> tuple:
    """Nearest-phase decision sectors ``(lower, upper)`` for one ring."""
    ph = np.asarray(phases, dtype=float)
    n = ph.size
    if n == 1:
        return ph - np.pi, ph + np.pi
    order = np.argsort(np.mod(ph, 2 * np.pi))
    sorted_ph = np.mod(ph, 2 * np.pi)[order]
    gaps = np.diff(np.append(sorted_ph, sorted_ph[0] + 2 * np.pi))
    lower = np.empty(n)
    upper = np.empty(n)
    upper[order] = gaps / 2
    lower[order] = np.roll(gaps, 1) / 2
    return ph - lower, ph + upper


def ring_mass(r, lo, hi, sigma2: float) -> np.ndarray:
    """``Pr(lo <= R < hi | r)`` elementwise, from Marcum Q-functions.

    The tail on the far side of ``r`` is used for each endpoint so that
    small masses do not suffer cancellation.
    """
    scale = np.sqrt(2 / sigma2)
    rho, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) * scale for v in (r, lo, hi)))
    above = a >= rho
    below = b <= rho
    mid = ~(above | below)
    out = np.empty(rho.shape)
    out[above] = marcum_q1(rho[above], a[above]) - marcum_q1(rho[above], b[above])
    out[below] = marcum_q1_complement(rho[below], b[below]) - marcum_q1_complement(
        rho[below], a[below])
    out[mid] = 1.0 - marcum_q1(rho[mid], b[mid]) - marcum_q1_complement(rho[mid], a[mid])
    return np.clip(out, 0.0, 1.0)


def annulus_masses(constellation, thresholds: ThresholdSet, sigma2: float) -> np.ndarray:
    """``F[a, b] = Pr(mu_b <= R < mu_{b+1} | r_a)`` from Marcum Q-functions."""
    r = np.asarray(constellation.radii, dtype=float)
    mu = np.asarray(thresholds.mu, dtype=float)
    return ring_mass(r[:, None], mu[None, :-1], mu[None, 1:], sigma2)


def _panels(lo, hi, r_a, s, cfg):
    lo = max(lo, r_a - cfg.reach * s, 0.0)
    hi = min(hi, r_a + cfg.reach * s)
    if hi <= lo:
        return []
    cuts = [r_a - cfg.spread * s, r_a - 2 * s, r_a + 2 * s, r_a + cfg.spread * s]
    pts = [lo] + [c for c in cuts if lo < c < hi] + [hi]
    return list(zip(pts[:-1], pts[1:]))


@lru_cache(maxsize=8)
def _legendre(n):
    return np.polynomial.legendre.leggauss(n)


def _gauss_nodes(panels, n):
    x, w = _legendre(n)
    nodes, weights = [], []
    for a, b in panels:
        half = 0.5 * (b - a)
        nodes.append(a + half * (x + 1))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _harmonic_integrals(h_a, h_b, lo, hi, cfg):
    """``H_m`` for ``m = 1..h_a.m_max`` over the annulus ``[lo, hi)``."""
    if not h_a.m_max:
        return np.zeros(0, dtype=complex)
    s = np.sqrt(h_a.sigma2 / 2)
    panels = _panels(lo, hi, h_a.r0, s, cfg)
    if not panels:
        return np.zeros(h_a.m_max, dtype=complex)
    r, w = _gauss_nodes(panels, cfg.nodes)
    c = h_a.coefficients(r)
    m = np.arange(1, c.shape[1] + 1)
    theta = h_b.correction_angle(r)
    return (w[:, None] * c * np.exp(1j * np.outer(theta, m))).sum(axis=0)


def _sector_terms(H, theta_i, lower, upper):
    """Harmonic contribution to ``P`` for sectors ``[lower, upper]``."""
    if H.size == 0:
        return np.zeros(np.broadcast(lower, upper).shape)
    m = np.arange(1, H.size + 1)
    lower = np.atleast_1d(lower)
    upper = np.atleast_1d(upper)
    diff = (np.exp(1j * np.outer(upper, m)) - np.exp(1j * np.outer(lower, m))) / (1j * m)
    return ((diff * (H * np.exp(-1j * m * theta_i))).sum(axis=1)).real / np.pi


def _ring_setup(constellation, thresholds, bank):
    if thresholds.n_rings != constellation.n_rings:
        raise ValueError("thresholds and constellation have different ring counts")
    radii = np.asarray(constellation.radii, dtype=float)
    harmonics = [bank[r] for r in radii]
    return radii, harmonics


def transition_matrix_ts(constellation, thresholds: ThresholdSet, bank: HarmonicsBank,
                         config: QuadratureConfig | None = None) -> TransitionMatrix:
    """Full transition matrix of the TS detector by quadrature.

    Raises
    ------
    NumericalError
        If a row sum deviates from 1 by more than ``config.row_tol``.
    """
    cfg = config or QuadratureConfig()
    radii, harmonics = _ring_setup(constellation, thresholds, bank)
    F = annulus_masses(constellation, thresholds, bank.params.sigma2)
    M = constellation.n_points
    P = np.zeros((M, M))
    slices = constellation.ring_slices()
    phases = [np.asarray(p, dtype=float) for p in constellation.ring_phases]
    bounds = [sector_bounds(p) for p in phases]
    for a, sl_a in enumerate(slices):
        for b, sl_b in enumerate(slices):
            lower, upper = bounds[b]
            width = (upper - lower) / (2 * np.pi)
            lo, hi = thresholds.interval(b)
            H = (_harmonic_integrals(harmonics[a], harmonics[b], lo, hi, cfg)
                 if phases[b].size > 1 else np.zeros(0, dtype=complex))
            for i, theta_i in zip(range(sl_a.start, sl_a.stop), phases[a]):
                P[i, sl_b] = F[a, b] * width + _sector_terms(H, theta_i, lower, upper)
    dev = np.max(np.abs(P.sum(axis=1) - 1))
    if dev > cfg.row_tol:
        raise NumericalError(f"transition rows deviate from 1 by {dev:.3g}")
    # remove roundoff-level negatives left by the harmonic cancellation
    return TransitionMatrix(np.clip(P, 0.0, 1.0), "quadrature")


def symbol_errors_ts(constellation, thresholds: ThresholdSet, bank: HarmonicsBank,
                     config: QuadratureConfig | None = None) -> np.ndarray:
    """Per-symbol error probability ``1 - P[i, i]`` under TS detection.

    Only the diagonal ring pairs are integrated, which is all the SEP needs.
    """
    cfg = config or QuadratureConfig()
    radii, harmonics = _ring_setup(constellation, thresholds, bank)
    F = np.diag(annulus_masses(constellation, thresholds, bank.params.sigma2))
    out = np.empty(constellation.n_points)
    for a, sl in enumerate(constellation.ring_slices()):
        phases = np.asarray(constellation.ring_phases[a], dtype=float)
        lower, upper = sector_bounds(phases)
        width = (upper - lower) / (2 * np.pi)
        if phases.size == 1:
            out[sl] = 1.0 - F[a]
            continue
        lo, hi = thresholds.interval(a)
        H = _harmonic_integrals(harmonics[a], harmonics[a], lo, hi, cfg)
        for i, theta_i, lw, up, wd in zip(range(sl.start, sl.stop), phases, lower, upper, width):
            inside = _sector_terms(H, theta_i, lw, up)[0]
            out[i] = (1.0 - F[a]) + F[a] * (1.0 - wd) - inside
    return np.clip(out, 0.0, 1.0)


def sep_ts(constellation, bank: HarmonicsBank, thresholds: ThresholdSet | None = None,
           config: QuadratureConfig | None = None) -> float:
    """Average SEP under TS detection (MAP thresholds unless given)."""
    if thresholds is None:
        thresholds = map_thresholds(constellation, bank.params.sigma2)
    return float(np.mean(symbol_errors_ts(constellation, thresholds, bank, config)))


def _detect(kind, y, constellation, thresholds, bank):
    if kind is DetectorKind.TWO_STAGE:
        return ts_detect(y, constellation, thresholds, bank)
    return ml_detect(y, constellation, bank)


def transition_matrices_mc(constellation, detectors, params: ChannelParams, n_samples: int,
                           rng=None, bank: HarmonicsBank | None = None,
                           thresholds: ThresholdSet | None = None,
                           threads: int = 1) -> dict:
    """Monte-Carlo transition matrices for several detectors on shared draws.

    ``n_samples`` channel uses are simulated per transmitted symbol; every
    symbol owns an independent random stream spawned from ``rng``.
    """
    if n_samples < MIN_MC_SAMPLES:
        raise ValueError(f"need at least {MIN_MC_SAMPLES} samples per symbol, got {n_samples}")
    kinds = [DetectorKind.parse(d) for d in detectors]
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    bank = bank or HarmonicsBank(params)
    thresholds = thresholds or map_thresholds(constellation, params.sigma2)
    symbols = constellation.symbols
    M = symbols.size
    streams = rng.spawn(M)

    def row(i):
        y = sample_channel(np.full(n_samples, symbols[i]), params, streams[i]).y
        return [np.bincount(_detect(k, y, constellation, thresholds, bank), minlength=M)
                for k in kinds]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, range(M)))
    else:
        rows = [row(i) for i in range(M)]
    out = {}
    for n, k in enumerate(kinds):
        counts = np.array([r[n] for r in rows], dtype=float)
        out[k] = TransitionMatrix(counts / n_samples, "monte_carlo", n_samples)
    return out


def transition_matrix_mc(constellation, detector, params: ChannelParams, n_samples: int,
                         rng=None, bank: HarmonicsBank | None = None,
                         thresholds: ThresholdSet | None = None,
                         threads: int = 1) -> TransitionMatrix:
    """Empirical transition matrix from ``n_samples`` channel uses per symbol."""
    kind = DetectorKind.parse(detector)
    return transition_matrices_mc(constellation, [kind], params, n_samples, rng, bank,
                                  thresholds, threads)[kind]


def sep(T: TransitionMatrix) -> float:
    """``1 - mean(diag(P))``."""
    P = T.probabilities
    return float(np.mean(1.0 - np.diag(P)))


def first_stage_error(k: int, constellation, thresholds: ThresholdSet, sigma2: float) -> float:
    """Probability that the radius stage misses ring ``k`` (0-based)."""
    if not 0 <= k < constellation.n_rings:
        raise IndexError(f"ring index {k} out of range")
    F = annulus_masses(constellation, thresholds, sigma2)
    return float(1.0 - F[k, k])


def hamming_distances(bits) -> np.ndarray:
    b = np.asarray(bits, dtype=int)
    return np.sum(b[:, None, :] != b[None, :, :], axis=2)


def bep(T: TransitionMatrix, labeling) -> float:
    """Average bit error probability of ``labeling`` under ``T``."""
    bits = np.asarray(getattr(labeling, "bits", labeling))
    M, m = bits.shape
    if M != T.n_points:
        raise ValueError(f"labeling has {M} rows, transition matrix {T.n_points}")
    d = hamming_distances(bits)
    return float(np.sum(d * T.probabilities) / (m * M))


def awgn_ml_sep(M: int, snr) -> np.ndarray:
    """SEP of the standard AWGN reference under ML detection.

    ``snr = P / sigma**2``. Square QAM for ``M = 4, 16``, antipodal
    signalling for ``M = 2``; other sizes have no reference (NaN).
    """
    snr = np.asarray(snr, dtype=float)
    if M == 2:
        return stats.norm.sf(np.sqrt(2 * snr))
    k = np.sqrt(M)
    if k == int(k) and M >= 4:
        p = 2 * (1 - 1 / k) * stats.norm.sf(np.sqrt(3 * snr / (M - 1)))
        return 1 - (1 - p) ** 2
    return np.full(snr.shape, np.nan)


def wilson_interval(errors: int, trials: int, confidence: float = 0.95) -> tuple:
    ci = stats.binomtest(int(errors), int(trials)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)

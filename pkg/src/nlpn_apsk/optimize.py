"""Constellation optimization under two-stage detection.

Radii are searched with Nelder-Mead over log-increments between
consecutive rings and projected onto the power constraint by rescaling,
so every proposal is feasible. Ring partitions are searched exhaustively;
with uniform radii the search is pruned by the radius-stage error, a lower
bound on the SEP that needs only Marcum Q-functions.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sopt

from .analytic import HarmonicsBank
from .channel import ChannelParams
from .constellation import (ApskSpec, build_apsk, enumerate_partitions, partition_to_string,
                            uniform_radii)
from .detection import map_thresholds, pair_thresholds
from .metrics import QuadratureConfig, awgn_ml_sep, qam16, ring_mass, sep_ts
from .units import dbm_to_watt

__all__ = [
    "NelderMeadConfig",
    "OptimizationResult",
    "TsObjective",
    "SweepRow",
    "radial_lower_bound",
    "optimize_radii",
    "optimize_partition",
    "joint_optimize",
    "power_sweep",
    "sweep_to_csv",
    "sweep_to_json",
]

MAX_EXHAUSTIVE_M = 16
TIE_TOL = 1e-8
_LOG_FLOOR = 1e-300
_MAX_LOG_INCREMENT = 30.0


@dataclass(frozen=True)
class NelderMeadConfig:
    """Multi-start Nelder-Mead settings.

    The objective is ``ln SEP``, so ``fatol`` is a relative SEP spread.
    ``initial_step`` is the simplex edge in log-increment units and
    ``jitter`` the standard deviation of the random starts around the
    uniform radius vector.
    """

    n_starts: int = 8
    max_iter: int = 400
    fatol: float = 1e-4
    xatol: float = math.inf
    initial_step: float = 0.25
    jitter: float = 0.5

    def __post_init__(self):
        if self.n_starts < 1 or self.max_iter < 1:
            raise ValueError("n_starts and max_iter must be positive")


@dataclass(frozen=True)
class OptimizationResult:
    spec: ApskSpec
    sep: float
    evaluations: int
    converged: bool
    restarts_used: int
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def partition(self) -> tuple:
        return self.spec.ring_sizes

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "sep": self.sep,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "restarts_used": self.restarts_used,
            **({"meta": self.meta} if self.meta else {}),
        }


class TsObjective:
    """SEP under TS detection with MAP thresholds, sharing one harmonics bank.

    Harmonics are kept per exact ring amplitude; evaluation of the closed
    form is cheap enough that amplitudes are not quantized.
    """

    def __init__(self, params: ChannelParams, quadrature: QuadratureConfig | None = None,
                 bank: HarmonicsBank | None = None):
        self.params = params
        self.quadrature = quadrature or QuadratureConfig()
        self.bank = bank if bank is not None else HarmonicsBank(params)
        self.evaluations = 0
        self.threshold_fallbacks = 0

    def thresholds(self, spec):
        r = np.asarray(spec.radii, dtype=float)
        w = spec.ring_counts.astype(float)
        _, ok = pair_thresholds(r[:-1], r[1:], w[:-1], w[1:], self.params.sigma2)
        self.threshold_fallbacks += int(np.sum(~ok))
        return map_thresholds(spec, self.params.sigma2, warn=False)

    def __call__(self, spec) -> float:
        self.evaluations += 1
        return sep_ts(spec, self.bank, self.thresholds(spec), self.quadrature)


def radial_lower_bound(spec, sigma2: float) -> float:
    """``(1/M) sum_k l_k P_k^(e)``; the radius stage alone already errs this often."""
    return float(_uniform_bounds([spec.ring_sizes], [np.asarray(spec.radii)], sigma2)[0])


def _uniform_bounds(partitions, radii_list, sigma2):
    sizes = np.concatenate([np.asarray(l, dtype=float) for l in partitions])
    radii = np.concatenate(radii_list)
    n_rings = np.array([len(l) for l in partitions])
    starts = np.concatenate([[0], np.cumsum(n_rings)[:-1]])
    last = np.zeros(sizes.size, dtype=bool)
    last[starts + n_rings - 1] = True
    # thresholds for every adjacent pair inside a partition
    pair = ~last
    mu, _ = pair_thresholds(radii[:-1][pair[:-1]], radii[1:][pair[:-1]],
                            sizes[:-1][pair[:-1]], sizes[1:][pair[:-1]], sigma2)
    upper = np.full(sizes.size, np.inf)
    upper[pair] = mu
    first = np.zeros(sizes.size, dtype=bool)
    first[starts] = True
    lower = np.zeros(sizes.size)
    lower[~first] = upper[np.nonzero(~first)[0] - 1]
    miss = sizes * (1.0 - ring_mass(radii, lower, upper, sigma2))
    M = np.array([sum(l) for l in partitions], dtype=float)
    return np.add.reduceat(miss, starts) / M


def _free_dimension(l) -> int:
    K = len(l)
    return K - 2 if l[0] == 1 else K - 1


def _radii_from_increments(l, x, power):
    K = len(l)
    origin = l[0] == 1
    logs = np.concatenate([[0.0], np.clip(x, -_MAX_LOG_INCREMENT, _MAX_LOG_INCREMENT)])
    r = np.cumsum(np.exp(logs))
    if origin:
        r = np.concatenate([[0.0], r])
    assert r.size == K
    w = np.asarray(l, dtype=float)
    return r * np.sqrt(power * w.sum() / np.dot(w, r**2))


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def optimize_radii(l, power: float, params: ChannelParams,
                   config: NelderMeadConfig | None = None, rng=None,
                   objective: TsObjective | None = None) -> OptimizationResult:
    """Minimize the TS SEP over the radii of partition ``l`` at power ``power`` (W).

    With no free dimension (``l = (M)`` or ``l = (1, M-1)``) the fixed
    spec is evaluated and returned. Otherwise Nelder-Mead runs from the
    uniform radius vector and ``config.n_starts - 1`` jittered starts.
    """
    l = tuple(int(v) for v in l)
    cfg = config or NelderMeadConfig()
    obj = objective or TsObjective(params)
    before = obj.evaluations
    dim = _free_dimension(l)
    if dim < 1:
        spec = build_apsk(l, uniform_radii(l, power))
        return OptimizationResult(spec, obj(spec), obj.evaluations - before, True, 0)

    def spec_of(x):
        return build_apsk(l, _radii_from_increments(l, x, power))

    def f(x):
        try:
            value = obj(spec_of(x))
        except ValueError:
            # radii collapsed below the strict-increase tolerance
            return math.inf
        return math.log(max(value, _LOG_FLOOR)) if np.isfinite(value) else math.inf

    gen = _rng(rng)
    starts = [np.zeros(dim)] + [gen.normal(0.0, cfg.jitter, dim) for _ in range(cfg.n_starts - 1)]
    best_x, best_f, converged = starts[0], f(starts[0]), False
    for x0 in starts:
        simplex = np.vstack([x0, x0 + cfg.initial_step * np.eye(dim)])
        res = sopt.minimize(f, x0, method="Nelder-Mead",
                            options=dict(initial_simplex=simplex, maxiter=cfg.max_iter,
                                         fatol=cfg.fatol, xatol=cfg.xatol))
        converged |= bool(res.success)
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
    spec = spec_of(best_x)
    return OptimizationResult(spec, obj(spec), obj.evaluations - before, converged, len(starts))


def _pick(results):
    """Lowest SEP; near ties go to fewer rings, then the smaller partition."""
    best = min(r.sep for r in results)
    tied = [r for r in results if r.sep <= best + TIE_TOL]
    return min(tied, key=lambda r: (len(r.partition), r.partition))


def optimize_partition(M: int, power: float, params: ChannelParams, uniform_only: bool = True,
                       max_rings: int | None = None, objective: TsObjective | None = None,
                       nm_config: NelderMeadConfig | None = None, seed: int = 0,
                       threads: int = 1) -> OptimizationResult:
    """Best ring partition of ``M`` points at power ``power`` (W).

    With ``uniform_only`` every partition uses its uniform radius vector and
    partitions are evaluated in increasing order of the radius-stage bound
    until the bound exceeds the best SEP found. Otherwise this is
    :func:`joint_optimize`.

    ``meta`` of the result records ``evaluated`` and ``candidates``.
    """
    if M > MAX_EXHAUSTIVE_M:
        raise ValueError(f"exhaustive search supports M <= {MAX_EXHAUSTIVE_M}, got {M}")
    if not uniform_only:
        return joint_optimize(M, power, params, max_rings, nm_config, seed, objective, threads)
    obj = objective or TsObjective(params)
    before = obj.evaluations
    parts = enumerate_partitions(M, max_rings)
    radii = [uniform_radii(l, power) for l in parts]
    bounds = _uniform_bounds(parts, radii, params.sigma2)
    order = sorted(range(len(parts)), key=lambda i: (bounds[i], len(parts[i]), parts[i]))
    results = []
    best = math.inf
    for i in order:
        if bounds[i] > best + TIE_TOL:
            break
        spec = build_apsk(parts[i], radii[i])
        res = OptimizationResult(spec, obj(spec), 1, True, 0)
        results.append(res)
        best = min(best, res.sep)
    win = _pick(results)
    meta = {"evaluated": len(results), "candidates": len(parts)}
    return OptimizationResult(win.spec, win.sep, obj.evaluations - before, True, 0, meta)


def joint_optimize(M: int, power: float, params: ChannelParams, max_rings: int | None = None,
                   nm_config: NelderMeadConfig | None = None, seed: int = 0,
                   objective: TsObjective | None = None, threads: int = 1) -> OptimizationResult:
    """Optimize the radii of every partition and return the global best.

    Each partition draws its Nelder-Mead starts from a stream keyed by the
    master ``seed`` and the partition itself, so results do not depend on
    evaluation order or ``threads``.
    """
    if M > MAX_EXHAUSTIVE_M:
        raise ValueError(f"exhaustive search supports M <= {MAX_EXHAUSTIVE_M}, got {M}")
    obj = objective or TsObjective(params)
    before = obj.evaluations
    parts = enumerate_partitions(M, max_rings)

    def run(l):
        rng = np.random.default_rng(np.random.SeedSequence([seed, *l]))
        return optimize_radii(l, power, params, nm_config, rng, obj)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(l) for l in parts]
    win = _pick(results)
    meta = {"evaluated": len(results), "candidates": len(parts)}
    return OptimizationResult(win.spec, win.sep, obj.evaluations - before,
                              all(r.converged for r in results), win.restarts_used, meta)


@dataclass(frozen=True)
class SweepRow:
    p_dbm: float
    result: OptimizationResult
    sep_ref_qam16_ts: float
    sep_ref_awgn_ml: float


def power_sweep(M: int, params: ChannelParams, powers_dbm, mode: str = "uniform_partition",
                sink=None, max_rings: int | None = None,
                nm_config: NelderMeadConfig | None = None, seed: int = 0,
                objective: TsObjective | None = None, threads: int = 1) -> list:
    """Optimize at every power in ``powers_dbm`` and tabulate the winners.

    ``mode`` is ``"uniform_partition"`` or ``"joint"``. The 16-QAM TS
    reference is NaN unless ``M == 16``. When ``sink`` (a path or text
    stream) is given the CSV table is written to it.
    """
    if mode not in ("uniform_partition", "joint"):
        raise ValueError(f"unknown sweep mode {mode!r}")
    powers = [float(p) for p in powers_dbm]
    if not powers:
        raise ValueError("power list is empty")
    obj = objective or TsObjective(params)
    rows = []
    for p_dbm in powers:
        P = float(dbm_to_watt(p_dbm))
        res = optimize_partition(M, P, params, uniform_only=(mode == "uniform_partition"),
                                 max_rings=max_rings, objective=obj, nm_config=nm_config,
                                 seed=seed, threads=threads)
        ref_qam = sep_ts(qam16(P), obj.bank) if M == 16 else math.nan
        ref_awgn = float(awgn_ml_sep(M, P / params.sigma2))
        rows.append(SweepRow(p_dbm, res, ref_qam, ref_awgn))
    if sink is not None:
        sweep_to_csv(rows, sink)
    return rows


SWEEP_HEADER = ["P_dBm", "l", "r", "sep", "sep_ref_qam16_ts", "sep_ref_awgn_ml"]


def sweep_to_csv(rows, sink=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in rows:
        spec = row.result.spec
        writer.writerow([
            repr(row.p_dbm),
            partition_to_string(spec.ring_sizes),
            ",".join(repr(float(v)) for v in spec.radii),
            repr(row.result.sep),
            repr(row.sep_ref_qam16_ts),
            repr(row.sep_ref_awgn_ml),
        ])
    text = buf.getvalue()
    _emit(text, sink)
    return text


def sweep_to_json(rows, sink=None) -> str:
    payload = [{"P_dBm": r.p_dbm, "result": r.result.to_dict(),
                "sep_ref_qam16_ts": _json_float(r.sep_ref_qam16_ts),
                "sep_ref_awgn_ml": _json_float(r.sep_ref_awgn_ml)} for r in rows]
    text = json.dumps(payload, indent=2)
    _emit(text, sink)
    return text


def _json_float(x):
    return None if not np.isfinite(x) else float(x)


def _emit(text, sink):
    if sink is None:
        return
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)

"""Command-line experiment runner.

Each invocation runs one experiment, writes CSV tables to the output
directory and a ``manifest.json`` describing the run. Exit status is 0 on
success, 2 for configuration errors and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy

from . import __version__
from .analytic import HarmonicsBank
from .channel import ChannelParams, sample_channel
from .constellation import (build_apsk, partition_from_string, partition_to_string,
                            uniform_radii)
from .detection import DetectorKind, map_thresholds
from .labeling import MAX_SEARCH_M, exhaustive_labeling_search, gray_rectangular, \
    proposed_phase_offsets
from .metrics import (MIN_MC_SAMPLES, NumericalError, QuadratureConfig, bep, qam16, sep,
                      transition_matrix_mc, transition_matrix_ts)
from .optimize import NelderMeadConfig, TsObjective, optimize_radii, power_sweep, sweep_to_csv, \
    sweep_to_json
from .units import dbm_to_watt

log = logging.getLogger("nlpn_apsk")

EXPERIMENTS = ("scatter", "sep_sweep", "partition_sweep", "joint_sweep", "radius_trace",
               "labeling_study")
OPTIMIZATION_EXPERIMENTS = ("partition_sweep", "joint_sweep", "radius_trace", "labeling_study")
MANIFEST_SCHEMA = 1

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str = "sep_sweep"
    M: int = 4
    lengths_km: list = field(default_factory=lambda: [7000.0])
    n_spans: int = 100
    pmin_dbm: float = -15.0
    pmax_dbm: float = 5.0
    pstep_db: float = 0.5
    seed: int = 0
    out: str = "results"
    detector: str = "two_stage"
    uniform_only: bool = True
    max_rings: int | None = None
    threads: int = 1
    partition: list | None = None
    mc_samples: int = 10_000
    n_starts: int = 8
    max_iter: int = 400
    quadrature_nodes: int = 64

    def validate(self) -> "RunConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.experiment in OPTIMIZATION_EXPERIMENTS and self.M not in (2, 4, 8, 16):
            raise ConfigError(f"optimization experiments need M in {{2, 4, 8, 16}}, got {self.M}")
        if self.M < 1:
            raise ConfigError("M must be positive")
        if not self.lengths_km or any(L < 0 for L in self.lengths_km):
            raise ConfigError("fiber lengths must be a nonempty list of nonnegative values")
        if self.n_spans < 1:
            raise ConfigError("N must be a positive integer")
        if not self.pstep_db > 0:
            raise ConfigError("power step must be positive")
        if self.pmax_dbm < self.pmin_dbm or not self.power_grid().size:
            raise ConfigError("power grid is empty")
        try:
            DetectorKind.parse(self.detector)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.partition is not None and sum(self.partition) != self.M:
            raise ConfigError(f"partition {self.partition} does not have {self.M} points")
        if self.max_rings is not None and self.max_rings < 1:
            raise ConfigError("max rings must be positive")
        if self.mc_samples < 1 or self.n_starts < 1 or self.max_iter < 1 or self.threads < 1:
            raise ConfigError("sample, start, iteration and thread counts must be positive")
        if (self.experiment == "sep_sweep" and DetectorKind.parse(self.detector) is DetectorKind.MAX_LIKELIHOOD
                and self.mc_samples < MIN_MC_SAMPLES):
            raise ConfigError(f"ML error rates need at least {MIN_MC_SAMPLES} samples per symbol")
        return self

    def power_grid(self) -> np.ndarray:
        n = int(np.floor((self.pmax_dbm - self.pmin_dbm) / self.pstep_db + 1e-9)) + 1
        return np.round(self.pmin_dbm + self.pstep_db * np.arange(max(n, 0)), 10)

    def ring_sizes(self) -> tuple:
        return tuple(self.partition) if self.partition else (self.M,)

    def channel(self, length_km: float) -> ChannelParams:
        return ChannelParams(length_km, n_spans=self.n_spans)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        data = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if isinstance(cfg.lengths_km, (int, float)):
            cfg.lengths_km = [cfg.lengths_km]
        if isinstance(cfg.partition, str):
            cfg.partition = list(partition_from_string(cfg.partition))
        return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlpn-apsk", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--M", type=int, dest="M")
    p.add_argument("--L-km", type=float, nargs="+", dest="lengths_km", metavar="KM")
    p.add_argument("--N", type=int, dest="n_spans")
    p.add_argument("--pmin-dbm", type=float)
    p.add_argument("--pmax-dbm", type=float)
    p.add_argument("--pstep-db", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--detector", help="two_stage (ts) or max_likelihood (ml)")
    p.add_argument("--uniform-only", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--max-rings", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--partition", help="ring sizes, e.g. 4-4")
    p.add_argument("--mc-samples", type=int, help="Monte-Carlo draws per symbol")
    p.add_argument("--n-starts", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--quadrature-nodes", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    overrides = {k: v for k, v in vars(args).items()
                 if v is not None and k not in ("config", "verbose")}
    if "partition" in overrides:
        try:
            overrides["partition"] = list(partition_from_string(overrides["partition"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    data.update(overrides)
    try:
        cfg = RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


def _vec(v) -> str:
    return ",".join(_fmt(x) for x in v)


def _tag(length_km: float) -> str:
    return f"L{length_km:g}km"


class Runner:
    """Executes one validated :class:`RunConfig`, collecting output files."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.outputs: list[str] = []

    def write(self, name: str, text: str):
        path = os.path.join(self.cfg.out, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.outputs.append(name)

    def nm_config(self) -> NelderMeadConfig:
        return NelderMeadConfig(n_starts=self.cfg.n_starts, max_iter=self.cfg.max_iter)

    def objective(self, ch: ChannelParams) -> TsObjective:
        return TsObjective(ch, QuadratureConfig(nodes=self.cfg.quadrature_nodes))

    def run(self):
        getattr(self, f"_{self.cfg.experiment}")()

    def _scatter(self):
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        for L in cfg.lengths_km:
            ch = cfg.channel(L)
            for p in cfg.power_grid():
                P = float(dbm_to_watt(p))
                const = (qam16(P) if cfg.M == 16 and cfg.partition is None
                         else build_apsk(cfg.ring_sizes(), uniform_radii(cfg.ring_sizes(), P)))
                idx = np.repeat(np.arange(const.n_points), cfg.mc_samples)
                y = sample_channel(const.symbols[idx], ch, rng).y
                rows = [(int(i), _fmt(const.symbols[i].real), _fmt(const.symbols[i].imag),
                         _fmt(v.real), _fmt(v.imag)) for i, v in zip(idx, y)]
                self.write(f"scatter_{_tag(L)}_P{p:g}dBm.csv",
                           _csv_text(["symbol", "x_re", "x_im", "y_re", "y_im"], rows))

    def _sep_sweep(self):
        cfg = self.cfg
        kind = DetectorKind.parse(cfg.detector)
        l = cfg.ring_sizes()
        for L in cfg.lengths_km:
            ch = cfg.channel(L)
            bank = HarmonicsBank(ch)
            rows = []
            for n, p in enumerate(cfg.power_grid()):
                P = float(dbm_to_watt(p))
                spec = build_apsk(l, uniform_radii(l, P))
                th = map_thresholds(spec, ch.sigma2, warn=False)
                if kind is DetectorKind.TWO_STAGE:
                    T = transition_matrix_ts(spec, th, bank,
                                             QuadratureConfig(nodes=cfg.quadrature_nodes))
                else:
                    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, n]))
                    T = transition_matrix_mc(spec, kind, ch, cfg.mc_samples, rng, bank, th,
                                             cfg.threads)
                rows.append((_fmt(p), partition_to_string(l), _vec(spec.radii), _fmt(sep(T)),
                             T.method))
            self.write(f"sep_sweep_{_tag(L)}.csv",
                       _csv_text(["P_dBm", "l", "r", "sep", "method"], rows))

    def _sweep(self, mode):
        cfg = self.cfg
        for L in cfg.lengths_km:
            ch = cfg.channel(L)
            rows = power_sweep(cfg.M, ch, cfg.power_grid(), mode=mode, max_rings=cfg.max_rings,
                               nm_config=self.nm_config(), seed=cfg.seed,
                               objective=self.objective(ch), threads=cfg.threads)
            stem = f"{cfg.experiment}_{_tag(L)}"
            self.write(f"{stem}.csv", sweep_to_csv(rows))
            self.write(f"{stem}.json", sweep_to_json(rows))

    def _partition_sweep(self):
        self._sweep("uniform_partition" if self.cfg.uniform_only else "joint")

    def _joint_sweep(self):
        self._sweep("joint")

    def _radius_trace(self):
        cfg = self.cfg
        l = cfg.ring_sizes()
        for L in cfg.lengths_km:
            ch = cfg.channel(L)
            obj = self.objective(ch)
            rows = []
            for n, p in enumerate(cfg.power_grid()):
                rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, n]))
                res = optimize_radii(l, float(dbm_to_watt(p)), ch, self.nm_config(), rng, obj)
                r = np.asarray(res.spec.radii)
                rows.append((_fmt(p), partition_to_string(l), _vec(r),
                             _vec(r / np.sqrt(dbm_to_watt(p))), _fmt(res.sep)))
            self.write(f"radius_trace_{_tag(L)}.csv",
                       _csv_text(["P_dBm", "l", "r", "r_norm", "sep"], rows))

    def _labeling_study(self):
        cfg = self.cfg
        l = cfg.ring_sizes() if cfg.partition else (cfg.M // 2, cfg.M // 2)
        header = ["P_dBm", "l", "r", "phi", "sep", "bep_gray_phi0", "bep_gray_proposed",
                  "bep_lower_bound", "bep_exhaustive"]
        for L in cfg.lengths_km:
            ch = cfg.channel(L)
            obj = self.objective(ch)
            rows = []
            for n, p in enumerate(cfg.power_grid()):
                rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, n]))
                spec = optimize_radii(l, float(dbm_to_watt(p)), ch, self.nm_config(), rng,
                                      obj).spec
                th = map_thresholds(spec, ch.sigma2, warn=False)
                phi = proposed_phase_offsets(spec, th, obj.bank)
                gray = gray_rectangular(spec)
                T0 = transition_matrix_ts(spec, th, obj.bank, obj.quadrature)
                T1 = transition_matrix_ts(spec.with_phase_offsets(phi), th, obj.bank,
                                          obj.quadrature)
                best = (exhaustive_labeling_search(T1)[1] if spec.n_points <= MAX_SEARCH_M
                        else float("nan"))
                m = np.log2(spec.n_points)
                rows.append((_fmt(p), partition_to_string(l), _vec(spec.radii), _vec(phi),
                             _fmt(sep(T1)), _fmt(bep(T0, gray)), _fmt(bep(T1, gray)),
                             _fmt(sep(T1) / m), _fmt(best)))
            self.write(f"labeling_study_{_tag(L)}.csv", _csv_text(header, rows))


def _manifest(cfg, runner, status, wall, error=None) -> dict:
    return {
        "schema_version": MANIFEST_SCHEMA,
        "status": status,
        "error": error,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "versions": {"nlpn_apsk": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "wall_time_s": wall,
        "outputs": runner.outputs,
    }


def run(cfg: RunConfig) -> int:
    """Run a validated config; returns the process exit status."""
    os.makedirs(cfg.out, exist_ok=True)
    runner = Runner(cfg)
    start = time.perf_counter()
    status, error, code = "ok", None, EXIT_OK
    try:
        runner.run()
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        status, error, code = "numerical_failure", str(exc), EXIT_NUMERICAL
        log.error("numerical failure: %s", exc)
    finally:
        manifest = _manifest(cfg, runner, status, time.perf_counter() - start, error)
        with open(os.path.join(cfg.out, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"nlpn-apsk: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``persistmc <subcommand> [options]``.

Options can come from a ``key = value`` file (``--config``) and from flags;
flags win.  Each subcommand writes a CSV table and a JSON summary into
``--out``, both carrying the configuration that produced them.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from persistmc import io as rio
from persistmc.estimation import (ProcessSpec, RunPlan, default_batch_size, fit_exponent,
                                  log_slope, simulate)
from persistmc.gaussian import ELL_FUNCTIONS, CirculantSampler, CorrelationSpec, lrd_batch
from persistmc.rng import GAUSSIAN_METHOD, GENERATOR_VERSION, NOISE, WALK, StreamKey, derive_stream
from persistmc.scenery import rwrs_batch
from persistmc.walks import SRW2_SIGMA2, WalkKind, green_at_origin

log = logging.getLogger("persistmc")

PATH_CAP = 1000


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    process: str = "lrd"
    hurst: float | None = None
    corr_file: str | None = None
    corr_K: float = 1.0
    corr_ell: str = "1"
    walk: str | None = None
    boundary: float = 0.0
    tmin: int = 6
    tmax: int = 13
    replicas: int = 10**6
    seed: int = 0
    log_c: float = 1.0
    exploratory: bool = False
    tail_power: float = 0.1
    batch_size: int | None = None
    paths: int = 10
    path_cap: int = PATH_CAP
    green_T: int = 10**4
    green_replicas: int = 4000
    out: str = "results"
    workers: int = 1

    # keys left out of the embedded config: they must not change any result byte
    RUNTIME_ONLY = ("out", "workers")

    def validate(self) -> "ExperimentConfig":
        if self.process not in ("lrd", "rwrs"):
            raise ConfigError(f"process must be lrd or rwrs, got {self.process!r}")
        if self.process == "lrd":
            if self.walk is not None:
                raise ConfigError("--walk only applies to --process rwrs")
            if self.corr_file is None and self.hurst is None:
                self.hurst = 0.75
            if self.hurst is None:
                raise ConfigError("--corr-file needs --hurst for the scaling index")
            if not 0.0 < self.hurst < 1.0:
                raise ConfigError(f"hurst must lie in (0, 1), got {self.hurst}")
            if self.hurst < 0.5 and not self.exploratory:
                raise ConfigError("H < 1/2 is outside the proven range; pass --exploratory")
            if self.corr_ell not in ELL_FUNCTIONS:
                raise ConfigError(f"corr_ell must be one of {sorted(ELL_FUNCTIONS)}")
        else:
            if self.walk is None:
                raise ConfigError("--process rwrs needs --walk {heavy:A|srw1|srw2|srw3}")
            if self.hurst is not None or self.corr_file is not None:
                raise ConfigError("--hurst/--corr-file only apply to --process lrd")
            try:
                WalkKind.parse(self.walk)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if not 0 <= self.tmin <= self.tmax <= 24:
            raise ConfigError("need 0 <= tmin <= tmax <= 24 (dyadic exponents)")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.paths < 1 or self.paths > self.path_cap:
            raise ConfigError(f"paths must lie in [1, {self.path_cap}] (raise path_cap to dump more)")
        return self

    @property
    def grid(self) -> tuple:
        return tuple(2**k for k in range(self.tmin, self.tmax + 1))

    def process_spec(self) -> ProcessSpec:
        if self.process == "rwrs":
            return ProcessSpec.rwrs(self.walk)
        if self.corr_file:
            return ProcessSpec("lrd", corr=CorrelationSpec.from_csv(
                self.corr_file, self.hurst, self.corr_K, self.corr_ell))
        return ProcessSpec.fgn(self.hurst)

    def embedded(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in self.RUNTIME_ONLY}

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in values.items():
            key = k.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {k!r}")
            kw[key] = _coerce(known[key], v)
        return cls(**kw)


def _coerce(f, v):
    if v is None or not isinstance(v, str):
        return v
    t = str(f.type)
    if v.lower() in ("none", "null", ""):
        return None
    if "bool" in t:
        if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{f.name}: expected a boolean, got {v!r}")
        return v.lower() in ("true", "1", "yes")
    try:
        if "int" in t:
            return int(float(v)) if "e" in v.lower() else int(v)
        if "float" in t:
            return float(v)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot parse {v!r}") from None
    return v


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


# -- subcommands ------------------------------------------------------------------

def _metadata(cfg: ExperimentConfig, process: ProcessSpec) -> dict:
    meta = {
        "seed": cfg.seed,
        "generator_version": GENERATOR_VERSION,
        "gaussian_method": GAUSSIAN_METHOD,
        "batch_size": cfg.batch_size or default_batch_size(2**cfg.tmax),
        **process.describe(),
    }
    if process.family == "rwrs":
        if process.walk.name == "srw3":
            g = green_at_origin(cfg.green_T, cfg.green_replicas, cfg.seed)
            meta["green_00"] = {"value": g.value, "se": g.se, "truncation": g.T,
                                "replicas": g.replicas, "note": "truncated sum, biased low by O(T^-1/2)"}
            meta["sigma2"] = g.sigma2
            meta["sigma2_formula"] = "2 G(0,0) - 1"
        elif process.walk.name == "srw2":
            meta["sigma2"] = SRW2_SIGMA2
            meta["sigma2_formula"] = "(pi sqrt(det Sigma))^-1, Sigma = I/2"
    return meta


def _header(cfg, meta) -> dict:
    return {"config": cfg.embedded(), "metadata": meta}


def _progress(done, total):
    if done == total or done % max(1, total // 20) == 0:
        log.info("batch %d/%d", done, total)


def _run(cfg, process, plan):
    return simulate(process, plan, workers=cfg.workers, progress=_progress)


PERSISTENCE_COLUMNS = ("process", "params", "T", "a", "n", "hits", "p_hat", "ci_low", "ci_high")


def cmd_persistence(cfg: ExperimentConfig) -> int:
    process = cfg.process_spec()
    plan = RunPlan(cfg.grid, cfg.replicas, cfg.seed, (0.0, cfg.boundary), batch_size=cfg.batch_size)
    t0 = time.perf_counter()
    res = _run(cfg, process, plan)
    meta = _metadata(cfg, process)
    rows, fits = [], {}
    ell = process.persistence_ell
    for a in plan.boundaries:
        ests = res.persistence(a)
        rows += [dict(process=process.family, params=process.params, **vars(e)) for e in ests]
        try:
            fit = fit_exponent(ests, "sqrt-log-band", ell=ell if process.family == "lrd" and process.corr.ell != "1" else None,
                               c=cfg.log_c, theta=process.theta)
            fits[repr(a)] = {**vars(fit), "in_band": fit.in_band}
        except ValueError as exc:
            fits[repr(a)] = {"error": str(exc)}
    shift = [vars(r) for r in res.boundary_shift(cfg.boundary, 0.0)]
    p0 = [e.p_hat for e in res.persistence(0.0)]
    out = Path(cfg.out)
    rio.write_csv(out / "persistence.csv", _header(cfg, meta), PERSISTENCE_COLUMNS, rows)
    summary = {
        **_header(cfg, meta),
        "fit": fits,
        "theory": {"theta": process.theta, "formula": "1 - H", "hurst": process.hurst,
                   "contract": not (process.family == "lrd" and process.hurst < 0.5)},
        "checks": {
            "violations": res.violations,
            "monotone_in_T": bool(all(b <= a for a, b in zip(p0, p0[1:]))),
            "boundary_shift": shift,
            "boundary_shift_ok": not any(r["violated"] for r in shift),
        },
    }
    rio.write_json(out / "persistence.json", summary)
    rio.write_json(out / "timing.json", {"command": "persistence", "wall_seconds": time.perf_counter() - t0})
    f = fits[repr(cfg.boundary)]
    if "theta_hat" in f:
        print(f"theta_hat={f['theta_hat']:.4f} +- {f['stderr']:.4f}  theory={process.theta:.4f}  "
              f"band={f['drift']:.3f} in_band={f['in_band']}")
    return 0


PHI_COLUMNS = ("process", "params", "T", "n", "mean_from0", "se_from0", "mean_from1", "se_from1",
               "scaled_from0", "scaled_from1", "psi_mean", "psi_se")


def _ratios(values):
    return [b / a if a else math.nan for a, b in zip(values, values[1:])]


def cmd_phi(cfg: ExperimentConfig) -> int:
    process = cfg.process_spec()
    t0 = time.perf_counter()
    res = _run(cfg, process, RunPlan(cfg.grid, cfg.replicas, cfg.seed, batch_size=cfg.batch_size))
    meta = _metadata(cfg, process)
    ests = res.phi()
    rows = [dict(process=process.family, params=process.params, **vars(e)) for e in ests]
    out = Path(cfg.out)
    rio.write_csv(out / "phi.csv", _header(cfg, meta), PHI_COLUMNS, rows)
    rio.write_json(out / "phi.json", {
        **_header(cfg, meta),
        "scaled_from0_ratios": _ratios([e.scaled_from0 for e in ests]),
        "mean_exp_neg_sup": res.mean_exp_neg_sup(),
        "checks": {"violations": res.violations},
    })
    rio.write_json(out / "timing.json", {"command": "phi", "wall_seconds": time.perf_counter() - t0})
    for e in ests:
        print(f"T={e.T:6d} phi0={e.mean_from0:.6g} scaled={e.scaled_from0:.5f} phi1={e.mean_from1:.6g}")
    return 0


SUP_COLUMNS = ("process", "params", "T", "n", "mean_sup", "se_sup", "kappa_hat", "se")


def cmd_sup(cfg: ExperimentConfig) -> int:
    process = cfg.process_spec()
    t0 = time.perf_counter()
    res = _run(cfg, process, RunPlan(cfg.grid, cfg.replicas, cfg.seed, batch_size=cfg.batch_size))
    meta = _metadata(cfg, process)
    ests = res.sup()
    rows = [dict(process=process.family, params=process.params, **vars(e)) for e in ests]
    out = Path(cfg.out)
    rio.write_csv(out / "sup.csv", _header(cfg, meta), SUP_COLUMNS, rows)
    rio.write_json(out / "sup.json", {**_header(cfg, meta),
                                      "kappa_ratios": _ratios([e.kappa_hat for e in ests])})
    rio.write_json(out / "timing.json", {"command": "sup", "wall_seconds": time.perf_counter() - t0})
    for e in ests:
        print(f"T={e.T:6d} E[sup]={e.mean_sup:.5f} kappa_hat={e.kappa_hat:.5f} +- {e.se:.5f}")
    return 0


TAIL_COLUMNS = ("process", "params", "T", "threshold", "n", "p_tau_lt", "p_occ_lt", "p_persist")


def tail_thresholds(T: int, power: float) -> tuple:
    return (1, 2, math.ceil(T**power), T + 1)


def cmd_tails(cfg: ExperimentConfig) -> int:
    process = cfg.process_spec()
    grid = cfg.grid
    plan = RunPlan(grid, cfg.replicas, cfg.seed,
                   tail_ns=tuple(tail_thresholds(t, cfg.tail_power) for t in grid),
                   batch_size=cfg.batch_size)
    t0 = time.perf_counter()
    res = _run(cfg, process, plan)
    meta = _metadata(cfg, process)
    rows = res.tails()
    out = Path(cfg.out)
    rio.write_csv(out / "tails.csv", _header(cfg, meta), TAIL_COLUMNS,
                  [dict(process=process.family, params=process.params, **vars(r)) for r in rows])
    k = len(plan.tail_ns[0])
    sel = rows[2::k]  # the T**tail_power threshold of each horizon
    summary = {**_header(cfg, meta), "checks": {"violations": res.violations}}
    ok = [r for r in sel if r.p_persist > 0]
    if len(ok) >= 2:
        Ts = [r.T for r in ok]
        summary["ratio_exponent_tau"] = log_slope(Ts, [r.p_tau_lt / r.p_persist for r in ok])
        summary["ratio_exponent_occ"] = log_slope(Ts, [r.p_occ_lt / r.p_persist for r in ok])
    rio.write_json(out / "tails.json", summary)
    rio.write_json(out / "timing.json", {"command": "tails", "wall_seconds": time.perf_counter() - t0})
    for r in sel:
        print(f"T={r.T:6d} n={r.threshold} P[tau<n]={r.p_tau_lt:.5f} P[N<n]={r.p_occ_lt:.5f} p={r.p_persist:.5f}")
    return 0


def sample_paths(process: ProcessSpec, T: int, n: int, seed: int) -> np.ndarray:
    """The first n replicas of batch 0, exactly as the estimators see them."""
    if process.family == "lrd":
        return lrd_batch(CirculantSampler(process.corr, T), n, derive_stream(StreamKey(seed, 0, NOISE)))
    return rwrs_batch(process.walk, T, n, derive_stream(StreamKey(seed, 0, WALK)), seed, 0)


def cmd_simulate(cfg: ExperimentConfig) -> int:
    process = cfg.process_spec()
    T = 2**cfg.tmax
    z = sample_paths(process, T, cfg.paths, cfg.seed)
    meta = _metadata(cfg, process)
    cols = ["replica"] + [f"Z{k}" for k in range(T + 1)]
    rows = [dict(zip(cols, [i] + [float(v) for v in row])) for i, row in enumerate(z)]
    rio.write_csv(Path(cfg.out) / "paths.csv", _header(cfg, meta), cols, rows)
    print(f"wrote {cfg.paths} paths of length {T + 1} to {Path(cfg.out) / 'paths.csv'}")
    return 0


def cmd_validate(cfg: ExperimentConfig, quick: bool) -> int:
    from persistmc.validate import run_suite

    report = run_suite(quick=quick, seed=cfg.seed)
    for r in report:
        print(r.line())
    rio.write_json(Path(cfg.out) / "validate.json",
                   {"quick": quick, "seed": cfg.seed,
                    "results": [{"id": r.id, "ok": r.ok, "detail": r.detail} for r in report]})
    failed = [r.id for r in report if not r.ok]
    print(f"{len(report) - len(failed)}/{len(report)} checks passed")
    return 1 if failed else 0


COMMANDS = {"persistence": cmd_persistence, "phi": cmd_phi, "sup": cmd_sup,
            "tails": cmd_tails, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="persistmc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("persistence", "phi", "sup", "tails", "simulate", "validate"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="key = value file; flags override it")
        s.add_argument("--process", choices=("rwrs", "lrd"))
        s.add_argument("--walk", help="heavy:ALPHA | srw1 | srw2 | srw3")
        s.add_argument("--hurst", type=float)
        s.add_argument("--corr-file", dest="corr_file")
        s.add_argument("--corr-K", dest="corr_K", type=float)
        s.add_argument("--corr-ell", dest="corr_ell", choices=sorted(ELL_FUNCTIONS))
        s.add_argument("--boundary", type=float)
        s.add_argument("--tmin", type=int, help="smallest horizon is 2**tmin")
        s.add_argument("--tmax", type=int, help="largest horizon is 2**tmax")
        s.add_argument("--replicas", type=lambda v: int(float(v)))
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--out")
        s.add_argument("--log-c", dest="log_c", type=float)
        s.add_argument("--exploratory", action="store_const", const=True)
        s.add_argument("--batch-size", dest="batch_size", type=int)
        s.add_argument("--tail-power", dest="tail_power", type=float)
        s.add_argument("--paths", type=int)
        s.add_argument("--path-cap", dest="path_cap", type=int)
        if name == "validate":
            s.add_argument("--quick", action="store_true", help="fast checks only")
    return p


def config_from_args(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    skip = {"config", "command", "verbose", "quick"}
    for k, v in vars(args).items():
        if k not in skip and v is not None:
            values[k] = v
    return ExperimentConfig.from_mapping(values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command != "validate":
            cfg.validate()
    except (ConfigError, OSError, ValueError) as exc:
        parser.error(str(exc))
    if args.command == "validate":
        return cmd_validate(cfg, args.quick)
    try:
        return COMMANDS[args.command](cfg)
    except (ValueError, OverflowError) as exc:
        # invalid correlation tables, embedding failures, coordinate overflow
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

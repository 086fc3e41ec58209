"""Command-line driver: ``lorentomo {static,track,protocol,verify}``.

Settings come from built-in defaults, then an optional flat JSON file
(``--config``), then command-line flags.  All per-trial and per-run seeds
are derived from one master seed with :class:`numpy.random.SeedSequence`,
so a run is reproduced byte for byte by its echoed config.

Exit codes: 0 ok, 1 verify failure, 2 config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, estimator, protocol, qmat, tracker, verify
from .errors import TomographyError

log = logging.getLogger("lorentomo")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
HIST_BINS = 30
WARMUP_STEPS = 10


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    dim: int = 8
    rank: int = 0  # 0 means rank = dim
    lambda0: float = 0.9999
    n: float = 1e4
    trials: int = 200
    protocol: str = "lorentz"
    steps: int = 5000
    eps: float = 3e-5
    g: float = 0.5
    period: int = 1000
    initial_weight: float = 0.999999
    master_seed: int = 0
    output_dir: str = "out"
    workers: int = 0

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.protocol not in ("lorentz", "mub"):
            raise ConfigError(f"protocol must be 'lorentz' or 'mub', not {self.protocol!r}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if self.workers < 0:
            raise ConfigError("workers must be non-negative")
        if self.n <= 0:
            raise ConfigError("n must be positive")
        try:
            qmat.StateGenConfig(self.dim, self.rank, self.lambda0, 0)
            self.evolution_config()
            protocol.mub_protocol(self.dim)
        except TomographyError as exc:
            raise ConfigError(str(exc)) from exc

    def evolution_config(self) -> tracker.EvolutionConfig:
        h, st, nz = (int(x) for x in np.random.SeedSequence(self.master_seed).generate_state(3))
        return tracker.EvolutionConfig(
            dim=self.dim,
            eps=self.eps,
            g=self.g,
            period=self.period,
            total_steps=self.steps,
            sample_size=self.n,
            target_weight=self.lambda0,
            initial_weight=self.initial_weight,
            hamiltonian_seed=h,
            state_seed=st,
            noise_seed=nz,
        )


# flag name -> config field
FLAGS = {
    "dim": "dim",
    "rank": "rank",
    "n": "n",
    "trials": "trials",
    "steps": "steps",
    "eps": "eps",
    "g": "g",
    "period": "period",
    "lambda0": "lambda0",
    "initial_weight": "initial_weight",
    "protocol": "protocol",
    "seed": "master_seed",
    "out": "output_dir",
    "workers": "workers",
}


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(doc) - set(types)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cast = {"int": int, "float": float, "str": str}
    try:
        typed = {k: cast[types[k]](v) for k, v in values.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    for k in ("dim", "rank", "trials", "steps", "period", "master_seed", "workers"):
        if k in values and float(values[k]) != typed[k]:
            raise ConfigError(f"{k} must be an integer")
    cfg = replace(cfg, **typed)
    if cfg.rank == 0:
        cfg = replace(cfg, rank=cfg.dim)
    cfg.validate()
    return cfg


def _num(x: float) -> str:
    return format(float(x), ".17g")


def _header(cfg: ExperimentConfig, command: str) -> dict:
    return {"tool": "lorentomo", "version": __version__, "command": command, "config": asdict(cfg)}


def _histogram(values) -> dict:
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=HIST_BINS)
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, allow_nan=True) + "\n")


# --- static -----------------------------------------------------------------

def _static_trial(args) -> tuple[int, float, int]:
    trial, cfg, seed_seq = args
    state_seed, noise_seed, init_seed = (int(x) for x in seed_seq.generate_state(3))
    rho = qmat.random_mixed_state(qmat.StateGenConfig(cfg.dim, cfg.rank, cfg.lambda0, state_seed))
    base = protocol.mub_protocol(cfg.dim)
    if cfg.protocol == "lorentz":
        X = protocol.lorentz_protocol(base, qmat.regularize_spectrum(rho, cfg.lambda0), cfg.n)
    else:
        X = protocol.normalize_exposure(base, rho, cfg.n)
    rec = estimator.sample_counts(X, rho, noise_seed, cfg.n)
    fit = estimator.mle_reconstruct(rec, cfg.rank, seed=init_seed)
    return trial, max(1.0 - qmat.fidelity(fit.rho, rho), 0.0), fit.iterations


def run_static(cfg: ExperimentConfig) -> dict:
    """Run all trials and return the summary; trial rows are in ``summary['trials']``."""
    seeds = np.random.SeedSequence(cfg.master_seed).spawn(cfg.trials)
    jobs = [(i, cfg, seeds[i]) for i in range(cfg.trials)]
    workers = cfg.workers or os.cpu_count() or 1
    if workers == 1:
        results = [_static_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_static_trial, jobs, chunksize=max(1, cfg.trials // (4 * workers))))
    losses = np.array([r[1] for r in results])
    bound = estimator.min_loss(cfg.dim, cfg.rank, cfg.n)
    mean = float(losses.mean())
    return {
        "trials": results,
        "min_loss": bound,
        "mean_loss": mean,
        "std_loss": float(losses.std(ddof=1)) if len(losses) > 1 else 0.0,
        "mean_efficiency": bound / mean if mean > 0 else float("inf"),
        "histogram_loss": _histogram(losses),
    }


def cmd_static(cfg: ExperimentConfig) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_static(cfg)
    bound = summary["min_loss"]
    with open(out / "static_trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "loss", "efficiency"])
        for trial, loss, _ in summary.pop("trials"):
            w.writerow([trial, _num(loss), _num(bound / loss if loss > 0 else float("inf"))])
    _write_json(out / "static_summary.json", {**_header(cfg, "static"), **summary})
    log.info("static: mean loss %.4g, mean efficiency %.4g", summary["mean_loss"], summary["mean_efficiency"])
    return EXIT_OK


# --- track ------------------------------------------------------------------

TRACK_COLUMNS = [
    "step",
    "recon_fidelity",
    "loss",
    "efficiency",
    "max_detection_fraction",
    "sum_detection_fraction",
    "backaction_fidelity",
]


def summarize_tracking(records: list[tracker.TrackingRecord], warmup: int = WARMUP_STEPS) -> dict:
    loss = np.array([r.loss for r in records])
    eff = np.array([r.efficiency for r in records])
    bf = np.array([r.backaction_fidelity for r in records])
    mx = np.array([r.max_detection_fraction for r in records])
    steady = slice(min(warmup, len(records) - 1), None)
    doc = {
        "steps": len(records),
        "warmup_steps": warmup,
        "mean_loss": float(loss[steady].mean()),
        "std_loss": float(loss[steady].std()),
        "mean_loss_all_steps": float(loss.mean()),
        "mean_efficiency": float(eff[steady].mean()),
        "std_efficiency": float(eff[steady].std()),
        "fraction_above_six_nines": float(np.mean(loss[steady] < 1e-6)),
        # step 0 is the complete MUB measurement; detection fractions concern the Lorentz steps
        "max_detection_fraction": float(mx[1:].max()) if len(mx) > 1 else float("nan"),
        "max_detection_fraction_after_warmup": float(mx[steady].max()),
        "backaction_fidelity_step1": float(bf[1]) if len(bf) > 1 else float("nan"),
        "min_backaction_fidelity": float(bf.min()),
        "histogram_backaction_fidelity": _histogram(bf),
    }
    if len(records) > 2 * warmup + 2:
        tau, p = tracker.trend_test(loss[steady])
        doc["loss_trend"] = {"kendall_tau": tau, "p_value": p}
        doc["efficiency_dominant_period"] = tracker.dominant_period(eff[steady])
    return doc


def cmd_track(cfg: ExperimentConfig) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    with open(out / "track_steps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACK_COLUMNS)
        for rec in tracker.run_tracking(cfg.evolution_config()):
            records.append(rec)
            w.writerow(
                [
                    rec.step,
                    _num(rec.recon_fidelity),
                    _num(rec.loss),
                    _num(rec.efficiency),
                    _num(rec.max_detection_fraction),
                    _num(rec.sum_detection_fraction),
                    _num(rec.backaction_fidelity),
                ]
            )
            if rec.step % 500 == 0:
                log.info("step %d: loss %.3g", rec.step, rec.loss)
    doc = {**_header(cfg, "track"), "evolution": tracker.config_dict(cfg.evolution_config())}
    doc.update(summarize_tracking(records))
    _write_json(out / "track_summary.json", doc)
    log.info("track: mean loss %.4g after warm-up", doc["mean_loss"])
    return EXIT_OK


# --- protocol ---------------------------------------------------------------

def cmd_protocol(cfg: ExperimentConfig) -> int:
    """Write the MUB protocol, or the Lorentz protocol for a seeded random state."""
    base = protocol.mub_protocol(cfg.dim)
    doc = _header(cfg, "protocol")
    if cfg.protocol == "lorentz":
        seed = int(np.random.SeedSequence(cfg.master_seed).generate_state(1)[0])
        rho = qmat.random_mixed_state(qmat.StateGenConfig(cfg.dim, cfg.rank, cfg.lambda0, seed))
        X = protocol.lorentz_protocol(base, qmat.regularize_spectrum(rho, cfg.lambda0), cfg.n)
        doc["state"] = [[[float(z.real), float(z.imag)] for z in row] for row in rho]
    else:
        X = base
    doc["protocol"] = X.to_dict()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / f"protocol_{cfg.protocol}_{cfg.dim}.json", doc)
    return EXIT_OK


# --- verify -----------------------------------------------------------------

def cmd_verify(cfg: ExperimentConfig, tables: list[str]) -> int:
    loaded = {}
    for path in tables:
        try:
            doc = json.loads(Path(path).read_text())
            X = protocol.InstrumentalMatrix.from_dict(doc.get("protocol", doc))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot load MUB table {path}: {exc}") from exc
        loaded[X.dim] = X
    results = verify.run_suite(tables=loaded, seed=cfg.master_seed % 2**32)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"s={r.dim:<2d} {r.name:<{width}}  {'PASS' if r.ok else 'FAIL'}  {r.detail}")
    failed = [f"{r.name} (s={r.dim})" for r in results if not r.ok]
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dim", type=int)
    common.add_argument("--rank", type=int)
    common.add_argument("--n", type=float, help="sample size (expected registered events)")
    common.add_argument("--lambda0", type=float, help="dominant weight of the (target) state")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="lorentomo", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"lorentomo {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    st = sub.add_parser("static", parents=[common], help="fidelity-loss distribution over random states")
    st.add_argument("--trials", type=int)
    st.add_argument("--protocol", choices=["lorentz", "mub"])
    st.add_argument("--workers", type=int, help="worker processes (0 = one per CPU)")

    tr = sub.add_parser("track", parents=[common], help="adaptive tracking of an evolving state")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--eps", type=float)
    tr.add_argument("--g", type=float)
    tr.add_argument("--period", type=int)
    tr.add_argument("--initial-weight", dest="initial_weight", type=float)

    pr = sub.add_parser("protocol", parents=[common], help="write a protocol as JSON")
    pr.add_argument("--protocol", choices=["lorentz", "mub"])

    vf = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    vf.add_argument("--mub-table", action="append", default=[], help="JSON protocol replacing a built-in MUB table")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {field: getattr(args, flag, None) for flag, field in FLAGS.items()}
    if args.command == "protocol" and overrides["protocol"] is None:
        overrides["protocol"] = "mub"
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "static":
            return cmd_static(cfg)
        if args.command == "track":
            return cmd_track(cfg)
        if args.command == "protocol":
            return cmd_protocol(cfg)
        return cmd_verify(cfg, args.mub_table)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TomographyError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

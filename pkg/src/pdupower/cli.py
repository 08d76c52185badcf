"""Command-line pipeline: simulate, clean, train, predict and evaluate.

Every artifact of a simulated dataset lives in one run directory,
``<data dir>/runs/<config hash>``. The data directory comes from
``--data-dir``, then ``$PDUPOWER_DATA_DIR``, then ``./pdupower-data``.
Each subcommand prints a JSON summary on stdout and writes the same
summary to ``summary-<subcommand>.json`` in the run directory. Failures
print ``error[<category>]: <message>`` on stderr and exit with the
category's code.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import ConfigError, MissingInputError, MissingModelError, PduPowerError
from .evaluation import (
    next_day_evaluation,
    run_holdout_experiment,
    run_power_drop_experiment,
)
from .fleet_sim import (
    AnomalyConfig,
    DropWindow,
    FleetConfig,
    HardwareChange,
    LoadScenario,
    generate_fleet,
    inject_anomalies,
    simulate_telemetry,
)
from .forest import ForestParams, RandomForest
from .perpdu import PerPduModel, daily_retrain, predict_per_pdu
from .preprocess import CleaningConfig, preprocess
from .storage import (
    canonical_json,
    dataset_fingerprint,
    load_fleet,
    load_json,
    load_model,
    load_telemetry,
    model_filename,
    save_fleet,
    save_json,
    save_ledger,
    save_model,
    save_telemetry,
    sha256,
)
from .unified_machine import (
    DESK_SAMPLES_PER_GROUP,
    build_machine_training_set,
    predict_pdu_day_um,
    train_unified_machine,
)
from .unified_pdu import DESK_MAX_ROWS, build_pdu_training_set, predict_pdu_day_up, train_unified_pdu

log = logging.getLogger("pdupower")

ENV_DATA_DIR = "PDUPOWER_DATA_DIR"


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a simulated dataset and its cleaning."""

    fleet: FleetConfig = field(default_factory=FleetConfig)
    scenario: LoadScenario = field(default_factory=LoadScenario)
    n_days: int = 30
    noise_sigma: float = 0.02
    seed: int = 0
    anomalies: AnomalyConfig = field(default_factory=AnomalyConfig)
    hardware_changes: tuple[HardwareChange, ...] = ()
    record_machines: bool = True
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fleet"]["category_mix"] = dict(sorted(self.fleet.category_mix.items()))
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        try:
            sc = dict(d.get("scenario", {}))
            if sc.get("tier_shares") is not None:
                sc["tier_shares"] = tuple(sc["tier_shares"])
            if sc.get("drop_window"):
                w = dict(sc["drop_window"])
                w["tier_drop"] = tuple(w.get("tier_drop", DropWindow(0).tier_drop))
                sc["drop_window"] = DropWindow(**w)
            cfg = cls(
                fleet=FleetConfig(**d.get("fleet", {})),
                scenario=LoadScenario(**sc),
                n_days=d.get("n_days", 30),
                noise_sigma=d.get("noise_sigma", 0.02),
                seed=d.get("seed", 0),
                anomalies=AnomalyConfig(**d.get("anomalies", {})),
                hardware_changes=tuple(HardwareChange(**h) for h in d.get("hardware_changes", ())),
                record_machines=d.get("record_machines", True),
                cleaning=CleaningConfig(**d.get("cleaning", {})),
            )
        except TypeError as e:
            raise ConfigError(f"invalid run config: {e}") from None
        cfg.fleet.validate()
        return cfg

    def digest(self) -> str:
        return sha256(canonical_json(self.to_dict()))[:16]


# --- helpers --------------------------------------------------------------------------


def data_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(ENV_DATA_DIR) or "pdupower-data")


def _run_dir(args) -> Path:
    if args.run is None:
        raise ConfigError("--run is required")
    run = Path(args.run)
    if not run.is_absolute() and not run.exists():
        run = data_dir(args.data_dir) / "runs" / args.run
    if not (run / "config.json").is_file():
        raise MissingInputError(f"{run} is not a run directory (no config.json)")
    return run


def _load_config(run: Path) -> RunConfig:
    return RunConfig.from_dict(load_json(run / "config.json")["run"])


def _dataset(run: Path, name: str):
    fleet = load_fleet(run / "fleet.json")
    path = run / f"{name}.tsv"
    if not path.is_file():
        hint = " (run `preprocess` first)" if name == "clean" else ""
        raise MissingInputError(f"{path} does not exist{hint}")
    return load_telemetry(path, fleet)


def _forest_params(args) -> ForestParams:
    return ForestParams(
        n_trees=args.trees,
        max_depth=args.max_depth,
        min_samples_leaf=args.min_samples_leaf,
        features_per_split=args.features_per_split,
        seed=args.seed,
    )


def _params_dict(p: ForestParams) -> dict:
    return dataclasses.asdict(p)


def _latest(run: Path, kind: str, day: int | None = None) -> Path:
    models = sorted((run / "models").glob(f"{kind}-day*.json"))
    if day is not None:
        models = [m for m in models if m.name == model_filename(kind, day)]
    if not models:
        raise MissingModelError(f"no {kind} model in {run / 'models'}; run the matching train-* stage")
    return models[-1]


def _emit(run: Path | None, name: str, summary: dict) -> dict:
    if run is not None:
        save_json(run / f"summary-{name}.json", summary)
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return summary


# --- subcommands ----------------------------------------------------------------------


def cmd_simulate(args) -> dict:
    if args.config:
        cfg = RunConfig.from_dict(load_json(args.config))
    else:
        drop = DropWindow(args.drop_day) if args.drop_day is not None else None
        changes = []
        for spec in args.hw_change or ():
            try:
                pdu_id, day = spec.rsplit(":", 1)
                changes.append(HardwareChange(pdu_id, int(day)))
            except ValueError:
                raise ConfigError(f"--hw-change expects PDU:DAY, got {spec!r}") from None
        cfg = RunConfig(
            fleet=FleetConfig(args.clusters, args.pdus_per_cluster, args.machines_per_pdu, seed=args.seed),
            scenario=LoadScenario(drop_window=drop),
            n_days=args.days,
            noise_sigma=args.noise,
            seed=args.seed,
            anomalies=AnomalyConfig(n_gaps=args.gaps, n_spikes=args.spikes, n_maintenance=args.maintenance),
            hardware_changes=tuple(changes),
            record_machines=not args.no_machines,
        )
        cfg.fleet.validate()
    run = data_dir(args.data_dir) / "runs" / cfg.digest()
    fleet = generate_fleet(cfg.fleet)
    ids = {p.pdu_id for p in fleet.pdus}
    for h in cfg.hardware_changes:
        if h.pdu_id not in ids:
            raise ConfigError(f"hardware change names unknown PDU {h.pdu_id}")
    ds = simulate_telemetry(fleet, cfg.scenario, cfg.n_days, cfg.noise_sigma, cfg.seed,
                            cfg.hardware_changes, cfg.record_machines)
    ds, ledger = inject_anomalies(ds, cfg.anomalies, cfg.seed)
    save_json(run / "config.json", {"format": "pdupower-run", "version": 1, "run": cfg.to_dict()})
    save_fleet(run / "fleet.json", fleet)
    save_telemetry(run / "raw.tsv", ds)
    save_ledger(run / "anomalies.json", ledger)
    return _emit(run, "simulate", {
        "stage": "simulate",
        "run": cfg.digest(),
        "n_pdus": len(fleet.pdus),
        "n_machines": len(fleet.machines),
        "n_days": cfg.n_days,
        "n_anomalies": len(ledger),
        "fingerprint": dataset_fingerprint(ds),
    })


def cmd_preprocess(args) -> dict:
    run = _run_dir(args)
    cfg = _load_config(run)
    raw = _dataset(run, "raw")
    clean, report = preprocess(raw, cfg.cleaning)
    save_telemetry(run / "clean.tsv", clean)
    save_json(run / "cleaning_report.json", report.to_dict())
    return _emit(run, "preprocess", {
        "stage": "preprocess",
        "n_input": report.n_input,
        "n_removed": report.n_removed,
        "n_removed_rate": report.n_removed_rate,
        "n_removed_low": report.n_removed_low,
        "n_missing": report.n_missing,
        "n_interpolated": report.n_interpolated,
        "n_smoothed": report.n_smoothed,
        "machine": report.machine,
        "fingerprint": dataset_fingerprint(clean),
    })


def _train_day(args, ds) -> int:
    last = ds.first_day + ds.n_days - 1
    day = last if args.day is None else args.day
    if not ds.first_day <= day <= last:
        raise ConfigError(f"--day {day} outside the dataset (days {ds.first_day}..{last})")
    return day


def cmd_train_perpdu(args) -> dict:
    run = _run_dir(args)
    clean = _dataset(run, "clean")
    day = _train_day(args, clean)
    models = daily_retrain(clean, day)
    payload = {pid: m.to_dict() for pid, m in sorted(models.items())}
    fallback = sum(any(m.fallback_flags.values()) for m in models.values())
    path = run / "models" / model_filename("per_pdu", day)
    train_days = list(range(max(clean.first_day, day - 6), day + 1))
    save_model(path, "per_pdu", day, payload, {"train_days": train_days}, dataset_fingerprint(clean))
    return _emit(run, "train-perpdu", {
        "stage": "train-perpdu", "model": path.name, "n_models": len(models),
        "n_skipped": len(clean.pdu_ids) - len(models), "n_with_fallback": fallback,
    })


def _train_forest(args, kind: str) -> dict:
    run = _run_dir(args)
    clean = _dataset(run, "clean")
    week_start = args.week_start
    n_days = min(7, clean.first_day + clean.n_days - week_start)
    if n_days < 1:
        raise ConfigError(f"--week-start {week_start} outside the dataset")
    params = _forest_params(args)
    if kind == "unified_machine":
        ts = build_machine_training_set(clean, week_start, args.samples_per_group, args.seed, n_days=n_days)
        model = train_unified_machine(ts, params, args.n_jobs)
        extra = {"samples_per_group": args.samples_per_group, "n_rows": len(ts.row_ids)}
    else:
        ts = build_pdu_training_set(clean, week_start, args.max_rows, args.seed, n_days=n_days)
        model = train_unified_pdu(ts, params, args.n_jobs)
        extra = {"max_rows": args.max_rows, "n_rows": len(ts.row_ids)}
    day = week_start + n_days - 1
    config = {"train_days": list(range(week_start, day + 1)), "forest": _params_dict(params), **extra}
    path = run / "models" / model_filename(kind, day)
    save_model(path, kind, day, model.to_dict(), config, dataset_fingerprint(clean))
    return _emit(run, f"train-{'um' if kind == 'unified_machine' else 'updu'}", {
        "stage": f"train-{kind}", "model": path.name, **extra,
        "n_nodes": int(sum(t.n_nodes for t in model.trees)),
    })


def cmd_train_um(args) -> dict:
    return _train_forest(args, "unified_machine")


def cmd_train_updu(args) -> dict:
    return _train_forest(args, "unified_pdu")


def _load_forest(path: Path, kind: str) -> tuple[RandomForest, dict]:
    doc = load_model(path, kind)
    return RandomForest.from_dict(doc["payload"]), doc


def cmd_predict(args) -> dict:
    run = _run_dir(args)
    raw = _dataset(run, "raw")
    path = Path(args.model) if args.model else _latest(run, args.kind)
    doc = load_model(path)
    kind = doc["kind"]
    day = args.day if args.day is not None else doc["day"] + 1
    if day in doc["config"]["train_days"]:
        raise ConfigError(f"day {day} lies inside the model's training window")
    out = {}
    if kind == "per_pdu":
        models = {pid: PerPduModel.from_dict(m) for pid, m in doc["payload"].items()}
        for i, pid in enumerate(raw.pdu_ids):
            if pid in models:
                cpu = raw.pdu_cpu[i, raw.day_slice(day)]
                out[pid] = [None if c != c else predict_per_pdu(models[pid], c) for c in cpu.tolist()]
    else:
        model = RandomForest.from_dict(doc["payload"])
        history = _dataset(run, "clean") if (run / "clean.tsv").is_file() else raw
        for i, pid in enumerate(raw.pdu_ids):
            if kind == "unified_machine":
                merged = history.replace(machine_cpu=raw.machine_cpu)
                p = predict_pdu_day_um(model, merged, i, day, args.n_jobs).total
            else:
                p = predict_pdu_day_up(model, raw, i, day, args.n_jobs)
            out[pid] = [float(v) for v in p]
    dest = run / "predictions" / f"{kind}-day{day:04d}.json"
    save_json(dest, {"kind": kind, "day": day, "model": path.name, "predictions": out})
    return _emit(run, "predict", {"stage": "predict", "kind": kind, "day": day,
                                   "output": str(dest.relative_to(run)), "n_pdus": len(out)})


def cmd_evaluate(args) -> dict:
    run = _run_dir(args)
    found = {k: sorted((run / "models").glob(f"{k}-day*.json"))
             for k in ("per_pdu", "unified_machine", "unified_pdu")}
    if not any(found.values()):
        raise MissingModelError("no trained model found; run train-perpdu, train-um or train-updu first")
    raw = _dataset(run, "raw")
    clean = _dataset(run, "clean")
    um = up = None
    um_days: list = []
    up_days: list = []
    if found["unified_machine"]:
        um, doc = _load_forest(found["unified_machine"][-1], "unified_machine")
        um_days = doc["config"]["train_days"]
    if found["unified_pdu"]:
        up, doc = _load_forest(found["unified_pdu"][-1], "unified_pdu")
        up_days = doc["config"]["train_days"]
    last = raw.first_day + raw.n_days - 1
    # by default score the last week that lies after every forest's training window
    first = max([raw.first_day + 1, last - 6] + [d + 1 for d in um_days + up_days])
    if args.first_day is not None:
        first = args.first_day
    if first > last:
        raise ConfigError(f"no evaluation day left after the training window (last day {last})")
    test_days = list(range(first, last + 1))
    report = next_day_evaluation(raw, clean, test_days, um, up, um_days, up_days, n_jobs=args.n_jobs)
    if not found["per_pdu"]:
        report.summaries.pop("per_pdu")
    save_json(run / "reports" / "evaluate.json", report.to_dict())
    return _emit(run, "evaluate", {
        "stage": "evaluate",
        "test_days": test_days,
        "models": {k: {"mean_avg_daily_mape": float(sum(v["avg_daily_mape"].values()) / len(v["avg_daily_mape"])),
                       "fraction_below_5": v["fraction_below_5"],
                       "fraction_below_10": v["fraction_below_10"]}
                   for k, v in sorted(report.summaries.items())},
    })


def cmd_powerdrop(args) -> dict:
    fleet_cfg = FleetConfig(args.clusters, args.pdus_per_cluster, args.machines_per_pdu, seed=args.seed)
    fleet_cfg.validate()
    shares = LoadScenario().tier_shares
    drop = DropWindow(args.train_days, tier_drop=_tier_drop(args.drop, shares))
    scenario = LoadScenario(drop_window=drop)
    params = _forest_params(args)
    config = {
        "experiment": "powerdrop", "fleet": dataclasses.asdict(fleet_cfg), "drop": args.drop,
        "train_days": args.train_days, "noise_sigma": args.noise, "seed": args.seed,
        "forest": _params_dict(params), "samples_per_group": args.samples_per_group,
    }
    run = data_dir(args.data_dir) / "runs" / sha256(canonical_json(config))[:16]
    report = run_power_drop_experiment(
        generate_fleet(fleet_cfg), scenario, args.train_days, args.noise, args.seed, params,
        args.samples_per_group, args.max_rows, n_jobs=args.n_jobs,
    )
    save_json(run / "config.json", {"format": "pdupower-experiment", "version": 1, "run": config})
    save_json(run / "reports" / "powerdrop.json", report.to_dict())
    return _emit(run, "powerdrop", {"stage": "powerdrop", "run": run.name,
                                     "per_cluster": report.summaries["per_cluster"]})


def _tier_drop(total: float, shares: Sequence[float]) -> tuple[float, ...]:
    """Per-tier drop fractions removing ``total`` of load, lowest tier first."""
    if not 0 <= total <= 1:
        raise ConfigError("--drop must lie in [0, 1]")
    left, out = total, []
    for s in shares:
        take = min(s, left)
        out.append(take / s if s else 0.0)
        left -= take
    return tuple(out)


def cmd_holdout(args) -> dict:
    run = _run_dir(args)
    raw = _dataset(run, "raw")
    params = _forest_params(args)
    report = run_holdout_experiment(
        raw, args.n_holdout, args.seed, train_week=args.train_week, test_week=args.test_week,
        params=params, samples_per_group=args.samples_per_group, cleaning=_load_config(run).cleaning,
        n_jobs=args.n_jobs,
    )
    save_json(run / "reports" / "holdout.json", report.to_dict())
    return _emit(run, "holdout", {"stage": "holdout", "holdouts": report.summaries["holdouts"],
                                   "mean_mape": report.summaries.get("mean_mape")})


def cmd_report(args) -> dict:
    run = _run_dir(args)
    reports = {p.stem: load_json(p) for p in sorted((run / "reports").glob("*.json"))}
    summaries = {p.stem[len("summary-"):]: load_json(p) for p in sorted(run.glob("summary-*.json"))}
    if not reports and not summaries:
        raise MissingInputError(f"{run} holds no stage outputs yet")
    index = {"run": run.name, "reports": sorted(reports), "stages": summaries}
    save_json(run / "report.json", index)
    return _emit(None, "report", {"stage": "report", "reports": sorted(reports),
                                  "stages": sorted(summaries)})


# --- argument parsing -----------------------------------------------------------------


def _add_forest(p, trees=100):
    p.add_argument("--trees", type=int, default=trees, help="number of trees")
    p.add_argument("--max-depth", type=int, default=16)
    p.add_argument("--min-samples-leaf", type=int, default=5)
    p.add_argument("--features-per-split", type=float, default=1.0)
    p.add_argument("--samples-per-group", type=int, default=DESK_SAMPLES_PER_GROUP)
    p.add_argument("--max-rows", type=int, default=DESK_MAX_ROWS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdupower", description=__doc__.split("\n")[0])
    parser.add_argument("--data-dir", help=f"root for run directories (default ${ENV_DATA_DIR})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help, run=True):
        p = sub.add_parser(name, help=help)
        p.set_defaults(fn=fn)
        if run:
            p.add_argument("--run", help="run directory or config hash under the data dir")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n-jobs", type=int, default=1, help="threads; results do not depend on it")
        return p

    p = add("simulate", cmd_simulate, "generate a fleet and its telemetry", run=False)
    p.add_argument("--config", help="RunConfig JSON; overrides the flags below")
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--pdus-per-cluster", type=int, default=3)
    p.add_argument("--machines-per-pdu", type=int, default=50)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--noise", type=float, default=0.02, help="lognormal meter noise sigma")
    p.add_argument("--gaps", type=int, default=0, help="gaps per PDU")
    p.add_argument("--spikes", type=int, default=0, help="spikes per PDU")
    p.add_argument("--maintenance", type=int, default=0, help="maintenance windows per PDU")
    p.add_argument("--drop-day", type=int, help="day with the tiered load drop")
    p.add_argument("--hw-change", action="append", metavar="PDU:DAY")
    p.add_argument("--no-machines", action="store_true", help="keep PDU telemetry only")

    add("preprocess", cmd_preprocess, "clean raw telemetry")

    p = add("train-perpdu", cmd_train_perpdu, "fit Per-PDU models on the week ending at --day")
    p.add_argument("--day", type=int)
    for name, fn in (("train-um", cmd_train_um), ("train-updu", cmd_train_updu)):
        p = add(name, fn, f"fit the {'Unified Machine' if name == 'train-um' else 'Unified PDU'} forest")
        p.add_argument("--week-start", type=int, default=0)
        _add_forest(p)

    p = add("predict", cmd_predict, "predict PDU power for one day")
    p.add_argument("--kind", choices=("per_pdu", "unified_machine", "unified_pdu"), default="per_pdu")
    p.add_argument("--model", help="model file (default: latest of --kind)")
    p.add_argument("--day", type=int, help="day to predict (default: day after training)")

    p = add("evaluate", cmd_evaluate, "next-day MAPE of every trained model")
    p.add_argument("--first-day", type=int, help="first test day (default: last 7 days)")

    p = add("powerdrop", cmd_powerdrop, "tiered load-drop experiment", run=False)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--pdus-per-cluster", type=int, default=3)
    p.add_argument("--machines-per-pdu", type=int, default=50)
    p.add_argument("--train-days", type=int, default=7)
    p.add_argument("--drop", type=float, default=0.6, help="fraction of load removed")
    p.add_argument("--noise", type=float, default=0.02)
    _add_forest(p)

    p = add("holdout", cmd_holdout, "hold-out PDU generalization experiment")
    p.add_argument("--n-holdout", type=int, default=3)
    p.add_argument("--train-week", type=int, default=0)
    p.add_argument("--test-week", type=int, default=7)
    _add_forest(p)

    add("report", cmd_report, "index every report of a run")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "n_jobs", 1) < 1:
        sys.stderr.write("error[config]: --n-jobs must be at least 1\n")
        return ConfigError.exit_code
    try:
        args.fn(args)
    except PduPowerError as e:
        sys.stderr.write(f"error[{e.category}]: {e}\n")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: gen-data | train | eval | sweep | compare | verify. Every run
is driven by one JSON config (--seed overrides its seed); artifacts are
CSV/JSON files plus rendered PNG figures, each CSV carrying a sidecar JSON
with the config hash, seed and package version. Exit codes: 0 success,
1 usage or configuration error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash, default_config, load_config, parse_config
from .data import Dataset, load_csv, rotated_task, sample_task, save_csv
from .errors import ConfigError, ContractError, EstimationError, IngestionError, Learn2HelpError
from .evaluation import (
    accuracy,
    confidence_baseline_curve,
    cost_sweep,
    evaluate,
    random_baseline_curve,
    risk_gap_slope,
)
from .figures import save_compare_figure, save_risk_gap_figure, save_sweep_figure
from .losses import CostSpec
from .models import (
    FixedClient,
    Scorer,
    SgdConfig,
    load_scorer,
    save_scorer,
)
from .oracle import calibration_sign_grid, write_grid_csv
from .training import HelpSystem, train_client, train_expert_alone, train_help

CHECKPOINTS = ("client.json", "rejector.json", "expert.json")


def _seed(master: int, index: int) -> int:
    children = np.random.SeedSequence(master).spawn(index + 1)
    return int(children[index].generate_state(1)[0])


# Fixed stream indices so each stage draws independent randomness.
_S_TRAIN_DATA, _S_TEST_DATA, _S_CLIENT_DATA, _S_CLIENT_SGD = 0, 1, 2, 3
_S_JOINT, _S_EXPERT_ALONE, _S_SWEEP, _S_COMPARE, _S_VERIFY, _S_RANDOM = 4, 5, 6, 7, 8, 9


def _meta(cfg: ExperimentConfig) -> dict:
    return {
        "config_hash": config_hash(cfg.raw),
        "seed": cfg.seed,
        "version": f"learn2help-{__version__}",
    }


def _write_sidecar(path: Path, cfg: ExperimentConfig) -> None:
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump(_meta(cfg), fh, indent=1)
        fh.write("\n")


def _write_csv(path: Path, cfg: ExperimentConfig, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else str(v)
                             for v in row])
    _write_sidecar(path, cfg)


def _load_datasets(cfg: ExperimentConfig, out: Path) -> tuple[Dataset, Dataset]:
    train_path = Path(cfg.data.train_csv) if cfg.data.train_csv else out / "train.csv"
    test_path = Path(cfg.data.test_csv) if cfg.data.test_csv else out / "test.csv"
    for p in (train_path, test_path):
        if not p.exists():
            raise ConfigError(f"missing data file {p}; run gen-data first or set data.*_csv")
    return load_csv(train_path), load_csv(test_path)


def _build_client(cfg: ExperimentConfig, train_ds: Dataset) -> FixedClient:
    """Pre-train and freeze the legacy client.

    With a synthetic task the client trains on its own draw, optionally
    from a rotated copy of the task (distribution drift); with CSV data it
    trains on a prefix of the training set.
    """
    if cfg.task is not None:
        source = cfg.task
        if cfg.client.drift_rotation_deg != 0.0:
            source = rotated_task(cfg.task, cfg.client.drift_rotation_deg)
        pretrain_ds = sample_task(source, cfg.client.pretrain_n,
                                  _seed(cfg.seed, _S_CLIENT_DATA))
    else:
        n = min(cfg.client.pretrain_n, len(train_ds))
        pretrain_ds = Dataset(train_ds.X[:n], train_ds.y[:n])
    sgd = SgdConfig(cfg.client.pretrain_lr, cfg.client.pretrain_epochs,
                    cfg.client.pretrain_batch, _seed(cfg.seed, _S_CLIENT_SGD))
    return train_client(pretrain_ds, cfg.client.arch, sgd)


def _train_cfg(cfg: ExperimentConfig, seed: int) -> SgdConfig:
    return SgdConfig(cfg.training.learning_rate, cfg.training.epochs,
                     cfg.training.batch_size, seed, cfg.training.max_grad_norm)


def cmd_gen_data(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.task is None:
        raise ConfigError("gen-data needs a synthetic task section")
    train_ds = sample_task(cfg.task, cfg.data.n_train, _seed(cfg.seed, _S_TRAIN_DATA))
    test_ds = sample_task(cfg.task, cfg.data.n_test, _seed(cfg.seed, _S_TEST_DATA))
    save_csv(train_ds, out / "train.csv")
    save_csv(test_ds, out / "test.csv")
    _write_sidecar(out / "train.csv", cfg)
    _write_sidecar(out / "test.csv", cfg)
    with open(out / "dataset_meta.json", "w") as fh:
        json.dump({**_meta(cfg), "n_train": len(train_ds), "n_test": len(test_ds),
                   "dim": train_ds.dim}, fh, indent=1)
        fh.write("\n")
    print(f"wrote {out / 'train.csv'} ({len(train_ds)} rows) and "
          f"{out / 'test.csv'} ({len(test_ds)} rows)")
    return 0


def cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    train_ds, _ = _load_datasets(cfg, out)
    client = _build_client(cfg, train_ds)
    system = train_help(train_ds, client, cfg.costs, cfg.calibration,
                        _train_cfg(cfg, _seed(cfg.seed, _S_JOINT)),
                        cfg.rejector_arch, cfg.expert_arch)
    meta = _meta(cfg)
    save_scorer(client.scorer, out / "client.json", seed=cfg.seed, metadata=meta)
    save_scorer(system.rejector, out / "rejector.json", seed=cfg.seed, metadata=meta)
    save_scorer(system.expert, out / "expert.json", seed=cfg.seed, metadata=meta)
    _write_csv(out / "training_log.csv", cfg,
               ["epoch", "mean_surrogate_loss", "train_generalized_risk", "coverage"],
               [(s.epoch, s.mean_surrogate, s.train_risk, s.coverage)
                for s in system.history])
    print(f"wrote {', '.join(CHECKPOINTS)} and training_log.csv to {out}")
    return 0


def _load_system(cfg: ExperimentConfig, out: Path) -> HelpSystem:
    scorers: list[Scorer] = []
    for name, arch in zip(CHECKPOINTS, (cfg.client.arch, cfg.rejector_arch, cfg.expert_arch)):
        path = out / name
        if not path.exists():
            raise ConfigError(f"missing checkpoint {path}; run train first")
        scorer, _ = load_scorer(path)
        if scorer.arch != arch:
            raise ConfigError(
                f"{path}: checkpoint architecture {scorer.arch.widths} "
                f"{scorer.arch.activation!r} does not match config "
                f"{arch.widths} {arch.activation!r}")
        scorers.append(scorer)
    return HelpSystem(FixedClient(scorers[0]), scorers[1], scorers[2], cfg.costs)


def cmd_eval(cfg: ExperimentConfig, out: Path) -> int:
    _, test_ds = _load_datasets(cfg, out)
    system = _load_system(cfg, out)
    report = evaluate(system, test_ds, cfg.costs)
    payload = {**_meta(cfg), **report.to_dict()}
    with open(out / "report.json", "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    fields = list(report.to_dict())
    _write_csv(out / "report.csv", cfg, fields,
               [tuple(report.to_dict()[f] for f in fields)])
    print(f"accuracy={report.accuracy:.4f} coverage={report.coverage:.4f} "
          f"risk={report.generalized_risk:.4f}")
    return 0


_REPORT_FIELDS = ["accuracy", "coverage", "generalized_risk", "client_acc_on_kept",
                  "client_acc_on_deferred", "expert_acc_on_kept",
                  "expert_acc_on_deferred", "n"]


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.task is None:
        raise ConfigError("sweep needs a synthetic task section")
    train_ds, test_ds = _sweep_data(cfg)
    client = _build_client(cfg, train_ds)
    points, reports = cost_sweep(cfg.task, client, cfg.sweep.ce_values, cfg.costs.c1,
                                 cfg.calibration, _train_cfg(cfg, _seed(cfg.seed, _S_SWEEP)),
                                 n_train=cfg.data.n_train, n_test=cfg.data.n_test,
                                 rejector_arch=cfg.rejector_arch, expert_arch=cfg.expert_arch)
    _write_csv(out / "sweep_curve.csv", cfg, ["method", "knob", "coverage", "accuracy"],
               [(p.method, p.knob, p.coverage, p.accuracy) for p in points])
    _write_csv(out / "sweep_reports.csv", cfg, ["ce"] + _REPORT_FIELDS,
               [(ce, *(r.to_dict()[f] for f in _REPORT_FIELDS))
                for ce, r in zip(cfg.sweep.ce_values, reports)])
    expert_alone = train_expert_alone(train_ds, cfg.expert_arch,
                                      _train_cfg(cfg, _seed(cfg.seed, _S_EXPERT_ALONE)))
    save_sweep_figure(points, accuracy(client.scorer, test_ds),
                      accuracy(expert_alone, test_ds), out / "sweep.png")
    print(f"wrote sweep_curve.csv ({len(points)} rows), sweep_reports.csv, sweep.png")
    return 0


def _sweep_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    train = sample_task(cfg.task, cfg.data.n_train, _seed(cfg.seed, _S_TRAIN_DATA))
    test = sample_task(cfg.task, cfg.data.n_test, _seed(cfg.seed, _S_TEST_DATA))
    return train, test


def cmd_compare(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.task is None:
        raise ConfigError("compare needs a synthetic task section")
    train_ds, test_ds = _sweep_data(cfg)
    client = _build_client(cfg, train_ds)
    expert_alone = train_expert_alone(train_ds, cfg.expert_arch,
                                      _train_cfg(cfg, _seed(cfg.seed, _S_EXPERT_ALONE)))
    joint, _ = cost_sweep(cfg.task, client, cfg.compare.ce_values, cfg.costs.c1,
                          cfg.calibration, _train_cfg(cfg, _seed(cfg.seed, _S_COMPARE)),
                          n_train=cfg.data.n_train, n_test=cfg.data.n_test,
                          rejector_arch=cfg.rejector_arch, expert_arch=cfg.expert_arch)
    rej_only, _ = cost_sweep(cfg.task, client, cfg.compare.ce_values, cfg.costs.c1,
                             cfg.calibration, _train_cfg(cfg, _seed(cfg.seed, _S_COMPARE)),
                             n_train=cfg.data.n_train, n_test=cfg.data.n_test,
                             rejector_arch=cfg.rejector_arch,
                             rejector_only_expert=expert_alone)
    curves = {
        "learn2help_joint": joint,
        "learn2help_rejector_only": rej_only,
        "confidence_sigmoid": confidence_baseline_curve(
            client, expert_alone, test_ds, cfg.compare.thresholds, "sigmoid"),
        "confidence_distance": confidence_baseline_curve(
            client, expert_alone, test_ds,
            sorted(0.25 - t * t for t in cfg.compare.thresholds), "distance"),
        "random": random_baseline_curve(client, expert_alone, test_ds,
                                        cfg.compare.rates, _seed(cfg.seed, _S_RANDOM)),
    }
    rows = [(p.method, p.knob, p.coverage, p.accuracy)
            for pts in curves.values() for p in pts]
    _write_csv(out / "compare_curves.csv", cfg, ["method", "knob", "coverage", "accuracy"], rows)
    save_compare_figure(curves, out / "compare.png")
    print(f"wrote compare_curves.csv ({len(rows)} rows across {len(curves)} methods), compare.png")
    return 0


def cmd_verify(cfg: ExperimentConfig, out: Path) -> int:
    """Theory gate: calibration sign-consistency over the (eta, q, costs)
    grid, then the risk-gap convergence slope. Nonzero exit on violation."""
    step = cfg.verify.grid_step
    values = np.arange(step, 1.0, step)
    rows = calibration_sign_grid(cfg.verify.cost_grid, cfg.calibration,
                                 values, values, cfg.verify.boundary_tol)
    write_grid_csv(rows, out / "verify_grid.csv")
    _write_sidecar(out / "verify_grid.csv", cfg)
    violations = [r for r in rows if r.checked and not r.consistent]
    checked = sum(r.checked for r in rows)
    print(f"sign-consistency grid: {len(rows)} points, {checked} checked, "
          f"{len(violations)} violations")
    if violations:
        write_grid_csv(violations, out / "verify_violations.csv")
        _write_sidecar(out / "verify_violations.csv", cfg)
        print(f"wrote verify_violations.csv ({len(violations)} rows)", file=sys.stderr)

    if cfg.task is None:
        raise ConfigError("verify needs a synthetic task section")
    train_ds = sample_task(cfg.task, cfg.data.n_train, _seed(cfg.seed, _S_TRAIN_DATA))
    client = _build_client(cfg, train_ds)
    try:
        slope, gap_rows = risk_gap_slope(cfg.task, client, cfg.costs, cfg.calibration,
                                         _train_cfg(cfg, _seed(cfg.seed, _S_VERIFY)),
                                         cfg.verify.n_values, cfg.verify.repeats,
                                         n_holdout=cfg.verify.n_holdout,
                                         rejector_arch=cfg.rejector_arch,
                                         expert_arch=cfg.expert_arch)
    except EstimationError as exc:
        print(f"risk-gap diagnostic degenerate: {exc}", file=sys.stderr)
        slope, gap_rows = float("nan"), []
    lo, hi = cfg.verify.slope_range
    slope_ok = lo <= slope <= hi
    if gap_rows:
        _write_csv(out / "risk_gap.csv", cfg, ["n", "mean_abs_risk_gap"], gap_rows)
        save_risk_gap_figure(gap_rows, slope, out / "risk_gap.png")
    print(f"risk-gap slope: {slope:.3f} (expected within [{lo}, {hi}])")

    summary = {**_meta(cfg), "grid_points": len(rows), "grid_checked": checked,
               "grid_violations": len(violations), "risk_gap_slope": slope,
               "slope_range": [lo, hi], "passed": not violations and slope_ok}
    with open(out / "verify_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    if violations or not slope_ok:
        print("verification FAILED", file=sys.stderr)
        return 2
    print("verification passed")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="learn2help",
        description="Train and verify an expert classifier plus deferral rule "
                    "assisting a fixed legacy client.")
    parser.add_argument("--version", action="version", version=f"learn2help {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="experiment JSON (defaults to the built-in reference config)")
        p.add_argument("--out", type=Path, required=True, help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is None:
            raw = default_config()
        else:
            with open(args.config) as fh:
                raw = json.load(fh)
        if args.seed is not None:
            raw = {**raw, "seed": args.seed}
        cfg = parse_config(raw)
        args.out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, args.out)
    except json.JSONDecodeError as exc:
        print(f"error: invalid config JSON: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, IngestionError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Learn2HelpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

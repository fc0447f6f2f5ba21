"""Command-line entry point.

Subcommands:
    gen            generate a synthetic labelled dataset (CSV + manifest)
    simulate       run a scenario through the runtime simulator
    infer          classify a manifest of recordings, print a confusion matrix
    verify-golden  replay trainer-exported golden vectors through the engine
    power          print the analytic per-mode power table

Exit codes: 0 success, 1 I/O or format error, 2 validation/feasibility failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from base64 import b64decode
from pathlib import Path

import numpy as np

from . import balance, power, runtime, signals
from .model import (
    ExerciseClass,
    ModelSpec,
    WeightFileError,
    infer_counts,
    infer_window,
    load_weights,
)
from .qnn import KernelError, QuantizedTensor

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    known = {"balance", "power", "generator"}
    unknown = set(obj) - known
    if unknown:
        raise CliError(f"unknown config sections: {sorted(unknown)}", EXIT_IO)
    return obj


def _build(section: dict, cls, label: str):
    try:
        return cls(**section)
    except TypeError as exc:
        raise CliError(f"bad {label} config: {exc}", EXIT_IO) from exc
    except ValueError as exc:
        raise CliError(f"bad {label} config: {exc}", EXIT_VALIDATION) from exc


def _configs(args):
    cfg = _load_config(args.config)
    balance_cfg = _build(cfg.get("balance", {}), balance.BalanceConfig, "balance")
    power_params = _build(cfg.get("power", {}), power.PowerParams, "power")
    gen_section = dict(cfg.get("generator", {}))
    gen_section.setdefault("seed", args.seed)
    if "amplitudes" in gen_section:
        gen_section["amplitudes"] = {
            ExerciseClass.from_name(k): v for k, v in gen_section["amplitudes"].items()
        }
    if "period_ranges" in gen_section:
        gen_section["period_ranges"] = {
            ExerciseClass.from_name(k): tuple(v) for k, v in gen_section["period_ranges"].items()
        }
    generator_cfg = _build(gen_section, signals.GeneratorConfig, "generator")
    return balance_cfg, power_params, generator_cfg


def _read_model(path: str) -> ModelSpec:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read weights {path}: {exc}", EXIT_IO) from exc
    try:
        return load_weights(data)
    except WeightFileError as exc:
        raise CliError(f"invalid weight file {path}: {exc}", EXIT_IO) from exc


def cmd_gen(args) -> int:
    _, _, gen_cfg = _configs(args)
    classes = (
        [ExerciseClass.from_name(c) for c in args.classes.split(",")]
        if args.classes
        else list(ExerciseClass)
    )
    out_dir = Path(args.out or "dataset")
    recordings, seeds = [], []
    for cls in classes:
        for i in range(args.count):
            seed = args.seed * 100_000 + int(cls) * 1_000 + i
            rec = signals.generate_recording(
                cls, args.duration, signals.with_seed(gen_cfg, seed)
            )
            recordings.append(rec)
            seeds.append(seed)
    manifest = signals.save_dataset(out_dir, recordings, seeds)
    print(f"wrote {len(recordings)} recordings, manifest {manifest}")
    return EXIT_OK


def cmd_power(args) -> int:
    _, params, _ = _configs(args)
    reports = [power.om_power(mode, params) for mode in runtime.OperatingMode]
    for rep in reports:
        print(f"{rep.mode.value:>8s} @ {rep.frequency_mhz} MHz: {rep.total_mw:7.3f} mW")
        for task, mw in rep.breakdown_mw.items():
            print(f"{'':>12s}{task:<12s} {mw:8.3f} mW  ({100 * mw / rep.total_mw:5.1f} %)")
    s = power.savings(runtime.OperatingMode.RAW, runtime.OperatingMode.BALANCE, params)
    print(f"raw -> balance savings: {s:.1f} %")
    s = power.savings(runtime.OperatingMode.RAW, runtime.OperatingMode.CNN, params)
    print(f"raw -> cnn savings:     {s:.1f} %")
    if args.out:
        Path(args.out).write_text(
            json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
        )
    return EXIT_OK


def cmd_simulate(args) -> int:
    balance_cfg, params, _ = _configs(args)
    try:
        scenario = runtime.load_scenario(args.scenario)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read scenario: {exc}", EXIT_IO) from exc
    except runtime.ScenarioError as exc:
        raise CliError(f"bad scenario: {exc}", EXIT_IO) from exc
    model = _read_model(args.weights) if args.weights else None
    try:
        trace = runtime.run_scenario(
            scenario, params=params, model=model, balance_cfg=balance_cfg
        )
    except power.FeasibilityError as exc:
        raise CliError(f"infeasible configuration: {exc}", EXIT_VALIDATION) from exc
    except (runtime.RuntimeConfigError, runtime.SchedulerError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    out = Path(args.out or "trace.jsonl")
    out.write_text(trace.to_jsonl())
    summary = trace.summary()["detail"]
    print(f"trace: {out} ({len(trace.records)} records)")
    print(
        f"energy {summary['energy_uj'] / 1000:.3f} mJ over {scenario.horizon_s:.0f} s "
        f"-> {summary['average_mw']:.3f} mW; packets {summary['packets']}, "
        f"inferences {summary['inferences']}, gated {summary['gated']}"
    )
    try:
        rec = power.reconcile(trace.records, params, skip_s=args.reconcile_skip)
        print(
            f"reconciliation ({rec['mode']} @ {rec['frequency_mhz']} MHz): "
            f"simulated {rec['simulated_mw']:.3f} mW vs analytic {rec['analytic_mw']:.3f} mW "
            f"({100 * rec['relative_error']:.2f} % error)"
        )
    except power.PowerError as exc:
        print(f"reconciliation skipped: {exc}")
    return EXIT_OK


def _frame_recording(entry: dict) -> tuple[ExerciseClass, list]:
    rec = signals.load_recording_csv(entry["path"], ExerciseClass.from_name(entry["class"]))
    return rec.label, signals.frame_windows(rec, stride_s=1.0)


def cmd_infer(args) -> int:
    model = _read_model(args.weights)
    try:
        entries = signals.load_manifest(args.manifest)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"cannot read manifest {args.manifest}: {exc}", EXIT_IO) from exc
    if not entries:
        raise CliError("manifest lists no recordings", EXIT_VALIDATION)
    n_classes = len(ExerciseClass)
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    for entry in entries:
        try:
            truth, windows = _frame_recording(entry)
        except (OSError, signals.SignalError) as exc:
            raise CliError(f"bad recording {entry['path']}: {exc}", EXIT_IO) from exc
        for w in windows:
            pred, _ = infer_counts(model, w.data)
            confusion[int(truth), int(pred)] += 1
    total = int(confusion.sum())
    correct = int(np.trace(confusion))
    names = [c.name for c in ExerciseClass]
    print("confusion matrix (rows: truth, cols: prediction)")
    print("      " + "".join(f"{n:>6s}" for n in names))
    for i, name in enumerate(names):
        print(f"{name:>6s}" + "".join(f"{confusion[i, j]:6d}" for j in range(n_classes)))
    accuracy = correct / total
    print(f"windows {total}, accuracy {accuracy:.4f}")
    if args.out:
        Path(args.out).write_text(
            json.dumps(
                {"confusion": confusion.tolist(), "windows": total, "accuracy": accuracy},
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
    return EXIT_OK


def cmd_verify_golden(args) -> int:
    model = _read_model(args.weights)
    try:
        golden = json.loads(Path(args.golden).read_text())
        windows = golden["windows"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"cannot read golden file {args.golden}: {exc}", EXIT_IO) from exc
    digest = hashlib.sha256(Path(args.weights).read_bytes()).hexdigest()
    if golden.get("weight_sha256") not in (None, digest):
        raise CliError(
            f"golden file was produced for weights {golden['weight_sha256'][:12]}..., "
            f"got {digest[:12]}...",
            EXIT_VALIDATION,
        )
    if not windows:
        print("warning: golden set is empty; vacuous pass")
        return EXIT_OK
    failures = 0
    for i, entry in enumerate(windows):
        raw = np.frombuffer(b64decode(entry["input"]), dtype=np.int8)
        data = raw.reshape(model.input_channels, model.input_length)
        cls, logits = infer_window(model, QuantizedTensor(data, model.input_qparams))
        expected_logits = np.array(entry["logits"], dtype=np.int64)
        delta = np.abs(logits.astype(np.int64) - expected_logits)
        if int(cls) != int(entry["class"]) or int(delta.max()) > 1:
            failures += 1
            print(
                f"golden #{i}: expected class {entry['class']} logits {entry['logits']}, "
                f"engine got class {int(cls)} logits {logits.tolist()}"
            )
    print(f"golden vectors: {len(windows)}, failures: {failures}")
    if failures:
        raise CliError(f"{failures} golden vectors disagree", EXIT_VALIDATION)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wobblenode", description=__doc__)
    parser.add_argument("--config", help="JSON config with balance/power/generator overrides")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--classes", help="comma list, e.g. B,FB (default: all five)")
    p.add_argument("--count", type=int, default=12, help="recordings per class")
    p.add_argument("--duration", type=float, default=60.0, help="seconds per recording")
    p.add_argument("--out", help="output directory (default: dataset)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("simulate", help="run a scenario file")
    p.add_argument("scenario")
    p.add_argument("--weights", help="weight file; required if the scenario enters cnn mode")
    p.add_argument("--out", help="trace output path (default: trace.jsonl)")
    p.add_argument("--reconcile-skip", type=float, default=0.0, help="steady-state start, seconds")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="classify recordings from a manifest")
    p.add_argument("weights")
    p.add_argument("manifest")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("verify-golden", help="replay trainer golden vectors")
    p.add_argument("weights")
    p.add_argument("golden")
    p.set_defaults(func=cmd_verify_golden)

    p = sub.add_parser("power", help="print the per-mode power table")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_power)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (KernelError, signals.SignalError, balance.BalanceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

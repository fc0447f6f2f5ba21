"""Training loop and the end-to-end train/quantize/export pipeline."""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import emulate
from .dataset import (
    CLASS_NAMES,
    build_train_windows,
    build_val_windows,
    load_dataset,
    split_recordings,
    write_manifest,
)
from .export import export_golden, write_weights
from .net import ExerciseNet
from .quantize import INPUT_UNIT, input_qparams_from_windows, quantize_model, quantize_tensor


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1.0
    rho: float = 0.9
    patience: int = 5          # consecutive validation-loss increases before stopping
    train_fraction: float = 0.8
    seed: int = 0
    calibration_windows: int = 2048
    golden_windows: int = 120


@dataclass
class TrainResult:
    net: ExerciseNet
    epochs_run: int
    stopped_early: bool
    history: list[dict]
    float_val_accuracy: float


def _evaluate(net, x: torch.Tensor, y: torch.Tensor, batch: int = 512):
    loss_fn = nn.CrossEntropyLoss(reduction="sum")
    net.eval()
    total_loss, hits = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(x), batch):
            logits = net(x[i : i + batch])
            total_loss += float(loss_fn(logits, y[i : i + batch]))
            hits += int((logits.argmax(dim=1) == y[i : i + batch]).sum())
    return total_loss / len(x), hits / len(x)


def train(
    train_x: torch.Tensor,
    train_y: torch.Tensor,
    val_x: torch.Tensor,
    val_y: torch.Tensor,
    cfg: TrainConfig,
) -> TrainResult:
    """Adadelta + cross-entropy with early stopping on validation loss.

    Training stops at cfg.epochs or once the validation loss has increased
    for cfg.patience consecutive epochs; the best-validation-loss weights
    are restored afterwards.
    """
    torch.manual_seed(cfg.seed)
    net = ExerciseNet()
    opt = torch.optim.Adadelta(net.parameters(), lr=cfg.learning_rate, rho=cfg.rho, foreach=True)
    loss_fn = nn.CrossEntropyLoss()
    rng = np.random.default_rng(cfg.seed)

    history = []
    best_loss = float("inf")
    best_state = copy.deepcopy(net.state_dict())
    prev_loss = float("inf")
    rising = 0
    stopped_early = False
    epochs_run = 0

    for epoch in range(cfg.epochs):
        net.train()
        order = rng.permutation(len(train_x))
        epoch_loss, batches = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[i : i + cfg.batch_size])
            opt.zero_grad()
            loss = loss_fn(net(train_x[idx]), train_y[idx])
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            batches += 1
        val_loss, val_acc = _evaluate(net, val_x, val_y)
        epochs_run = epoch + 1
        history.append(
            {"epoch": epochs_run, "train_loss": epoch_loss / batches,
             "val_loss": val_loss, "val_accuracy": val_acc}
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = copy.deepcopy(net.state_dict())
        rising = rising + 1 if val_loss > prev_loss else 0
        prev_loss = val_loss
        if cfg.patience > 0 and rising >= cfg.patience:
            stopped_early = True
            break

    net.load_state_dict(best_state)
    _, final_acc = _evaluate(net, val_x, val_y)
    return TrainResult(net, epochs_run, stopped_early, history, final_acc)


def windows_to_tensor(windows_q: np.ndarray, input_zp: int) -> torch.Tensor:
    """int8 windows -> the float domain the net trains on: (q - zp) / INPUT_UNIT."""
    return torch.from_numpy((windows_q.astype(np.float32) - input_zp) / INPUT_UNIT)


def run_pipeline(manifest_path: str | Path, out_dir: str | Path, cfg: TrainConfig | None = None) -> dict:
    """Full pipeline: load, split, augment, train, quantize, export, verify.

    Writes model.wbnn, golden.json, val_manifest.json, and report.json into
    out_dir; returns the report dict.
    """
    cfg = cfg or TrainConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()

    recordings = load_dataset(manifest_path)
    train_recs, val_recs = split_recordings(recordings, cfg.train_fraction, cfg.seed)
    train_w, train_y = build_train_windows(train_recs)
    val_w, val_y = build_val_windows(val_recs)

    input_scale, input_zp = input_qparams_from_windows(train_w)
    # the weight file stores the scale as f32; quantize with that exact value
    # so the engine reproduces our int8 inputs bit for bit
    input_scale = float(np.float32(input_scale))
    train_q = quantize_tensor(train_w, input_scale, input_zp)
    val_q = quantize_tensor(val_w, input_scale, input_zp)

    train_x = windows_to_tensor(train_q, input_zp)
    val_x = windows_to_tensor(val_q, input_zp)
    result = train(train_x, torch.from_numpy(train_y), val_x, torch.from_numpy(val_y), cfg)

    rng = np.random.default_rng(cfg.seed)
    calib_idx = rng.permutation(len(train_q))[: cfg.calibration_windows]
    qmodel = quantize_model(result.net, train_q[calib_idx], input_scale, input_zp)

    quant_hits = np.array([emulate.classify(qmodel, w) for w in val_q]) == val_y
    quant_acc = float(quant_hits.mean())

    confusion = np.zeros((5, 5), dtype=int)
    for w, y in zip(val_q, val_y):
        confusion[int(y), emulate.classify(qmodel, w)] += 1

    weight_sha = write_weights(qmodel, out_dir / "model.wbnn")

    # goldens: stratified pick across classes, validation windows first,
    # topped up from train windows for any class the split left out
    per_class = max(cfg.golden_windows // 5, 1)
    golden_w, golden_y = [], []
    for cls in range(5):
        cls_idx = np.flatnonzero(val_y == cls)
        pool_q, pool_y = val_q, val_y
        if len(cls_idx) == 0:
            cls_idx = np.flatnonzero(train_y == cls)
            pool_q, pool_y = train_q, train_y
        take = min(per_class, len(cls_idx))
        picked = rng.choice(cls_idx, size=take, replace=False)
        golden_w.append(pool_q[picked])
        golden_y.append(pool_y[picked])
    golden_w = np.concatenate(golden_w)
    golden_y = np.concatenate(golden_y)
    with torch.no_grad():
        logits = result.net(windows_to_tensor(golden_w, input_zp))
        net_argmax = logits.argmax(dim=1).numpy()
    export_golden(
        qmodel, golden_w, golden_y, weight_sha,
        out_dir / "golden.json", float_argmax=net_argmax,
    )

    write_manifest(out_dir / "val_manifest.json", val_recs)

    report = {
        "train_recordings": len(train_recs),
        "val_recordings": len(val_recs),
        "train_windows": int(len(train_q)),
        "val_windows": int(len(val_q)),
        "input_scale": input_scale,
        "input_zero_point": input_zp,
        "epochs_run": result.epochs_run,
        "stopped_early": result.stopped_early,
        "float_val_accuracy": result.float_val_accuracy,
        "quantized_val_accuracy": quant_acc,
        "accuracy_drop_pp": 100.0 * (result.float_val_accuracy - quant_acc),
        "confusion": confusion.tolist(),
        "class_names": list(CLASS_NAMES),
        "weight_sha256": weight_sha,
        "history": result.history,
        "elapsed_s": time.perf_counter() - t_start,
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report

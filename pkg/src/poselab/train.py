"""Deterministic training loop with per-step loss breakdown logging."""

from __future__ import annotations

import csv
from pathlib import Path

from .mixer import CropRecord, MixSpec, make_batch
from .net.losses import TaskWeights, loss_total
from .net.model import NetConfig, PoseMicroNet
from .net.optim import SGDMomentum

LOSS_COLUMNS = ("heatmap", "offsets", "segment", "parts", "uv", "normal", "total")


def train(
    cfg: NetConfig,
    sim_pool: list[CropRecord],
    real_pool: list[CropRecord],
    mix: MixSpec,
    weights: TaskWeights,
    steps: int,
    loss_csv: str | Path | None = None,
    model: PoseMicroNet | None = None,
    progress_every: int = 0,
):
    """Train a (fresh or given) model for `steps` batches; returns
    (model, history) where history is one breakdown dict per step."""
    model = model or PoseMicroNet(cfg)
    opt = SGDMomentum(model.params.keys(), cfg.learning_rate, cfg.momentum,
                      cfg.head_grad_multiplier)
    history: list[dict[str, float]] = []
    for step in range(steps):
        batch = make_batch(sim_pool, real_pool, mix, cfg.num_parts, step)
        preds, caches = model.forward(batch.images, batch.is_sim, training=True)
        total, breakdown, lgrads = loss_total(preds, batch, weights)
        pgrads = model.backward(caches, lgrads)
        opt.step(model.params, pgrads)
        history.append(breakdown)
        if progress_every and (step + 1) % progress_every == 0:
            print(f"step {step + 1}/{steps} total_loss {total:.4f}", flush=True)
    if loss_csv is not None:
        write_loss_csv(history, loss_csv)
    return model, history


def write_loss_csv(history: list[dict[str, float]], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("step",) + LOSS_COLUMNS)
        for step, row in enumerate(history):
            writer.writerow([step] + [repr(float(row[c])) for c in LOSS_COLUMNS])

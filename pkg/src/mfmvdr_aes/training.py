"""End-to-end training through the filter with a negative SI-SDR objective."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .estimator import build_model, load_model, save_model
from .neuralnet import autodiff_backward
from .scene import get_scene, read_manifest

log = logging.getLogger(__name__)

SI_SDR_EPS = 1e-8
_TINY = 1e-30


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr0: float = 3e-4
    lr_decay_per_epoch: float = 0.015
    clip_norm: float = 5.0
    batch_size: int = 1
    seed: int = 0
    L: int = 5
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 <= self.lr_decay_per_epoch < 1.0:
            raise ValueError("lr_decay_per_epoch must lie in [0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def lr(self, epoch: int) -> float:
        return self.lr0 * (1.0 - self.lr_decay_per_epoch) ** epoch


class TrainingDiverged(RuntimeError):
    pass


def si_sdr(est: torch.Tensor, ref: torch.Tensor, eps: float = SI_SDR_EPS) -> torch.Tensor:
    """Scale-invariant SDR in dB; the target is the projection of ``est`` onto ``ref``."""
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {tuple(est.shape)} vs {tuple(ref.shape)}")
    ref_energy = (ref * ref).sum()
    if ref_energy.item() == 0.0:
        raise ValueError("reference signal is all zeros")
    target = ((est * ref).sum() / ref_energy) * ref
    err = target - est
    return 10.0 * torch.log10(((target * target).sum() + _TINY) / ((err * err).sum() + eps))


def si_sdr_loss(est: torch.Tensor, ref: torch.Tensor, eps: float = SI_SDR_EPS) -> torch.Tensor:
    return -si_sdr(est, ref, eps)


# ---------------------------------------------------------------- optimizer

def adam_state(params) -> dict:
    return {"step": 0,
            "m": [torch.zeros_like(p) for p in params],
            "v": [torch.zeros_like(p) for p in params]}


@torch.no_grad()
def adam_step(params, grads, state: dict, lr: float, betas=(0.9, 0.999),
              eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for g in grads:
        if not torch.isfinite(g).all():
            raise FloatingPointError("non-finite gradient; step aborted")
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {tuple(p.shape)} vs {tuple(g.shape)}")
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))


def global_norm(grads) -> float:
    return math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads))


def clip_gradients(grads, max_norm: float = 5.0):
    """Scale all gradients by ``max_norm / norm`` when their global norm exceeds ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return list(grads)
    scale = max_norm / norm
    return [g * scale for g in grads]


# ---------------------------------------------------------------- training loop

def _examples(model, records, root):
    out = []
    for rec in records:
        scene = get_scene(rec, root)
        out.append(model.prepare(scene.mic, scene.far, scene.near))
    return out


def _loss(model, ex) -> torch.Tensor:
    return si_sdr_loss(model.enhance_torch(ex), ex["near"])


def evaluate_loss(model, examples) -> float:
    with torch.no_grad():
        return float(np.mean([_loss(model, ex).item() for ex in examples]))


def _split(records, cfg: TrainConfig):
    n_val = int(round(cfg.val_fraction * len(records)))
    if n_val >= len(records):
        n_val = len(records) - 1
    perm = np.random.default_rng(cfg.seed).permutation(len(records))
    val = [records[i] for i in sorted(perm[:n_val])]
    train = [records[i] for i in sorted(perm[n_val:])]
    return train, val


def train(kind: str, manifest, cfg: TrainConfig, out_dir, model_config: dict | None = None,
          resume=None) -> dict:
    """Train a model on the scenes listed in ``manifest``.

    Writes ``checkpoint.ckpt`` (latest epoch) and ``loss_log.csv`` under
    ``out_dir``. Returns a summary with the per-epoch log rows.
    """
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    manifest = Path(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = read_manifest(manifest)
    train_recs, val_recs = _split(records, cfg)

    torch.manual_seed(cfg.seed)
    start_epoch = 0
    rows: list[dict] = []
    if resume is not None:
        model, header, extra = load_model(resume)
        n = len(list(model.parameters()))
        state = {"step": header["adam_step"],
                 "m": [extra[f"adam.m.{i}"] for i in range(n)],
                 "v": [extra[f"adam.v.{i}"] for i in range(n)]}
        start_epoch = header["epoch"] + 1
        rows = header.get("log", [])
    else:
        config = dict(model_config or {})
        if kind == "mfmvdr":
            config.setdefault("L", cfg.L)
        model = build_model(kind, config)
        state = adam_state(list(model.parameters()))
    params = list(model.parameters())

    train_ex = _examples(model, train_recs, manifest.parent)
    val_ex = _examples(model, val_recs, manifest.parent)
    ckpt = out_dir / "checkpoint.ckpt"

    for epoch in range(start_epoch, cfg.epochs):
        lr = cfg.lr(epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_ex))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            model.zero_grad(set_to_none=False)
            total = sum(_loss(model, train_ex[i]) for i in batch) / len(batch)
            if not torch.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}; last good checkpoint: {ckpt}")
            autodiff_backward(total)
            grads = clip_gradients([p.grad for p in params], cfg.clip_norm)
            try:
                adam_step(params, grads, state, lr)
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"{exc} at epoch {epoch}; last good checkpoint: {ckpt}") from exc
            losses.append(total.item())
        row = {"epoch": epoch, "mean_loss_db": float(np.mean(losses)), "lr": lr,
               "val_loss_db": evaluate_loss(model, val_ex) if val_ex else None}
        rows.append(row)
        log.info("epoch %d  loss %.3f dB  val %s dB  lr %.3g", epoch, row["mean_loss_db"],
                 row["val_loss_db"], lr)
        extra = {f"adam.m.{i}": m for i, m in enumerate(state["m"])}
        extra.update({f"adam.v.{i}": v for i, v in enumerate(state["v"])})
        save_model(ckpt, model, extra, {"epoch": epoch, "adam_step": state["step"],
                                        "train_config": asdict(cfg), "log": rows,
                                        "manifest": str(manifest)})
        write_loss_log(out_dir / "loss_log.csv", rows)

    return {"checkpoint": str(ckpt), "log": rows, "model": model}


def write_loss_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "mean_loss_db", "lr", "val_loss_db"])
        writer.writeheader()
        writer.writerows(rows)

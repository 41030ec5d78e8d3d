"""Training loop: constant-lr Adam on MSE, per-epoch checkpoints, ablations.

An epoch is a fixed iteration count, not a dataset pass; the batch served
at any global iteration is a pure function of (seed, iteration), so an
interrupted run resumed from its last checkpoint replays the exact same
trajectory. The metric log is tab-separated
(epoch, iter, loss, val_psnr, wall_seconds).
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import PatchSet, epoch_permutation
from .metrics import psnr
from .model import ModelConfig, backward, forward, init_params
from .optim import AdamState, adam_step, mse_loss


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; a diagnostic checkpoint was written."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    iters_per_epoch: int = 2000
    total_epochs: int = 72
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 1  # epochs between validation passes; 0 disables
    val_fraction: float = 0.02
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.iters_per_epoch < 1 \
                or self.total_epochs < 1:
            raise ValueError("lr, batch_size, iters_per_epoch, total_epochs "
                             "must be positive")
        if not (0 <= self.val_fraction < 1):
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    adam: AdamState
    iter_losses: list[float]
    epoch_rows: list[tuple[int, int, float, float, float]]
    checkpoint_paths: list[str]

    @property
    def psnr_history(self) -> list[float]:
        return [10.0 * math.log10(1.0 / l) if l > 0 else math.inf
                for l in self.iter_losses]

    def iters_to_reach(self, threshold_db: float):
        """First 1-based iteration whose training PSNR meets the threshold."""
        for i, p in enumerate(self.psnr_history, start=1):
            if p >= threshold_db:
                return i
        return None


def _split_indices(count: int, cfg: TrainConfig):
    """Deterministic held-out validation subset (val, train)."""
    val_count = int(round(cfg.val_fraction * count)) if cfg.eval_every else 0
    if val_count == 0:
        return [], list(range(count))
    perm = np.random.default_rng([cfg.seed, 0x5EED]).permutation(count)
    return sorted(int(i) for i in perm[:val_count]), \
        sorted(int(i) for i in perm[val_count:])


def _batch_at(patchset: PatchSet, indices, batch_size: int, seed: int,
              global_iter: int):
    """The (hazy, clear) batch served at a global iteration.

    Pure in (seed, global_iter): pass p uses the (seed, p) shuffle of the
    training indices and batch k of that pass, tail dropped.
    """
    per_pass = len(indices) // batch_size
    if per_pass == 0:
        raise ValueError(
            f"batch_size {batch_size} exceeds training patch count {len(indices)}")
    p, k = divmod(global_iter, per_pass)
    perm = epoch_permutation(len(indices), seed, p)
    chosen = perm[k * batch_size : (k + 1) * batch_size]
    hazy_list, clear_list = [], []
    for j in chosen:
        hazy, clear = patchset.load_pair(indices[int(j)])
        hazy_list.append(hazy)
        clear_list.append(clear)
    to_nchw = lambda lst: np.ascontiguousarray(
        np.stack(lst).transpose(0, 3, 1, 2), dtype=np.float32)
    return to_nchw(hazy_list), to_nchw(clear_list)


def _validate(patchset, indices, params, cfg: TrainConfig) -> float:
    """Mean PSNR of clamped outputs over the held-out patches."""
    scores = []
    for i in indices:
        hazy, clear = patchset.load_pair(i)
        x = np.ascontiguousarray(hazy.transpose(2, 0, 1)[None], dtype=np.float32)
        out, _ = forward(x, params, cfg.model, keep_trace=False)
        restored = np.clip(out[0].transpose(1, 2, 0), 0.0, 1.0)
        scores.append(psnr(restored, clear))
    finite = [s for s in scores if math.isfinite(s)]
    return float(np.mean(finite)) if finite else math.inf


def train(cfg: TrainConfig, patchset: PatchSet, out_dir,
          resume=None, log=None) -> TrainResult:
    """Run total_epochs x iters_per_epoch Adam steps on the MSE objective.

    Writes a checkpoint per epoch plus a metrics.tsv log under out_dir;
    `resume` names a checkpoint to continue from (bitwise-identical to an
    uninterrupted run). Aborts with a diagnostic checkpoint if the loss
    goes non-finite.
    """
    os.makedirs(out_dir, exist_ok=True)
    val_idx, train_idx = _split_indices(len(patchset), cfg)

    start_epoch = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config != cfg.model:
            raise ValueError("resume: checkpoint architecture differs from config")
        if ckpt.seed != cfg.seed:
            raise ValueError(
                f"resume: checkpoint seed {ckpt.seed} != config seed {cfg.seed}")
        if ckpt.adam is None:
            raise ValueError("resume: checkpoint lacks optimizer state")
        params, adam, start_epoch = ckpt.params, ckpt.adam, ckpt.epoch
    else:
        params = init_params(cfg.model, cfg.seed)
        adam = AdamState.for_params(params)

    log_path = os.path.join(out_dir, "metrics.tsv")
    log_fh = open(log_path, "a" if resume else "w", encoding="utf-8")
    if not resume:
        log_fh.write("# epoch\titer\tloss\tval_psnr\twall_seconds\n")

    iter_losses: list[float] = []
    epoch_rows = []
    ckpt_paths = []
    started = time.perf_counter()
    try:
        for epoch in range(start_epoch, cfg.total_epochs):
            epoch_losses = []
            for i in range(cfg.iters_per_epoch):
                global_iter = epoch * cfg.iters_per_epoch + i
                hazy, clear = _batch_at(patchset, train_idx, cfg.batch_size,
                                        cfg.seed, global_iter)
                out, trace = forward(hazy, params, cfg.model)
                loss, grad = mse_loss(out, clear)
                if not math.isfinite(loss):
                    diag = os.path.join(out_dir, "diverged.ckpt")
                    save_checkpoint(diag, Checkpoint(
                        config=cfg.model, params=params, adam=adam,
                        epoch=epoch, iteration=global_iter, seed=cfg.seed))
                    raise TrainingDiverged(
                        f"non-finite loss at iteration {global_iter}; "
                        f"state saved to {diag}")
                grads = backward(trace, grad, params, cfg.model)
                adam_step(params, grads, adam, cfg.lr, cfg.adam_beta1,
                          cfg.adam_beta2, cfg.adam_eps)
                iter_losses.append(loss)
                epoch_losses.append(loss)

            val_psnr = math.nan
            if cfg.eval_every and val_idx and (epoch + 1) % cfg.eval_every == 0:
                val_psnr = _validate(patchset, val_idx, params, cfg)
            done = (epoch + 1) * cfg.iters_per_epoch
            row = (epoch + 1, done, float(np.mean(epoch_losses)), val_psnr,
                   time.perf_counter() - started)
            epoch_rows.append(row)
            log_fh.write(f"{row[0]}\t{row[1]}\t{row[2]:.8e}\t{row[3]:.4f}\t"
                         f"{row[4]:.2f}\n")
            log_fh.flush()
            if log is not None:
                log(f"epoch {row[0]}/{cfg.total_epochs}: loss {row[2]:.6f} "
                    f"val_psnr {row[3]:.2f}")
            path = os.path.join(out_dir, f"epoch_{epoch + 1:04d}.ckpt")
            save_checkpoint(path, Checkpoint(
                config=cfg.model, params=params, adam=adam, epoch=epoch + 1,
                iteration=done, seed=cfg.seed))
            ckpt_paths.append(path)
    finally:
        log_fh.close()
    return TrainResult(params=params, adam=adam, iter_losses=iter_losses,
                       epoch_rows=epoch_rows, checkpoint_paths=ckpt_paths)


def ablation_variants(res_blocks=(6, 12, 18, 24), skips=(True, False)):
    return [(b, s) for b in res_blocks for s in skips]


def run_ablation(base: TrainConfig, variants, patchset: PatchSet, out_dir,
                 log=None) -> dict[str, TrainResult]:
    """Train each (res_blocks, skip_connections) variant under identical
    seeds and data; writes one per-iteration PSNR curve file per variant."""
    os.makedirs(out_dir, exist_ok=True)
    results: dict[str, TrainResult] = {}
    for blocks, skip in variants:
        name = f"blocks{blocks}_{'skip' if skip else 'noskip'}"
        cfg = replace(base, model=replace(base.model, res_blocks=blocks,
                                          skip_connections=skip))
        result = train(cfg, patchset, os.path.join(out_dir, name), log=log)
        results[name] = result
        curve = os.path.join(out_dir, f"curve_{name}.tsv")
        with open(curve, "w", encoding="utf-8") as fh:
            fh.write("# iter\tloss\tpsnr_db\n")
            for i, (loss, p) in enumerate(zip(result.iter_losses,
                                              result.psnr_history), start=1):
                fh.write(f"{i}\t{loss:.8e}\t{p:.4f}\n")
    return results

"""Shared training-loop plumbing: batching, optimization, epoch logging.

Batch order comes from a numpy Generator owned by the loop, so a run is
reproducible from its seed alone regardless of torch's global RNG state.
"""

from __future__ import annotations

import json

import numpy as np
import torch


def to_tensors(x: np.ndarray, y: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
    # copy=True: dataset arrays are read-only, which from_numpy cannot wrap
    return (
        torch.from_numpy(np.array(x, dtype=np.float32, copy=True)),
        torch.from_numpy(np.array(y, dtype=np.int64, copy=True)),
    )


def batch_indices(n: int, batch_size: int, rng: np.random.Generator | None = None):
    """Index chunks covering 0..n-1; a trailing singleton merges into the
    previous chunk so BatchNorm never sees a 1-element batch."""
    if n <= 0:
        raise ValueError("need at least one instance")
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


class EpochLogger:
    """Collects per-epoch records; optionally appends them to a JSONL file."""

    def __init__(self, path=None, **context):
        self.path = path
        self.context = context
        self.records: list[dict] = []

    def log(self, **record):
        row = {**self.context, **record}
        self.records.append(row)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def fit_model(
    step,
    params,
    n: int,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
    seed: int = 0,
    logger: EpochLogger | None = None,
):
    """Run SGD with cosine annealing to zero over ``epochs``.

    ``step(idx)`` receives an index array into the caller's data and returns
    a dict holding at least ``loss`` (a scalar tensor); every other numeric
    entry is averaged over the epoch (weighted by batch size) and logged.
    """
    params = [p for p in params if p.requires_grad]
    if not params:
        raise ValueError("no trainable parameters")
    opt = torch.optim.SGD(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(epochs, 1), eta_min=0.0)
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        sums: dict[str, float] = {}
        seen = 0
        for idx in batch_indices(n, batch_size, rng):
            opt.zero_grad()
            out = step(idx)
            loss = out["loss"]
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            seen += len(idx)
            for k, v in out.items():
                v = float(v.detach()) if torch.is_tensor(v) else float(v)
                sums[k] = sums.get(k, 0.0) + v * len(idx)
        if logger is not None:
            means = {k: v / seen for k, v in sums.items()}
            logger.log(epoch=epoch, lr=sched.get_last_lr()[0], **means)
        sched.step()


@torch.no_grad()
def predict_logits(model, x: np.ndarray, batch_size: int = 256) -> torch.Tensor:
    """Full-dataset forward in inference mode; restores the training flag."""
    was_training = model.training
    model.eval()
    xs = torch.from_numpy(np.array(x, dtype=np.float32, copy=True))
    outs = [model(xs[i : i + batch_size]) for i in range(0, len(xs), batch_size)]
    if was_training:
        model.train()
    return torch.cat(outs)


@torch.no_grad()
def extract_features(model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    was_training = model.training
    model.eval()
    xs = torch.from_numpy(np.array(x, dtype=np.float32, copy=True))
    outs = [model.features(xs[i : i + batch_size]) for i in range(0, len(xs), batch_size)]
    if was_training:
        model.train()
    return torch.cat(outs).numpy()


def cross_entropy_step(model, x: torch.Tensor, y: torch.Tensor):
    """Plain CE step closure over pre-built tensors; reports accuracy."""

    def step(idx):
        xb, yb = x[idx], y[idx]
        logits = model(xb)
        loss = torch.nn.functional.cross_entropy(logits, yb)
        correct = (logits.argmax(1) == yb).float().mean()
        return {"loss": loss, "acc": correct}

    return step

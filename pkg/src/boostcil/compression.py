"""Compression stage: distill the two-branch teacher into one fresh backbone.

The only training signal is a balanced distillation loss: the teacher's
softened class distribution is reweighted per class by inverse effective
number (rare classes count more), renormalized per instance, and matched by
the student under KL. Old-class exemplars are mixup-augmented inside each
batch; mixed inputs carry no hard labels, the teacher scores them directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .boosting import effective_number
from .exceptions import DegenerateCountsError, InvalidProtocolError
from .loops import EpochLogger, fit_model, to_tensors
from .models import CompositeModel, SingleHeadModel


def bkd_weights(class_counts: dict[int, int], num_classes: int, beta: float) -> torch.Tensor:
    """Per-class weights proportional to 1 / effective_number, mean 1.

    Classes with fewer training instances get strictly larger weight for
    beta in (0, 1]. Every class must have at least one instance.
    """
    counts = [class_counts.get(c, 0) for c in range(num_classes)]
    if min(counts) < 1:
        missing = [c for c, n in enumerate(counts) if n < 1]
        raise DegenerateCountsError(f"classes {missing} have no training instances")
    w = torch.tensor([1.0 / effective_number(n, beta) for n in counts], dtype=torch.float32)
    return w / w.mean()


def loss_bkd(teacher_logits, student_logits, weights, temperature: float = 2.0):
    """KL(renormalize(w * softened_teacher) || softened_student) * T^2.

    The teacher is detached; reweighting happens on the probability simplex
    and is followed by per-instance renormalization so the target stays a
    distribution. Unit weights reduce this to plain distillation exactly.
    """
    if teacher_logits.shape != student_logits.shape:
        raise ValueError(
            f"teacher {tuple(teacher_logits.shape)} vs student {tuple(student_logits.shape)}"
        )
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    t = temperature
    p = F.softmax(teacher_logits.detach() / t, dim=-1) * weights
    p = p / p.sum(dim=-1, keepdim=True)
    log_q = F.log_softmax(student_logits / t, dim=-1)
    return F.kl_div(log_q, p, reduction="batchmean") * (t * t)


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def mixup_old(
    x: torch.Tensor,
    y: torch.Tensor,
    num_old: int,
    cfg: MixupConfig,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, int]:
    """Append convex combinations of the batch's old-class instances.

    The k old instances are shuffled into a cycle and each is mixed with its
    successor (no instance pairs with itself), one Beta(alpha, alpha) draw
    per pair, so k old instances yield k mixed samples. Returns the
    augmented batch and the mixed-sample count; fewer than 2 old instances
    means no augmentation.
    """
    if not cfg.enabled:
        return x, 0
    old_idx = torch.nonzero(y < num_old, as_tuple=True)[0].numpy()
    k = len(old_idx)
    if k < 2:
        return x, 0
    order = rng.permutation(old_idx)
    partner = np.roll(order, -1)
    lam = rng.beta(cfg.alpha, cfg.alpha, size=k)
    lam_t = torch.from_numpy(lam).float().reshape(k, *([1] * (x.dim() - 1)))
    mixed = lam_t * x[order] + (1.0 - lam_t) * x[partner]
    return torch.cat([x, mixed]), k


@dataclass
class CompressionConfig:
    beta: float = 0.97
    temperature: float = 2.0
    epochs: int = 20
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 64
    mixup: MixupConfig = field(default_factory=MixupConfig)
    balanced: bool = True
    warm_start: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def train_compression(
    session,
    boosted_model: CompositeModel,
    config: CompressionConfig,
    seed: int = 0,
    logger: EpochLogger | None = None,
) -> SingleHeadModel:
    """Distill the frozen composite into a fresh single-backbone model.

    Only the distillation loss trains the student; accuracy is logged on the
    unmixed portion of each batch. The teacher is never modified.
    """
    if boosted_model.num_seen != session.num_seen:
        raise InvalidProtocolError(
            f"teacher covers {boosted_model.num_seen} classes, session has {session.num_seen}",
            session=session.index,
            stage="compression",
        )
    teacher = boosted_model
    teacher.eval()
    if config.balanced:
        weights = bkd_weights(session.class_counts, session.num_seen, config.beta)
    else:
        weights = torch.ones(session.num_seen)
    student = SingleHeadModel(teacher.old_branch.arch, session.num_seen, seed=seed)
    if config.warm_start:
        student.backbone.load_state_dict(teacher.new_backbone.state_dict())
    x, y = to_tensors(*session.combined())
    mix_rng = np.random.default_rng(None if seed is None else seed + 1)
    student.train()

    def step(idx):
        xb, yb = x[idx], y[idx]
        xb_aug, n_mixed = mixup_old(xb, yb, session.num_old, config.mixup, mix_rng)
        with torch.no_grad():
            teacher_logits = teacher(xb_aug)
        student_logits = student(xb_aug)
        loss = loss_bkd(teacher_logits, student_logits, weights, config.temperature)
        plain = student_logits[: len(xb)]
        acc = (plain.argmax(1) == yb).float().mean()
        skipped = float(config.mixup.enabled and n_mixed == 0)
        return {"loss": loss, "acc": acc, "n_mixed": float(n_mixed), "mixup_skipped": skipped}

    fit_model(
        step,
        student.parameters(),
        len(x),
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        seed=seed,
        logger=logger,
    )
    student.eval()
    return student

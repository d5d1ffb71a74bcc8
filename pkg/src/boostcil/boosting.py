"""Feature-boosting stage: train a new branch to fit what the frozen model misses.

The combined objective is the unit-weight sum of three terms:
  * logit-alignment CE on the composed logits, with the old/new blocks scaled
    by a normalized effective-number pair (gamma_old, gamma_new);
  * feature-enhancement CE on the aux head, forcing the new feature alone to
    separate all seen classes;
  * distillation KL tying the composed old-class block to the frozen model's
    output distribution, temperature-softened and scaled by T^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .exceptions import DegenerateCountsError, InvalidProtocolError
from .loops import EpochLogger, fit_model, to_tensors
from .models import CompositeModel, SingleHeadModel, expand

GAMMA_MODES = ("mean", "sum")


def effective_number(n: float, beta: float) -> float:
    """Effective sample count: (1 - beta^n) / (1 - beta), with the beta=1
    limit equal to n. Flat at E_0 = 0."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if n < 0:
        raise ValueError("count must be nonnegative")
    if beta == 1.0:
        return float(n)
    return (1.0 - beta**n) / (1.0 - beta)


@dataclass(frozen=True)
class GammaPair:
    """Per-block logit scales; normalized so the pair sums to one."""

    gamma_old: float
    gamma_new: float


def gamma_factors(n_old: float, n_new: float, beta: float) -> GammaPair:
    """Normalized effective-number pair from one representative count per side."""
    e_old = effective_number(n_old, beta)
    e_new = effective_number(n_new, beta)
    if e_old + e_new == 0.0:
        raise DegenerateCountsError("both sides have zero effective count")
    return GammaPair(e_old / (e_old + e_new), e_new / (e_old + e_new))


def gamma_from_counts(
    class_counts: dict[int, int],
    num_old: int,
    num_seen: int,
    beta: float,
    mode: str = "mean",
) -> GammaPair:
    """Aggregate per-class training counts into one gamma pair.

    ``mean`` feeds the mean per-class count of each side through the
    effective-number map; ``sum`` sums per-class effective numbers per side.
    """
    if mode not in GAMMA_MODES:
        raise ValueError(f"unknown gamma mode {mode!r}")
    old = [class_counts.get(c, 0) for c in range(num_old)]
    new = [class_counts.get(c, 0) for c in range(num_old, num_seen)]
    if not old or not new:
        raise DegenerateCountsError("need at least one old and one new class")
    if mode == "mean":
        return gamma_factors(sum(old) / len(old), sum(new) / len(new), beta)
    e_old = sum(effective_number(n, beta) for n in old)
    e_new = sum(effective_number(n, beta) for n in new)
    if e_old + e_new == 0.0:
        raise DegenerateCountsError("both sides have zero effective count")
    return GammaPair(e_old / (e_old + e_new), e_new / (e_old + e_new))


def aligned_logits(logits: torch.Tensor, num_old: int, gamma: GammaPair) -> torch.Tensor:
    """Scale the old-class block by gamma_old and the rest by gamma_new."""
    if not 1 <= num_old < logits.shape[-1]:
        raise ValueError(f"num_old {num_old} out of range for {logits.shape[-1]} logits")
    scale = torch.ones(logits.shape[-1], dtype=logits.dtype)
    scale[:num_old] = gamma.gamma_old
    scale[num_old:] = gamma.gamma_new
    return logits * scale


def loss_la(composed_logits, targets, num_old: int, gamma: GammaPair):
    """CE on block-scaled logits; equals KL(one-hot || softmax(scaled))."""
    if targets.min() < 0 or targets.max() >= composed_logits.shape[-1]:
        raise ValueError("target outside the seen-class range")
    return F.cross_entropy(aligned_logits(composed_logits, num_old, gamma), targets)


def loss_fe(aux_logits, targets):
    if targets.min() < 0 or targets.max() >= aux_logits.shape[-1]:
        raise ValueError("target outside the seen-class range")
    return F.cross_entropy(aux_logits, targets)


def loss_kd(teacher_logits, student_logits, temperature: float = 2.0):
    """KL(softened teacher || softened student) * T^2, teacher detached.

    Mean over the batch, sum over classes.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if teacher_logits.shape != student_logits.shape:
        raise ValueError(
            f"teacher {tuple(teacher_logits.shape)} vs student {tuple(student_logits.shape)}"
        )
    t = temperature
    soft_teacher = F.softmax(teacher_logits.detach() / t, dim=-1)
    log_student = F.log_softmax(student_logits / t, dim=-1)
    return F.kl_div(log_student, soft_teacher, reduction="batchmean") * (t * t)


@dataclass
class BoostingConfig:
    beta: float = 0.97
    temperature: float = 2.0
    epochs: int = 20
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    o_strategy: str = "zero"
    gamma_mode: str = "mean"
    align_logits: bool = True
    enable_fe: bool = True
    enable_kd: bool = True

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def boosting_loss(
    model: CompositeModel,
    xb: torch.Tensor,
    yb: torch.Tensor,
    gamma: GammaPair,
    config: BoostingConfig,
):
    """Total loss plus per-term breakdown for one batch; a single forward
    of each branch serves all three terms."""
    if len(xb) == 0:
        raise ValueError("empty batch")
    old_logits, old_feat, new_feat = model.forward_parts(xb)
    composed = model.compose(old_logits, old_feat, new_feat)
    la = loss_la(composed, yb, model.num_old, gamma)
    total = la
    breakdown = {"loss_la": la}
    if config.enable_fe:
        fe = loss_fe(model.aux_logits(new_feat), yb)
        total = total + fe
        breakdown["loss_fe"] = fe
    if config.enable_kd:
        kd = loss_kd(old_logits, composed[:, : model.num_old], config.temperature)
        total = total + kd
        breakdown["loss_kd"] = kd
    acc = (composed.argmax(1) == yb).float().mean()
    return total, {**breakdown, "acc": acc}


def train_boosting(
    session,
    prev_model: SingleHeadModel,
    config: BoostingConfig,
    seed: int = 0,
    logger: EpochLogger | None = None,
) -> CompositeModel:
    """Boost ``prev_model`` with a fresh branch on the session's data.

    Deterministic given the seed: branch init and batch order both derive
    from it. The gamma pair is computed once, from the session's combined
    class counts.
    """
    if prev_model.num_classes != session.num_old:
        raise InvalidProtocolError(
            f"model covers {prev_model.num_classes} classes, session expects {session.num_old}",
            session=session.index,
            stage="boosting",
        )
    model = expand(prev_model, len(session.new_classes), config.o_strategy, init_seed=seed)
    if config.align_logits:
        gamma = gamma_from_counts(
            session.class_counts, model.num_old, model.num_seen, config.beta, config.gamma_mode
        )
    else:
        gamma = GammaPair(1.0, 1.0)
    x, y = to_tensors(*session.combined())
    model.train()

    def step(idx):
        total, terms = boosting_loss(model, x[idx], y[idx], gamma, config)
        return {"loss": total, **terms}

    fit_model(
        step,
        model.parameters(),
        len(x),
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        seed=seed,
        logger=logger,
    )
    model.eval()
    return model

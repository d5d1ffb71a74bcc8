"""Comparison methods: naive fine-tuning, rehearsal replay, weight alignment,
and unweighted distillation compression.

All of them consume the same sessions and memory policy as the main method,
so accuracy differences come from the learning rule alone.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass

import torch

from .compression import CompressionConfig, MixupConfig, train_compression
from .exceptions import DegenerateCountsError, InvalidProtocolError
from .loops import EpochLogger, cross_entropy_step, fit_model, to_tensors
from .models import (
    CompositeModel,
    LinearHead,
    SingleHeadModel,
    SplitColumnHead,
    _seeded,
)


@dataclass
class BaselineConfig:
    epochs: int = 20
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def train_plain(
    arch: dict,
    session,
    config: BaselineConfig,
    seed: int = 0,
    logger: EpochLogger | None = None,
) -> SingleHeadModel:
    """Supervised training from scratch on the session's combined data.

    This is also session 0 of every incremental method.
    """
    model = SingleHeadModel(arch, session.num_seen, seed=seed)
    x, y = to_tensors(*session.combined())
    model.train()
    fit_model(
        cross_entropy_step(model, x, y),
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


def train_finetune(
    session,
    prev_model: SingleHeadModel,
    config: BaselineConfig,
    seed: int = 0,
    logger: EpochLogger | None = None,
) -> SingleHeadModel:
    """Continue training on the new classes only; old classifier columns frozen.

    The backbone keeps adapting, which is exactly what makes old classes
    collapse. Returns a model whose old columns are bit-identical to the
    previous model's.
    """
    if prev_model.num_classes != session.num_old:
        raise InvalidProtocolError(
            f"model covers {prev_model.num_classes} classes, session expects {session.num_old}",
            session=session.index,
            stage="finetune",
        )
    model = copy.deepcopy(prev_model)
    for p in model.parameters():
        p.requires_grad_(True)
    with _seeded(seed):
        model.head = SplitColumnHead(model.head.weight, len(session.new_classes))
    x, y = to_tensors(session.new_x, session.new_y)
    model.train()
    fit_model(
        cross_entropy_step(model, x, y),
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
    merged = LinearHead(model.feature_dim, session.num_seen)
    with torch.no_grad():
        merged.weight.copy_(model.head.merged_weight())
    model.head = merged
    return model


def train_replay(
    session,
    prev_model: SingleHeadModel,
    config: BaselineConfig,
    seed: int = 0,
    logger: EpochLogger | None = None,
) -> SingleHeadModel:
    """Continue training on new data plus rehearsal memory; everything trains."""
    if prev_model.num_classes != session.num_old:
        raise InvalidProtocolError(
            f"model covers {prev_model.num_classes} classes, session expects {session.num_old}",
            session=session.index,
            stage="replay",
        )
    model = copy.deepcopy(prev_model)
    for p in model.parameters():
        p.requires_grad_(True)
    with _seeded(seed):
        grown = LinearHead(model.feature_dim, session.num_seen)
    with torch.no_grad():
        grown.weight[:, : session.num_old].copy_(model.head.weight)
    model.head = grown
    x, y = to_tensors(*session.combined())
    model.train()
    fit_model(
        cross_entropy_step(model, x, y),
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


def weight_align(weight: torch.Tensor, num_old: int) -> tuple[torch.Tensor, float]:
    """Scale new-class columns so their mean L2 norm matches the old ones.

    ``weight`` is (feature_dim, num_classes); returns the aligned copy and
    the scale applied. Intra-group prediction order is unchanged.
    """
    if not 1 <= num_old < weight.shape[1]:
        raise ValueError(f"num_old {num_old} out of range for {weight.shape[1]} columns")
    norms = weight.norm(dim=0)
    mean_new = norms[num_old:].mean()
    if float(mean_new) == 0.0:
        raise DegenerateCountsError("new-class columns have zero mean norm")
    gamma = float(norms[:num_old].mean() / mean_new)
    aligned = weight.clone()
    aligned[:, num_old:] *= gamma
    return aligned, gamma


def apply_weight_align(model, num_old: int) -> float:
    """In-place column alignment for a single-head or composite model."""
    if isinstance(model, SingleHeadModel):
        with torch.no_grad():
            aligned, gamma = weight_align(model.head.weight, num_old)
            model.head.weight.copy_(aligned)
        return gamma
    if isinstance(model, CompositeModel):
        # columns of the full block matrix: old = [w_old; w_o], new = [o; w_n]
        big = torch.cat(
            [
                torch.cat([model.old_branch.head.weight, model.o_matrix], dim=1),
                torch.cat([model.w_o, model.w_n], dim=1),
            ],
            dim=0,
        )
        with torch.no_grad():
            _, gamma = weight_align(big, num_old)
            model.w_n *= gamma
            if isinstance(model.o_matrix, torch.nn.Parameter):
                model.o_matrix *= gamma
            if model.strategy == "zero_bias":
                model.o_bias *= gamma
        return gamma
    raise ValueError(f"cannot align {type(model).__name__}")


def plain_kd_compress(
    session,
    boosted_model: CompositeModel,
    config: CompressionConfig,
    seed: int = 0,
    logger: EpochLogger | None = None,
) -> SingleHeadModel:
    """Compression with unit class weights and no mixup; same loss path."""
    plain = dataclasses.replace(
        config, balanced=False, mixup=MixupConfig(alpha=config.mixup.alpha, enabled=False)
    )
    return train_compression(session, boosted_model, plain, seed=seed, logger=logger)

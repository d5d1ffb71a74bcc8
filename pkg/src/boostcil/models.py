"""Model cores: single-backbone classifiers and the two-branch composite.

The composite model keeps the previous session's network frozen and grows a
trainable twin branch.  Its classifier is a 2x2 block matrix over the
concatenated feature [old_feat; new_feat]:

    upper (old classes) = old_logits + new_feat @ w_o
    lower (new classes) = old_feat @ o_matrix + new_feat @ w_n (+ bias)

The lower-left block ``o_matrix`` follows one of three strategies: a frozen
zero buffer ("zero"), a frozen zero buffer plus a trainable per-new-class
bias ("zero_bias"), or a fully trainable matrix ("trainable").
"""

from __future__ import annotations

import copy
import hashlib
from contextlib import contextmanager

import torch
import torch.nn as nn

O_STRATEGIES = ("zero", "zero_bias", "trainable")

CHECKPOINT_VERSION = 1


@contextmanager
def _seeded(seed: int | None):
    """Run module construction under a forked, seeded torch RNG."""
    if seed is None:
        yield
        return
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        yield


def _fan_in_init(rows: int, cols: int) -> torch.Tensor:
    # standard fan-in scaling; rows is the feature dimension
    return torch.randn(rows, cols) / rows**0.5


class MLPBackbone(nn.Module):
    """Flatten -> [Linear, BatchNorm, ReLU] stack ending at feature_dim."""

    def __init__(self, input_shape, hidden_dims, feature_dim):
        super().__init__()
        in_dim = 1
        for s in input_shape:
            in_dim *= s
        dims = [in_dim] + list(hidden_dims) + [feature_dim]
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.BatchNorm1d(b), nn.ReLU()]
        self.net = nn.Sequential(*layers)
        self.feature_dim = feature_dim

    def forward(self, x):
        return self.net(x.flatten(1))


class ConvBackbone(nn.Module):
    """Two conv stages with pooling, then a linear projection to feature_dim."""

    def __init__(self, input_shape, channels, feature_dim):
        super().__init__()
        c_in = input_shape[0]
        blocks = []
        for c_out in channels:
            blocks += [
                nn.Conv2d(c_in, c_out, 3, padding=1),
                nn.BatchNorm2d(c_out),
                nn.ReLU(),
                nn.MaxPool2d(2),
            ]
            c_in = c_out
        self.conv = nn.Sequential(*blocks)
        pool = 2 ** len(channels)
        flat = c_in * (input_shape[1] // pool) * (input_shape[2] // pool)
        self.proj = nn.Sequential(
            nn.Linear(flat, feature_dim), nn.BatchNorm1d(feature_dim), nn.ReLU()
        )
        self.feature_dim = feature_dim

    def forward(self, x):
        return self.proj(self.conv(x).flatten(1))


def build_backbone(arch: dict, seed: int | None = None) -> nn.Module:
    """Construct a backbone from an architecture descriptor, deterministically."""
    kind = arch.get("arch", "mlp")
    with _seeded(seed):
        if kind == "mlp":
            return MLPBackbone(
                arch["input_shape"], arch.get("hidden_dims", [64]), arch["feature_dim"]
            )
        if kind == "cnn":
            return ConvBackbone(
                arch["input_shape"], arch.get("channels", [16, 32]), arch["feature_dim"]
            )
    raise ValueError(f"unknown backbone arch {kind!r}")


class LinearHead(nn.Module):
    """Bias-free linear classifier; weight is (feature_dim, num_classes)."""

    def __init__(self, feature_dim: int, num_classes: int):
        super().__init__()
        self.weight = nn.Parameter(_fan_in_init(feature_dim, num_classes))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def forward(self, features):
        return features @ self.weight


class SplitColumnHead(nn.Module):
    """Linear head whose old-class columns are frozen exactly.

    The old columns live in a buffer so no optimizer (or weight decay) can
    touch them; only the new columns train.
    """

    def __init__(self, old_weight: torch.Tensor, num_new: int):
        super().__init__()
        self.register_buffer("old_weight", old_weight.detach().clone())
        self.new_weight = nn.Parameter(_fan_in_init(old_weight.shape[0], num_new))

    @property
    def num_classes(self) -> int:
        return self.old_weight.shape[1] + self.new_weight.shape[1]

    def merged_weight(self) -> torch.Tensor:
        return torch.cat([self.old_weight, self.new_weight], dim=1)

    def forward(self, features):
        return features @ self.merged_weight()


class SingleHeadModel(nn.Module):
    """One backbone, one linear head; the shape every session ends in."""

    def __init__(self, arch: dict, num_classes: int, seed: int | None = None):
        super().__init__()
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.arch = dict(arch)
        with _seeded(seed):
            self.backbone = build_backbone(arch)
            self.head = LinearHead(self.backbone.feature_dim, num_classes)

    @property
    def num_classes(self) -> int:
        return self.head.num_classes

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    def features(self, x):
        return self.backbone(x)

    def forward(self, x):
        return self.head(self.backbone(x))


class CompositeModel(nn.Module):
    """Frozen previous model plus a trainable twin branch and block classifier.

    ``forward_parts`` runs the frozen branch under no_grad and returns every
    tensor the losses need, so one forward serves the whole loss.  The aux
    head maps the new feature to all seen classes and is used only by the
    feature-enhancement loss, never at evaluation.
    """

    def __init__(
        self,
        prev_model: SingleHeadModel,
        num_new: int,
        strategy: str = "zero",
        init_seed: int | None = None,
    ):
        super().__init__()
        if num_new < 1:
            raise ValueError("num_new must be >= 1")
        if strategy not in O_STRATEGIES:
            raise ValueError(f"unknown lower-block strategy {strategy!r}")
        self.strategy = strategy
        self.num_old = prev_model.num_classes
        self.num_new = num_new
        self.old_branch = freeze(copy.deepcopy(prev_model))
        d = prev_model.feature_dim
        with _seeded(init_seed):
            self.new_backbone = build_backbone(prev_model.arch)
            self.w_o = nn.Parameter(_fan_in_init(d, self.num_old))
            self.w_n = nn.Parameter(_fan_in_init(d, num_new))
            self.w_aux = nn.Parameter(_fan_in_init(d, self.num_old + num_new))
        if strategy == "trainable":
            self.o_matrix = nn.Parameter(torch.zeros(d, num_new))
        else:
            self.register_buffer("o_matrix", torch.zeros(d, num_new))
        if strategy == "zero_bias":
            self.o_bias = nn.Parameter(torch.zeros(num_new))

    @property
    def num_seen(self) -> int:
        return self.num_old + self.num_new

    @property
    def feature_dim(self) -> int:
        return self.new_backbone.feature_dim

    def train(self, mode: bool = True):
        # the frozen branch must keep normalization in inference mode
        super().train(mode)
        self.old_branch.eval()
        return self

    def forward_parts(self, x):
        """(old_logits, old_feat, new_feat); frozen branch never sees gradients."""
        with torch.no_grad():
            old_feat = self.old_branch.features(x)
            old_logits = self.old_branch.head(old_feat)
        return old_logits, old_feat, self.new_backbone(x)

    def compose(self, old_logits, old_feat, new_feat):
        upper = old_logits + new_feat @ self.w_o
        lower = old_feat @ self.o_matrix + new_feat @ self.w_n
        if self.strategy == "zero_bias":
            lower = lower + self.o_bias
        return torch.cat([upper, lower], dim=-1)

    def forward(self, x):
        return self.compose(*self.forward_parts(x))

    def aux_logits(self, new_feat):
        return new_feat @ self.w_aux

    def old_branch_logits(self, x):
        with torch.no_grad():
            return self.old_branch(x)


def expand(
    prev_model: SingleHeadModel,
    num_new: int,
    strategy: str = "zero",
    init_seed: int | None = None,
) -> CompositeModel:
    """Grow a frozen copy of ``prev_model`` into a trainable composite."""
    return CompositeModel(prev_model, num_new, strategy, init_seed)


def freeze(model: nn.Module) -> nn.Module:
    """Stop gradient flow and switch normalization to inference mode. Idempotent."""
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    return model


def parameter_count(model: nn.Module) -> tuple[int, int]:
    """(trainable, total) parameter counts."""
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    total = sum(p.numel() for p in model.parameters())
    return trainable, total


def state_checksum(module: nn.Module, keys=None) -> str:
    """sha256 over the state dict (parameters and buffers), order-independent.

    ``keys`` restricts the hash to state entries whose name starts with any
    of the given prefixes.
    """
    h = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        if keys is not None and not any(name.startswith(k) for k in keys):
            continue
        t = state[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, model: nn.Module, **meta):
    """Versioned checkpoint: enough to rebuild the model or serve as an oracle."""
    if isinstance(model, CompositeModel):
        payload = {
            "kind": "composite",
            "arch": model.old_branch.arch,
            "num_old": model.num_old,
            "num_new": model.num_new,
            "strategy": model.strategy,
        }
    elif isinstance(model, SingleHeadModel):
        payload = {"kind": "single", "arch": model.arch, "num_classes": model.num_classes}
    else:
        raise ValueError(f"cannot checkpoint {type(model).__name__}")
    payload.update(version=CHECKPOINT_VERSION, state=model.state_dict(), meta=meta)
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[nn.Module, dict]:
    payload = torch.load(path, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    if payload["kind"] == "single":
        model = SingleHeadModel(payload["arch"], payload["num_classes"])
    else:
        prev = SingleHeadModel(payload["arch"], payload["num_old"])
        model = CompositeModel(prev, payload["num_new"], payload["strategy"])
    model.load_state_dict(payload["state"])
    return model, payload["meta"]

"""Incremental task streams and rehearsal memory.

A protocol slices a dataset's classes into sessions (an optional base
session followed by fixed-size steps).  Labels are remapped to *learning
order*: the class at position ``p`` of the class order becomes label ``p``,
so every session's label space is a contiguous prefix ``0..num_seen-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidProtocolError, MissingDataError


@dataclass(frozen=True)
class ClassOrder:
    """Bijection between learning order and original class ids."""

    permutation: tuple[int, ...]
    seed: int | None = None

    def __post_init__(self):
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise InvalidProtocolError("permutation must be a bijection on 0..C-1")


def build_class_order(num_classes: int, seed: int | None = None) -> ClassOrder:
    """Deterministic class permutation; ``seed=None`` keeps the canonical order."""
    if num_classes < 2:
        raise InvalidProtocolError("need at least 2 classes")
    if seed is None:
        perm = tuple(range(num_classes))
    else:
        perm = tuple(int(c) for c in np.random.default_rng(seed).permutation(num_classes))
    return ClassOrder(permutation=perm, seed=seed)


@dataclass(frozen=True)
class Protocol:
    """Session layout plus rehearsal budget policy.

    ``base_classes=0`` starts from scratch; a positive value trains that many
    classes in session 0 and then adds ``classes_per_step`` per session.
    ``memory_policy`` is ``"fixed_total"`` (budget shared by all seen classes)
    or ``"per_class"`` (budget is a per-class count).
    """

    base_classes: int
    classes_per_step: int
    memory_policy: str = "fixed_total"
    memory_budget: int = 2000

    def __post_init__(self):
        if self.memory_policy not in ("fixed_total", "per_class"):
            raise InvalidProtocolError(f"unknown memory policy {self.memory_policy!r}")
        if self.memory_budget <= 0:
            raise InvalidProtocolError("memory budget must be positive")
        if self.base_classes < 0 or self.classes_per_step < 0:
            raise InvalidProtocolError("class counts must be nonnegative")

    @property
    def kind(self) -> str:
        return f"B{self.base_classes}"

    def session_sizes(self, num_classes: int) -> list[int]:
        """Class count per session; validates the layout covers the dataset."""
        if self.base_classes > num_classes:
            raise InvalidProtocolError("base_classes exceeds dataset classes")
        rest = num_classes - self.base_classes
        if rest == 0:
            if self.base_classes == 0:
                raise InvalidProtocolError("empty protocol")
            raise InvalidProtocolError("protocol needs at least one incremental step")
        if self.classes_per_step <= 0 or rest % self.classes_per_step != 0:
            raise InvalidProtocolError(
                f"{rest} classes not divisible into steps of {self.classes_per_step}"
            )
        sizes = [self.classes_per_step] * (rest // self.classes_per_step)
        if self.base_classes > 0:
            sizes.insert(0, self.base_classes)
        return sizes


@dataclass(frozen=True)
class SessionData:
    """One incremental session: new data, rehearsal memory, cumulative test set.

    Labels are in learning order.  Arrays are read-only; ``class_counts``
    covers the combined training set D_t u V_t.
    """

    index: int
    new_classes: tuple[int, ...]
    num_seen: int
    new_x: np.ndarray
    new_y: np.ndarray
    mem_x: np.ndarray
    mem_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    class_counts: dict[int, int] = field(repr=False)

    def __post_init__(self):
        for arr in (self.new_x, self.new_y, self.mem_x, self.mem_y, self.test_x, self.test_y):
            arr.setflags(write=False)

    @property
    def num_old(self) -> int:
        return self.num_seen - len(self.new_classes)

    def combined(self) -> tuple[np.ndarray, np.ndarray]:
        """D_t u V_t: new-session data followed by memory exemplars."""
        if len(self.mem_y) == 0:
            return self.new_x, self.new_y
        return (
            np.concatenate([self.new_x, self.mem_x]),
            np.concatenate([self.new_y, self.mem_y]),
        )


class TaskStream:
    """Sessionized view of a dataset under a protocol and class order."""

    def __init__(self, dataset, protocol: Protocol, order: ClassOrder):
        if len(order.permutation) != dataset.num_classes:
            raise InvalidProtocolError("class order does not match dataset class count")
        self.dataset = dataset
        self.protocol = protocol
        self.order = order
        sizes = protocol.session_sizes(dataset.num_classes)
        bounds = np.cumsum([0] + sizes)
        self.session_classes = [
            tuple(range(bounds[i], bounds[i + 1])) for i in range(len(sizes))
        ]
        # original label -> learning-order label
        self._remap = np.empty(dataset.num_classes, dtype=np.int64)
        for pos, orig in enumerate(order.permutation):
            self._remap[orig] = pos

    @property
    def num_sessions(self) -> int:
        return len(self.session_classes)

    def _select(self, x, y, classes):
        remapped = self._remap[y]
        mask = np.isin(remapped, classes)
        return x[mask].copy(), remapped[mask].copy()

    def session(self, t: int, memory: "ExemplarMemory | None" = None) -> SessionData:
        """Materialize session ``t`` with the current rehearsal memory."""
        if not 0 <= t < self.num_sessions:
            raise InvalidProtocolError(f"session {t} out of range")
        new_classes = self.session_classes[t]
        num_seen = new_classes[-1] + 1
        new_x, new_y = self._select(self.dataset.train_x, self.dataset.train_y, new_classes)
        test_x, test_y = self._select(
            self.dataset.test_x, self.dataset.test_y, tuple(range(num_seen))
        )
        if memory is not None and memory.total() > 0:
            mem_x, mem_y = memory.get_all()
            if mem_y.max(initial=-1) >= new_classes[0]:
                raise InvalidProtocolError("memory holds classes not yet seen")
        else:
            mem_x = np.empty((0,) + new_x.shape[1:], dtype=new_x.dtype)
            mem_y = np.empty(0, dtype=np.int64)
        counts_y = np.concatenate([new_y, mem_y])
        classes, counts = np.unique(counts_y, return_counts=True)
        return SessionData(
            index=t,
            new_classes=new_classes,
            num_seen=num_seen,
            new_x=new_x,
            new_y=new_y,
            mem_x=mem_x,
            mem_y=mem_y,
            test_x=test_x,
            test_y=test_y,
            class_counts={int(c): int(n) for c, n in zip(classes, counts)},
        )


def build_stream(dataset, protocol: Protocol, order: ClassOrder) -> TaskStream:
    return TaskStream(dataset, protocol, order)


def herding_select(feature_vectors: np.ndarray, m: int) -> list[int]:
    """Greedy mean-matching selection of ``m`` rows, in selection order.

    At each step the candidate whose inclusion brings the mean of the
    selected set closest (Euclidean) to the mean of all vectors is taken;
    ties go to the lowest index.  The result for ``m`` is always a prefix
    of the result for ``m' > m``.
    """
    vectors = np.asarray(feature_vectors, dtype=np.float64)
    n = len(vectors)
    if m > n:
        raise ValueError(f"cannot select {m} of {n} vectors")
    if not np.all(np.isfinite(vectors)):
        raise FloatingPointError("herding features must be finite")
    target = vectors.mean(axis=0)
    selected: list[int] = []
    remaining = np.ones(n, dtype=bool)
    running_sum = np.zeros_like(target)
    for k in range(1, m + 1):
        # distance from target to the mean including each remaining candidate
        candidate_means = (running_sum + vectors) / k
        dist = np.linalg.norm(candidate_means - target, axis=1)
        dist[~remaining] = np.inf
        pick = int(np.argmin(dist))  # argmin takes the lowest index on ties
        selected.append(pick)
        remaining[pick] = False
        running_sum += vectors[pick]
    return selected


def _l2_normalize(features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    return features / np.maximum(norms, 1e-12)


class ExemplarMemory:
    """Budgeted per-class store of old-class instances in selection order."""

    def __init__(self, policy: str = "fixed_total", budget: int = 2000, selection: str = "herding"):
        if policy not in ("fixed_total", "per_class"):
            raise InvalidProtocolError(f"unknown memory policy {policy!r}")
        if selection not in ("herding", "random"):
            raise ValueError(f"unknown selection strategy {selection!r}")
        self.policy = policy
        self.budget = budget
        self.selection = selection
        self._store: dict[int, np.ndarray] = {}

    def classes(self) -> list[int]:
        return sorted(self._store)

    def count(self, cls: int) -> int:
        return len(self._store.get(cls, ()))

    def total(self) -> int:
        return sum(len(v) for v in self._store.values())

    def get_all(self) -> tuple[np.ndarray, np.ndarray]:
        """All exemplars, class-major in ascending class order."""
        if not self._store:
            raise MissingDataError("memory is empty")
        xs, ys = [], []
        for c in self.classes():
            xs.append(self._store[c])
            ys.append(np.full(len(self._store[c]), c, dtype=np.int64))
        return np.concatenate(xs), np.concatenate(ys)

    def quota(self, num_seen: int) -> list[int]:
        """Per-class quotas for ``num_seen`` classes under the budget policy.

        fixed_total splits the budget evenly; remainder exemplars go one
        each to the lowest class ids, so the total is budget-exact.
        """
        if self.policy == "per_class":
            return [self.budget] * num_seen
        base, extra = divmod(self.budget, num_seen)
        return [base + (1 if c < extra else 0) for c in range(num_seen)]

    def state(self) -> dict:
        return {
            "policy": self.policy,
            "budget": self.budget,
            "selection": self.selection,
            "store": {int(c): v.copy() for c, v in self._store.items()},
        }

    @classmethod
    def from_state(cls, state: dict) -> "ExemplarMemory":
        memory = cls(state["policy"], state["budget"], state["selection"])
        memory._store = {int(c): np.asarray(v) for c, v in state["store"].items()}
        return memory


def update_memory(
    memory: ExemplarMemory,
    features_fn,
    new_x: np.ndarray,
    new_y: np.ndarray,
    new_classes,
    num_seen: int,
    rng: np.random.Generator | None = None,
) -> ExemplarMemory:
    """Rebuild memory after a session: herd the new classes, truncate the old.

    ``features_fn`` maps an instance array to per-row feature vectors from
    the current (post-session) model; herding runs on L2-normalized features.
    Old classes keep the prefix of their stored selection order.  Returns a
    new memory; the input is untouched.
    """
    updated = ExemplarMemory(memory.policy, memory.budget, memory.selection)
    quota = updated.quota(num_seen)
    for c in memory.classes():
        kept = memory._store[c][: quota[c]]
        if len(kept):
            updated._store[c] = kept.copy()
    for c in new_classes:
        instances = new_x[new_y == c]
        if len(instances) == 0:
            raise MissingDataError(f"class {c} has no instances to store")
        take = min(quota[c], len(instances))
        if take == 0:
            continue
        if memory.selection == "herding":
            feats = _l2_normalize(np.asarray(features_fn(instances), dtype=np.float64))
            order = herding_select(feats, take)
        else:
            if rng is None:
                raise ValueError("random selection needs an rng")
            order = rng.permutation(len(instances))[:take].tolist()
        updated._store[int(c)] = instances[order].copy()
    return updated

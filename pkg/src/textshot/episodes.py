"""Class splits and N-way K-shot episode sampling.

Episodes are self-contained tasks: a support set of N*K labeled instances
(local labels 0..N-1 assigned in class-sampling order, K consecutive
entries per class) and a balanced query set of B instances (B/N per class,
grouped by class). Support and query never share an instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import MultimodalDataset, MultimodalInstance

_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = 0xFFFFFFFFFFFFFFFF


class SamplingError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ClassSplit:
    """Disjoint partition of a dataset's classes into meta-train/val/test."""

    train_classes: frozenset
    val_classes: frozenset
    test_classes: frozenset

    def __post_init__(self):
        pairs = [
            (self.train_classes, self.val_classes),
            (self.train_classes, self.test_classes),
            (self.val_classes, self.test_classes),
        ]
        if any(a & b for a, b in pairs):
            raise ConfigurationError("split class sets must be pairwise disjoint")


@dataclass(frozen=True)
class Episode:
    """One N-way K-shot task with a balanced query set of size B."""

    support: tuple  # of (MultimodalInstance, local_label)
    query: tuple  # of (MultimodalInstance, local_label)
    n_way: int
    k_shot: int
    query_size: int

    def __post_init__(self):
        n, k, b = self.n_way, self.k_shot, self.query_size
        if len(self.support) != n * k:
            raise SamplingError(f"support size {len(self.support)} != N*K = {n * k}")
        if len(self.query) != b:
            raise SamplingError(f"query size {len(self.query)} != B = {b}")
        support_counts = np.bincount([lbl for _, lbl in self.support], minlength=n)
        if not np.all(support_counts == k):
            raise SamplingError("support labels are not balanced K per class")
        if b % n != 0:
            raise SamplingError(f"query size {b} not divisible by N = {n}")
        query_counts = np.bincount([lbl for _, lbl in self.query], minlength=n)
        if not np.all(query_counts == b // n):
            raise SamplingError("query labels are not balanced B/N per class")
        support_ids = {inst.instance_id for inst, _ in self.support}
        query_ids = {inst.instance_id for inst, _ in self.query}
        if support_ids & query_ids:
            raise SamplingError("support and query share instance ids")


def splitmix64(base_seed: int, index: int) -> int:
    """Order-independent 64-bit seed for episode `index` under `base_seed`.

    splitmix64 finalizer applied to base_seed + (index+1) * golden ratio;
    episode i gets the same seed no matter how many episodes were sampled
    before it, which is what makes parallel evaluation reproducible.
    """
    z = (int(base_seed) + (int(index) + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def episode_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(splitmix64(base_seed, index))


def make_class_split(class_ids, counts, seed: int) -> ClassSplit:
    """Deterministically partition `class_ids` into (train, val, test) sets.

    counts = (n_train, n_val, n_test) and must sum to len(class_ids).
    """
    n_train, n_val, n_test = counts
    ids = sorted(class_ids)
    if n_train + n_val + n_test != len(ids):
        raise ConfigurationError(
            f"split counts {counts} do not sum to the {len(ids)} available classes"
        )
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    return ClassSplit(
        train_classes=frozenset(order[:n_train]),
        val_classes=frozenset(order[n_train : n_train + n_val]),
        test_classes=frozenset(order[n_train + n_val :]),
    )


def sample_episode(
    dataset: MultimodalDataset,
    classes,
    n_way: int,
    k_shot: int,
    query_size: int,
    rng: np.random.Generator,
) -> Episode:
    """Sample one episode from `classes`, without replacement within a class.

    Per class the generator draws one permutation of that class's instances;
    the first K become support and the next B/N become queries. Increasing B
    therefore extends the query set of the same episode instead of reshuffling
    it, and support/query disjointness holds by construction.
    """
    if query_size % n_way != 0:
        raise SamplingError(f"query size {query_size} not divisible by N = {n_way}")
    per_class_q = query_size // n_way
    pool = sorted(classes)
    if len(pool) < n_way:
        raise SamplingError(f"need {n_way} classes, only {len(pool)} available")

    chosen = [pool[i] for i in rng.choice(len(pool), size=n_way, replace=False)]
    support: list[tuple[MultimodalInstance, int]] = []
    query: list[tuple[MultimodalInstance, int]] = []
    for local, class_id in enumerate(chosen):
        members = dataset.instances_of(class_id)
        needed = k_shot + per_class_q
        if len(members) < needed:
            raise SamplingError(
                f"class {class_id!r} has {len(members)} instances, needs {needed}"
            )
        order = rng.permutation(len(members))
        support.extend((members[i], local) for i in order[:k_shot])
        query.extend((members[i], local) for i in order[k_shot:needed])
    return Episode(
        support=tuple(support),
        query=tuple(query),
        n_way=n_way,
        k_shot=k_shot,
        query_size=query_size,
    )

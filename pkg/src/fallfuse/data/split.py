"""Seeded, label-stratified train/validation/test split."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if min(fr) <= 0:
            raise ConfigError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fr)}")


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.val * n))
    return n_train, n_val, n - n_train - n_val


def split_indices(labels, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partition ``range(len(labels))`` into train/val/test index arrays.

    Each class is shuffled independently and its members are spread evenly
    over one merged ordering (member ``j`` of a class with ``m`` members sits
    at position ``(j + 0.5) / m``), which is then cut at the split sizes. Every
    split therefore gets its class share to within one example and the split
    sizes are exact regardless of class balance.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n < 10:
        raise InputError(f"need at least 10 examples to split, got {n}")
    rng = np.random.default_rng(spec.seed)
    keys = np.empty(n)
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        keys[members] = (np.arange(members.size) + 0.5) / members.size
    tiebreak = rng.permutation(n)
    order = np.lexsort((tiebreak, keys))
    n_train, n_val, _ = split_sizes(n, spec)
    parts = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
    for name, part in zip(("train", "val", "test"), parts):
        present = set(np.unique(labels[part]).tolist())
        if not {0, 1} <= present:
            log.warning("%s split has no examples of class(es) %s", name, sorted({0, 1} - present))
    return parts


def split(data, spec: SplitSpec):
    """Split a :class:`FusedDataset` or a list of examples into (train, val, test)."""
    if isinstance(data, list):
        parts = split_indices([e.label for e in data], spec)
        return tuple([data[i] for i in part] for part in parts)
    return tuple(data.subset(part) for part in split_indices(data.label, spec))

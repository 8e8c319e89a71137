"""Episodic task definitions and samplers.

An episode is one N-way K-shot classification task: a support set with K
labelled samples for each of N classes and a query set with T samples per
class, drawn from the same classes but disjoint from the support set.
Meta-training, meta-validation and meta-testing operate on disjoint class
universes, which :func:`validate_split` enforces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientClassesError,
    InsufficientSamplesError,
    MissingClassError,
    OverlapError,
)


@dataclass(frozen=True)
class TaskSpec:
    """Shape of one episodic task: N-way, K-shot, T queries per class."""

    n_way: int
    k_shot: int
    t_query: int

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1:
            raise ValueError(f"k_shot must be >= 1, got {self.k_shot}")
        if self.t_query < 1:
            raise ValueError(f"t_query must be >= 1, got {self.t_query}")

    @property
    def samples_per_class(self) -> int:
        return self.k_shot + self.t_query

    @property
    def support_size(self) -> int:
        return self.n_way * self.k_shot

    @property
    def query_size(self) -> int:
        return self.n_way * self.t_query


@dataclass(frozen=True)
class SplitManifest:
    """Class identifiers assigned to the three meta-splits."""

    train_classes: frozenset[str]
    val_classes: frozenset[str]
    test_classes: frozenset[str]

    def split(self, name: str) -> frozenset[str]:
        return {"train": self.train_classes, "val": self.val_classes, "test": self.test_classes}[name]


class ClassIndex:
    """Mapping from class identifier to an ordered list of sample references.

    Sample references are opaque strings resolved by a sample source (a file
    path for on-disk datasets, a generated key for synthetic ones). References
    must be globally unique, otherwise one underlying sample could enter an
    episode twice under two labels.
    """

    def __init__(self, mapping: dict[str, list[str]]):
        seen: dict[str, str] = {}
        for class_id, refs in mapping.items():
            for ref in refs:
                if ref in seen:
                    raise ValueError(f"sample reference '{ref}' appears under both "
                                     f"'{seen[ref]}' and '{class_id}'")
                seen[ref] = class_id
        self._mapping = {c: tuple(refs) for c, refs in mapping.items()}

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(sorted(self._mapping))

    def samples(self, class_id: str) -> tuple[str, ...]:
        return self._mapping[class_id]

    def __contains__(self, class_id: str) -> bool:
        return class_id in self._mapping

    def __len__(self) -> int:
        return len(self._mapping)

    def restrict(self, class_ids) -> "ClassIndex":
        """Sub-index containing only the given classes (e.g. one meta-split)."""
        missing = set(class_ids) - set(self._mapping)
        if missing:
            raise MissingClassError(missing)
        return ClassIndex({c: list(self._mapping[c]) for c in class_ids})

    def min_class_size(self) -> int:
        return min(len(refs) for refs in self._mapping.values())


@dataclass(frozen=True)
class Episode:
    """One sampled task. Labels are episode-local positions 0..N-1."""

    support: tuple[tuple[str, int], ...]
    query: tuple[tuple[str, int], ...]
    class_map: tuple[str, ...]  # episode label -> original class identifier

    @property
    def n_way(self) -> int:
        return len(self.class_map)


@dataclass(frozen=True)
class ValidatedSplit:
    """Handle proving the manifest passed disjointness and existence checks."""

    manifest: SplitManifest
    index: ClassIndex
    counts: tuple[int, int, int]  # (train, val, test) class counts

    def split_index(self, name: str) -> ClassIndex:
        return self.index.restrict(sorted(self.manifest.split(name)))


def validate_split(manifest: SplitManifest, index: ClassIndex) -> ValidatedSplit:
    """Check pairwise disjointness of the three splits and class existence.

    Raises OverlapError naming the offending classes, or MissingClassError if
    a listed class is absent from the index.
    """
    pairs = [
        ("train/val", manifest.train_classes & manifest.val_classes),
        ("train/test", manifest.train_classes & manifest.test_classes),
        ("val/test", manifest.val_classes & manifest.test_classes),
    ]
    overlaps = {name: classes for name, classes in pairs if classes}
    if overlaps:
        raise OverlapError(overlaps)

    listed = manifest.train_classes | manifest.val_classes | manifest.test_classes
    missing = {c for c in listed if c not in index}
    if missing:
        raise MissingClassError(missing)

    counts = (len(manifest.train_classes), len(manifest.val_classes), len(manifest.test_classes))
    return ValidatedSplit(manifest=manifest, index=index, counts=counts)


def sample_episode(index: ClassIndex, spec: TaskSpec, rng: np.random.Generator) -> Episode:
    """Draw one episode uniformly without replacement.

    Classes are drawn uniformly from the index, then K+T samples per class;
    the first K become support, the rest queries. Episode labels 0..N-1 follow
    the order the classes were drawn. Deterministic given the rng state.
    """
    classes = index.classes
    if len(classes) < spec.n_way:
        raise InsufficientClassesError(available=len(classes), required=spec.n_way)

    need = spec.samples_per_class
    for class_id in classes:
        have = len(index.samples(class_id))
        if have < need:
            raise InsufficientSamplesError(class_id=class_id, available=have, required=need)

    chosen = rng.choice(len(classes), size=spec.n_way, replace=False)
    class_map = tuple(classes[i] for i in chosen)

    support: list[tuple[str, int]] = []
    query: list[tuple[str, int]] = []
    for label, class_id in enumerate(class_map):
        refs = index.samples(class_id)
        picks = rng.choice(len(refs), size=need, replace=False)
        support.extend((refs[i], label) for i in picks[: spec.k_shot])
        query.extend((refs[i], label) for i in picks[spec.k_shot:])

    return Episode(support=tuple(support), query=tuple(query), class_map=class_map)

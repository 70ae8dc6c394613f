"""Feature matrices, categorization judgments and pairwise similarity ratings.

Categories are always the two canonical labels ``"A"`` and ``"B"``.  Choice
codes follow the likelihood convention: ``c = -1`` for A and ``c = +1`` for B.
Arbitrary label strings in files are translated with a ``label_map``.
"""
from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

CATEGORIES = ("A", "B")
CHOICE_CODE = {"A": -1, "B": 1}
RATING_RANGE = (0.0, 10.0)


def _map_label(token: str, label_map: Mapping[str, str] | None, where: str) -> str:
    token = token.strip()
    if label_map is not None:
        if token not in label_map:
            raise DataError(f"{where}: unknown label token {token!r}")
        token = label_map[token]
    if token not in CATEGORIES:
        raise DataError(f"{where}: unknown label token {token!r}")
    return token


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    return header, rows


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Stimuli x dimensions activations with ids and ground-truth labels."""

    stimulus_ids: tuple[str, ...]
    values: np.ndarray
    labels: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(str(i) for i in self.stimulus_ids)
        values = np.asarray(self.values, dtype=np.float64)
        labels = np.asarray(self.labels, dtype="<U1")
        if values.ndim != 2:
            raise DataError("feature values must be a 2-d matrix")
        n_s, n_f = values.shape
        if n_s < 2 or n_f < 1:
            raise DataError(f"need at least 2 stimuli and 1 feature, got {n_s}x{n_f}")
        if len(ids) != n_s or labels.shape != (n_s,):
            raise DataError("ids, labels and value rows differ in length")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(values), axis=1))[0])
            raise DataError(f"non-finite feature in row for stimulus {ids[bad]!r}")
        bad_labels = set(labels.tolist()) - set(CATEGORIES)
        if bad_labels:
            raise DataError(f"unknown label token(s) {sorted(bad_labels)}")
        index = {}
        for i, sid in enumerate(ids):
            if sid in index:
                raise DataError(f"duplicate id {sid!r}")
            index[sid] = i
        object.__setattr__(self, "stimulus_ids", ids)
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "_index", index)

    @property
    def n_stimuli(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def is_b(self) -> np.ndarray:
        return self.labels == "B"

    def index_of(self, stimulus_id: str) -> int:
        try:
            return self._index[stimulus_id]
        except KeyError:
            raise DataError(f"unknown stimulus id {stimulus_id!r}") from None

    def indices(self, ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index_of(i) for i in ids], dtype=np.intp)

    def __contains__(self, stimulus_id) -> bool:
        return stimulus_id in self._index

    def category_rows(self, category: str, rows: np.ndarray | None = None) -> np.ndarray:
        """Row indices (optionally restricted to ``rows``) with ground-truth ``category``."""
        if category not in CATEGORIES:
            raise DataError(f"unknown category {category!r}")
        if rows is None:
            rows = np.arange(self.n_stimuli)
        rows = np.asarray(rows, dtype=np.intp)
        return rows[self.labels[rows] == category]

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.stimulus_ids, values, self.labels)

    def relabeled(self) -> "FeatureMatrix":
        """Copy with every ground-truth label swapped A <-> B."""
        swapped = np.where(self.labels == "A", "B", "A")
        return FeatureMatrix(self.stimulus_ids, self.values, swapped)

    def subset(self, rows: Sequence[int]) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.intp)
        return FeatureMatrix(
            [self.stimulus_ids[i] for i in rows], self.values[rows], self.labels[rows]
        )


@dataclass(frozen=True, eq=False)
class JudgmentSet:
    """Per-stimulus counts of category-A and category-B choices.

    ``trials`` optionally keeps the trial-level records ``(id, c)`` with
    ``c`` in {-1, +1}; when present they must agree with the counts.
    """

    stimulus_ids: tuple[str, ...]
    n_a: np.ndarray
    n_b: np.ndarray
    trials: tuple[tuple[str, int], ...] | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(str(i) for i in self.stimulus_ids)
        n_a = np.asarray(self.n_a)
        n_b = np.asarray(self.n_b)
        if n_a.shape != (len(ids),) or n_b.shape != (len(ids),):
            raise DataError("count arrays must match the number of ids")
        for arr in (n_a, n_b):
            if arr.size and not np.all(np.asarray(arr, dtype=np.float64) == np.round(arr)):
                raise DataError("counts must be integers")
        n_a = n_a.astype(np.int64)
        n_b = n_b.astype(np.int64)
        if np.any(n_a < 0) or np.any(n_b < 0):
            bad = int(np.flatnonzero((n_a < 0) | (n_b < 0))[0])
            raise DataError(f"negative count for stimulus {ids[bad]!r}")
        empty = (n_a + n_b) < 1
        if np.any(empty):
            raise DataError(f"empty stimulus {ids[int(np.flatnonzero(empty)[0])]!r}: n_A + n_B = 0")
        index = {}
        for i, sid in enumerate(ids):
            if sid in index:
                raise DataError(f"duplicate id {sid!r} in judgments")
            index[sid] = i
        if self.trials is not None:
            trials = tuple((str(s), int(c)) for s, c in self.trials)
            check_a = np.zeros(len(ids), dtype=np.int64)
            check_b = np.zeros(len(ids), dtype=np.int64)
            for sid, c in trials:
                if sid not in index or c not in (-1, 1):
                    raise DataError(f"invalid trial record ({sid!r}, {c})")
                if c < 0:
                    check_a[index[sid]] += 1
                else:
                    check_b[index[sid]] += 1
            if not (np.array_equal(check_a, n_a) and np.array_equal(check_b, n_b)):
                raise DataError("trial-level records disagree with aggregated counts")
            object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "stimulus_ids", ids)
        object.__setattr__(self, "n_a", _readonly(n_a))
        object.__setattr__(self, "n_b", _readonly(n_b))
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_trials(cls, records: Iterable[tuple[str, int]]) -> "JudgmentSet":
        records = [(str(s), int(c)) for s, c in records]
        order: dict[str, list[int]] = {}
        for sid, c in records:
            if c not in (-1, 1):
                raise DataError(f"choice code must be -1 or +1, got {c}")
            counts = order.setdefault(sid, [0, 0])
            counts[0 if c < 0 else 1] += 1
        ids = list(order)
        return cls(
            ids,
            np.array([order[i][0] for i in ids], dtype=np.int64),
            np.array([order[i][1] for i in ids], dtype=np.int64),
            trials=tuple(records),
        )

    @property
    def n_total(self) -> np.ndarray:
        return self.n_a + self.n_b

    @property
    def total_trials(self) -> int:
        return int(self.n_total.sum())

    def counts(self, stimulus_id: str) -> tuple[int, int]:
        i = self._index[stimulus_id]
        return int(self.n_a[i]), int(self.n_b[i])

    def __contains__(self, stimulus_id) -> bool:
        return stimulus_id in self._index

    def validate_against(self, features: FeatureMatrix) -> None:
        for sid in self.stimulus_ids:
            if sid not in features:
                raise DataError(f"judged id {sid!r} not in features")

    def aligned(self, features: FeatureMatrix) -> tuple[np.ndarray, np.ndarray]:
        """Count vectors aligned to ``features`` rows; unjudged rows get zeros."""
        self.validate_against(features)
        n_a = np.zeros(features.n_stimuli, dtype=np.float64)
        n_b = np.zeros(features.n_stimuli, dtype=np.float64)
        rows = features.indices(self.stimulus_ids)
        n_a[rows] = self.n_a
        n_b[rows] = self.n_b
        return n_a, n_b

    def judged_rows(self, features: FeatureMatrix) -> np.ndarray:
        """Feature-row indices of judged stimuli, in feature-file order."""
        self.validate_against(features)
        return np.sort(features.indices(self.stimulus_ids))

    def relabeled(self) -> "JudgmentSet":
        trials = None
        if self.trials is not None:
            trials = tuple((s, -c) for s, c in self.trials)
        return JudgmentSet(self.stimulus_ids, self.n_b, self.n_a, trials=trials)


@dataclass(frozen=True, eq=False)
class SimilarityRatings:
    """Mean similarity rating per unordered stimulus pair.

    Pairs are stored canonically as ``(min(id_a, id_b), max(id_a, id_b))``
    and sorted, so iteration order is deterministic.
    """

    pairs: tuple[tuple[str, str, float], ...]
    _lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lookup: dict[tuple[str, str], float] = {}
        for a, b, r in self.pairs:
            a, b, r = str(a), str(b), float(r)
            if not math.isfinite(r):
                raise DataError(f"non-finite rating for pair ({a!r}, {b!r})")
            key = (a, b) if a <= b else (b, a)
            if key in lookup and lookup[key] != r:
                raise DataError(f"duplicate pair {key} with conflicting ratings {lookup[key]} and {r}")
            lookup[key] = r
        keys = sorted(lookup)
        object.__setattr__(self, "pairs", tuple((a, b, lookup[(a, b)]) for a, b in keys))
        object.__setattr__(self, "_lookup", lookup)
        lo, hi = RATING_RANGE
        out = [r for _, _, r in self.pairs if r < lo or r > hi]
        if out:
            warnings.warn(
                f"{len(out)} rating(s) outside the {lo:g}-{hi:g} instruction scale (e.g. {out[0]:g}); kept as-is",
                stacklevel=3,
            )

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def rating(self, id_a: str, id_b: str) -> float:
        key = (id_a, id_b) if id_a <= id_b else (id_b, id_a)
        return self._lookup[key]

    @property
    def stimulus_ids(self) -> list[str]:
        return sorted({s for a, b, _ in self.pairs for s in (a, b)})

    def validate_against(self, features: FeatureMatrix) -> None:
        for a, b, _ in self.pairs:
            for sid in (a, b):
                if sid not in features:
                    raise DataError(f"similarity id {sid!r} not in features")


# --------------------------------------------------------------------------
# CSV ingest / emit


def load_features(path, label_map: Mapping[str, str] | None = None) -> FeatureMatrix:
    """Read ``id,label,f0..f{d-1}`` CSV into a validated :class:`FeatureMatrix`."""
    header, rows = _read_rows(path)
    if len(header) < 3 or header[0] != "id" or header[1] != "label":
        raise DataError(f"{path}: header must be id,label,f0..f{{d-1}}")
    width = len(header)
    ids, labels, values = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: ragged row ({len(row)} cells, expected {width})")
        ids.append(row[0].strip())
        labels.append(_map_label(row[1], label_map, f"{path}:{lineno}"))
        try:
            vals = [float(c) for c in row[2:]]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}:{lineno}: non-finite feature")
        values.append(vals)
    if not values:
        raise DataError(f"{path}: no data rows")
    return FeatureMatrix(ids, np.array(values, dtype=np.float64), labels)


def load_judgments(
    path,
    mode: str = "trials",
    features: FeatureMatrix | None = None,
    label_map: Mapping[str, str] | None = None,
) -> JudgmentSet:
    """Read trial-level (``id,choice``) or aggregated (``id,n_A,n_B``) judgments."""
    header, rows = _read_rows(path)
    if mode == "trials":
        if header[:2] != ["id", "choice"] or len(header) != 2:
            raise DataError(f"{path}: trials header must be id,choice")
        records = []
        for lineno, row in enumerate(rows, start=2):
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: ragged row")
            choice = _map_label(row[1], label_map, f"{path}:{lineno}")
            records.append((row[0].strip(), CHOICE_CODE[choice]))
        judgments = JudgmentSet.from_trials(records)
    elif mode == "counts":
        if header != ["id", "n_A", "n_B"]:
            raise DataError(f"{path}: counts header must be id,n_A,n_B")
        ids, n_a, n_b = [], [], []
        for lineno, row in enumerate(rows, start=2):
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: ragged row")
            try:
                a, b = int(row[1]), int(row[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: counts must be integers") from None
            if a < 0 or b < 0:
                raise DataError(f"{path}:{lineno}: negative count")
            if a + b < 1:
                raise DataError(f"{path}:{lineno}: empty stimulus {row[0].strip()!r}")
            ids.append(row[0].strip())
            n_a.append(a)
            n_b.append(b)
        judgments = JudgmentSet(ids, np.array(n_a, dtype=np.int64), np.array(n_b, dtype=np.int64))
    else:
        raise DataError(f"unknown judgments mode {mode!r} (expected 'trials' or 'counts')")
    if features is not None:
        judgments.validate_against(features)
    return judgments


def load_similarities(path, features: FeatureMatrix | None = None) -> SimilarityRatings:
    """Read ``id_a,id_b,rating`` rows; identical duplicates collapse, conflicting ones fail."""
    header, rows = _read_rows(path)
    if header != ["id_a", "id_b", "rating"]:
        raise DataError(f"{path}: header must be id_a,id_b,rating")
    pairs = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise DataError(f"{path}:{lineno}: ragged row")
        try:
            rating = float(row[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: rating is not a number") from None
        pairs.append((row[0].strip(), row[1].strip(), rating))
    ratings = SimilarityRatings(tuple(pairs))
    if features is not None:
        ratings.validate_against(features)
    return ratings


def _fmt(x: float) -> str:
    return repr(float(x))


def write_features(path, features: FeatureMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{k}" for k in range(features.n_features)])
        for sid, lab, row in zip(features.stimulus_ids, features.labels, features.values):
            w.writerow([sid, lab] + [_fmt(v) for v in row])


def write_judgments(path, judgments: JudgmentSet, mode: str = "counts") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "counts":
            w.writerow(["id", "n_A", "n_B"])
            for sid, a, b in zip(judgments.stimulus_ids, judgments.n_a, judgments.n_b):
                w.writerow([sid, int(a), int(b)])
        elif mode == "trials":
            if judgments.trials is None:
                raise DataError("judgment set carries no trial-level records")
            w.writerow(["id", "choice"])
            for sid, c in judgments.trials:
                w.writerow([sid, "A" if c < 0 else "B"])
        else:
            raise DataError(f"unknown judgments mode {mode!r}")


def write_similarities(path, ratings: SimilarityRatings) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id_a", "id_b", "rating"])
        for a, b, r in ratings.pairs:
            w.writerow([a, b, _fmt(r)])

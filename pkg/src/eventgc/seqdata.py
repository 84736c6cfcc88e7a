"""Event sequences, datasets, JSONL/CSV I/O, folds and length-bucketed batches."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed files or sequences violating their invariants."""


@dataclass(frozen=True)
class EventSequence:
    """Timestamps ``times`` (non-decreasing) with integer ``types``, observed on ``[0, T]``."""

    times: np.ndarray
    types: np.ndarray
    T: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        types = np.asarray(self.types, dtype=np.int64).reshape(-1)
        if times.shape != types.shape:
            raise DataError("times and types differ in length")
        times.setflags(write=False)
        types.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def from_events(cls, events, T):
        events = list(events)
        times = [float(t) for t, _ in events]
        types = [int(k) for _, k in events]
        return cls(np.array(times, dtype=np.float64), np.array(types, dtype=np.int64), T)

    def __len__(self):
        return len(self.times)

    @property
    def events(self):
        return list(zip(self.times.tolist(), self.types.tolist()))

    def gaps(self):
        """Inter-event elapsed times with ``t_0 = 0``."""
        return np.diff(self.times, prepend=0.0)

    def __eq__(self, other):
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (
            self.T == other.T
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.types, other.types)
        )

    __hash__ = None


def validate(seq, K):
    """Return ``None`` when ``seq`` is valid for ``K`` types, otherwise a short violation string."""
    if not np.isfinite(seq.T) or seq.T <= 0:
        return "non-positive horizon"
    if len(seq) == 0:
        return None
    t, k = seq.times, seq.types
    if not np.all(np.isfinite(t)):
        return "non-finite timestamp"
    if t[0] < 0:
        return "negative timestamp"
    if np.any(np.diff(t) < 0):
        return "non-monotone timestamps"
    if t[-1] > seq.T:
        return "timestamp beyond horizon"
    if np.any(k < 0) or np.any(k >= K):
        return "type out of range"
    return None


@dataclass(frozen=True)
class Dataset:
    sequences: list
    K: int
    ground_truth: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.K < 1:
            raise DataError("K must be positive")
        if self.ground_truth is not None:
            gt = np.asarray(self.ground_truth, dtype=np.float64)
            if gt.shape != (self.K, self.K):
                raise DataError(f"ground truth must be {self.K}x{self.K}, got {gt.shape}")
            object.__setattr__(self, "ground_truth", gt)
        for s, seq in enumerate(self.sequences):
            err = validate(seq, self.K)
            if err:
                raise DataError(f"sequence {s}: {err}")

    def __len__(self):
        return len(self.sequences)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        gt_eq = (self.ground_truth is None and other.ground_truth is None) or (
            self.ground_truth is not None
            and other.ground_truth is not None
            and np.array_equal(self.ground_truth, other.ground_truth)
        )
        return self.K == other.K and gt_eq and self.sequences == other.sequences

    __hash__ = None

    def subset(self, indices):
        return Dataset([self.sequences[i] for i in indices], self.K, self.ground_truth)

    def lengths(self):
        return np.array([len(s) for s in self.sequences], dtype=np.int64)

    def type_counts(self):
        counts = np.zeros(self.K, dtype=np.int64)
        for seq in self.sequences:
            counts += np.bincount(seq.types, minlength=self.K)
        return counts

    def num_events(self):
        return int(self.lengths().sum())


def _fmt(x):
    # 17 significant digits round-trip any double exactly
    return float(f"{x:.17g}")


def save_jsonl(dataset, path):
    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps({"K": dataset.K}) + "\n")
        for seq in dataset.sequences:
            events = [[_fmt(t), int(k)] for t, k in zip(seq.times.tolist(), seq.types.tolist())]
            fh.write(json.dumps({"seq": events, "T": _fmt(seq.T)}) + "\n")


def load_jsonl(path, ground_truth=None):
    path = Path(path)
    sequences = []
    K = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: {exc.msg}") from None
            if K is None:
                if not isinstance(rec, dict) or "K" not in rec:
                    raise DataError(f"{path}: line {lineno}: expected header with K")
                K = int(rec["K"])
                continue
            try:
                seq = EventSequence.from_events(rec["seq"], rec["T"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: line {lineno}: bad record ({exc})") from None
            err = validate(seq, K)
            if err:
                raise DataError(f"{path}: line {lineno}: sequence {len(sequences)}: {err}")
            sequences.append(seq)
    if K is None:
        raise DataError(f"{path}: missing header line")
    return Dataset(sequences, K, ground_truth)


def save_matrix_csv(matrix, path):
    """Write a K x K matrix, row = effect type, column = cause type."""
    matrix = np.asarray(matrix, dtype=np.float64)
    with Path(path).open("w") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_matrix_csv(path):
    rows = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append([float(v) for v in line.strip().split(",")])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: not a numeric row") from None
    mat = np.array(rows, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DataError(f"{path}: expected a square matrix, got shape {mat.shape}")
    return mat


def kfold_split(n_sequences, folds=5, rng=None):
    """Shuffle ``range(n_sequences)`` into ``folds`` (train, test) index pairs.

    ``n_sequences`` may also be a :class:`Dataset`.
    """
    S = len(n_sequences) if isinstance(n_sequences, Dataset) else int(n_sequences)
    if S < folds:
        raise DataError(f"need at least {folds} sequences for {folds}-fold split, got {S}")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(S)
    parts = np.array_split(perm, folds)
    out = []
    for i, test in enumerate(parts):
        train = np.concatenate([p for j, p in enumerate(parts) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


@dataclass(frozen=True)
class Batch:
    """Padded view of several sequences.

    Timestamps are padded with each sequence's last timestamp (so padded gaps
    are zero) and types with the sentinel ``K``.
    """

    indices: np.ndarray
    times: np.ndarray
    types: np.ndarray
    mask: np.ndarray
    horizons: np.ndarray
    K: int

    @property
    def lengths(self):
        return self.mask.sum(axis=1).astype(np.int64)

    @property
    def size(self):
        return len(self.indices)

    def gaps(self):
        return np.diff(self.times, axis=1, prepend=0.0)

    def onehot(self):
        """(B, n_max, K) one-hot types; sentinel rows are all zero."""
        eye = np.vstack([np.eye(self.K), np.zeros((1, self.K))])
        return eye[self.types]

    def sequences(self):
        out = []
        for b, n in enumerate(self.lengths):
            out.append(EventSequence(self.times[b, :n], self.types[b, :n], self.horizons[b]))
        return out


def make_batch(dataset, indices):
    indices = np.asarray(indices, dtype=np.int64)
    seqs = [dataset.sequences[i] for i in indices]
    n_max = max([len(s) for s in seqs] + [0])
    B = len(seqs)
    times = np.zeros((B, n_max))
    types = np.full((B, n_max), dataset.K, dtype=np.int64)
    mask = np.zeros((B, n_max))
    horizons = np.array([s.T for s in seqs], dtype=np.float64)
    for b, s in enumerate(seqs):
        n = len(s)
        times[b, :n] = s.times
        if n:
            times[b, n:] = s.times[-1]
        types[b, :n] = s.types
        mask[b, :n] = 1.0
    return Batch(indices, times, types, mask, horizons, dataset.K)


def bucket_batches(dataset, batch_size, rng=None):
    """Group sequences of similar length into batches of at most ``batch_size``.

    Sequences are sorted by length (ties broken randomly), chunked in order,
    and the resulting batches are returned in shuffled order.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(rng)
    S = len(dataset)
    if S == 0:
        return []
    perm = rng.permutation(S)
    order = perm[np.argsort(dataset.lengths()[perm], kind="stable")]
    chunks = [order[i : i + batch_size] for i in range(0, S, batch_size)]
    return [make_batch(dataset, chunks[j]) for j in rng.permutation(len(chunks))]

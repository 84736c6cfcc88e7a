"""Granger causality statistic from event attributions.

For every prediction interval ``(t_i, t_{i+1}]`` of every sequence, the
cumulative intensity ``f_k(x_i)`` of effect type ``k`` is attributed to the
event-type one-hots ``z_1 .. z_i`` against a baseline where all types are
replaced by the null type. Scores landing on events of type ``k'`` are summed
into ``Ytilde[k, k']`` and divided by the number of ``k'`` events.

:func:`batched_statistic` needs one attribution call per (mini-batch, effect
type): the per-interval targets of all sequences in a batch are summed into a
single scalar, whose attribution splits back into the per-event scores because
Integrated Gradients is linear, ignores inputs a term does not depend on, and
decomposes over independent copies. The K targets of a batch share one
forward pass per chunk of path points. :func:`naive_statistic` makes one call per
(sequence, interval, effect type) and serves as its oracle.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .attribution import CountingAttribution, integrated_gradients
from .npp import alpha_net, embed, encode
from .seqdata import Dataset, EventSequence, bucket_batches, make_batch

__all__ = [
    "CausalityMatrix",
    "make_baseline",
    "interval_weights",
    "summed_target",
    "summed_targets",
    "naive_statistic",
    "batched_statistic",
    "benchmark_speedup",
]

# bound on (stacked rows x sequence length) per forward pass, keeps the tape under ~0.5 GB
_ROW_STEP_BUDGET = 60_000


@dataclass
class CausalityMatrix:
    """``Y[k, k']``: influence of cause ``k'`` on effect ``k``."""

    Y: np.ndarray
    Ytilde: np.ndarray
    counts: np.ndarray
    calls: int = 0

    def to_dict(self):
        return {
            "K": int(self.Y.shape[0]),
            "counts": self.counts.tolist(),
            "attribution_calls": int(self.calls),
        }


def make_baseline(batch):
    """Same timestamps and mask, every type replaced by the null type ``K``."""
    types = np.full_like(batch.types, batch.K)
    return replace(batch, types=types)


def interval_weights(model, batch, include_survival=True):
    """Basis integrals of every attributed interval, zero where masked.

    Position ``i`` covers ``(t_i, t_{i+1}]``; the last real event of each
    sequence covers ``(t_n, T]`` when ``include_survival`` is set and is
    skipped otherwise. Returns ``(gaps, W)`` with ``W`` of shape (B, n, R).
    """
    times, mask = batch.times, batch.mask
    B, n = times.shape
    lengths = batch.lengths
    nxt = np.concatenate([times[:, 1:], times[:, -1:]], axis=1) if n else times.copy()
    valid = mask.copy()
    rows = np.flatnonzero(lengths > 0)
    last = lengths[rows] - 1
    nxt[rows, last] = batch.horizons[rows]
    if not include_survival:
        valid[rows, last] = 0.0
    delta = np.maximum(nxt - times, 0.0) * mask
    W = model.basis.integral(delta) * valid[..., None]
    gaps = batch.gaps() * mask
    return gaps, W


def summed_target(model, gaps, mask, W, k):
    """Scalar-per-stack target ``sum_s sum_i f_k(x^s_i)`` over the one-hot input.

    The returned callable maps stacked one-hots (N, B, n, K) to (N,).
    """
    f = _stacked_target(model, gaps, mask, W, [k])
    return lambda Zs: ad.reshape(f(Zs), (Zs.shape[0],))


def summed_targets(model, gaps, mask, W):
    """All K summed targets at once: maps (N, B, n, K) one-hots to (N, K)."""
    return _stacked_target(model, gaps, mask, W, list(range(model.K)))


def _stacked_target(model, gaps, mask, W, effects):
    P = model.tensors()
    R = model.basis.R
    J = len(effects)
    B, n = gaps.shape
    cols = np.concatenate([np.arange(k * R, (k + 1) * R) for k in effects])
    P_k = dict(P)
    P_k["A2"] = ad.Tensor(model.params["A2"][:, cols])
    P_k["a2"] = ad.Tensor(model.params["a2"][cols])
    P_k["A_skip"] = ad.Tensor(model.params["A_skip"][:, cols])

    def target(Zs):
        N = Zs.shape[0]
        Zflat = ad.reshape(Zs, (N * B, n, model.K))
        g = np.broadcast_to(gaps, (N, B, n)).reshape(N * B, n)
        m = np.broadcast_to(mask, (N, B, n)).reshape(N * B, n)
        Hs = encode(P_k, embed(P_k, g, Zflat), m)
        a = alpha_net(P_k, Hs[:, 1:], J, R)  # (N*B, n, J, R)
        w = np.broadcast_to(W, (N, B, n, R)).reshape(N * B, n, 1, R)
        per_seq = ad.sum(ad.sum(ad.mul(a, w), axis=3), axis=1)  # (N*B, J)
        return ad.sum(ad.reshape(per_seq, (N, B, J)), axis=1)

    return target


def _chunk(rows_per_point, n):
    return max(1, _ROW_STEP_BUDGET // max(1, rows_per_point * max(n, 1)))


def _normalize(Ytilde, counts):
    Y = np.zeros_like(Ytilde)
    nz = counts > 0
    Y[:, nz] = Ytilde[:, nz] / counts[nz]
    return Y


def batched_statistic(model, dataset, batch_size=16, ig_steps=50, include_survival=True, attribution=None, rng=0):
    """Two-level batched statistic: ``ceil(S / batch_size) * K`` attribution calls."""
    K = dataset.K
    attr = attribution or CountingAttribution(integrated_gradients)
    Ytilde = np.zeros((K, K))
    for batch in bucket_batches(dataset, batch_size, rng):
        gaps, W = interval_weights(model, batch, include_survival)
        Z = batch.onehot()
        Zbar = make_baseline(batch).onehot()
        real = batch.mask > 0
        chunk = _chunk(batch.size, gaps.shape[1])
        # the K effect types share each forward pass, one backward pass apiece
        target = summed_targets(model, gaps, batch.mask, W)
        results = attr(target, Z, Zbar, steps=ig_steps, chunk=chunk, with_gap=False, outputs=K)
        for k, res in enumerate(results):
            C = res.scores.sum(axis=-1)  # (B, n): score on z_{j, k_j}
            Ytilde[k] += np.bincount(batch.types[real], weights=C[real], minlength=K)[:K]
    counts = dataset.type_counts()
    calls = attr.calls if hasattr(attr, "calls") else 0
    return CausalityMatrix(_normalize(Ytilde, counts), Ytilde, counts, calls)


def naive_statistic(model, dataset, ig_steps=50, include_survival=True, attribution=None, only=None):
    """One attribution call per (sequence, interval, effect type).

    ``only=(s, k)`` restricts the work to one sequence and one effect type;
    used for timing extrapolation.
    """
    K = dataset.K
    attr = attribution or CountingAttribution(integrated_gradients)
    Ytilde = np.zeros((K, K))
    seqs = range(len(dataset)) if only is None else [only[0]]
    effects = range(K) if only is None else [only[1]]
    for s in seqs:
        seq = dataset.sequences[s]
        n = len(seq)
        last_interval = n if include_survival else n - 1
        for i in range(1, last_interval + 1):
            prefix = Dataset([EventSequence(seq.times[:i], seq.types[:i], seq.T)], K)
            batch = make_batch(prefix, [0])
            gaps, W = interval_weights(model, batch, include_survival=True)
            # only the interval right after event i is the target
            end = seq.times[i] if i < n else seq.T
            W = np.zeros_like(W)
            W[0, i - 1] = model.basis.integral(end - seq.times[i - 1])
            Z = batch.onehot()
            for k in effects:
                target = summed_target(model, gaps, batch.mask, W, k)
                res = attr(target, Z, np.zeros_like(Z), steps=ig_steps, with_gap=False)
                C = res.scores[0].sum(axis=-1)
                Ytilde[k] += np.bincount(seq.types[:i], weights=C, minlength=K)[:K]
    counts = dataset.type_counts()
    calls = attr.calls if hasattr(attr, "calls") else 0
    return CausalityMatrix(_normalize(Ytilde, counts), Ytilde, counts, calls)


def synthetic_workload(K, S, n, rng=None, mean_gap=1.0):
    """``S`` sequences of exactly ``n`` events with uniform types and exponential gaps."""
    rng = np.random.default_rng(rng)
    seqs = []
    for _ in range(S):
        times = np.cumsum(rng.exponential(mean_gap, size=n))
        seqs.append(EventSequence(times, rng.integers(0, K, size=n), times[-1] + mean_gap))
    return Dataset(seqs, K)


BENCH_FIELDS = [
    "n", "batch_size", "K", "ig_steps", "S", "reps",
    "batched_calls", "naive_calls", "naive_mode", "batched_s", "naive_s", "speedup",
]


def benchmark_speedup(model, lengths=(25, 50, 100, 150), batch_sizes=(1, 4, 16), ig_steps=50, reps=3, naive="extrapolate", rng=0, mean_gap=1.0):
    """Median wall time of batched vs naive attribution over a (length x batch size) grid.

    The workload at each grid point is one mini-batch (``S = batch_size``
    sequences of exactly ``n`` events). With ``naive="extrapolate"`` the naive
    path is timed on one (sequence, effect type) pair and scaled by ``S * K``:
    every pair does the same work on this equal-length workload.
    """
    if naive not in ("extrapolate", "full"):
        raise ValueError("naive must be 'extrapolate' or 'full'")
    K = model.K
    rows = []
    for n in lengths:
        for B in batch_sizes:
            data = synthetic_workload(K, B, n, rng, mean_gap)
            t_b, t_n = [], []
            for _ in range(reps):
                counter = CountingAttribution(integrated_gradients)
                t0 = time.perf_counter()
                batched_statistic(model, data, B, ig_steps, attribution=counter)
                t_b.append(time.perf_counter() - t0)
                b_calls = counter.calls
                counter = CountingAttribution(integrated_gradients)
                t0 = time.perf_counter()
                if naive == "full":
                    naive_statistic(model, data, ig_steps, attribution=counter)
                    t_n.append(time.perf_counter() - t0)
                    n_calls = counter.calls
                else:
                    naive_statistic(model, data, ig_steps, attribution=counter, only=(0, 0))
                    t_n.append((time.perf_counter() - t0) * B * K)
                    n_calls = counter.calls * B * K
            tb, tn = float(np.median(t_b)), float(np.median(t_n))
            rows.append({
                "n": n, "batch_size": B, "K": K, "ig_steps": ig_steps, "S": B, "reps": reps,
                "batched_calls": b_calls, "naive_calls": n_calls, "naive_mode": naive,
                "batched_s": tb, "naive_s": tn, "speedup": tn / tb,
            })
    return rows


def bench_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()

"""Exact samplers for the three synthetic event processes.

* Excitation: multivariate Hawkes process with kernels
  ``alpha[k, k'] * beta[k, k'] * exp(-beta[k, k'] * t)`` sampled by Ogata thinning.
* Inhibition: multivariate self-correcting process
  ``lambda_k(t) = exp(alpha_k * t + sum_{t_i < t} w[k, k_i])`` sampled by inverting
  its closed-form compensator.
* Synergy: proximal graphical event model (PGEM) with piecewise-constant rates
  driven by which parents fired inside their lookback windows.

Each sampler returns a :class:`~eventgc.seqdata.Dataset` carrying its ground
truth matrix (row = effect, column = cause).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .seqdata import Dataset, EventSequence

__all__ = [
    "HawkesConfig",
    "SelfCorrectingConfig",
    "PgemConfig",
    "spectral_radius",
    "scale_to_spectral_radius",
    "sample_hawkes",
    "sample_self_correcting",
    "sample_pgem",
    "hawkes_nll",
    "hawkes_residuals",
    "self_correcting_nll",
    "self_correcting_residuals",
    "pgem_nll",
    "default_config",
    "sample",
    "generate",
    "exact_nll",
    "config_to_json",
    "config_from_json",
]


class GeneratorError(ValueError):
    pass


def spectral_radius(A, tol=1e-15, max_iter=200_000):
    """Perron root of a nonnegative square matrix by power iteration."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix required")
    if np.any(A < 0):
        raise ValueError("power iteration here assumes a nonnegative matrix")
    x = np.ones(A.shape[0])
    rho = 0.0
    for _ in range(max_iter):
        y = A @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        new = norm / np.linalg.norm(x)
        x = y / norm
        if abs(new - rho) <= tol * max(new, 1.0):
            return new
        rho = new
    return rho


def scale_to_spectral_radius(A, target):
    rho = spectral_radius(A)
    if rho == 0.0:
        raise GeneratorError("cannot rescale a nilpotent excitation matrix")
    return A * (target / rho)


def _sparse_support(K, n_offdiag, rng):
    """Boolean K x K mask holding the diagonal and ``n_offdiag`` random off-diagonal cells."""
    mask = np.eye(K, dtype=bool)
    off = np.flatnonzero(~mask)
    mask.flat[rng.choice(off, size=n_offdiag, replace=False)] = True
    return mask


def _sequence_rngs(rng, S):
    rng = np.random.default_rng(rng)
    return rng.spawn(S)


def _target_count(rng, mean_length):
    # an empty sequence would have no horizon, so draw at least one event
    return max(1, int(rng.poisson(mean_length)))


# ---------------------------------------------------------------- Hawkes


@dataclass
class HawkesConfig:
    K: int
    S: int
    mean_length: float
    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    target_spectral_radius: float | None = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        K = self.K
        if self.mu.shape != (K,) or self.alpha.shape != (K, K) or self.beta.shape != (K, K):
            raise GeneratorError("Hawkes parameter shapes do not match K")
        if np.any(self.mu < 0) or np.any(self.alpha < 0) or np.any(self.beta <= 0):
            raise GeneratorError("need mu >= 0, alpha >= 0, beta > 0")
        if self.mu.sum() <= 0:
            raise GeneratorError("all baseline rates are zero")
        if self.target_spectral_radius is not None:
            rho = spectral_radius(self.alpha)
            if abs(rho - self.target_spectral_radius) > 1e-9:
                raise GeneratorError(
                    f"spectral radius {rho} differs from target {self.target_spectral_radius}"
                )

    def ground_truth(self):
        # the kernel integrates to alpha over [0, inf)
        return self.alpha.copy()


def _hawkes_sequence(cfg, n_target, rng):
    mu, alpha, beta = cfg.mu, cfg.alpha, cfg.beta
    jump = alpha * beta
    state = np.zeros_like(alpha)
    t = 0.0
    times, types = [], []
    while len(times) < n_target:
        # intensities only decay between events, so the current total bounds the future
        lam_bar = mu.sum() + state.sum()
        if not np.isfinite(lam_bar) or lam_bar <= 0:
            raise GeneratorError(f"non-finite intensity at t={t}")
        w = rng.exponential(1.0 / lam_bar)
        t += w
        state *= np.exp(-beta * w)
        lam = mu + state.sum(axis=1)
        u = rng.uniform(0.0, lam_bar)
        total = lam.sum()
        if u < total:
            k = min(int(np.searchsorted(np.cumsum(lam), u, side="right")), cfg.K - 1)
            times.append(t)
            types.append(k)
            state[:, k] += jump[:, k]
    return np.array(times), np.array(types, dtype=np.int64)


def sample_hawkes(cfg, rng=None):
    """Sample ``cfg.S`` sequences; each stops at a Poisson(``mean_length``) event count."""
    seqs = []
    for child in _sequence_rngs(rng, cfg.S):
        n_target = _target_count(child, cfg.mean_length)
        times, types = _hawkes_sequence(cfg, n_target, child)
        seqs.append(EventSequence(times, types, times[-1]))
    gt = cfg.ground_truth()
    return Dataset(seqs, cfg.K, gt), gt


def _hawkes_pass(cfg, seq):
    """Per-event log-intensity and per-interval pooled compensator (last entry: (t_n, T])."""
    mu, alpha, beta = cfg.mu, cfg.alpha, cfg.beta
    jump = alpha * beta
    state = np.zeros_like(alpha)
    t_prev = 0.0
    log_lam, comp = [], []
    for t, k in zip(seq.times.tolist(), seq.types.tolist()):
        d = t - t_prev
        decay = np.exp(-beta * d)
        comp.append(mu.sum() * d + np.sum(state * (1.0 - decay) / beta))
        state *= decay
        log_lam.append(np.log(mu[k] + state[k].sum()))
        state[:, k] += jump[:, k]
        t_prev = t
    d = seq.T - t_prev
    comp.append(mu.sum() * d + np.sum(state * (1.0 - np.exp(-beta * d)) / beta))
    return np.array(log_lam), np.array(comp)


def hawkes_nll(cfg, dataset):
    """Exact negative log-likelihood of ``dataset`` under the Hawkes ``cfg``."""
    total = 0.0
    for seq in dataset.sequences:
        log_lam, comp = _hawkes_pass(cfg, seq)
        total += comp.sum() - log_lam.sum()
    return total


def hawkes_residuals(cfg, dataset):
    """Compensator increments of the pooled process between consecutive events."""
    out = [_hawkes_pass(cfg, seq)[1][:-1] for seq in dataset.sequences]
    return np.concatenate(out) if out else np.empty(0)


# ---------------------------------------------------------------- self-correcting


@dataclass
class SelfCorrectingConfig:
    K: int
    S: int
    mean_length: float
    alpha_rate: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.alpha_rate = np.asarray(self.alpha_rate, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.alpha_rate.shape != (self.K,) or self.w.shape != (self.K, self.K):
            raise GeneratorError("self-correcting parameter shapes do not match K")
        if np.any(self.alpha_rate < 0):
            raise GeneratorError("drift rates must be positive")
        if np.any(self.w > 0):
            raise GeneratorError("self-correcting weights must be nonpositive")

    def ground_truth(self):
        return self.w.copy()


def _sc_next_times(t0, W, a, E):
    """Solve ``Lambda_k(t0, t) = E_k`` for each type; ``a == 0`` uses the linear limit."""
    out = np.empty_like(W)
    lin = a <= 0.0
    out[lin] = t0 + E[lin] * np.exp(-W[lin])
    a_ = a[~lin]
    # e^{a t} = e^{a t0} + a E e^{-W}  ->  t = t0 + log1p(a E e^{-W - a t0}) / a
    y = np.log(a_ * E[~lin]) - W[~lin] - a_ * t0
    out[~lin] = t0 + np.logaddexp(0.0, y) / a_
    return out


def _sc_compensator(t0, t1, W, a):
    """Per-type ``Lambda_k(t0, t1)`` with accumulated weights ``W``."""
    d = t1 - t0
    lin = a <= 0.0
    out = np.empty_like(W)
    out[lin] = np.exp(W[lin]) * d
    a_ = a[~lin]
    out[~lin] = np.exp(W[~lin] + a_ * t0) * np.expm1(a_ * d) / a_
    return out


def _sc_sequence(cfg, n_target, rng):
    a, w = cfg.alpha_rate, cfg.w
    W = np.zeros(cfg.K)
    t = 0.0
    times, types = [], []
    while len(times) < n_target:
        cand = _sc_next_times(t, W, a, rng.exponential(1.0, size=cfg.K))
        k = int(np.argmin(cand))
        t = float(cand[k])
        if not np.isfinite(t):
            raise GeneratorError(f"self-correcting intensity overflowed after {len(times)} events")
        times.append(t)
        types.append(k)
        W += w[:, k]
    return np.array(times), np.array(types, dtype=np.int64)


def sample_self_correcting(cfg, rng=None):
    seqs = []
    for child in _sequence_rngs(rng, cfg.S):
        n_target = _target_count(child, cfg.mean_length)
        times, types = _sc_sequence(cfg, n_target, child)
        seqs.append(EventSequence(times, types, times[-1]))
    gt = cfg.ground_truth()
    return Dataset(seqs, cfg.K, gt), gt


def _sc_pass(cfg, seq):
    a, w = cfg.alpha_rate, cfg.w
    W = np.zeros(cfg.K)
    t_prev = 0.0
    log_lam, comp = [], []
    for t, k in zip(seq.times.tolist(), seq.types.tolist()):
        comp.append(_sc_compensator(t_prev, t, W, a).sum())
        log_lam.append(a[k] * t + W[k])
        W += w[:, k]
        t_prev = t
    comp.append(_sc_compensator(t_prev, seq.T, W, a).sum())
    return np.array(log_lam), np.array(comp)


def self_correcting_nll(cfg, dataset):
    total = 0.0
    for seq in dataset.sequences:
        log_lam, comp = _sc_pass(cfg, seq)
        total += comp.sum() - log_lam.sum()
    return total


def self_correcting_residuals(cfg, dataset):
    out = [_sc_pass(cfg, seq)[1][:-1] for seq in dataset.sequences]
    return np.concatenate(out) if out else np.empty(0)


# ---------------------------------------------------------------- PGEM


@dataclass
class PgemConfig:
    """Parents, windows and rate tables per type.

    ``tables[k][m]`` is the rate of type ``k`` when the active-parent bit
    pattern is ``m`` (bit ``j`` set iff ``parents[k][j]`` fired within
    ``windows[k][j]`` time units).
    """

    K: int
    S: int
    T: float
    parents: list
    windows: list
    tables: list
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.parents = [list(map(int, p)) for p in self.parents]
        self.windows = [list(map(float, w)) for w in self.windows]
        self.tables = [np.asarray(t, dtype=np.float64) for t in self.tables]
        if not (len(self.parents) == len(self.windows) == len(self.tables) == self.K):
            raise GeneratorError("PGEM needs one parent list, window list and table per type")
        for k in range(self.K):
            p, w, tab = self.parents[k], self.windows[k], self.tables[k]
            if len(w) != len(p):
                raise GeneratorError(f"type {k}: one window per parent required")
            if tab.shape != (2 ** len(p),):
                raise GeneratorError(f"type {k}: rate table must have 2^{len(p)} entries")
            if np.any(tab <= 0) or any(x <= 0 for x in w):
                raise GeneratorError(f"type {k}: rates and windows must be positive")
            if any(not 0 <= q < self.K for q in p):
                raise GeneratorError(f"type {k}: parent out of range")
        if self.T <= 0:
            raise GeneratorError("horizon must be positive")

    def ground_truth(self):
        gt = np.zeros((self.K, self.K))
        for k, ps in enumerate(self.parents):
            gt[k, ps] = 1.0
        return gt

    def rates(self, t, last):
        """Rates on the interval just after ``t`` given each type's last event time."""
        out = np.empty(self.K)
        for k in range(self.K):
            m = 0
            for j, (p, w) in enumerate(zip(self.parents[k], self.windows[k])):
                if last[p] >= 0 and t < last[p] + w:
                    m |= 1 << j
            out[k] = self.tables[k][m]
        return out

    def next_change(self, t, last):
        nxt = np.inf
        for k in range(self.K):
            for p, w in zip(self.parents[k], self.windows[k]):
                if last[p] >= 0 and last[p] + w > t:
                    nxt = min(nxt, last[p] + w)
        return nxt


def _pgem_sequence(cfg, rng):
    # a parent at time s is active on (s, s + w]; rates are constant between change points
    last = np.full(cfg.K, -1.0)
    t = 0.0
    times, types = [], []
    while True:
        lam = cfg.rates(t, last)
        t_change = min(cfg.next_change(t, last), cfg.T)
        t_new = t + rng.exponential(1.0 / lam.sum())
        if t_new >= t_change:
            if t_change >= cfg.T:
                break
            t = t_change
            continue
        k = min(int(np.searchsorted(np.cumsum(lam), rng.uniform(0.0, lam.sum()), side="right")), cfg.K - 1)
        t = t_new
        times.append(t)
        types.append(k)
        last[k] = t
    return np.array(times), np.array(types, dtype=np.int64)


def sample_pgem(cfg, rng=None):
    seqs = []
    for child in _sequence_rngs(rng, cfg.S):
        times, types = _pgem_sequence(cfg, child)
        seqs.append(EventSequence(times, types, cfg.T))
    gt = cfg.ground_truth()
    return Dataset(seqs, cfg.K, gt), gt


def pgem_nll(cfg, dataset):
    """Exact negative log-likelihood under a PGEM (integrates across change points)."""
    total = 0.0
    for seq in dataset.sequences:
        last = np.full(cfg.K, -1.0)
        t = 0.0
        for t_ev, k in list(zip(seq.times.tolist(), seq.types.tolist())) + [(seq.T, None)]:
            while True:
                lam = cfg.rates(t, last)
                nxt = min(cfg.next_change(t, last), t_ev)
                total += lam.sum() * (nxt - t)
                t = nxt
                if t >= t_ev:
                    break
            if k is not None:
                total -= np.log(cfg.rates(t_ev, last)[k])
                last[k] = t_ev
    return total


# ---------------------------------------------------------------- default configs

_SCALES = {
    # S, K, mean length, off-diagonal support size
    "full": dict(S=1000, K=10, mean_length=250, M=16),
    "desk": dict(S=200, K=5, mean_length=100, M=4),
}

_MOTIF_NAMES = ["A", "B", "C", "D", "E"]


def _synergy_motif(offset, window, base_rate, e_rates):
    """One five-type motif: E depends on A, B, C; the others are Poisson."""
    parents = [[], [], [], [], [offset + 0, offset + 1, offset + 2]]
    windows = [[], [], [], [], [window] * 3]
    # bit 0: A active, bit 1: B active, bit 2: C active
    table_e = []
    for m in range(8):
        a, b, c = bool(m & 1), bool(m & 2), bool(m & 4)
        if a and b:
            table_e.append(e_rates["AB"])
        elif c:
            table_e.append(e_rates["C"])
        elif a or b:
            table_e.append(e_rates["A"])
        else:
            table_e.append(e_rates["none"])
    tables = [[base_rate]] * 4 + [table_e]
    return parents, windows, tables


def default_config(name, scale="desk", rng=None):
    """Build the Excitation, Inhibition or Synergy configuration at ``full`` or ``desk`` scale."""
    if scale not in _SCALES:
        raise ValueError(f"unknown scale {scale!r}; expected 'full' or 'desk'")
    sc = _SCALES[scale]
    rng = np.random.default_rng(rng)
    K, S = sc["K"], sc["S"]
    if name == "excitation":
        support = _sparse_support(K, sc["M"], rng)
        alpha = np.where(support, rng.uniform(0.0, 1.0, size=(K, K)), 0.0)
        alpha = scale_to_spectral_radius(alpha, 0.8)
        mu = rng.uniform(0.0, 0.01, size=K)
        beta = rng.exponential(1.0 / 0.05, size=(K, K))
        return HawkesConfig(K, S, sc["mean_length"], mu, alpha, beta, 0.8)
    if name == "inhibition":
        support = _sparse_support(K, sc["M"], rng)
        w = np.where(support, rng.uniform(-0.5, 0.0, size=(K, K)), 0.0)
        alpha_rate = rng.uniform(0.0, 0.05, size=K)
        return SelfCorrectingConfig(K, S, sc["mean_length"], alpha_rate, w)
    if name == "synergy":
        e_rates = {"none": 0.05, "A": 0.1, "C": 0.2, "AB": 0.5}
        n_motifs = 2 if scale == "full" else 1
        parents, windows, tables, names = [], [], [], []
        for r in range(n_motifs):
            p, w, t = _synergy_motif(5 * r, 10.0, 0.05, e_rates)
            parents += p
            windows += w
            tables += t
            names += [f"{c}{r}" if n_motifs > 1 else c for c in _MOTIF_NAMES]
        T = 1000.0 if scale == "full" else 500.0
        return PgemConfig(5 * n_motifs, S, T, parents, windows, tables, names)
    raise ValueError(f"unknown process {name!r}; expected excitation, inhibition or synergy")


def sample(cfg, rng=None):
    """Dispatch to the sampler matching ``cfg``'s type."""
    if isinstance(cfg, HawkesConfig):
        return sample_hawkes(cfg, rng)
    if isinstance(cfg, SelfCorrectingConfig):
        return sample_self_correcting(cfg, rng)
    if isinstance(cfg, PgemConfig):
        return sample_pgem(cfg, rng)
    raise TypeError(f"not a generator config: {type(cfg).__name__}")


def generate(name, scale="desk", seed=0):
    """Draw a configuration and a dataset from one integer seed.

    The seed is split into independent streams for the configuration's random
    parameters and for the sequences. Returns ``(cfg, dataset)``.
    """
    cfg_ss, data_ss = np.random.SeedSequence(seed).spawn(2)
    cfg = default_config(name, scale, np.random.default_rng(cfg_ss))
    dataset, _ = sample(cfg, np.random.default_rng(data_ss))
    return cfg, dataset


def exact_nll(cfg, dataset):
    if isinstance(cfg, HawkesConfig):
        return hawkes_nll(cfg, dataset)
    if isinstance(cfg, SelfCorrectingConfig):
        return self_correcting_nll(cfg, dataset)
    if isinstance(cfg, PgemConfig):
        return pgem_nll(cfg, dataset)
    raise TypeError(f"not a generator config: {type(cfg).__name__}")


def config_to_json(cfg):
    kind = {HawkesConfig: "hawkes", SelfCorrectingConfig: "self_correcting", PgemConfig: "pgem"}[type(cfg)]
    body = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, list):
            v = [x.tolist() if isinstance(x, np.ndarray) else x for x in v]
        body[f.name] = v
    return json.dumps({"kind": kind, **body}, indent=2, sort_keys=True)


def config_from_json(text):
    body = json.loads(text)
    kind = body.pop("kind")
    cls = {"hawkes": HawkesConfig, "self_correcting": SelfCorrectingConfig, "pgem": PgemConfig}[kind]
    return cls(**body)

"""Semi-parametric neural point process.

Events are embedded as ``[elapsed time, V^T z]``, run through a gated
recurrent encoder, and each hidden state ``h_i`` is decoded into positive
weights ``alpha[k, r]`` over a fixed family of Gaussian basis densities, so

    lambda_k(t) = sum_r alpha[k, r](h_i) * psi_r(t - t_i)        on (t_i, t_{i+1}]

and the cumulative intensity over an interval of length ``dt`` is the closed
form ``sum_r alpha[k, r](h_i) * Psi_r(dt)``.

Everything here works on padded batches ``(B, n)``; a single sequence is a
batch of one.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import autodiff as ad
from .seqdata import Dataset, bucket_batches, make_batch

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "eventgc-npp"
CHECKPOINT_VERSION = 1
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------- basis


@dataclass(frozen=True)
class BasisFamily:
    """Dyadic Gaussian densities: ``mu_1 = 0``, ``mu_r = L / 2^(R-r)``, ``sigma_r = max(mu_r, mu_2) / 3``."""

    R: int
    L: float

    def __post_init__(self):
        if self.R < 1 or not self.L > 0:
            raise ValueError("basis needs R >= 1 and L > 0")

    @property
    def means(self):
        r = np.arange(1, self.R + 1)
        mu = self.L / 2.0 ** (self.R - r)
        mu[0] = 0.0
        return mu

    @property
    def stds(self):
        mu = self.means
        floor = mu[1] / 3.0 if self.R > 1 else self.L / 3.0
        return np.maximum(mu / 3.0, floor)

    @classmethod
    def from_gaps(cls, gaps):
        """Pick ``L`` near the 99th percentile and ``R`` so that ``mu_2`` sits near the median gap."""
        gaps = np.asarray(gaps, dtype=np.float64)
        gaps = gaps[gaps > 0]
        if gaps.size == 0:
            return cls(R=2, L=1.0)
        p50, p99 = np.percentile(gaps, [50, 99])
        L = float(p99)
        R = 2 + max(0, int(np.round(np.log2(p99 / p50))))
        return cls(R=R, L=L)

    def log_density(self, dt):
        dt = np.asarray(dt, dtype=np.float64)[..., None]
        z = (dt - self.means) / self.stds
        return -0.5 * z * z - np.log(self.stds) - _LOG_SQRT_2PI

    def density(self, dt):
        """``psi_r(dt)`` for every basis, shape ``dt.shape + (R,)``."""
        return np.exp(self.log_density(dt))

    def integral(self, dt):
        """``Psi_r(dt) = int_0^dt psi_r``, shape ``dt.shape + (R,)``."""
        dt = np.asarray(dt, dtype=np.float64)
        if np.any(dt < 0):
            raise ValueError("basis integral needs dt >= 0")
        mu, sd = self.means, self.stds
        return ndtr((dt[..., None] - mu) / sd) - ndtr(-mu / sd)

    def to_dict(self):
        return {"R": self.R, "L": self.L}


def basis_density(fam, r, dt):
    """Density of basis ``r`` (0-based) at ``dt``."""
    if np.any(np.asarray(dt) < 0):
        raise ValueError("basis density needs dt >= 0")
    return fam.density(dt)[..., r]


def basis_integral(fam, r, dt):
    return fam.integral(dt)[..., r]


# ---------------------------------------------------------------- model


@dataclass
class NppModel:
    K: int
    basis: BasisFamily
    params: dict
    d_emb: int = 64
    hidden: int = 64

    PARAM_NAMES = ("V", "W_in", "b_in", "U_ru", "U_c", "h0", "A1", "a1", "A2", "a2", "A_skip")

    @classmethod
    def init(cls, K, basis, d_emb=64, hidden=64, rng=None):
        """Uniform(+-1/sqrt(fan_in)) weights, zero initial state."""
        rng = np.random.default_rng(rng)
        H, KR, d_in = hidden, K * basis.R, 1 + d_emb

        def u(fan_in, *shape):
            b = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-b, b, size=shape)

        params = {
            "V": u(K, K, d_emb),
            "W_in": u(d_in, d_in, 3 * H),
            "b_in": u(H, 3 * H),
            "U_ru": u(H, H, 2 * H),
            "U_c": u(H, H, H),
            "h0": np.zeros(H),
            "A1": u(H, H, H),
            "a1": u(H, H),
            "A2": u(H, H, KR),
            "a2": u(H, KR),
            "A_skip": u(H, H, KR),
        }
        return cls(K, basis, params, d_emb, hidden)

    @classmethod
    def for_dataset(cls, dataset, d_emb=64, hidden=64, rng=None, basis=None):
        if basis is None:
            gaps = np.concatenate([s.gaps() for s in dataset.sequences] + [np.empty(0)])
            basis = BasisFamily.from_gaps(gaps)
        return cls.init(dataset.K, basis, d_emb, hidden, rng)

    def copy(self):
        return NppModel(self.K, self.basis, {k: v.copy() for k, v in self.params.items()}, self.d_emb, self.hidden)

    def tensors(self, requires_grad=False):
        return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def num_params(self):
        return int(sum(v.size for v in self.params.values()))


# ---------------------------------------------------------------- forward pieces


def embed(P, gaps, Z):
    """``[elapsed time ; Z @ V]`` for a (B, n) batch; all-zero ``Z`` rows embed to ``[dt ; 0]``."""
    Z = ad.constant(Z)
    e = ad.gather_rows(P["V"], Z)
    return ad.concat([ad.constant(np.asarray(gaps)[..., None]), e], axis=-1)


def embed_event(model, dt, type_index):
    """Single event embedding; ``type_index == K`` is the null type."""
    z = np.zeros(model.K)
    if type_index < model.K:
        z[type_index] = 1.0
    return embed(model.tensors(), np.array([dt]), z[None]).value[0]


def encode(P, X, mask):
    """Run the gated recurrent cell over embedded inputs ``X`` (B, n, d_in).

    Returns (B, n+1, H) states with ``h_0`` first. Where ``mask`` is zero the
    previous state is carried forward unchanged.
    """
    B, n = X.shape[0], X.shape[1]
    H = P["h0"].shape[0]
    XW = ad.add(ad.matmul(X, P["W_in"]), P["b_in"])
    XW_ru = XW[:, :, : 2 * H]
    XW_c = XW[:, :, 2 * H :]
    h = ad.broadcast(P["h0"], (B, H))
    states = [h]
    mask = np.asarray(mask, dtype=np.float64)
    for i in range(n):
        m = mask[:, i : i + 1]
        if not m.any():
            states.append(h)
            continue
        g = ad.sigmoid(ad.add(XW_ru[:, i, :], ad.matmul(h, P["U_ru"])))
        r, u = g[:, :H], g[:, H:]
        c = ad.tanh(ad.add(XW_c[:, i, :], ad.matmul(ad.mul(r, h), P["U_c"])))
        gate = u if m.all() else ad.mul(u, m)
        h = ad.add(h, ad.mul(gate, ad.sub(c, h)))
        states.append(h)
    return ad.stack(states, axis=1)


def alpha_net(P, Hs, K, R):
    """Positive basis weights (..., K, R) from hidden states (..., H)."""
    z = ad.tanh(ad.add(ad.matmul(Hs, P["A1"]), P["a1"]))
    out = ad.add(ad.add(ad.matmul(z, P["A2"]), P["a2"]), ad.matmul(Hs, P["A_skip"]))
    out = ad.softplus(out)
    return ad.reshape(out, Hs.shape[:-1] + (K, R))


def hidden_states(model, gaps, Z, mask, P=None):
    P = model.tensors() if P is None else P
    return encode(P, embed(P, gaps, Z), mask)


def cif(model, h, dt):
    """Intensities (K,) on the interval after a state ``h`` at elapsed time ``dt``."""
    a = alpha_net(model.tensors(), ad.constant(np.asarray(h)[None]), model.K, model.basis.R).value[0]
    return a @ model.basis.density(dt)


def cumulative_intensity(model, h, dt):
    """Closed-form ``f_k`` (K,) over ``(t_i, t_i + dt]`` from state ``h``."""
    a = alpha_net(model.tensors(), ad.constant(np.asarray(h)[None]), model.K, model.basis.R).value[0]
    return a @ model.basis.integral(dt)


# ---------------------------------------------------------------- likelihood


def _batch_arrays(batch):
    gaps = batch.gaps() * batch.mask
    last = np.zeros(batch.size)
    if batch.times.shape[1]:
        rows = np.arange(batch.size)
        last = np.where(batch.lengths > 0, batch.times[rows, np.maximum(batch.lengths - 1, 0)], 0.0)
    surv = batch.horizons - last
    return gaps, batch.onehot(), batch.mask, surv


def _nll_terms(model, alpha, gaps, Z, mask, surv):
    """Per-sequence NLL (B,) from decoded weights ``alpha`` (B, n+1, K, R)."""
    basis = model.basis
    n = gaps.shape[1]
    Psi = basis.integral(gaps) * mask[..., None]  # (B, n, R)
    logpsi = basis.log_density(gaps)
    shift = logpsi.max(axis=-1)
    psi_s = np.exp(logpsi - shift[..., None])
    a_prev = alpha[:, :n]
    comp = ad.sum(ad.sum(ad.mul(a_prev, Psi[:, :, None, :]), axis=-1), axis=-1)  # (B, n)
    sel = ad.sum(ad.sum(ad.mul(a_prev, Z[..., None] * psi_s[:, :, None, :]), axis=-1), axis=-1)
    loglam = ad.add(ad.log(ad.add(sel, 1.0 - mask)), shift * mask)
    a_last = alpha[:, n]  # (B, K, R): state after the last real event, carried through padding
    Psi_s = basis.integral(surv)
    surv_term = ad.sum(ad.sum(ad.mul(a_last, Psi_s[:, None, :]), axis=-1), axis=-1)
    return ad.add(ad.sum(ad.sub(comp, loglam), axis=1), surv_term)


def _regularizer_terms(model, alpha_bar, gaps, mask):
    Psi = model.basis.integral(gaps) * mask[..., None]
    n = gaps.shape[1]
    return ad.sum(ad.sum(ad.sum(ad.mul(alpha_bar[:, :n], Psi[:, :, None, :]), axis=-1), axis=-1), axis=1)


def batch_objective(model, batch, eta=0.0, P=None):
    """Return ``(objective, nll, reg)`` tensors summed over the batch.

    The regularizer is the cumulative intensity predicted from the same
    timestamps with every event type replaced by the null type.
    """
    P = model.tensors() if P is None else P
    gaps, Z, mask, surv = _batch_arrays(batch)
    B = batch.size
    K, R = model.K, model.basis.R
    if eta > 0:
        Zs = np.concatenate([Z, np.zeros_like(Z)], axis=0)
        Hs = encode(P, embed(P, np.concatenate([gaps, gaps]), Zs), np.concatenate([mask, mask]))
        alpha = alpha_net(P, Hs, K, R)
        a_real, a_null = alpha[:B], alpha[B:]
    else:
        Hs = encode(P, embed(P, gaps, Z), mask)
        a_real = alpha_net(P, Hs, K, R)
    nll = ad.sum(_nll_terms(model, a_real, gaps, Z, mask, surv))
    if eta > 0:
        reg = ad.sum(_regularizer_terms(model, a_null, gaps, mask))
        return ad.add(nll, ad.mul(reg, eta)), nll, reg
    zero = ad.Tensor(0.0)
    return nll, nll, zero


def nll(model, sequence):
    """Negative log-likelihood of one sequence, including the survival term up to ``T``."""
    ds = Dataset([sequence], model.K)
    batch = make_batch(ds, [0])
    P = model.tensors()
    gaps, Z, mask, surv = _batch_arrays(batch)
    alpha = alpha_net(P, encode(P, embed(P, gaps, Z), mask), model.K, model.basis.R)
    terms = _nll_terms(model, alpha, gaps, Z, mask, surv)
    val = float(terms.value[0])
    if not np.isfinite(val):
        idx = _first_bad_event(model, alpha.value[0], gaps[0], Z[0], mask[0])
        raise TrainingError(f"non-finite log-likelihood at event {idx}")
    return val


def _first_bad_event(model, alpha, gaps, Z, mask):
    lam = np.einsum("nkr,nr->nk", alpha[:-1], model.basis.density(gaps))
    sel = (lam * Z).sum(axis=1)
    bad = np.flatnonzero((mask > 0) & ~(sel > 0))
    return int(bad[0]) if bad.size else -1


def dataset_nll(model, dataset, batch_size=64):
    """Total negative log-likelihood over all sequences."""
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        _, value, _ = batch_objective(model, make_batch(dataset, idx), eta=0.0)
        total += float(value.value)
    return total


def objective(model, batch, eta):
    """Regularized training objective (a float) for ``batch``."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    return float(batch_objective(model, batch, eta)[0].value)


def objective_and_grad(model, batch, eta, scale=1.0):
    P = model.tensors(requires_grad=True)
    obj, nll_t, reg = batch_objective(model, batch, eta, P)
    ad.backward(ad.mul(obj, scale))
    grads = {k: (np.zeros_like(v.value) if v.grad is None else v.grad) for k, v in P.items()}
    # the null type has no row in V, so nothing to freeze there
    return float(obj.value), float(nll_t.value), float(reg.value), grads


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    lr: float = 2e-3
    epochs: int = 200
    batch_size: int = 16
    eta: float = 0.0
    valid_frac: float = 0.1
    seed: int = 0
    select_best: bool = True
    grad_clip: float | None = 10.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    valid_loss: list = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False


class Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _split_validation(S, frac, rng):
    n_val = int(round(S * frac)) if S > 1 else 0
    n_val = min(max(n_val, 1 if frac > 0 and S > 1 else 0), S - 1)
    perm = rng.permutation(S)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _eval_objective(model, dataset, eta, batch_size):
    total, events = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        batch = make_batch(dataset, np.arange(start, min(start + batch_size, len(dataset))))
        total += float(batch_objective(model, batch, eta)[0].value)
        events += int(batch.mask.sum())
    return total / max(events, 1)


def train(model, dataset, cfg=None, callback=None):
    """Fit ``model`` with Adam; returns ``(best_model, history)``.

    Losses are per event. Each epoch ends with a validation pass; the returned
    model is the snapshot with the lowest validation objective (or the last
    epoch when ``cfg.select_best`` is false). A non-finite loss stops training
    and returns the last good snapshot.
    """
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise TrainingError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    tr_idx, va_idx = _split_validation(len(dataset), cfg.valid_frac, rng)
    train_set = dataset.subset(tr_idx)
    valid_set = dataset.subset(va_idx) if len(va_idx) else None

    model = model.copy()
    opt = Adam(model.params, cfg.lr)
    hist = TrainHistory()
    best, best_loss = model.copy(), np.inf
    last_good = model.copy()
    for epoch in range(cfg.epochs):
        ep_loss, ep_events = 0.0, 0
        for batch in bucket_batches(train_set, cfg.batch_size, rng):
            n_ev = max(int(batch.mask.sum()), 1)
            obj, _, _, grads = objective_and_grad(model, batch, cfg.eta, scale=1.0 / n_ev)
            if not np.isfinite(obj) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                hist.diverged = True
                log.warning("non-finite loss at epoch %d; keeping last good snapshot", epoch)
                break
            if cfg.grad_clip is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > cfg.grad_clip:
                    grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
            opt.step(model.params, grads)
            ep_loss += obj
            ep_events += n_ev
        if hist.diverged:
            model = last_good
            break
        last_good = model.copy()
        hist.train_loss.append(ep_loss / max(ep_events, 1))
        if valid_set is not None:
            v = _eval_objective(model, valid_set, cfg.eta, 64)
        else:
            v = hist.train_loss[-1]
        hist.valid_loss.append(v)
        if v < best_loss:
            best_loss, best = v, model.copy()
            hist.best_epoch = epoch
        log.info("epoch %d train %.5f valid %.5f", epoch, hist.train_loss[-1], v)
        if callback is not None:
            callback(epoch, model, hist)
    if cfg.select_best and hist.best_epoch >= 0:
        return best, hist
    return model, hist


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model, path):
    body = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "K": model.K,
        "d_emb": model.d_emb,
        "hidden": model.hidden,
        "basis": model.basis.to_dict(),
        "params": {
            k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in sorted(model.params.items())
        },
    }
    Path(path).write_text(json.dumps(body))


def load_checkpoint(path):
    body = json.loads(Path(path).read_text())
    if body.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    if body.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {body.get('version')}")
    params = {
        k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in body["params"].items()
    }
    missing = set(NppModel.PARAM_NAMES) - set(params)
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)}")
    basis = BasisFamily(int(body["basis"]["R"]), float(body["basis"]["L"]))
    return NppModel(int(body["K"]), basis, params, int(body["d_emb"]), int(body["hidden"]))


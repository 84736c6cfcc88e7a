"""Integrated Gradients, exact Shapley values, and an axiom-checking harness.

A *target* is a callable taking a :class:`~eventgc.autodiff.Tensor` of shape
``(N,) + input_shape`` and returning a tensor of shape ``(N,)``: one value per
stacked input. Both methods exploit this: Integrated Gradients stacks its path
points, Shapley stacks its spliced coalition inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

__all__ = [
    "AttributionError",
    "AttributionResult",
    "FAMILIES",
    "midpoint_alphas",
    "integrated_gradients",
    "shapley",
    "CountingAttribution",
    "axiom_harness",
    "AxiomReport",
]


class AttributionError(ValueError):
    pass


@dataclass
class AttributionResult:
    scores: np.ndarray
    gap: float = float("nan")  # f(x) - f(baseline) - sum(scores)
    f_x: float = float("nan")
    f_baseline: float = float("nan")


def _evaluate(target, X):
    out = target(ad.constant(X))
    return np.asarray(out.value, dtype=np.float64).reshape(-1)


def _evaluate_rows(target, X):
    return np.asarray(target(ad.constant(X)).value, dtype=np.float64)


def midpoint_alphas(steps):
    return (np.arange(steps) + 0.5) / steps


def integrated_gradients(target, x, baseline, steps=50, chunk=None, with_gap=True, outputs=None):
    """Midpoint-rule Integrated Gradients of ``target`` at ``x`` against ``baseline``.

    Path points ``baseline + a (x - baseline)`` with ``a = (j - 1/2) / steps`` are
    stacked along a leading axis, ``chunk`` of them per forward/backward pass.

    With ``outputs=J`` the target returns ``(N, J)``: J scalar targets that
    share one forward pass per chunk, each with its own backward pass. The
    result is then a list of J attributions, one per output column.
    """
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if x.shape != baseline.shape:
        raise AttributionError(f"input {x.shape} and baseline {baseline.shape} differ in shape")
    if steps < 1:
        raise AttributionError("steps must be >= 1")
    if outputs is not None and outputs < 1:
        raise AttributionError("outputs must be >= 1")
    J = 1 if outputs is None else int(outputs)
    diff = x - baseline
    alphas = midpoint_alphas(steps)
    chunk = steps if chunk is None else max(1, int(chunk))
    totals = np.zeros((J,) + x.shape)
    expand = (slice(None),) + (None,) * x.ndim
    for lo in range(0, steps, chunk):
        a = alphas[lo : lo + chunk]
        path = ad.Tensor(baseline + a[expand] * diff, requires_grad=True)
        out = target(path)
        want = (len(a),) if outputs is None else (len(a), J)
        if out.shape != want:
            raise AttributionError(f"target must return shape {want} for the stacked inputs, got {out.shape}")
        for j in range(J):
            # interior gradients are released after each pass, so the tape is reusable
            ad.backward(ad.sum(out if outputs is None else out[:, j]))
            if path.grad is not None:
                totals[j] += path.grad.sum(axis=0)
                path.grad = None
    if not np.all(np.isfinite(totals)):
        raise AttributionError("non-finite gradient along the integration path")
    ends = _evaluate_rows(target, np.stack([x, baseline])).reshape(2, J) if with_gap else None
    results = []
    for j in range(J):
        res = AttributionResult(diff * (totals[j] / steps))
        if with_gap:
            fx, fb = ends[0, j], ends[1, j]
            res.f_x, res.f_baseline = float(fx), float(fb)
            res.gap = res.f_x - res.f_baseline - float(res.scores.sum())
        results.append(res)
    return results[0] if outputs is None else results


def _popcount(a):
    a = a.copy()
    c = np.zeros_like(a)
    while np.any(a):
        c += a & 1
        a >>= 1
    return c


def shapley(target, x, baseline, max_dim=20, chunk=4096):
    """Exact Shapley values with value function ``v(U) = f(x on U, baseline elsewhere)``."""
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if x.shape != baseline.shape:
        raise AttributionError(f"input {x.shape} and baseline {baseline.shape} differ in shape")
    d = x.size
    if d > max_dim:
        raise AttributionError(f"exact Shapley enumeration limited to {max_dim} coordinates, got {d}")
    xf, bf = x.reshape(-1), baseline.reshape(-1)
    coalitions = np.arange(2**d, dtype=np.int64)
    bits = ((coalitions[:, None] >> np.arange(d)) & 1).astype(bool)
    v = np.empty(2**d)
    for lo in range(0, 2**d, chunk):
        pts = np.where(bits[lo : lo + chunk], xf, bf).reshape((-1,) + x.shape)
        v[lo : lo + chunk] = _evaluate(target, pts)
    size = _popcount(coalitions)
    weight = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)])
    phi = np.empty(d)
    for i in range(d):
        without = coalitions[((coalitions >> i) & 1) == 0]
        phi[i] = np.sum(weight[size[without]] * (v[without | (1 << i)] - v[without]))
    scores = phi.reshape(x.shape)
    fx, fb = v[-1], v[0]
    return AttributionResult(scores, fx - fb - float(phi.sum()), fx, fb)


class CountingAttribution:
    """Wrap an attribution function and count attributions.

    A call with ``outputs=J`` produces J attributions and counts as J.
    """

    def __init__(self, method=integrated_gradients, **defaults):
        self.method = method
        self.defaults = defaults
        self.calls = 0

    def __call__(self, target, x, baseline, **kw):
        kw = {**self.defaults, **kw}
        self.calls += kw.get("outputs") or 1
        return self.method(target, x, baseline, **kw)


# ---------------------------------------------------------------- axiom harness


def _random_target(rng, d, used, family):
    """Return ``(f, f_alt)``: a smooth rowwise target and an algebraically identical rewrite."""
    mask = np.zeros(d)
    mask[used] = 1.0
    if family == "linear":
        w = rng.normal(size=d) * mask
        c = rng.normal()

        def f(X):
            return ad.add(ad.matmul(X, w[:, None])[:, 0], c)

        def f_alt(X):
            return ad.add(ad.sum(ad.mul(X, w), axis=1), c)

        return f, f_alt
    if family == "sigmoid":
        J = int(rng.integers(1, 5))
        A = rng.normal(size=(d, J)) * mask[:, None]
        b = rng.normal(size=J)
        c = rng.normal(size=J)

        def f(X):
            return ad.matmul(ad.sigmoid(ad.add(ad.matmul(X, A), b)), c[:, None])[:, 0]

        def f_alt(X):
            # sigmoid(z) = exp(-softplus(-z))
            z = ad.add(ad.matmul(X, A), b)
            return ad.sum(ad.mul(ad.exp(ad.neg(ad.softplus(ad.neg(z)))), c), axis=1)

        return f, f_alt
    if family == "tanh":
        J = int(rng.integers(1, 5))
        A = rng.normal(size=(d, J)) * mask[:, None] / np.sqrt(max(len(used), 1))
        b = rng.normal(size=J)
        c = rng.normal(size=(J, 1))

        def f(X):
            return ad.matmul(ad.tanh(ad.add(ad.matmul(X, A), b)), c)[:, 0]

        def f_alt(X):
            # tanh(z) = 2 sigmoid(2z) - 1
            z = ad.add(ad.matmul(X, A), b)
            return ad.matmul(ad.sub(ad.mul(ad.sigmoid(ad.mul(z, 2.0)), 2.0), 1.0), c)[:, 0]

        return f, f_alt
    if family == "multilinear":
        terms = []
        for _ in range(int(rng.integers(1, 4))):
            size = int(rng.integers(1, min(3, len(used)) + 1))
            terms.append((rng.choice(used, size=size, replace=False), rng.normal()))

        def f(X):
            out = None
            for idx, coef in terms:
                prod = X[:, int(idx[0])]
                for j in idx[1:]:
                    prod = ad.mul(prod, X[:, int(j)])
                prod = ad.mul(prod, coef)
                out = prod if out is None else ad.add(out, prod)
            return out

        def f_alt(X):
            out = None
            for idx, coef in terms:
                sel = np.zeros((d, len(idx)))
                sel[idx, np.arange(len(idx))] = 1.0
                cols = ad.matmul(X, sel)
                prod = ad.mul(cols[:, 0], coef)
                for j in range(1, len(idx)):
                    prod = ad.mul(prod, cols[:, j])
                out = prod if out is None else ad.add(out, prod)
            return out

        return f, f_alt
    if family == "softplus_product":
        a = rng.normal(size=d) * mask / np.sqrt(max(len(used), 1))
        w = rng.normal(size=d) * mask / np.sqrt(max(len(used), 1))

        def f(X):
            return ad.mul(ad.softplus(ad.matmul(X, a[:, None])[:, 0]), ad.matmul(X, w[:, None])[:, 0])

        def f_alt(X):
            # softplus(z) = log(1 + e^z)
            z = ad.sum(ad.mul(X, a), axis=1)
            return ad.mul(ad.log(ad.add(ad.exp(z), 1.0)), ad.sum(ad.mul(X, w), axis=1))

        return f, f_alt
    raise ValueError(f"unknown function family {family!r}")


FAMILIES = ("linear", "sigmoid", "tanh", "multilinear", "softplus_product")


def _sum_target(f, g, c_f=1.0, c_g=1.0):
    def h(X):
        return ad.add(ad.mul(f(X), c_f), ad.mul(g(X), c_g))

    return h


def _scaled(f, c):
    return lambda X: ad.mul(f(X), c)


def _batched(f, d):
    """``F(X) = sum_i f(X_i)`` over stacked inputs of shape (n, d)."""

    def F(X):
        N, n = X.shape[0], X.shape[1]
        vals = f(ad.reshape(X, (N * n, d)))
        return ad.sum(ad.reshape(vals, (N, n)), axis=1)

    return F


@dataclass
class AxiomReport:
    method: str
    n_targets: int
    tolerance: float
    completeness_tolerance: float
    max_violation: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def record(self, axiom, value, tol, target_id):
        self.max_violation[axiom] = max(self.max_violation.get(axiom, 0.0), float(value))
        if not value <= tol:
            self.violations.append({"axiom": axiom, "target": target_id, "value": float(value), "tol": tol})

    def to_dict(self):
        return {
            "method": self.method,
            "n_targets": self.n_targets,
            "tolerance": self.tolerance,
            "completeness_tolerance": self.completeness_tolerance,
            "max_violation": dict(sorted(self.max_violation.items())),
            "violations": self.violations,
            "ok": self.ok,
        }


def axiom_harness(
    method="ig",
    n_targets=200,
    families=FAMILIES,
    max_dim=16,
    tol=1e-8,
    completeness_tol=1e-4,
    steps=200,
    batch_n=3,
    rng=0,
):
    """Check linearity, completeness, null player, implementation invariance,
    fidelity-to-control and (IG only) batchability on random smooth targets.

    Differences are measured relative to ``max(1, max |A|)``; completeness is
    the absolute gap ``f(x) - f(baseline) - sum A``.
    """
    rng = np.random.default_rng(rng)
    if method == "ig":
        attr = lambda f, x, b: integrated_gradients(f, x, b, steps=steps)  # noqa: E731
    elif method == "shapley":
        attr = lambda f, x, b: shapley(f, x, b)  # noqa: E731
    else:
        raise ValueError(f"unknown attribution method {method!r}")
    report = AxiomReport(method, n_targets, tol, completeness_tol)
    for t in range(n_targets):
        family = families[t % len(families)]
        d = int(rng.integers(2, max_dim + 1))
        n_used = int(rng.integers(1, d + 1))
        used = np.sort(rng.choice(d, size=n_used, replace=False))
        unused = np.setdiff1d(np.arange(d), used)
        f, f_alt = _random_target(rng, d, used, family)
        g, _ = _random_target(rng, d, used, families[(t + 1) % len(families)])
        x = rng.uniform(-1.0, 1.0, size=d)
        b = rng.uniform(-1.0, 1.0, size=d)
        tied = rng.random(d) < 0.25
        b[tied] = x[tied]
        c = float(rng.normal())

        A_f = attr(f, x, b)
        A_g = attr(g, x, b)
        A_fg = attr(_sum_target(f, g), x, b)
        A_cf = attr(_scaled(f, c), x, b)
        scale = max(1.0, np.abs(A_f.scores).max(), np.abs(A_g.scores).max())
        report.record("linearity_additive", np.abs(A_f.scores + A_g.scores - A_fg.scores).max() / scale, tol, t)
        report.record("linearity_scaling", np.abs(c * A_f.scores - A_cf.scores).max() / scale, tol, t)
        report.record("completeness", abs(A_f.gap), completeness_tol, t)
        report.record("null_player", np.abs(A_f.scores[unused]).max() if unused.size else 0.0, tol, t)
        report.record("fidelity_to_control", np.abs(A_f.scores[tied]).max() if tied.any() else 0.0, tol, t)
        A_alt = attr(f_alt, x, b)
        report.record("implementation_invariance", np.abs(A_f.scores - A_alt.scores).max() / scale, tol, t)
        if method == "ig":
            X = rng.uniform(-1.0, 1.0, size=(batch_n, d))
            Xb = rng.uniform(-1.0, 1.0, size=(batch_n, d))
            A_batch = attr(_batched(f, d), X, Xb).scores
            per = np.stack([attr(f, X[i], Xb[i]).scores for i in range(batch_n)])
            report.record("batchability", np.abs(A_batch - per).max() / max(1.0, np.abs(per).max()), tol, t)
    return report

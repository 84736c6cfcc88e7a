"""Integrated Gradients and Shapley values on functions small enough to check by hand."""
import numpy as np

from eventgc import autodiff as ad
from eventgc.attribution import integrated_gradients, shapley

# %% A product of two inputs. Symmetry says each input gets half of f(x) - f(baseline).
f = lambda X: ad.mul(X[:, 0], X[:, 1])
x, base = np.array([1.0, 1.0]), np.zeros(2)
print("IG      x1*x2:", integrated_gradients(f, x, base, steps=50).scores)
print("Shapley x1*x2:", shapley(f, x, base).scores)

# %% A saturating function. The midpoint rule converges at rate 1/m^2.
g = lambda X: ad.sum(ad.sigmoid(ad.mul(X, 3.0)), axis=1)
exact = 1 / (1 + np.exp(-3.0)) - 0.5
for m in (5, 10, 20, 40, 80):
    res = integrated_gradients(g, np.array([1.0]), np.array([0.0]), steps=m)
    print(f"m={m:3d}  score={res.scores[0]:.10f}  error={res.scores[0] - exact:+.2e}")

# %% A coordinate equal to its baseline receives exactly zero.
h = lambda X: ad.sigmoid(ad.add(X[:, 0], X[:, 1]))
print("tied coordinate:", integrated_gradients(h, np.array([0.7, 0.2]), np.array([0.0, 0.2])).scores)

# %% The two methods part ways once interactions are not multilinear.
q = lambda X: ad.mul(ad.mul(X[:, 0], X[:, 0]), X[:, 1])
x = np.array([2.0, 1.0])
print("IG      x1^2*x2:", integrated_gradients(q, x, np.zeros(2), steps=200).scores)
print("Shapley x1^2*x2:", shapley(q, x, np.zeros(2)).scores)

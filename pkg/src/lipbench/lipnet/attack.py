"""Cheap empirical attack used to sanity-check certified points."""
from __future__ import annotations

import numpy as np

from ..numerics import RandomSource
from .network import Network, input_gradient
from .training import margins


def random_ball_attack(net: Network, x, y, epsilon, tries=1000, rng=None) -> float:
    """Smallest score margin found on the sphere of L2 radius ``epsilon`` around ``x``.

    Tries ``tries`` uniformly random directions plus the direction that
    decreases the margin fastest at ``x``. With epsilon = 0 this is the clean
    margin. A negative result means a misclassifying perturbation was found.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = np.asarray(x, dtype=np.float64).ravel()
    y = int(y)
    clean = float(margins(net.forward(x[None, :]), [y])[0])
    if epsilon == 0:
        return clean
    rng = rng if rng is not None else RandomSource(0).split("attack")
    dirs = rng.normal(size=(tries, x.size))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)

    # gradient of the margin s_y - s_c at x, c the strongest other class
    s = net.forward(x[None, :])[0]
    other = s.copy()
    other[y] = -np.inf
    dS = np.zeros((1, s.size))
    dS[0, y] = 1.0
    dS[0, int(np.argmax(other))] = -1.0
    g = input_gradient(net, x[None, :], dS)[0]
    gn = np.linalg.norm(g)
    if gn > 0:
        dirs = np.vstack([dirs, -g / gn])

    worst = clean
    for start in range(0, len(dirs), 1024):
        P = x[None, :] + epsilon * dirs[start:start + 1024]
        m = margins(net.forward(P), np.full(len(P), y))
        worst = min(worst, float(m.min()))
    return worst

"""Exact GEM projection by enumerating active constraint sets.

The projection of ``g`` onto the cone ``{x : G x >= 0}`` is the projection onto
the subspace ``{x : G_A x = 0}`` for some active set ``A``; among candidates
that are feasible, the closest to ``g`` is the answer.
"""

from itertools import combinations

import numpy as np


def project_brute_force(g, G, feas_tol=1e-10):
    g = np.asarray(g, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    m = G.shape[0]
    best, best_dist = None, np.inf
    for size in range(m + 1):
        for active in combinations(range(m), size):
            if active:
                A = G[list(active)]
                # remove the component of g lying in the row space of A
                coef = np.linalg.lstsq(A @ A.T, A @ g, rcond=None)[0]
                x = g - A.T @ coef
            else:
                x = g
            scale = max(1.0, np.abs(G).max() * np.abs(g).max())
            if np.all(G @ x >= -feas_tol * scale):
                d = np.sum((x - g) ** 2)
                if d < best_dist - 1e-15:
                    best, best_dist = x, d
    return best

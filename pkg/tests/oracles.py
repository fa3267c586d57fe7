"""Brute-force reference implementations used by the tests.

Nothing here imports the package's assembly code: states, operators and sums
are built with plain loops so that agreement is an independent check.
"""

import math
from itertools import combinations

import numpy as np


def ball_points(radius):
    """Integer points with x^2 + y^2 <= radius^2 (kappa = 1)."""
    m = int(math.floor(radius))
    return [(x, y) for x in range(-m, m + 1) for y in range(-m, m + 1) if x * x + y * y <= radius * radius]


def sharp(k, radius):
    return 1.0 if k[0] ** 2 + k[1] ** 2 <= radius * radius + 1e-9 else 0.0


def gaussian(k, radius, trunc=6.0):
    k2 = k[0] ** 2 + k[1] ** 2
    if k2 > (trunc * radius) ** 2 * (1 + 1e-12):
        return 0.0
    return math.exp(-k2 / (2.0 * radius ** 2))


def coupling_inverse(alpha, beta, support, mass, e_b):
    total = 0.0
    for k in support:
        w = (alpha(k) * beta((-k[0], -k[1]))) ** 2
        if w:
            total += w / ((1 + 1 / mass) * (k[0] ** 2 + k[1] ** 2) - e_b)
    return total


def fock_hamiltonian(n_fermions, radius, alpha, beta, mass, e_b, support=None):
    """Dense H = H0 - g V^* V on the N-fermion, total-momentum-zero sector.

    States are (sorted fermion tuple, impurity momentum) with every momentum
    in the ball of ``radius``.  V removes one fermion k and the impurity p and
    creates an angel of momentum k + p with amplitude alpha(k) beta(p) and the
    fermionic sign of the removed position.
    """
    modes = ball_points(radius)
    states = []
    for combo in combinations(sorted(modes), n_fermions):
        p = (-sum(c[0] for c in combo), -sum(c[1] for c in combo))
        if p[0] ** 2 + p[1] ** 2 <= radius * radius + 1e-9:
            states.append((combo, p))
    index = {s: i for i, s in enumerate(states)}
    support = support if support is not None else modes
    ginv = coupling_inverse(alpha, beta, support, mass, e_b)
    g = 1.0 / ginv
    # V as a map from physical states to dicts over angel states
    angel_index = {}
    v_rows = {}
    for i, (combo, p) in enumerate(states):
        for j, k in enumerate(combo):
            amp = alpha(k) * beta(p)
            if amp == 0.0:
                continue
            rest = combo[:j] + combo[j + 1:]
            q = (k[0] + p[0], k[1] + p[1])
            key = (rest, q)
            a = angel_index.setdefault(key, len(angel_index))
            v_rows.setdefault(a, {})[i] = v_rows.get(a, {}).get(i, 0.0) + (-1) ** j * amp
    dim = len(states)
    v = np.zeros((len(angel_index), dim))
    for a, row in v_rows.items():
        for i, val in row.items():
            v[a, i] = val
    h0 = np.array([sum(c[0] ** 2 + c[1] ** 2 for c in combo) + (p[0] ** 2 + p[1] ** 2) / mass
                   for combo, p in states])
    return np.diag(h0) - g * v.T @ v, states, index


def radial_sum(f, radius):
    """sum of f(k) over |k| <= radius, kappa = 1, vectorized on a grid."""
    m = int(math.floor(radius))
    x = np.arange(-m, m + 1)
    gx, gy = np.meshgrid(x, x, indexing="ij")
    k2 = gx * gx + gy * gy
    mask = k2 <= radius * radius
    return math.fsum(f(gx[mask], gy[mask]).tolist())


def secular_root(f, lo, hi, tol=1e-14):
    """Plain bisection on a sign change of f over [lo, hi]."""
    flo = f(lo)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)

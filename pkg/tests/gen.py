"""Random instance generators shared by the property and acceptance tests."""

import numpy as np

from isskit.gains import GainMatrix, _cycle_gain, gain_cycles
from isskit.kfun import PowerLaw

EXPONENTS = (0.5, 1.0, 2.0)
# the iteration oracle cannot separate composites this close to the identity
AMBIGUOUS = (0.98, 1.02)
CROSSING_WINDOW = (1e-2, 1e2)


def _resolvable(G: GainMatrix) -> bool:
    for cyc in gain_cycles(G):
        f = _cycle_gain(G, cyc)
        if f.expo == 1.0:
            if AMBIGUOUS[0] <= f.coeff <= AMBIGUOUS[1]:
                return False
        else:
            r_star = f.coeff ** (-1.0 / (f.expo - 1.0))
            if not CROSSING_WINDOW[0] <= r_star <= CROSSING_WINDOW[1]:
                return False
    return True


def random_gain_matrix(rng, n_max: int = 5, edge_prob: float = 0.5, balanced_prob: float = 0.7):
    """Random power-law gain matrix with 2 <= n <= n_max.

    With probability ``balanced_prob`` exponents come from node potentials
    (``expo_ij = e_i / e_j``) so every cycle has composite exponent 1 and the
    verdict hinges on coefficients; otherwise exponents are drawn freely.
    Instances the iteration oracle cannot resolve are redrawn.
    """
    while True:
        n = int(rng.integers(2, n_max + 1))
        balanced = rng.uniform() < balanced_prob
        pot = rng.choice(EXPONENTS, size=n)
        entries = {}
        for i in range(n):
            for j in range(n):
                if i == j or rng.uniform() >= edge_prob:
                    continue
                expo = pot[i] / pot[j] if balanced else float(rng.choice(EXPONENTS))
                entries[(i, j)] = PowerLaw(float(10 ** rng.uniform(-1.0, 0.3)), float(expo))
        G = GainMatrix(n, entries)
        if _resolvable(G):
            return G


def split_instances(rng, n_pass: int, n_fail: int, **kw):
    from isskit.gains import small_gain_check

    passing, failing = [], []
    while len(passing) < n_pass or len(failing) < n_fail:
        G = random_gain_matrix(rng, **kw)
        ok = small_gain_check(G, cross_check=False).verdict
        if ok and len(passing) < n_pass:
            passing.append(G)
        elif not ok and len(failing) < n_fail:
            failing.append(G)
    return passing, failing

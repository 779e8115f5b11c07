"""Pure-Python reference versions of the occupation-basis kernels."""
from itertools import combinations_with_replacement

import numpy as np


def enumerate_states(n_modes, nmax):
    rows = [np.zeros(n_modes, dtype=np.int16)]
    for total in range(1, nmax + 1):
        for combo in combinations_with_replacement(range(n_modes), total):
            rows.append(np.bincount(combo, minlength=n_modes).astype(np.int16))
    return np.array(rows, dtype=np.int16).reshape(len(rows), n_modes)


def raise_table(occ, nmax):
    lookup = {row.tobytes(): i for i, row in enumerate(occ)}
    table = np.full(occ.shape, -1, dtype=np.int64)
    totals = occ.sum(axis=1)
    for s in np.flatnonzero(totals < nmax):
        row = occ[s].copy()
        for j in range(occ.shape[1]):
            row[j] += 1
            table[s, j] = lookup[row.tobytes()]
            row[j] -= 1
    return table

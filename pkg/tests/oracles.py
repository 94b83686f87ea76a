"""Independent brute-force references used by the tests."""

import itertools

import numpy as np


def exhaustive_kmeans_optimum(points: np.ndarray, k: int) -> float:
    """Minimum within-cluster sum of squares over all k^n labelings."""
    n = len(points)
    labels = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int8)
    onehot = (labels[:, :, None] == np.arange(k)).astype(np.float64)  # (A, n, k)
    counts = onehot.sum(axis=1)  # (A, k)
    sums = np.einsum("ank,nd->akd", onehot, points)
    sq = (points**2).sum()
    # sum_j ||x - mu_j||^2 = sum ||x||^2 - sum_j |S_j|^2 / n_j
    with np.errstate(invalid="ignore", divide="ignore"):
        between = np.where(counts > 0, (sums**2).sum(axis=2) / counts, 0.0)
    return float((sq - between.sum(axis=1)).min())


def jacobi_eigenvalues(a: np.ndarray, tol=1e-12, max_sweeps=100) -> np.ndarray:
    """Cyclic Jacobi rotations on a symmetric matrix; ascending eigenvalues."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * (np.triu(a, 1) ** 2).sum())
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-15:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1)) if theta else 1.0
                c = 1 / np.sqrt(t * t + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


def grid_der(reference, hypothesis, collar, step=0.001):
    """DER on a uniform time grid, minimised over every speaker bijection.

    Times must lie on the grid; each cell is sampled at its midpoint.
    """
    end = max(t.end for t in list(reference) + list(hypothesis))
    n = int(round(end / step)) + 1
    mids = (np.arange(n) + 0.5) * step
    ref_spk = sorted({t.speaker for t in reference})
    hyp_spk = sorted({t.speaker for t in hypothesis})

    def act(turns, names):
        m = np.zeros((len(names), n), dtype=bool)
        for t in turns:
            m[names.index(t.speaker)] |= (mids > t.start) & (mids < t.end)
        return m

    R, H = act(reference, ref_spk), act(hypothesis, hyp_spk)
    scored = np.ones(n, dtype=bool)
    for t in reference:
        for b in (t.start, t.end):
            scored &= ~((mids > b - collar) & (mids < b + collar))
    R, H = R[:, scored], H[:, scored]
    n_ref, n_hyp = R.sum(axis=0), H.sum(axis=0)
    total = n_ref.sum()
    base_err = np.maximum(n_ref, n_hyp).sum()
    best_correct = 0
    r, h = len(ref_spk), len(hyp_spk)
    if r <= h:
        for cols in itertools.permutations(range(h), r):
            best_correct = max(best_correct, sum(int((R[i] & H[c]).sum()) for i, c in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(r), h):
            best_correct = max(best_correct, sum(int((R[rw] & H[j]).sum()) for j, rw in enumerate(rows)))
    return 100.0 * (base_err - best_correct) / total

"""k-means with k-means++ seeding and eigen-gap speaker counting."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_trace: tuple[float, ...] = ()


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (
        (points * points).sum(axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centroids[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with chosen centroids
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centroids[j] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centroids[j : j + 1])[:, 0])
    return centroids


def _lloyd(points, centroids, max_iter, tol):
    trace = []
    labels = None
    for it in range(1, max_iter + 1):
        d = _sq_dists(points, centroids)
        labels = d.argmin(axis=1)
        trace.append(float(d[np.arange(len(points)), labels].sum()))
        new = np.empty_like(centroids)
        for j in range(centroids.shape[0]):
            members = points[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
            else:
                # empty cluster: move it to the point worst served so far
                far = d[np.arange(len(points)), labels].argmax()
                new[j] = points[far]
                labels[far] = j
                d[far] = 0.0
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break
    d = _sq_dists(points, centroids)
    labels = d.argmin(axis=1)
    # exact inertia from centred residuals, not the expanded-square formula
    inertia = float(((points - centroids[labels]) ** 2).sum())
    return labels, centroids, inertia, it, tuple(trace)


def _hartigan(points, labels, k, max_passes=100):
    """Single-point transfers that strictly lower the objective.

    Moving x from cluster a to b changes the inertia by
    n_b/(n_b+1)·|x-c_b|² - n_a/(n_a-1)·|x-c_a|², so a converged Lloyd
    solution can still improve. Any fixed point here is also a Lloyd fixed
    point, and every move lowers the inertia.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    for _ in range(max_passes):
        moved = False
        for i, x in enumerate(points):
            a = labels[i]
            if counts[a] <= 1:
                continue
            d = ((sums / counts[:, None] - x) ** 2).sum(axis=1)
            leave = counts[a] / (counts[a] - 1) * d[a]
            join = counts / (counts + 1) * d
            join[a] = np.inf
            b = int(join.argmin())
            if join[b] < leave * (1 - 1e-12):
                sums[a] -= x
                sums[b] += x
                counts[a] -= 1
                counts[b] += 1
                labels[i] = b
                moved = True
        if not moved:
            break
    return labels, sums / counts[:, None]


def kmeans(
    points: np.ndarray,
    k: int,
    restarts: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
    rng: np.random.Generator | int | None = 0,
) -> ClusterAssignment:
    """Best of ``restarts`` Lloyd runs, each seeded with k-means++ and
    polished with Hartigan transfers."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points {n}")
    rng = np.random.default_rng(rng)
    best = None
    for _ in range(max(1, restarts)):
        init = kmeans_plusplus(points, k, rng)
        labels, cents, inertia, n_iter, trace = _lloyd(points, init, max_iter, tol)
        if k > 1 and len(np.unique(labels)) == k:
            refined, refined_cents = _hartigan(points, labels, k)
            refined_inertia = float(((points - refined_cents[refined]) ** 2).sum())
            if refined_inertia < inertia:
                trace = trace + (inertia,)
                labels, cents, inertia = refined, refined_cents, refined_inertia
        # ties (equal up to rounding) keep the earliest restart, so relabeled
        # copies of one optimum cannot swap places under scaling
        if best is None or inertia < best.inertia * (1 - 1e-12):
            best = ClusterAssignment(labels, cents, inertia, n_iter, trace)
    return best


# ------------------------------------------------------------- eigen-gap


@dataclass
class AffinityMatrix:
    values: np.ndarray
    p_binarize: float
    symmetrization: str = "max"


@dataclass
class EigengapResult:
    num_speakers: int
    eigenvalues: np.ndarray
    gaps: np.ndarray  # gaps[j] = lambda_{k+1} - lambda_k for k = 2 + j
    components_exceed_max: bool = False


def cosine_similarity_matrix(embeddings: np.ndarray) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    x = x / np.where(norms > 0, norms, 1.0)
    sim = x @ x.T
    np.fill_diagonal(sim, 1.0)
    return np.clip(sim, -1.0, 1.0)


def binarized_affinity(embeddings: np.ndarray, p_binarize: float = 0.2) -> AffinityMatrix:
    """Keep each row's top ``ceil(p * n)`` cosine similarities as 1, then
    symmetrise with an elementwise max."""
    if not 0 < p_binarize <= 1:
        raise ValueError("p_binarize must lie in (0, 1]")
    sim = cosine_similarity_matrix(embeddings)
    n = sim.shape[0]
    keep = max(1, math.ceil(p_binarize * n))
    # stable sort so ties resolve toward lower column index
    order = np.argsort(-sim, axis=1, kind="stable")[:, :keep]
    a = np.zeros_like(sim)
    np.put_along_axis(a, order, 1.0, axis=1)
    np.fill_diagonal(a, 1.0)
    a = np.maximum(a, a.T)
    return AffinityMatrix(a, p_binarize)


def normalized_laplacian(affinity: np.ndarray) -> np.ndarray:
    deg = affinity.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    lap = -affinity * inv_sqrt[:, None] * inv_sqrt[None, :]
    lap[np.diag_indices_from(lap)] += 1.0
    return lap


def eigengap_analysis(
    affinity: np.ndarray, max_speakers: int = 10, min_speakers: int = 2
) -> EigengapResult:
    a = np.asarray(affinity, dtype=np.float64)
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least two segments")
    if not 1 <= min_speakers <= max_speakers <= n:
        raise ValueError(f"need {min_speakers} <= max_speakers={max_speakers} <= n={n}")
    lam = np.linalg.eigvalsh(normalized_laplacian(a))
    n_zero = int((lam < 1e-8).sum())
    exceed = n_zero > max_speakers
    if exceed:
        warnings.warn(
            f"affinity graph has {n_zero} components, more than max_speakers={max_speakers}"
        )
    k, window = pick_eigengap(lam, min_speakers, max_speakers)
    if exceed:
        k = max_speakers
    return EigengapResult(k, lam, window, exceed)


def pick_eigengap(eigenvalues: np.ndarray, min_speakers: int, max_speakers: int):
    """argmax over k of lambda_{k+1} - lambda_k (1-based, ascending).

    Returns (k, gaps considered). Ties go to the smallest k.
    """
    lam = np.sort(np.asarray(eigenvalues, dtype=np.float64))
    gaps = np.diff(lam)  # gaps[k-1] = lambda_{k+1} - lambda_k
    window = gaps[min_speakers - 1 : min(max_speakers, len(lam) - 1)]
    if window.size == 0:
        # e.g. n == min_speakers: only one admissible value
        return min_speakers, window
    return min_speakers + int(np.argmax(window)), window


def estimate_num_speakers(
    embeddings: np.ndarray,
    max_speakers: int = 10,
    p_binarize: float = 0.2,
    min_speakers: int = 2,
) -> int:
    x = np.asarray(embeddings)
    aff = binarized_affinity(x, p_binarize)
    return eigengap_analysis(aff.values, max_speakers, min_speakers).num_speakers

"""Utility and privacy evaluation.

Clustering (k-means and label agreement), the synthetic benchmark data, the
KDE extrapolation experiment, the attack-accuracy sweep over partition
counts and known fractions, and the access-log difference clustering that
runs on perturbed data.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .attack import (
    AttackError,
    DivergenceConfig,
    ak_ica_attack,
    bounds_of,
    density_divergence,
    kde_fit,
)
from .linalg import LinAlgError, optimal_assignment
from .transform import (
    Dataset,
    Partitioning,
    PerturbationKey,
    corresponding_distances,
    make_key,
    normalize_to_unit,
    perturb,
)

__all__ = [
    "EvaluationError",
    "ClusteringResult",
    "SweepCell",
    "SweepResult",
    "Experiment1Report",
    "Application3Result",
    "kmeans",
    "cluster_agreement",
    "synthetic_sources",
    "synthetic_blobs",
    "synthetic_logs",
    "run_experiment1",
    "sweep_known_indices",
    "run_figure1_sweep",
    "run_application3",
    "plaintext_application3",
    "cluster_distances",
    "load_uji",
]

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300
DISTANCE_RESOLUTION = 1e-6


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ClusteringResult:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int = 0


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = points.shape[0]
    chosen = [int(rng.integers(m))]
    closest = _squared_distances(points, points[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already sits on a centre
            nxt = int(rng.integers(m))
        else:
            cdf = np.cumsum(closest) / total
            nxt = int(min(np.searchsorted(cdf, rng.random(), side="right"), m - 1))
        chosen.append(nxt)
        closest = np.minimum(closest, _squared_distances(points, points[[nxt]]).ravel())
    return points[chosen].copy()


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int):
    labels = None
    it = 0
    for it in range(1, max_iter + 1):
        new_labels = np.argmin(_squared_distances(points, centroids), axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(centroids.shape[0]):
            members = points[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    d2 = _squared_distances(points, centroids)
    inertia = float(d2[np.arange(len(points)), labels].sum())
    return labels, centroids, inertia, it


def kmeans(
    data,
    k: int,
    seed: int = 0,
    restarts: int = KMEANS_RESTARTS,
    max_iter: int = KMEANS_MAX_ITER,
) -> ClusteringResult:
    """Lloyd's algorithm with k-means++ seeding, best of ``restarts`` runs.

    ``data`` is ``(num_points, dim)`` (a 1-D array is treated as scalar
    points). Initialisation depends only on the point order and ``seed``.
    """
    points = np.asarray(data, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    m = points.shape[0]
    if k < 1:
        raise EvaluationError("k must be at least 1")
    if k > m:
        raise EvaluationError(f"k={k} exceeds the number of points ({m})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centroids = _kmeans_pp(points, k, rng)
        labels, centroids, inertia, it = _lloyd(points, centroids, max_iter)
        if best is None or inertia < best.inertia:
            best = ClusteringResult(k, labels, centroids, inertia, it)
    return best


def _labels(x) -> np.ndarray:
    return np.asarray(x.assignments if isinstance(x, ClusteringResult) else x, dtype=int)


def cluster_agreement(a, b) -> float:
    """Fraction of records with matching labels under the best relabelling."""
    la, lb = _labels(a), _labels(b)
    if la.shape != lb.shape:
        raise EvaluationError(f"label vectors differ in length: {la.size} vs {lb.size}")
    if la.size == 0:
        raise EvaluationError("no records to compare")
    k = int(max(la.max(), lb.max())) + 1
    table = np.zeros((k, k))
    np.add.at(table, (la, lb), 1)
    cols = optimal_assignment(-table)
    return float(table[np.arange(k), cols].sum() / la.size)


# synthetic data ---------------------------------------------------------------


def synthetic_sources(d: int, n_records: int, seed: int) -> Dataset:
    """Independent non-Gaussian attributes, the attack benchmark's data.

    The first two attributes are U(1, 3) and U(0, 2); after that Laplace(2, 0.5)
    and U(0, 2) alternate, so ``d = 3`` is two uniforms and one Laplace.
    """
    if d < 1 or n_records < 1:
        raise EvaluationError("synthetic data needs d >= 1 and N >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for a in range(d):
        if a == 0:
            rows.append(rng.uniform(1.0, 3.0, n_records))
        elif a % 2 == 1:
            rows.append(rng.uniform(0.0, 2.0, n_records))
        else:
            rows.append(rng.laplace(2.0, 0.5, n_records))
    return Dataset(np.vstack(rows), names=tuple(f"a{i}" for i in range(d)))


def synthetic_blobs(d: int, n_records: int, k: int, seed: int, spread: float = 0.15) -> Dataset:
    """Unit-normalised Gaussian clusters around ``k`` random unit directions."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((k, d))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    labels = rng.integers(k, size=n_records)
    pts = centres[labels] + spread * rng.standard_normal((n_records, d))
    data, _ = normalize_to_unit(Dataset(pts.T))
    return data


def synthetic_logs(
    d: int, slots: int, seed: int, anomaly_fraction: float = 0.1, shift: float = 3.0
):
    """Pair of access-log matrices (``d`` measures x ``slots`` time slots).

    ``log_b`` is ``log_a`` plus small noise, except on a random set of
    anomalous slots where it is pushed far away. Returns
    ``(log_a, log_b, anomalous_slot_indices)``.
    """
    rng = np.random.default_rng(seed)
    log_a = rng.uniform(1.0, 2.0, (d, slots))
    log_b = log_a + 0.01 * rng.standard_normal((d, slots))
    n_bad = max(1, int(round(anomaly_fraction * slots)))
    bad = np.sort(rng.choice(slots, n_bad, replace=False))
    # alternating up/down scaling changes the direction, not only the length,
    # so anomalies survive unit normalisation
    factor = np.where(np.arange(d) % 2 == 0, shift, 1.0 / shift)[:, None]
    log_b[:, bad] = log_a[:, bad] * factor
    return Dataset(log_a), Dataset(log_b), bad


def load_uji(path) -> Dataset:
    """Pen-tip coordinates from the UJI Pen Characters data as a ``2 x N`` dataset.

    Accepts the UCI text format (``POINTS <n> # x y x y ...`` lines) or a CSV
    file readable by :func:`rotshield.io.read_csv`.
    """
    path = os.fspath(path)
    if path.lower().endswith(".csv"):
        from .io import read_csv

        return read_csv(path)
    xs, ys = [], []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line.startswith("POINTS"):
                continue
            head, _, coords = line.partition("#")
            try:
                count = int(head.split()[1])
                vals = [float(t) for t in coords.split()]
            except (IndexError, ValueError):
                raise EvaluationError(f"{path}:{lineno}: malformed POINTS line") from None
            if len(vals) != 2 * count:
                raise EvaluationError(
                    f"{path}:{lineno}: expected {2 * count} coordinates, found {len(vals)}"
                )
            xs.extend(vals[0::2])
            ys.extend(vals[1::2])
    if not xs:
        raise EvaluationError(f"{path}: no POINTS lines found")
    return Dataset(np.vstack([xs, ys]), names=("x", "y"))


# experiment 1 -----------------------------------------------------------------


@dataclass(frozen=True)
class Experiment1Report:
    n_records: int
    fraction: float
    seed: int
    subsample_size: int
    divergence: float
    similarity: float


def run_experiment1(n_records: int, fraction: float, seed: int) -> Experiment1Report:
    """How well a KDE of a random subsample matches the KDE of the whole sample.

    Similarity is ``1 - divergence`` between the two fits, on standard-normal
    data.
    """
    if not 0 < fraction <= 1:
        raise EvaluationError(f"fraction must lie in (0, 1], got {fraction}")
    if n_records < 8:
        raise EvaluationError("need at least 8 records")
    rng = np.random.default_rng(seed)
    sample = rng.standard_normal(n_records)
    m = max(8, int(round(fraction * n_records)))
    sub = sample[np.sort(rng.choice(n_records, m, replace=False))]
    full_fit, sub_fit = kde_fit(sample), kde_fit(sub)
    div = density_divergence(full_fit, sub_fit, DivergenceConfig.covering(full_fit, sub_fit))
    return Experiment1Report(n_records, fraction, seed, m, div, 1.0 - div)


# attack sweep -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    n: int
    fraction: float
    seed: int
    accuracy: float
    converged: bool
    error: str = ""


@dataclass(frozen=True)
class SweepResult:
    cells: tuple[SweepCell, ...]

    def summary(self) -> dict:
        """Mean/stddev of accuracy per ``(n, fraction)``; non-converged cells excluded."""
        groups: dict[tuple[int, float], list[SweepCell]] = {}
        for c in self.cells:
            groups.setdefault((c.n, c.fraction), []).append(c)
        rows = []
        for (n, frac), cells in sorted(groups.items()):
            acc = np.array([c.accuracy for c in cells if c.converged and not c.error])
            rows.append(
                {
                    "n": n,
                    "fraction": frac,
                    "cells": len(cells),
                    "non_converged": sum(not c.converged for c in cells),
                    "errors": sum(bool(c.error) for c in cells),
                    "mean": float(acc.mean()) if acc.size else None,
                    "stddev": float(acc.std()) if acc.size else None,
                }
            )
        return {
            "cells": len(self.cells),
            "non_converged": sum(not c.converged for c in self.cells),
            "errors": sum(bool(c.error) for c in self.cells),
            "groups": rows,
        }

    def mean(self, n: int, fraction: float) -> float:
        acc = [c.accuracy for c in self.cells if c.n == n and c.fraction == fraction and c.converged and not c.error]
        return float(np.mean(acc)) if acc else math.nan


def sweep_known_indices(n_records: int, fraction: float, seed: int) -> np.ndarray:
    """Known-record positions for one sweep cell, sorted.

    A prefix of one seeded permutation, so the known set for a larger
    fraction contains the one for a smaller fraction at the same seed.
    """
    if not 0 < fraction < 1:
        raise EvaluationError(f"known fraction must lie in (0, 1), got {fraction}")
    m = min(n_records - 1, max(1, int(round(fraction * n_records))))
    order = np.random.default_rng([seed, 0x5EED]).permutation(n_records)
    return np.sort(order[:m])


def _sweep_task(args) -> list[SweepCell]:
    data, n, fractions, seed = args
    key = make_key(data, n, master_seed=seed)
    released = perturb(data, key)
    bounds = bounds_of(data)
    out = []
    for frac in fractions:
        idx = sweep_known_indices(data.n_records, frac, seed)
        try:
            report = ak_ica_attack(
                released, data.subset(idx), idx, bounds, truth=data, seed=seed
            )
        except (AttackError, LinAlgError) as exc:
            # a failed cell is recorded, not fatal to the sweep
            out.append(SweepCell(n, float(frac), int(seed), math.nan, False, str(exc) or type(exc).__name__))
            continue
        out.append(SweepCell(n, float(frac), int(seed), float(report.accuracy), report.converged))
    return out


def run_figure1_sweep(
    data: Dataset,
    ns: Iterable[int],
    fractions: Iterable[float],
    seeds: Iterable[int],
    jobs: int = 1,
) -> SweepResult:
    """Attack accuracy over every ``(n, fraction, seed)`` combination.

    For each ``n`` and seed the data is perturbed once (master seed = the
    cell seed) and attacked at every fraction. Cells come back sorted by
    ``(n, fraction, seed)`` whatever ``jobs`` is.
    """
    ns = sorted({int(n) for n in ns})
    fractions = sorted({float(f) for f in fractions})
    seeds = sorted({int(s) for s in seeds})
    if not ns or not fractions or not seeds:
        raise EvaluationError("sweep needs at least one n, fraction and seed")
    if any(n < 1 for n in ns):
        raise EvaluationError("every n must be at least 1")
    if ns[-1] > data.n_records:
        raise EvaluationError(f"n={ns[-1]} exceeds the number of records ({data.n_records})")
    if any(not 0 < f < 1 for f in fractions):
        raise EvaluationError("every fraction must lie in (0, 1)")
    tasks = [(data, n, fractions, s) for n in ns for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(_sweep_task, tasks))
    else:
        batches = [_sweep_task(t) for t in tasks]
    cells = sorted(
        (c for b in batches for c in b), key=lambda c: (c.n, c.fraction, c.seed)
    )
    return SweepResult(tuple(cells))


# application 3 ----------------------------------------------------------------


@dataclass(frozen=True)
class Application3Result:
    clustering: ClusteringResult
    distances: np.ndarray


def cluster_distances(
    y_a: Dataset,
    y_b: Dataset,
    partitioning: Partitioning,
    k: int,
    seed: int,
    resolution: float = DISTANCE_RESOLUTION,
) -> Application3Result:
    """Third-party side: per-slot distances between two released logs, then k-means.

    Distances are rounded to ``resolution`` first so rounding noise from the
    rotations cannot split otherwise equal values.
    """
    dist = corresponding_distances(y_a, y_b, partitioning)
    dist = np.round(dist / resolution) * resolution
    return Application3Result(kmeans(dist, k, seed), dist)


def _unit(log: Dataset) -> Dataset:
    return log if log.unit_normalized else normalize_to_unit(log)[0]


def run_application3(
    log_a: Dataset, log_b: Dataset, key: PerturbationKey, k: int, seed: int
) -> Application3Result:
    """Both owners perturb their logs with ``key``; the third party clusters the distances."""
    if log_a.values.shape != log_b.values.shape:
        raise EvaluationError(
            f"logs differ in shape: {log_a.values.shape} vs {log_b.values.shape}"
        )
    ua, ub = _unit(log_a), _unit(log_b)
    y_a, y_b = perturb(ua, key), perturb(ub, key)
    return cluster_distances(y_a, y_b, key.partitioning, k, seed)


def plaintext_application3(log_a: Dataset, log_b: Dataset, k: int, seed: int) -> Application3Result:
    """The same pipeline on the unperturbed (normalised) logs."""
    ua, ub = _unit(log_a), _unit(log_b)
    whole = Partitioning((0, ua.n_records))
    return cluster_distances(ua, ub, whole, k, seed)


def cells_to_rows(cells: Sequence[SweepCell]) -> list[dict]:
    return [asdict(c) for c in cells]

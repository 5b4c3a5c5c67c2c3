"""Rotation perturbation of numeric datasets, single (RBT) and multiple (MRBT).

A dataset is a ``d x N`` matrix: one column per record. MRBT splits the
records into ``n`` contiguous blocks and rotates block ``i`` with its own
Haar-random orthogonal matrix. RBT is the ``n = 1`` case.

Inner products (and therefore distances between unit vectors) survive the
perturbation only between records that were rotated by the same matrix,
which is what the third-party services in this module rely on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linalg import random_orthogonal

__all__ = [
    "TransformError",
    "Dataset",
    "Partitioning",
    "PerturbationKey",
    "BlockInnerProducts",
    "UNIT_TOL",
    "derive_part_seed",
    "normalize_to_unit",
    "make_partitioning",
    "make_key",
    "perturb",
    "invert",
    "rotations_for",
    "inner_product_block",
    "distance_from_inner",
    "corresponding_distances",
    "difference_covariance",
]

UNIT_TOL = 1e-9
ZERO_NORM = 1e-12
IP_SLACK = 1e-9


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """``d x N`` real matrix, records as columns.

    ``values`` is stored as a read-only copy so a Dataset can be shared freely.
    """

    values: np.ndarray
    unit_normalized: bool = False
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim == 1:
            v = v.reshape(1, -1)
        if v.ndim != 2:
            raise TransformError(f"dataset must be 2-D (d x N), got shape {v.shape}")
        bad = ~np.all(np.isfinite(v), axis=0)
        if bad.any():
            raise TransformError(f"record {int(np.argmax(bad))} has non-finite entries")
        if self.unit_normalized and v.size:
            norms = np.linalg.norm(v, axis=0)
            off = np.abs(norms - 1.0) > UNIT_TOL
            if off.any():
                j = int(np.argmax(off))
                raise TransformError(
                    f"record {j} has norm {norms[j]:.12g}, expected unit norm"
                )
        if self.names is not None:
            names = tuple(str(n) for n in self.names)
            if len(names) != v.shape[0]:
                raise TransformError(
                    f"{len(names)} attribute names for {v.shape[0]} attributes"
                )
            object.__setattr__(self, "names", names)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_records(cls, rows, names=None, unit_normalized=False) -> "Dataset":
        """Build from an ``N x d`` array (one record per row)."""
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2:
            raise TransformError(f"records must form a 2-D array, got {rows.shape}")
        return cls(rows.T, unit_normalized=unit_normalized, names=names)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def n_records(self) -> int:
        return self.values.shape[1]

    @property
    def records(self) -> np.ndarray:
        """``N x d`` view, one record per row."""
        return self.values.T

    def replace(self, values, unit_normalized=None) -> "Dataset":
        flag = self.unit_normalized if unit_normalized is None else unit_normalized
        return Dataset(values, unit_normalized=flag, names=self.names)

    def subset(self, indices) -> "Dataset":
        return Dataset(
            self.values[:, np.asarray(indices, dtype=int)],
            unit_normalized=self.unit_normalized,
            names=self.names,
        )


@dataclass(frozen=True)
class Partitioning:
    """Contiguous record blocks ``[boundaries[i], boundaries[i+1])``."""

    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        if len(b) < 2 or b[0] != 0:
            raise TransformError(f"boundaries must start at 0 and hold n+1 entries: {b}")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise TransformError(f"boundaries must be strictly increasing: {b}")
        object.__setattr__(self, "boundaries", b)

    @property
    def num_parts(self) -> int:
        return len(self.boundaries) - 1

    @property
    def n_records(self) -> int:
        return self.boundaries[-1]

    @property
    def sizes(self) -> list[int]:
        b = self.boundaries
        return [hi - lo for lo, hi in zip(b, b[1:])]

    def slices(self) -> list[slice]:
        b = self.boundaries
        return [slice(lo, hi) for lo, hi in zip(b, b[1:])]

    def part_of(self, record: int) -> int:
        if not 0 <= record < self.n_records:
            raise TransformError(f"record {record} outside [0, {self.n_records})")
        return int(np.searchsorted(self.boundaries, record, side="right") - 1)

    def labels(self) -> np.ndarray:
        """Part index of every record."""
        return np.repeat(np.arange(self.num_parts), self.sizes)


def derive_part_seed(master_seed: int, part: int) -> int:
    """64-bit seed for one part: BLAKE2b-64 of ``"<master_seed>:<part>"``."""
    digest = hashlib.blake2b(f"{int(master_seed)}:{int(part)}".encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


@dataclass(frozen=True)
class PerturbationKey:
    """Secret material of one perturbation.

    Only ``master_seed`` is secret in the strict sense; the part seeds are
    derived from it. The partition boundaries are released with the data.
    """

    master_seed: int
    partitioning: Partitioning
    d: int
    normalization_applied: bool = True
    part_seeds: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.d < 1:
            raise TransformError("key dimension must be at least 1")
        seeds = tuple(
            derive_part_seed(self.master_seed, i) for i in range(self.partitioning.num_parts)
        )
        object.__setattr__(self, "part_seeds", seeds)

    @property
    def n(self) -> int:
        return self.partitioning.num_parts

    def to_json_dict(self) -> dict:
        return {
            "version": 1,
            "master_seed": int(self.master_seed),
            "n": self.n,
            "boundaries": list(self.partitioning.boundaries),
            "d": self.d,
            "normalization_applied": bool(self.normalization_applied),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "PerturbationKey":
        try:
            version = obj["version"]
            if version != 1:
                raise TransformError(f"unsupported key version {version!r}")
            part = Partitioning(tuple(obj["boundaries"]))
            if int(obj["n"]) != part.num_parts:
                raise TransformError(
                    f"key says n={obj['n']} but lists {part.num_parts} parts"
                )
            return cls(
                master_seed=int(obj["master_seed"]),
                partitioning=part,
                d=int(obj["d"]),
                normalization_applied=bool(obj["normalization_applied"]),
            )
        except KeyError as exc:
            raise TransformError(f"key file is missing field {exc.args[0]!r}") from None


RotationFactory = Callable[[int, int], np.ndarray]


def normalize_to_unit(x: Dataset) -> tuple[Dataset, np.ndarray]:
    """Scale every record to unit Euclidean length.

    Returns the normalised dataset and the original record norms. The norms
    belong to the data owner and are not part of anything released.
    """
    norms = np.linalg.norm(x.values, axis=0)
    small = norms < ZERO_NORM
    if small.any():
        raise TransformError(f"record {int(np.argmax(small))} has zero norm")
    return x.replace(x.values / norms, unit_normalized=True), norms


def make_partitioning(n_records: int, n: int) -> Partitioning:
    """Split ``n_records`` into ``n`` contiguous blocks whose sizes differ by at most one.

    The first ``n_records % n`` blocks take the extra record.
    """
    if n < 1:
        raise TransformError("number of parts must be at least 1")
    if n > n_records:
        raise TransformError(f"cannot split {n_records} records into {n} parts")
    base, extra = divmod(n_records, n)
    sizes = [base + (1 if i < extra else 0) for i in range(n)]
    return Partitioning(tuple(np.concatenate([[0], np.cumsum(sizes)]).tolist()))


def make_key(x: Dataset, n: int, master_seed: int) -> PerturbationKey:
    return PerturbationKey(
        master_seed=master_seed,
        partitioning=make_partitioning(x.n_records, n),
        d=x.d,
        normalization_applied=x.unit_normalized,
    )


def rotations_for(key: PerturbationKey, factory: RotationFactory = random_orthogonal):
    return [factory(key.d, s) for s in key.part_seeds]


def _check_key(x: Dataset, key: PerturbationKey):
    if key.d != x.d:
        raise TransformError(f"key is for d={key.d}, data has d={x.d}")
    if key.partitioning.n_records != x.n_records:
        raise TransformError(
            f"key partitions {key.partitioning.n_records} records, data has {x.n_records}"
        )
    if key.normalization_applied and not x.unit_normalized:
        raise TransformError("key expects unit-normalised records; normalise the data first")


def perturb(
    x: Dataset, key: PerturbationKey, rotation_factory: RotationFactory = random_orthogonal
) -> Dataset:
    """Rotate each part of ``x`` with the orthogonal matrix seeded by its part seed.

    ``rotation_factory(d, seed)`` can be swapped out in tests.
    """
    _check_key(x, key)
    out = np.empty_like(x.values)
    for sl, rot in zip(key.partitioning.slices(), rotations_for(key, rotation_factory)):
        out[:, sl] = rot @ x.values[:, sl]
    return x.replace(out)


def invert(
    y: Dataset, key: PerturbationKey, rotation_factory: RotationFactory = random_orthogonal
) -> Dataset:
    """Owner-side inverse of :func:`perturb` (applies the transposed rotations)."""
    _check_key(y, key)
    out = np.empty_like(y.values)
    for sl, rot in zip(key.partitioning.slices(), rotations_for(key, rotation_factory)):
        out[:, sl] = rot.T @ y.values[:, sl]
    return y.replace(out)


@dataclass(frozen=True)
class BlockInnerProducts:
    """All ``n x n`` blocks ``Y1_i^T Y2_j`` of the record inner-product matrix.

    ``faithful[i][j]`` is True only on the diagonal: those are the blocks
    whose inner products equal the ones of the unperturbed data.
    """

    blocks: tuple[tuple[np.ndarray, ...], ...]
    faithful: tuple[tuple[bool, ...], ...]

    @property
    def num_parts(self) -> int:
        return len(self.blocks)

    def full(self) -> np.ndarray:
        return np.block([list(row) for row in self.blocks])

    def diagonal(self) -> list[np.ndarray]:
        return [self.blocks[i][i] for i in range(self.num_parts)]


def _check_pair(y1: Dataset, y2: Dataset, p: Partitioning):
    if y1.values.shape != y2.values.shape:
        raise TransformError(
            f"datasets differ in shape: {y1.values.shape} vs {y2.values.shape}"
        )
    if p.n_records != y1.n_records:
        raise TransformError(
            f"partitioning covers {p.n_records} records, data has {y1.n_records}"
        )


def inner_product_block(y1: Dataset, y2: Dataset, p: Partitioning) -> BlockInnerProducts:
    _check_pair(y1, y2, p)
    parts = p.slices()
    blocks = tuple(
        tuple(y1.values[:, si].T @ y2.values[:, sj] for sj in parts) for si in parts
    )
    faithful = tuple(tuple(i == j for j in range(len(parts))) for i in range(len(parts)))
    return BlockInnerProducts(blocks, faithful)


def distance_from_inner(ip):
    """Distance between two unit vectors from their inner product, ``sqrt(2 - 2 ip)``.

    Accepts a scalar or an array. Values outside ``[-1, 1]`` by more than
    ``1e-9`` mean the inputs were not unit vectors and raise.
    """
    arr = np.asarray(ip, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(np.abs(arr) > 1.0 + IP_SLACK):
        worst = float(np.max(np.abs(arr)))
        raise TransformError(
            f"inner product {worst:.12g} outside [-1, 1]; inputs are not unit vectors"
        )
    dist = np.sqrt(2.0 - 2.0 * np.clip(arr, -1.0, 1.0))
    return float(dist) if dist.ndim == 0 else dist


def corresponding_distances(y1: Dataset, y2: Dataset, p: Partitioning) -> np.ndarray:
    """Distance between record ``j`` of ``y1`` and record ``j`` of ``y2``, for every ``j``.

    Both datasets must come from the same key; each corresponding pair then
    shares a rotation and its distance equals the original one.
    """
    _check_pair(y1, y2, p)
    if not (y1.unit_normalized and y2.unit_normalized):
        raise TransformError("corresponding distances need unit-normalised records")
    ips = np.einsum("ij,ij->j", y1.values, y2.values)
    return distance_from_inner(ips)


def difference_covariance(x: Dataset, y: Dataset) -> float:
    """Privacy score: mean over attributes of the variance of ``y - x``.

    Population variance over records. Zero when nothing moved.
    """
    if x.values.shape != y.values.shape:
        raise TransformError(
            f"datasets differ in shape: {x.values.shape} vs {y.values.shape}"
        )
    diff = y.values - x.values
    return float(np.mean(np.var(diff, axis=1)))


def stack(parts: Sequence[Dataset]) -> Dataset:
    """Concatenate datasets record-wise (``X'_1 || ... || X'_n``)."""
    if not parts:
        raise TransformError("nothing to stack")
    unit = all(p.unit_normalized for p in parts)
    return Dataset(np.hstack([p.values for p in parts]), unit_normalized=unit, names=parts[0].names)

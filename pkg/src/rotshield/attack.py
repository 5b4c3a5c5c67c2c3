"""AK-ICA reconstruction attack on rotation-perturbed data.

The attacker sees the released data ``Y`` and a small set of original
records together with their positions in ``Y``. ICA is run on ``Y`` and on
the known original records. Components of the two runs are matched by the
total-variation distance between their kernel density estimates, the known
records' mixing matrix maps the matched components back to attribute space,
and the known attribute bounds fix the amplitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import frobenius_norm, optimal_assignment, sym_eig
from .transform import Dataset

__all__ = [
    "AttackError",
    "IcaResult",
    "KdeModel",
    "DivergenceConfig",
    "Alignment",
    "AttackReport",
    "whiten",
    "fast_ica",
    "kde_fit",
    "silverman_bandwidth",
    "density_divergence",
    "align_components",
    "rescale_to_bounds",
    "ak_ica_attack",
    "reconstruction_accuracy",
    "bounds_of",
]

MIN_EIGENVALUE = 1e-12
KDE_REACH = 4.0
DEFAULT_GRID_POINTS = 512
MAX_GRID_POINTS = 1 << 16
ICA_MAX_ITER = 500
ICA_TOL = 1e-6
# weight of the paired-record term in the alignment cost; small next to the
# divergence between genuinely different densities
PAIRED_WEIGHT = 0.05


class AttackError(ValueError):
    pass


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Dataset) else np.asarray(x, dtype=float)


@dataclass(frozen=True)
class IcaResult:
    """Output of :func:`fast_ica`.

    ``components = unmixing @ (y - mean)`` and ``mixing @ components + mean``
    gives ``y`` back.
    """

    mixing: np.ndarray
    components: np.ndarray
    whitening: np.ndarray
    unmixing: np.ndarray
    mean: np.ndarray
    iterations_used: int
    converged: bool

    @property
    def d(self) -> int:
        return self.components.shape[0]


def whiten(y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centre and decorrelate ``y`` (``d x N``).

    Returns ``(z, whitening, mean)`` with ``z = whitening @ (y - mean)`` having
    identity covariance. ``whitening = D^{-1/2} E^T`` from the covariance
    eigen-decomposition.
    """
    y = _values(y)
    d, n = y.shape
    if n <= d:
        raise AttackError(f"whitening needs more records than attributes ({n} <= {d})")
    mean = y.mean(axis=1, keepdims=True)
    yc = y - mean
    cov = yc @ yc.T / n
    values, vectors = sym_eig(cov)
    if values[-1] <= MIN_EIGENVALUE:
        direction = np.array2string(vectors[:, -1], precision=4)
        raise AttackError(
            f"covariance is singular (eigenvalue {values[-1]:.3e} along {direction})"
        )
    whitening = vectors.T / np.sqrt(values)[:, None]
    return whitening @ yc, whitening, mean


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    values, vectors = sym_eig(w @ w.T)
    return (vectors / np.sqrt(values)) @ vectors.T @ w


def fast_ica(y, max_iter: int = ICA_MAX_ITER, tol: float = ICA_TOL, seed: int = 0) -> IcaResult:
    """Symmetric FastICA with the log-cosh contrast (``g = tanh``).

    Converged means the largest change ``1 - |<w_new, w_old>|`` over the
    unmixing rows dropped below ``tol``. Not converging is reported, not
    raised.
    """
    y = _values(y)
    d, n = y.shape
    if d < 2:
        raise AttackError("ICA needs at least two attributes")
    if n < 10 * d:
        raise AttackError(f"ICA needs at least {10 * d} records, got {n}")
    z, whitening, mean = whiten(y)
    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((d, d)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        wz = w @ z
        g = np.tanh(wz)
        g_prime = 1.0 - g * g
        w_new = _sym_decorrelate(g @ z.T / n - g_prime.mean(axis=1)[:, None] * w)
        change = np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0))
        w = w_new
        if change < tol:
            converged = True
            break
    unmixing = w @ whitening
    # w is orthogonal, so only the whitening needs a real inverse
    mixing = np.linalg.inv(whitening) @ w.T
    components = w @ z
    return IcaResult(
        mixing=mixing,
        components=components,
        whitening=whitening,
        unmixing=unmixing,
        mean=mean,
        iterations_used=it,
        converged=converged,
    )


@dataclass(frozen=True)
class KdeModel:
    """Gaussian kernel density estimate of a 1-D sample."""

    sample: np.ndarray
    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise AttackError("bandwidth must be positive")

    @property
    def support(self) -> tuple[float, float]:
        h = KDE_REACH * self.bandwidth
        return float(self.sample.min() - h), float(self.sample.max() + h)

    def density(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.zeros(z.shape)
        h = self.bandwidth
        # chunked so the kernel matrix stays small
        for chunk in np.array_split(self.sample, max(1, self.sample.size // 2048)):
            u = (z[:, None] - chunk[None, :]) / h
            out += np.exp(-0.5 * u * u).sum(axis=1)
        return out / (self.sample.size * h * np.sqrt(2.0 * np.pi))

    def negated(self) -> "KdeModel":
        return KdeModel(-self.sample, self.bandwidth)


def silverman_bandwidth(sample: np.ndarray) -> float:
    sigma = np.std(sample, ddof=1)
    q75, q25 = np.percentile(sample, [75, 25])
    spread = min(sigma, (q75 - q25) / 1.34)
    if spread <= 0:
        # IQR can vanish for heavily tied samples while sigma does not
        spread = sigma
    return 0.9 * spread * sample.size ** (-0.2)


def kde_fit(sample) -> KdeModel:
    sample = np.asarray(sample, dtype=float).ravel()
    if sample.size < 8:
        raise AttackError(f"KDE needs at least 8 points, got {sample.size}")
    if not np.all(np.isfinite(sample)):
        raise AttackError("KDE sample contains non-finite values")
    if np.ptp(sample) == 0:
        raise AttackError("KDE sample has zero spread")
    return KdeModel(sample.copy(), float(silverman_bandwidth(sample)))


@dataclass(frozen=True)
class DivergenceConfig:
    """Integration grid for the density divergence."""

    grid_lo: float
    grid_hi: float
    grid_points: int = DEFAULT_GRID_POINTS

    def __post_init__(self):
        if not self.grid_lo < self.grid_hi:
            raise AttackError(f"empty grid [{self.grid_lo}, {self.grid_hi}]")
        if self.grid_points < 64:
            raise AttackError("grid needs at least 64 points")

    @classmethod
    def covering(cls, *models: KdeModel, grid_points: int = DEFAULT_GRID_POINTS):
        """Smallest grid spanning every model's sample range plus four bandwidths.

        ``grid_points`` is a floor: the grid is refined until its spacing is at
        most a quarter of the narrowest bandwidth (capped at ``MAX_GRID_POINTS``).
        """
        lo = min(m.support[0] for m in models)
        hi = max(m.support[1] for m in models)
        h = min(m.bandwidth for m in models)
        needed = int(np.ceil((hi - lo) / (h / 4.0))) + 1
        return cls(lo, hi, int(min(max(grid_points, needed), MAX_GRID_POINTS)))

    def grid(self) -> np.ndarray:
        return np.linspace(self.grid_lo, self.grid_hi, self.grid_points)

    def covers(self, model: KdeModel) -> bool:
        lo, hi = model.support
        slack = 1e-9 * max(1.0, abs(lo), abs(hi))
        return self.grid_lo <= lo + slack and self.grid_hi >= hi - slack


def _tv_on_grid(fz: np.ndarray, gz: np.ndarray, grid: np.ndarray) -> float:
    return 0.5 * float(np.trapezoid(np.abs(fz - gz), grid))


def density_divergence(f: KdeModel, g: KdeModel, cfg: DivergenceConfig | None = None) -> float:
    """Half the L1 distance between two KDEs, by the trapezoidal rule on ``cfg``'s grid.

    0 for identical densities, about 1 for disjoint supports.
    """
    if cfg is None:
        cfg = DivergenceConfig.covering(f, g)
    for name, m in (("first", f), ("second", g)):
        if not cfg.covers(m):
            lo, hi = m.support
            raise AttackError(
                f"grid [{cfg.grid_lo:.4g}, {cfg.grid_hi:.4g}] does not cover the "
                f"{name} density's support [{lo:.4g}, {hi:.4g}]"
            )
    grid = cfg.grid()
    return _tv_on_grid(f.density(grid), g.density(grid), grid)


@dataclass(frozen=True)
class Alignment:
    """Signed matching of whole-data components to reference components.

    Aligned component ``j`` is ``signs[j] * scales[j] * whole[permutation[j]]``.
    """

    permutation: np.ndarray
    signs: np.ndarray
    scales: np.ndarray
    divergence: np.ndarray = field(default=None)

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=int)
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise AttackError(f"permutation {perm.tolist()} is not a bijection")
        object.__setattr__(self, "permutation", perm)
        object.__setattr__(self, "signs", np.asarray(self.signs, dtype=float))
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=float))

    def apply(self, components: np.ndarray) -> np.ndarray:
        return (self.signs * self.scales)[:, None] * components[self.permutation]

    def matrix(self) -> np.ndarray:
        """The matching as a ``d x d`` signed, scaled permutation matrix ``J``."""
        d = self.permutation.size
        j = np.zeros((d, d))
        j[np.arange(d), self.permutation] = self.signs * self.scales
        return j


def _paired_correlation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.outer(na, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (a @ b.T) / denom
    return np.where(denom > 0, c, 0.0)


def align_components(
    whole: IcaResult,
    reference,
    cfg: DivergenceConfig | None = None,
    known_indices=None,
    paired_weight: float = PAIRED_WEIGHT,
) -> Alignment:
    """Match each reference component to one whole-data component and a sign.

    The cost of pairing whole component ``i`` (with sign ``s``) to reference
    component ``j`` is the density divergence between ``s * whole_i`` and
    ``ref_j``. If ``known_indices`` is given, the reference rows are taken to
    be the records at those positions of the whole data, and
    ``paired_weight * (1 - s * corr) / 2`` is added, where ``corr`` is the
    correlation of the paired values. That term only matters when densities
    tie, which happens for symmetric sources (sign) and for identically
    distributed sources (order). The permutation minimising the total cost is
    exact.

    ``reference`` is an :class:`IcaResult` or a ``d x m`` array of signals.
    """
    ref = reference.components if isinstance(reference, IcaResult) else _values(reference)
    comps = whole.components
    d = comps.shape[0]
    if ref.shape[0] != d:
        raise AttackError(f"cannot align {d} components to {ref.shape[0]} references")
    whole_models = [kde_fit(c) for c in comps]
    ref_models = [kde_fit(r) for r in ref]
    if cfg is None:
        all_models = whole_models + [m.negated() for m in whole_models] + ref_models
        cfg = DivergenceConfig.covering(*all_models)
    else:
        for m in whole_models + [m.negated() for m in whole_models] + ref_models:
            if not cfg.covers(m):
                raise AttackError("divergence grid does not cover the component densities")
    grid = cfg.grid()
    pos = [m.density(grid) for m in whole_models]
    # density of -X at z is density of X at -z
    neg = [m.density(-grid) for m in whole_models]
    rdens = [m.density(grid) for m in ref_models]
    div_pos = np.array([[_tv_on_grid(p, r, grid) for r in rdens] for p in pos])
    div_neg = np.array([[_tv_on_grid(q, r, grid) for r in rdens] for q in neg])

    cost_pos, cost_neg = div_pos.copy(), div_neg.copy()
    if known_indices is not None and paired_weight > 0:
        idx = np.asarray(known_indices, dtype=int)
        if idx.size != ref.shape[1]:
            raise AttackError(
                f"{idx.size} known indices for {ref.shape[1]} reference records"
            )
        corr = _paired_correlation(comps[:, idx], ref)
        cost_pos += paired_weight * (1.0 - corr) / 2.0
        cost_neg += paired_weight * (1.0 + corr) / 2.0

    use_neg = cost_neg < cost_pos
    cost = np.where(use_neg, cost_neg, cost_pos)
    # rows of the assignment are reference components
    cols = optimal_assignment(cost.T)
    signs = np.array([-1.0 if use_neg[cols[j], j] else 1.0 for j in range(d)])
    divergence = np.array(
        [div_neg[cols[j], j] if use_neg[cols[j], j] else div_pos[cols[j], j] for j in range(d)]
    )
    return Alignment(permutation=cols, signs=signs, scales=np.ones(d), divergence=divergence)


def bounds_of(x) -> np.ndarray:
    """Per-attribute ``(min, max)`` as a ``d x 2`` array."""
    v = _values(x)
    return np.column_stack([v.min(axis=1), v.max(axis=1)])


def rescale_to_bounds(x_hat, bounds) -> np.ndarray:
    """Affinely map each attribute so its sample min and max land on ``bounds``."""
    v = _values(x_hat)
    b = np.asarray(bounds, dtype=float)
    if b.shape != (v.shape[0], 2):
        raise AttackError(f"bounds must have shape ({v.shape[0]}, 2), got {b.shape}")
    if np.any(b[:, 1] <= b[:, 0]):
        raise AttackError("every bound needs max > min")
    lo = v.min(axis=1, keepdims=True)
    hi = v.max(axis=1, keepdims=True)
    flat = (hi - lo).ravel() <= 0
    if flat.any():
        raise AttackError(f"attribute {int(np.argmax(flat))} of the estimate is constant")
    return b[:, :1] + (v - lo) * (b[:, 1:] - b[:, :1]) / (hi - lo)


def reconstruction_accuracy(x_hat, x) -> float:
    """``1 - ||x_hat - x||_F / ||x||_F`` clamped to ``[0, 1]``."""
    xh, xv = _values(x_hat), _values(x)
    if xh.shape != xv.shape:
        raise AttackError(f"shape mismatch: {xh.shape} vs {xv.shape}")
    ref = frobenius_norm(xv)
    if ref == 0:
        raise AttackError("ground truth has zero Frobenius norm")
    return float(min(1.0, max(0.0, 1.0 - frobenius_norm(xh - xv) / ref)))


@dataclass(frozen=True)
class AttackReport:
    reconstructed: Dataset
    alignment: Alignment
    per_component_divergence: np.ndarray
    known_fraction: float
    converged: bool
    iterations: tuple[int, int]
    accuracy: float | None = None

    def to_json_dict(self) -> dict:
        out = {
            "known_fraction": self.known_fraction,
            "converged": self.converged,
            "iterations": {"released": self.iterations[0], "known": self.iterations[1]},
            "alignment": {
                "permutation": self.alignment.permutation.tolist(),
                "signs": self.alignment.signs.tolist(),
                "scales": self.alignment.scales.tolist(),
            },
            "per_component_divergence": [float(v) for v in self.per_component_divergence],
        }
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
        return out


def ak_ica_attack(
    released: Dataset,
    known_original: Dataset,
    known_indices,
    bounds,
    cfg: DivergenceConfig | None = None,
    truth: Dataset | None = None,
    seed: int = 0,
    max_iter: int = ICA_MAX_ITER,
    tol: float = ICA_TOL,
) -> AttackReport:
    """Reconstruct the original data behind ``released``.

    ``known_original`` holds the attacker's original records (columns), which
    sit at ``known_indices`` in ``released``. The estimate is
    ``A_known @ J @ S_released + mean_known`` rescaled to ``bounds``, with
    the known records written back verbatim. ``truth``, when given, is only
    used to fill in ``accuracy``.
    """
    y = released.values
    xk = known_original.values
    idx = np.asarray(known_indices, dtype=int)
    d, n = y.shape
    if xk.shape[0] != d:
        raise AttackError(f"known records have d={xk.shape[0]}, released data d={d}")
    if idx.ndim != 1 or idx.size != xk.shape[1]:
        raise AttackError(f"{idx.size} known indices for {xk.shape[1]} known records")
    if idx.size == 0 or np.any(idx < 0) or np.any(idx >= n):
        raise AttackError(f"known indices must be valid positions in [0, {n})")
    if np.unique(idx).size != idx.size:
        raise AttackError("known indices repeat")
    fraction = idx.size / n
    if not 0 < fraction < 1:
        raise AttackError(f"known fraction must lie in (0, 1), got {fraction}")

    whole = fast_ica(y, max_iter=max_iter, tol=tol, seed=seed)
    known = fast_ica(xk, max_iter=max_iter, tol=tol, seed=seed)
    alignment = align_components(whole, known, cfg=cfg, known_indices=idx)

    estimate = known.mixing @ alignment.apply(whole.components) + known.mean
    estimate = rescale_to_bounds(estimate, bounds)
    estimate[:, idx] = xk
    reconstructed = released.replace(estimate, unit_normalized=False)

    accuracy = None
    if truth is not None:
        accuracy = reconstruction_accuracy(reconstructed, truth)
    return AttackReport(
        reconstructed=reconstructed,
        alignment=alignment,
        per_component_divergence=alignment.divergence,
        known_fraction=fraction,
        converged=whole.converged and known.converged,
        iterations=(whole.iterations_used, known.iterations_used),
        accuracy=accuracy,
    )


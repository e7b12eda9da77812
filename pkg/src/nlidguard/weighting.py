"""Turning N-LID scores into per-sample weights.

Two routes: the likelihood-ratio baseline (densities of normal and poisoned
scores, a ratio, then a smooth tanh curve) and the attack-unaware
linear/concave/convex maps of min-max scaled scores.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import make_folds
from .lid import NlidScores

DENSITY_FLOOR = 1e-12
LR_CAP = 1e6
Z_CLIP = 1e-3
SCHEMES = ("lr", "linear", "concave", "convex", "uniform")

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


class WeightingError(ValueError):
    pass


@dataclass(frozen=True)
class DensityModel:
    bandwidth: float
    support_points: np.ndarray
    kernel: str = "gaussian"

    def log_density(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        h = self.bandwidth
        u = (s[:, None] - self.support_points[None, :]) / h
        logk = -0.5 * u * u - _LOG_SQRT_2PI - np.log(h)
        return logsumexp(logk, axis=1) - np.log(self.support_points.shape[0])

    def __call__(self, s) -> np.ndarray:
        return np.exp(self.log_density(s))


def default_bandwidth_grid(values) -> np.ndarray:
    sd = float(np.std(values))
    if sd <= 0:
        sd = 1.0
    return np.logspace(-3, 0, 20) * sd


def kde_fit(values, bandwidth_grid=None, folds: int = 5, seed=0) -> DensityModel:
    """Gaussian KDE whose bandwidth maximizes mean held-out log-likelihood.

    Ties go to the first grid entry.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.shape[0] < max(folds, 2):
        raise WeightingError(f"need at least {max(folds, 2)} values for {folds}-fold bandwidth selection, got {x.shape[0]}")
    grid = default_bandwidth_grid(x) if bandwidth_grid is None else np.asarray(bandwidth_grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise WeightingError("bandwidth grid must be nonempty and positive")
    plan = make_folds(x.shape[0], folds, seed)
    best_h, best_score = None, -np.inf
    for h in grid:
        total = 0.0
        for f in range(folds):
            held = x[plan.test_indices(f)]
            model = DensityModel(float(h), x[plan.train_indices(f)])
            total += float(np.mean(model.log_density(held)))
        score = total / folds
        if score > best_score:
            best_h, best_score = float(h), score
    return DensityModel(best_h, x.copy())


def likelihood_ratio(nlid_value, p_n: DensityModel, p_a: DensityModel):
    """``p_n(s) / p_a(s)``, capped at ``LR_CAP`` where ``p_a`` is negligible."""
    s = np.asarray(nlid_value, dtype=float)
    num = p_n(s.reshape(-1))
    den = p_a(s.reshape(-1))
    safe = np.where(den < DENSITY_FLOOR, 1.0, den)
    out = np.where(den < DENSITY_FLOOR, LR_CAP, num / safe)
    return float(out[0]) if s.ndim == 0 else out


@dataclass(frozen=True)
class WeightCurve:
    a: float
    b: float

    def __call__(self, s) -> np.ndarray:
        return 0.5 * (1.0 - np.tanh(self.a * np.asarray(s, dtype=float) - self.b))


def lr_targets(lr, transform: str = "clamp") -> np.ndarray:
    lr = np.asarray(lr, dtype=float)
    if transform == "clamp":
        return np.minimum(lr, 1.0)
    if transform == "rescale":
        top = lr.max()
        return lr / top if top > 0 else np.zeros_like(lr)
    raise WeightingError(f"unknown LR transform {transform!r}")


def _sse(curve: WeightCurve, s, z) -> float:
    r = curve(s) - z
    return float(r @ r)


def fit_weight_curve(nlid, lr, transform: str = "clamp", max_iters: int = 100) -> WeightCurve:
    """Least-squares fit of ``0.5 * (1 - tanh(a*s - b))`` to the transformed ratios.

    Starts from a linear fit in atanh space, then Gauss-Newton with step halving.
    """
    s = np.asarray(nlid, dtype=float).reshape(-1)
    z = lr_targets(lr, transform)
    if s.shape != z.shape or s.shape[0] < 3:
        raise WeightingError("nlid and lr must have the same length, at least 3")
    zc = np.clip(z, Z_CLIP, 1 - Z_CLIP)
    if np.ptp(z) == 0 or np.ptp(s) == 0:
        return WeightCurve(0.0, float(-np.arctanh(1 - 2 * np.clip(z.mean(), Z_CLIP, 1 - Z_CLIP))))
    t = np.arctanh(1 - 2 * zc)
    slope, intercept = np.polyfit(s, t, 1)
    curve = WeightCurve(float(slope), float(-intercept))
    loss = _sse(curve, s, z)
    for _ in range(max_iters):
        u = curve.a * s - curve.b
        sech2 = 1.0 - np.tanh(u) ** 2
        J = np.column_stack([-0.5 * sech2 * s, 0.5 * sech2])
        r = curve(s) - z
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        scale = 1.0
        improved = False
        for _ in range(30):
            cand = WeightCurve(curve.a + scale * step[0], curve.b + scale * step[1])
            cand_loss = _sse(cand, s, z)
            if cand_loss < loss:
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
        gain = loss - cand_loss
        curve, loss = cand, cand_loss
        if gain <= 1e-15 * max(loss, 1e-300) or loss == 0:
            break
    return curve


@dataclass(frozen=True)
class WeightVector:
    beta: np.ndarray
    scheme: str
    warning: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise WeightingError(f"unknown scheme {self.scheme!r}")
        b = np.asarray(self.beta, dtype=float)
        if np.any(b < 0) or np.any(b > 1) or not np.all(np.isfinite(b)):
            raise WeightingError("weights must lie in [0, 1]")
        object.__setattr__(self, "beta", b)

    def __len__(self):
        return self.beta.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["beta"])
            for v in self.beta:
                writer.writerow([repr(float(v))])

    @classmethod
    def from_csv(cls, path, scheme: str = "uniform") -> "WeightVector":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        return cls(np.asarray([float(r[0]) for r in rows[1:]]), scheme)


def uniform_weights(n: int) -> WeightVector:
    return WeightVector(np.ones(n), "uniform")


def fit_lr_curve(nlid_values, labeled_normal, labeled_poisoned, transform: str = "clamp",
                 folds: int = 5, seed=0) -> WeightCurve:
    s = np.asarray(nlid_values, dtype=float)
    normal = np.asarray(sorted(labeled_normal), dtype=int)
    poisoned = np.asarray(sorted(labeled_poisoned), dtype=int)
    if normal.size == 0 or poisoned.size == 0:
        raise WeightingError("both labeled index sets must be nonempty")
    if np.intersect1d(normal, poisoned).size:
        raise WeightingError("labeled normal and poisoned sets overlap")
    p_n = kde_fit(s[normal], folds=min(folds, normal.size), seed=seed)
    p_a = kde_fit(s[poisoned], folds=min(folds, poisoned.size), seed=seed)
    labeled = np.concatenate([normal, poisoned])
    lr = likelihood_ratio(s[labeled], p_n, p_a)
    return fit_weight_curve(s[labeled], lr, transform)


def lr_weights(train, nlid: NlidScores, labeled_normal, labeled_poisoned,
               transform: str = "clamp", seed=0) -> WeightVector:
    """Likelihood-ratio weights for every training sample from labeled example sets."""
    if len(nlid.nlid) != train.n:
        raise WeightingError("nlid scores do not match the training set")
    curve = fit_lr_curve(nlid.nlid, labeled_normal, labeled_poisoned, transform, seed=seed)
    return WeightVector(np.clip(curve(nlid.nlid), 0.0, 1.0), "lr")


def scaled_scores(nlid) -> np.ndarray:
    s = np.asarray(getattr(nlid, "nlid", nlid), dtype=float)
    lo, hi = s.min(), s.max()
    return (s - lo) / (hi - lo)


def scheme_weights(v, scheme: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if scheme == "linear":
        beta = 1.0 - v
    elif scheme == "concave":
        beta = 1.0 - v * v
    elif scheme == "convex":
        beta = 1.0 - np.sqrt(2.0 * v - v * v)
    else:
        raise WeightingError(f"unknown attack-unaware scheme {scheme!r}")
    return np.clip(beta, 0.0, 1.0)


def attack_unaware_weights(nlid, scheme: str) -> WeightVector:
    """Weight 1 at the smallest N-LID, 0 at the largest, shaped by ``scheme``."""
    s = np.asarray(getattr(nlid, "nlid", nlid), dtype=float)
    if s.shape[0] < 2:
        raise WeightingError("need at least two samples")
    if scheme not in ("linear", "concave", "convex"):
        raise WeightingError(f"unknown attack-unaware scheme {scheme!r}")
    if np.ptp(s) == 0:
        msg = "all N-LID values equal; using uniform weights"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return WeightVector(np.ones(s.shape[0]), scheme, msg)
    return WeightVector(scheme_weights(scaled_scores(s), scheme), scheme)

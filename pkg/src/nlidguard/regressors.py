"""Weighted ridge regression and the robust comparison learners (Huber, RANSAC, TRIM)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .data import Dataset

MAD_SCALE = 1.4826


class FitError(ValueError):
    pass


@dataclass
class LinearModel:
    omega: np.ndarray
    bias: float
    lam: float
    meta: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return np.append(self.omega, self.bias)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if self.omega.shape[0] == 1 else X.reshape(1, -1)
        if X.shape[1] != self.omega.shape[0]:
            raise FitError(f"model expects {self.omega.shape[0]} features, got {X.shape[1]}")
        return X @ self.omega + self.bias

    def to_record(self) -> str:
        """One comma-separated line: lambda, bias, omega values."""
        values = [self.lam, self.bias, *self.omega.tolist()]
        return ",".join(repr(float(v)) for v in values)

    @classmethod
    def from_record(cls, line: str) -> "LinearModel":
        values = [float(v) for v in line.strip().split(",")]
        if len(values) < 3:
            raise FitError("model record needs lambda, bias and at least one coefficient")
        return cls(np.asarray(values[2:]), values[1], values[0])


@dataclass
class FitReport:
    mse_train: float
    mse_test: float
    model: LinearModel


def augment(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.column_stack([X, np.ones(X.shape[0])])


def penalty_diag(d: int, lam: float) -> np.ndarray:
    # bias (last) is not penalized
    diag = np.full(d + 1, float(lam))
    diag[-1] = 0.0
    return np.diag(diag)


def solve_normal_equations(gram, rhs, lam: float) -> np.ndarray:
    """Solve ``(gram + lam * D) theta = rhs`` where D skips the bias entry."""
    d = gram.shape[0] - 1
    A = gram + penalty_diag(d, lam)
    try:
        return scipy.linalg.solve(A, rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise FitError(f"singular normal equations (lambda={lam})") from exc


def _beta_array(beta, n: int) -> np.ndarray:
    b = np.asarray(getattr(beta, "beta", beta), dtype=float).reshape(-1)
    if b.shape[0] != n:
        raise FitError(f"weight vector has {b.shape[0]} entries, dataset has {n} rows")
    if not np.all(np.isfinite(b)):
        raise FitError("weight vector contains NaN or infinite values")
    if np.any(b < 0):
        raise FitError("weights must be nonnegative")
    return b


def _weighted_solve(X, y, w, lam: float) -> np.ndarray:
    n = X.shape[0]
    Xa = augment(X)
    if lam == 0:
        rank = np.linalg.matrix_rank(Xa * np.sqrt(w)[:, None])
        if rank < Xa.shape[1]:
            raise FitError("weighted design matrix is rank deficient and lambda is 0")
    gram = (Xa.T * w) @ Xa / n
    rhs = Xa.T @ (w * y) / n
    return solve_normal_equations(gram, rhs, lam)


def fit_weighted_ridge(train: Dataset, beta, lam: float) -> LinearModel:
    """Exact minimizer of ``(1/n) sum beta_i r_i^2 + lam ||omega||^2`` (bias unpenalized)."""
    if lam < 0:
        raise FitError("lambda must be nonnegative")
    w = _beta_array(beta, train.n)
    t0 = time.perf_counter()
    theta = _weighted_solve(train.features, train.response, w, lam)
    elapsed = time.perf_counter() - t0
    scheme = getattr(beta, "scheme", "weighted")
    return LinearModel(theta[:-1], float(theta[-1]), lam,
                       {"defense": f"ridge[{scheme}]", "train_time": elapsed, "iterations": 1})


def fit_ridge(train: Dataset, lam: float) -> LinearModel:
    model = fit_weighted_ridge(train, np.ones(train.n), lam)
    model.meta["defense"] = "ridge"
    return model


def mse(model: LinearModel, data: Dataset) -> float:
    if data.d != model.omega.shape[0]:
        raise FitError(f"model has {model.omega.shape[0]} features, data has {data.d}")
    r = data.response - model.predict(data.features)
    return float(np.mean(r * r))


def report(model: LinearModel, train: Dataset, test: Dataset) -> FitReport:
    return FitReport(mse(model, train), mse(model, test), model)


def robust_scale(residuals) -> float:
    r = np.asarray(residuals, dtype=float)
    return MAD_SCALE * float(np.median(np.abs(r - np.median(r))))


def huber_loss(r, delta: float) -> np.ndarray:
    """Squared loss inside ``delta``, continued linearly (slope 2*delta) outside."""
    a = np.abs(r)
    return np.where(a <= delta, r * r, 2 * delta * a - delta * delta)


def fit_huber(train: Dataset, delta: float | None = None, lam: float = 0.0,
              tol: float = 1e-8, max_iters: int = 200) -> LinearModel:
    """Huber M-estimate by iteratively reweighted least squares.

    ``delta`` defaults to 1.35 times the robust scale of a ridge pre-fit's residuals.
    """
    t0 = time.perf_counter()
    X, y, n = train.features, train.response, train.n
    Xa = augment(X)
    theta = _weighted_solve(X, y, np.ones(n), lam)
    if delta is None:
        delta = max(1.35 * robust_scale(y - Xa @ theta), 1e-8)
    if delta <= 0:
        raise FitError("delta must be positive")
    D = penalty_diag(X.shape[1], lam)

    def gradient(th):
        r = y - Xa @ th
        psi = np.clip(r, -delta, delta)
        return -2.0 * Xa.T @ psi / n + 2.0 * D @ th

    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        if np.linalg.norm(gradient(theta)) <= tol:
            converged = True
            break
        r = np.abs(y - Xa @ theta)
        w = np.where(r <= delta, 1.0, delta / np.maximum(r, 1e-300))
        theta = _weighted_solve(X, y, w, lam)
    else:
        converged = np.linalg.norm(gradient(theta)) <= tol
    meta = {"defense": "huber", "train_time": time.perf_counter() - t0,
            "iterations": iters, "delta": delta, "converged": bool(converged)}
    return LinearModel(theta[:-1], float(theta[-1]), lam, meta)


def fit_ransac(train: Dataset, trials: int = 100, inlier_threshold: float | None = None,
               min_sample: int | None = None, lam: float = 0.0, seed=0) -> LinearModel:
    """Random-sample consensus; the final model is refit on the largest consensus set.

    Trial ``t`` draws from its own stream seeded by ``(seed, t)``.
    """
    t0 = time.perf_counter()
    X, y, n, d = train.features, train.response, train.n, train.d
    if min_sample is None:
        min_sample = d + 1
    if min_sample < d + 1 or min_sample > n:
        raise FitError(f"min_sample must be in [{d + 1}, {n}], got {min_sample}")
    if trials < 1:
        raise FitError("trials must be at least 1")
    Xa = augment(X)
    if inlier_threshold is None:
        prefit = _weighted_solve(X, y, np.ones(n), lam)
        inlier_threshold = max(2.0 * robust_scale(y - Xa @ prefit), 1e-8)
    best = None
    best_key = None
    for t in range(trials):
        rng = np.random.default_rng([int(seed), t])
        pick = rng.choice(n, size=min_sample, replace=False)
        try:
            theta = _weighted_solve(X[pick], y[pick], np.ones(min_sample), lam)
        except FitError:
            continue
        r = np.abs(y - Xa @ theta)
        inliers = r <= inlier_threshold
        key = (int(inliers.sum()), -float(np.sum(r[inliers] ** 2)))
        if best_key is None or key > best_key:
            best, best_key = inliers, key
    meta = {"defense": "ransac", "threshold": inlier_threshold, "iterations": trials}
    if best is None or best.sum() < min_sample:
        theta = _weighted_solve(X, y, np.ones(n), lam)
        meta["warning"] = "no consensus set reached min_sample; fell back to ridge"
        meta["consensus"] = np.arange(n)
    else:
        try:
            theta = _weighted_solve(X[best], y[best], np.ones(int(best.sum())), lam)
            meta["consensus"] = np.flatnonzero(best)
        except FitError:
            theta = _weighted_solve(X, y, np.ones(n), lam)
            meta["warning"] = "consensus refit was singular; fell back to ridge"
            meta["consensus"] = np.arange(n)
    meta["train_time"] = time.perf_counter() - t0
    return LinearModel(theta[:-1], float(theta[-1]), lam, meta)


def trimmed_loss(theta, X, y, kept, lam: float) -> float:
    r = y[kept] - augment(X[kept]) @ theta
    return float(np.mean(r * r) + lam * theta[:-1] @ theta[:-1])


def fit_trim(train: Dataset, n_keep: int, lam: float = 0.0, seed=0, max_iters: int = 50) -> LinearModel:
    """Trimmed least squares by alternating between a ridge fit and the ``n_keep`` smallest residuals.

    Rows are permuted before the first kept set is taken, so row order in
    ``train`` cannot hand the algorithm the clean subset.
    """
    t0 = time.perf_counter()
    X, y, n = train.features, train.response, train.n
    if not train.d + 1 <= n_keep <= n:
        raise FitError(f"n_keep must be in [{train.d + 1}, {n}], got {n_keep}")
    perm = np.random.default_rng(seed).permutation(n)
    kept = np.sort(perm[:n_keep])
    Xa = augment(X)
    losses = []
    theta = None
    iters = 0
    for iters in range(1, max_iters + 1):
        theta = _weighted_solve(X[kept], y[kept], np.ones(n_keep), lam)
        losses.append(trimmed_loss(theta, X, y, kept, lam))
        r = (y - Xa @ theta) ** 2
        order = np.argsort(r, kind="stable")
        new_kept = np.sort(order[:n_keep])
        if np.array_equal(new_kept, kept):
            break
        kept = new_kept
    meta = {"defense": "trim", "train_time": time.perf_counter() - t0, "iterations": iters,
            "losses": losses, "kept": kept}
    return LinearModel(theta[:-1], float(theta[-1]), lam, meta)

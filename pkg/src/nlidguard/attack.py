"""Optimization-based poisoning of ridge regression.

Poisoned rows start as copies of random training rows with flipped responses
and are then moved, one row at a time, along the gradient of the victim's
validation MSE. Each step size comes from a small grid by refitting the
victim and keeping whichever candidate hurts validation the most.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .regressors import augment, penalty_diag, solve_normal_equations

DEFAULT_ETA_GRID = (0.01, 0.03, 0.05, 0.1, 0.3, 0.5)
INIT_MODES = ("bflip", "iflip")
MAX_RATE = 0.2


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    poisoning_rate: float = 0.2
    init: str = "bflip"
    eta_grid: tuple[float, ...] = DEFAULT_ETA_GRID
    max_iters: int = 30
    rel_tol: float = 1e-5
    optimize_y: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.poisoning_rate <= MAX_RATE + 1e-12:
            raise AttackError(f"poisoning_rate must be in [0, {MAX_RATE}], got {self.poisoning_rate}")
        if self.init not in INIT_MODES:
            raise AttackError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        object.__setattr__(self, "eta_grid", tuple(float(e) for e in self.eta_grid))
        if not self.eta_grid:
            raise AttackError("eta_grid is empty")
        if any(e <= 0 for e in self.eta_grid):
            raise AttackError("eta_grid values must be positive")
        if self.max_iters < 1 or self.rel_tol <= 0:
            raise AttackError("max_iters must be >= 1 and rel_tol > 0")

    def n_poison(self, n: int) -> int:
        """Rows to inject so that ``p / (p + n)`` matches the rate."""
        r = self.poisoning_rate
        return int(round(r * n / (1.0 - r)))


@dataclass
class PoisonResult:
    contaminated: Dataset
    poisoned_indices: np.ndarray
    trace: list[float] = field(default_factory=list)
    init_mode: str = "bflip"

    @property
    def normal_indices(self) -> np.ndarray:
        mask = np.ones(self.contaminated.n, dtype=bool)
        mask[self.poisoned_indices] = False
        return np.flatnonzero(mask)

    def write(self, out_dir, response_column: str = "target") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.contaminated.to_csv(out / "contaminated.csv", response_column)
        with open(out / "poisoned_indices.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index"])
            w.writerows([[int(i)] for i in self.poisoned_indices])
        with open(out / "trace.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "validation_mse"])
            w.writerows([[i, repr(float(v))] for i, v in enumerate(self.trace)])


def bflip(y) -> np.ndarray:
    # round(1 - y) with ties going up
    return np.floor(1.0 - np.asarray(y, dtype=float) + 0.5)


def iflip(y) -> np.ndarray:
    return 1.0 - np.asarray(y, dtype=float)


def init_poison(train: Dataset, config: AttackConfig, rng=None):
    """Starting poisoned rows: copies of random training rows with flipped responses.

    Returns ``(features, responses, source_indices)``.
    """
    p = config.n_poison(train.n)
    if p >= train.n:
        raise AttackError(f"{p} poisoned rows requested for {train.n} training rows")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    source = np.sort(rng.choice(train.n, size=p, replace=False))
    Xp = train.features[source].copy()
    flip = bflip if config.init == "bflip" else iflip
    yp = np.clip(flip(train.response[source]), 0.0, 1.0)
    return Xp, yp, source


class _Victim:
    """Ridge victim over clean + poisoned rows, kept as running normal-equation sums."""

    def __init__(self, X, y, Xp, yp, lam: float, validation: Dataset):
        self.lam = lam
        self.N = X.shape[0] + Xp.shape[0]
        Xa = augment(X)
        self.base_gram = Xa.T @ Xa
        self.base_rhs = Xa.T @ y
        self.Xp = np.array(Xp, dtype=float)
        self.yp = np.array(yp, dtype=float)
        self.Xv = augment(validation.features)
        self.yv = validation.response
        self.resync()

    def resync(self):
        Pa = augment(self.Xp)
        self.gram = self.base_gram + Pa.T @ Pa
        self.rhs = self.base_rhs + Pa.T @ self.yp

    def solve(self, gram=None, rhs=None):
        gram = self.gram if gram is None else gram
        rhs = self.rhs if rhs is None else rhs
        return solve_normal_equations(gram / self.N, rhs / self.N, self.lam)

    def val_mse(self, theta) -> float:
        r = self.Xv @ theta - self.yv
        return float(r @ r / r.shape[0])

    def swapped(self, j, x_new, y_new):
        a_old = np.append(self.Xp[j], 1.0)
        a_new = np.append(x_new, 1.0)
        gram = self.gram - np.outer(a_old, a_old) + np.outer(a_new, a_new)
        rhs = self.rhs - a_old * self.yp[j] + a_new * y_new
        return gram, rhs

    def gradient(self, j, theta):
        """Gradient of validation MSE w.r.t. poisoned row ``j``'s features and response."""
        d = self.Xp.shape[1]
        A = self.gram / self.N + penalty_diag(d, self.lam)
        r_val = self.Xv @ theta - self.yv
        g_theta = 2.0 * self.Xv.T @ r_val / r_val.shape[0]
        u = np.linalg.solve(A, g_theta)
        a = np.append(self.Xp[j], 1.0)
        resid = self.yp[j] - a @ theta
        omega = theta[:-1]
        grad_x = (resid * u[:-1] - omega * (a @ u)) / self.N
        grad_y = (a @ u) / self.N
        return grad_x, grad_y


def poison_gradient(train: Dataset, Xp, yp, validation: Dataset, lam: float):
    """Validation-MSE gradients for every poisoned row, shape ``(p, d)`` and ``(p,)``.

    Obtained by differentiating the victim's normal equations
    ``A theta = c`` implicitly with respect to each poisoned coordinate.
    """
    victim = _Victim(train.features, train.response, Xp, yp, lam, validation)
    theta = victim.solve()
    gx = np.empty_like(victim.Xp)
    gy = np.empty(victim.yp.shape[0])
    for j in range(gx.shape[0]):
        gx[j], gy[j] = victim.gradient(j, theta)
    return gx, gy


def validation_mse(train: Dataset, Xp, yp, validation: Dataset, lam: float) -> float:
    """Victim refit on ``train`` plus poison, scored on ``validation``."""
    victim = _Victim(train.features, train.response, Xp, yp, lam, validation)
    return victim.val_mse(victim.solve())


def _check_disjoint(train: Dataset, validation: Dataset):
    if validation.d != train.d:
        raise AttackError("validation and training sets have different widths")
    seen = {row.tobytes() for row in train.joint()}
    for row in validation.joint():
        if row.tobytes() in seen:
            raise AttackError("validation set overlaps the training set")


def opt_attack(train: Dataset, validation: Dataset, config: AttackConfig, victim_lambda: float) -> PoisonResult:
    """Gradient-ascent poisoning against a ridge victim with ``victim_lambda``."""
    _check_disjoint(train, validation)
    rng = np.random.default_rng(config.seed)
    p = config.n_poison(train.n)
    if p == 0:
        return PoisonResult(train, np.empty(0, dtype=int), [], config.init)
    Xp, yp, _ = init_poison(train, config, rng)
    victim = _Victim(train.features, train.response, Xp, yp, victim_lambda, validation)
    theta = victim.solve()
    current = victim.val_mse(theta)
    trace = [current]
    for _ in range(config.max_iters):
        start = current
        for j in range(p):
            gx, gy = victim.gradient(j, theta)
            if not config.optimize_y:
                gy = 0.0
            norm = np.sqrt(gx @ gx + gy * gy)
            if norm == 0:
                continue
            gx, gy = gx / norm, gy / norm
            best = None
            for eta in config.eta_grid:
                x_new = np.clip(victim.Xp[j] + eta * gx, 0.0, 1.0)
                y_new = float(np.clip(victim.yp[j] + eta * gy, 0.0, 1.0))
                gram, rhs = victim.swapped(j, x_new, y_new)
                cand_theta = victim.solve(gram, rhs)
                score = victim.val_mse(cand_theta)
                if best is None or score > best[0]:
                    best = (score, x_new, y_new, gram, rhs, cand_theta)
            if best[0] > current:
                current, x_new, y_new, victim.gram, victim.rhs, theta = best
                victim.Xp[j] = x_new
                victim.yp[j] = y_new
        # rebuild sums from scratch to stop drift from the rank-one updates
        victim.resync()
        theta = victim.solve()
        trace.append(current)
        if (current - start) / max(start, 1e-300) < config.rel_tol:
            break
    X_all = np.vstack([train.features, victim.Xp])
    y_all = np.concatenate([train.response, victim.yp])
    order = rng.permutation(X_all.shape[0])
    contaminated = Dataset(X_all[order], y_all[order], train.feature_names)
    poisoned = np.sort(np.flatnonzero(order >= train.n))
    return PoisonResult(contaminated, poisoned, trace, config.init)

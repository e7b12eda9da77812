"""Cross-validated attack/defense sweeps and their CSV reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .attack import DEFAULT_ETA_GRID, AttackConfig, PoisonResult, opt_attack
from .data import Dataset, fit_normalizer, load_csv, make_folds, split, synth_linear
from .lid import nlid_scores
from .regressors import fit_huber, fit_ransac, fit_ridge, fit_trim, fit_weighted_ridge, mse
from .weighting import WeightVector, attack_unaware_weights, fit_lr_curve

log = logging.getLogger(__name__)

DEFAULT_RATES = (0.0, 0.04, 0.08, 0.12, 0.16, 0.20)
DEFAULT_K_GRID = tuple(range(10, 100, 10))
NLID_DEFENSES = ("nlid_lr", "nlid_cvx", "nlid_linear", "nlid_concave")
DEFENSES = ("ridge", *NLID_DEFENSES, "trim", "ransac", "huber")
SCHEME_OF = {"nlid_cvx": "convex", "nlid_linear": "linear", "nlid_concave": "concave"}


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    response_column: str = "target"
    synth: dict | None = None
    fold_count: int = 5
    rates: tuple[float, ...] = DEFAULT_RATES
    inits: tuple[str, ...] = ("bflip",)
    eta_grid: tuple[float, ...] = DEFAULT_ETA_GRID
    max_iters: int = 30
    rel_tol: float = 1e-5
    optimize_y: bool = True
    lam: float = 0.01
    defenses: tuple[str, ...] = ("ridge", "nlid_lr", "nlid_cvx", "trim", "ransac", "huber")
    k: int = 20
    k_grid: tuple[int, ...] | None = None
    lid_space: str = "features"
    lr_sim_rate: float = 0.2
    lr_transform: str = "clamp"
    ransac_trials: int = 100
    huber_delta: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.rates = tuple(float(r) for r in self.rates)
        self.inits = tuple(self.inits)
        self.eta_grid = tuple(float(e) for e in self.eta_grid)
        self.defenses = tuple(self.defenses)
        if self.k_grid is not None:
            self.k_grid = tuple(int(k) for k in self.k_grid)
        if "ridge" not in self.defenses:
            self.defenses = ("ridge", *self.defenses)
        unknown = set(self.defenses) - set(DEFENSES)
        if unknown:
            raise ExperimentError(f"unknown defenses {sorted(unknown)}; choose from {DEFENSES}")
        if any(not 0.0 <= r <= 0.2 for r in self.rates):
            raise ExperimentError("poisoning rates must lie in [0, 0.2]")
        if self.lam < 0:
            raise ExperimentError("lambda must be nonnegative")
        if self.fold_count < 3:
            raise ExperimentError("fold_count must be at least 3 (test, validation and training folds)")
        if self.lid_space not in ("features", "joint"):
            raise ExperimentError("lid_space must be 'features' or 'joint'")
        if (self.dataset is None) == (self.synth is None):
            raise ExperimentError("give exactly one of dataset or synth")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ExperimentError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    def attack_config(self, rate: float, init: str, seed: int) -> AttackConfig:
        return AttackConfig(rate, init, self.eta_grid, self.max_iters, self.rel_tol, self.optimize_y, seed)

    def load(self) -> Dataset:
        if self.synth is not None:
            s = self.synth
            return synth_linear(int(s["n"]), int(s["d"]), float(s.get("noise_sd", 0.05)), int(s.get("seed", self.seed)))
        return load_csv(self.dataset, self.response_column)


@dataclass
class ExperimentReport:
    records: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    RESULT_FIELDS = ("defense", "init", "rate", "fold", "k", "mse", "beta_min", "beta_max")

    def cells(self):
        return sorted({(r["defense"], r["init"], r["rate"]) for r in self.records})

    def _matched(self, defense, init, rates=None):
        """(defense record, ridge record) pairs on the same rate and fold."""
        base = {(r["rate"], r["fold"]): r for r in self.records if r["defense"] == "ridge" and r["init"] == init}
        own = [r for r in self.records if r["defense"] == defense and r["init"] == init
               and (rates is None or r["rate"] in rates)]
        return [(r, base[(r["rate"], r["fold"])]) for r in own if (r["rate"], r["fold"]) in base]

    def summary(self) -> list[dict]:
        """Per (defense, init, rate) and pooled over rates: mean MSE, % change and time factor vs ridge."""
        rows = []
        keys = self.cells()
        pooled = sorted({(d, i) for d, i, _ in keys})
        for defense, init, rate in keys + [(d, i, None) for d, i in pooled]:
            pairs = self._matched(defense, init, None if rate is None else (rate,))
            if not pairs:
                continue
            m_def = float(np.mean([a["mse"] for a, _ in pairs]))
            m_base = float(np.mean([b["mse"] for _, b in pairs]))
            t_def = float(np.mean([a["time_s"] for a, _ in pairs]))
            t_base = float(np.mean([b["time_s"] for _, b in pairs]))
            rows.append({
                "defense": defense, "init": init, "rate": "all" if rate is None else rate,
                "mean_mse": m_def, "ridge_mse": m_base,
                "pct_change": 100.0 * (m_def - m_base) / m_base if m_base > 0 else 0.0,
                "time_factor": t_def / t_base if t_base > 0 else float("nan"),
            })
        return rows

    def curves(self) -> list[dict]:
        rows = []
        for defense, init, rate in self.cells():
            vals = [r["mse"] for r in self.records if (r["defense"], r["init"], r["rate"]) == (defense, init, rate)]
            rows.append({"defense": defense, "init": init, "rate": rate, "mean_mse": float(np.mean(vals))})
        return rows

    def pct_change(self, defense: str, init: str, rates) -> float:
        """Percentage MSE change vs ridge pooled over the given rates (matched folds)."""
        pairs = self._matched(defense, init, tuple(rates))
        m_def = np.mean([a["mse"] for a, _ in pairs])
        m_base = np.mean([b["mse"] for _, b in pairs])
        return float(100.0 * (m_def - m_base) / m_base)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path: Path, fields, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row.get(f)) for f in fields])


def emit_report(report: ExperimentReport, out_dir, config: ExperimentConfig | None = None) -> list[Path]:
    """Write results.csv, timings.csv, summary.csv, curves.csv and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = sorted(report.records, key=lambda r: (r["defense"], r["init"], r["rate"], r["fold"]))
    paths = [out / n for n in ("results.csv", "timings.csv", "summary.csv", "curves.csv", "manifest.json")]
    _write_rows(paths[0], ExperimentReport.RESULT_FIELDS, records)
    _write_rows(paths[1], ("defense", "init", "rate", "fold", "time_s"), records)
    _write_rows(paths[2], ("defense", "init", "rate", "mean_mse", "ridge_mse", "pct_change", "time_factor"),
                report.summary())
    _write_rows(paths[3], ("defense", "init", "rate", "mean_mse"), report.curves())
    manifest = {
        "package": "nlidguard", "version": __version__,
        "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
        "seed": None if config is None else config.seed,
        "config": None if config is None else config.to_dict(),
    }
    paths[4].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths


def cell_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def lid_points(data: Dataset, config: ExperimentConfig) -> np.ndarray:
    return data.features if config.lid_space == "features" else data.joint()


def simulate_attack(train: Dataset, config: ExperimentConfig, init: str, seed: int) -> PoisonResult:
    """Attack a copy of ``train`` using a held-out fifth of it as the attacker's validation set."""
    sim_train, sim_val = split(train, 0.2, seed)
    cfg = config.attack_config(config.lr_sim_rate, init, seed)
    return opt_attack(sim_train, sim_val, cfg, config.lam)


def defend(defense: str, train: Dataset, config: ExperimentConfig, *, k: int, n_clean: int | None = None,
           simulation: PoisonResult | None = None, seed: int = 0):
    """Fit one defense on ``train``; returns ``(model, weights or None, seconds)``.

    The clock covers the whole method: N-LID scores, weight fitting and the
    final solve. Obtaining the simulated attack for ``nlid_lr`` is not timed.
    """
    t0 = time.perf_counter()
    weights = None
    if defense == "ridge":
        model = fit_ridge(train, config.lam)
    elif defense in SCHEME_OF:
        scores = nlid_scores(lid_points(train, config), k)
        weights = attack_unaware_weights(scores, SCHEME_OF[defense])
        model = fit_weighted_ridge(train, weights, config.lam)
    elif defense == "nlid_lr":
        if simulation is None:
            raise ExperimentError("nlid_lr needs a simulated attack for its labeled sets")
        sim_k = min(k, simulation.contaminated.n - 1)
        sim_scores = nlid_scores(lid_points(simulation.contaminated, config), sim_k)
        curve = fit_lr_curve(sim_scores.nlid, simulation.normal_indices, simulation.poisoned_indices,
                             config.lr_transform, seed=seed)
        scores = nlid_scores(lid_points(train, config), k)
        weights = WeightVector(np.clip(curve(scores.nlid), 0.0, 1.0), "lr")
        model = fit_weighted_ridge(train, weights, config.lam)
    elif defense == "trim":
        n_keep = train.n if n_clean is None else n_clean
        model = fit_trim(train, n_keep, config.lam, seed)
    elif defense == "ransac":
        model = fit_ransac(train, config.ransac_trials, lam=config.lam, seed=seed)
    elif defense == "huber":
        model = fit_huber(train, config.huber_delta, config.lam)
    else:
        raise ExperimentError(f"unknown defense {defense!r}")
    return model, weights, time.perf_counter() - t0


def _k_grid_for(grid, n_min: int) -> list[int]:
    usable = [k for k in grid if 1 <= k <= n_min - 1]
    if not usable:
        raise ExperimentError(f"k grid {list(grid)} has no value below sample count {n_min}")
    return usable


def k_validation_scores(train: Dataset, config: ExperimentConfig, defenses, init: str | None = None,
                        seed: int | None = None, simulation: PoisonResult | None = None) -> dict:
    """Mean held-out MSE per (defense, k) over inner folds of ``train``.

    Every inner training part is attacked at ``lr_sim_rate`` (its held-out
    fold is the attacker's validation set) and then defended. ``nlid_lr``
    takes its curve from ``simulation``, a separate attack on ``train``, as
    it does in the sweep itself.
    """
    init = init or config.inits[0]
    seed = config.seed if seed is None else seed
    grid = config.k_grid or (config.k,)
    if "nlid_lr" in defenses and simulation is None:
        simulation = simulate_attack(train, config, init, cell_seed(seed, 3))
    plan = make_folds(train.n, config.fold_count, seed)
    inner = []
    for g in range(config.fold_count):
        held = train.subset(plan.test_indices(g))
        rest = train.subset(plan.train_indices(g))
        sim = opt_attack(rest, held, config.attack_config(config.lr_sim_rate, init, cell_seed(seed, g, 1)), config.lam)
        inner.append((held, sim.contaminated))
    usable = _k_grid_for(grid, min(c.n for _, c in inner))
    scores = {}
    for defense in defenses:
        for k in usable:
            errs = []
            for g, (held, contaminated) in enumerate(inner):
                model, _, _ = defend(defense, contaminated, config, k=k, simulation=simulation,
                                     seed=cell_seed(seed, g, 2))
                errs.append(mse(model, held))
            scores[(defense, k)] = float(np.mean(errs))
    return scores


def tune_k(train: Dataset, config: ExperimentConfig, defense: str = "nlid_cvx", init: str | None = None,
           seed: int | None = None) -> int:
    """Grid k with the lowest mean validation MSE for ``defense``; ties go to the smaller k."""
    if defense not in NLID_DEFENSES:
        raise ExperimentError(f"{defense!r} is not an N-LID defense")
    grid = config.k_grid or (config.k,)
    if len(grid) == 1:
        return int(grid[0])
    scores = k_validation_scores(train, config, [defense], init, seed)
    return min(((s, k) for (d, k), s in scores.items() if d == defense))[1]


def fold_splits(data: Dataset, config: ExperimentConfig, fold: int):
    """Test fold, the next fold as attacker validation, the rest as training; min-max scaled on training."""
    plan = make_folds(data.n, config.fold_count, config.seed)
    val_fold = (fold + 1) % config.fold_count
    test_idx = plan.test_indices(fold)
    val_idx = plan.test_indices(val_fold)
    train_idx = np.flatnonzero((plan.assignments != fold) & (plan.assignments != val_fold))
    raw_train = data.subset(train_idx)
    norm = fit_normalizer(raw_train)
    parts = (norm.apply(raw_train), norm.apply(data.subset(val_idx)), norm.apply(data.subset(test_idx)))
    return parts, {"train": train_idx, "validation": val_idx, "test": test_idx}


def run_experiment(config: ExperimentConfig, data: Dataset | None = None) -> ExperimentReport:
    data = config.load() if data is None else data
    report = ExperimentReport()
    nlid_defs = [d for d in config.defenses if d in NLID_DEFENSES]
    for fold in range(config.fold_count):
        (train, val, test), idx = fold_splits(data, config, fold)
        report.provenance[fold] = dict(idx)
        for init_no, init in enumerate(config.inits):
            base_seed = cell_seed(config.seed, fold, init_no)
            simulation = None
            if "nlid_lr" in config.defenses:
                simulation = simulate_attack(train, config, init, cell_seed(base_seed, 7919))
                # the simulation only ever sees this fold's training rows
                report.provenance[fold]["lr_simulation"] = idx["train"]
            ks = {d: config.k for d in nlid_defs}
            if config.k_grid and len(config.k_grid) > 1 and nlid_defs:
                scores = k_validation_scores(train, config, nlid_defs, init, cell_seed(base_seed, 104729), simulation)
                for d in nlid_defs:
                    ks[d] = min((s, k) for (dd, k), s in scores.items() if dd == d)[1]
            elif config.k_grid:
                ks = {d: config.k_grid[0] for d in nlid_defs}
            for rate_no, rate in enumerate(config.rates):
                seed = cell_seed(config.seed, fold, init_no, rate_no)
                try:
                    poisoned = opt_attack(train, val, config.attack_config(rate, init, seed), config.lam)
                except Exception as exc:
                    raise ExperimentError(f"attack failed (fold={fold}, rate={rate}, init={init}): {exc}") from exc
                contaminated = poisoned.contaminated
                for defense in config.defenses:
                    k = ks.get(defense)
                    if k is not None:
                        k = min(k, contaminated.n - 1)
                    try:
                        model, weights, seconds = defend(defense, contaminated, config, k=k or 0,
                                                         n_clean=train.n, simulation=simulation, seed=seed)
                    except Exception as exc:
                        raise ExperimentError(f"{defense} failed (fold={fold}, rate={rate}, init={init}): {exc}") from exc
                    report.records.append({
                        "defense": defense, "init": init, "rate": rate, "fold": fold, "k": k,
                        "mse": mse(model, test), "time_s": seconds,
                        "beta_min": None if weights is None else float(weights.beta.min()),
                        "beta_max": None if weights is None else float(weights.beta.max()),
                    })
                log.info("fold %d init %s rate %.2f done", fold, init, rate)
    return report

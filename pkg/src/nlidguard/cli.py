"""Command line entry point: synth, attack, defend, evaluate, sweep, tune-k."""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .attack import AttackConfig, opt_attack
from .data import DataError, fit_normalizer, load_csv, synth_linear
from .harness import (DEFENSES, ExperimentConfig, PoisonResult, defend, emit_report, lid_points,
                      run_experiment, tune_k)
from .lid import nlid_scores
from .regressors import LinearModel, mse
from .weighting import WeightVector


def _floats(text: str | None):
    if text is None:
        return None
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str | None):
    if text is None:
        return None
    return tuple(int(v) for v in text.split(",") if v.strip())


def _read_indices(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.asarray([int(r[0]) for r in rows[1:] if r], dtype=int)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Poisoning attacks on ridge regression and N-LID weighted defenses."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--n", "n", type=int, required=True)
@click.option("--d", "d", type=int, required=True)
@click.option("--noise-sd", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def synth(n, d, noise_sd, seed, out):
    """Write a synthetic linear dataset (response column 'target')."""
    data = synth_linear(n, d, noise_sd, seed)
    data.to_csv(out)
    truth = Path(out).with_suffix(".truth.json")
    truth.write_text(json.dumps({"omega": data.meta["omega"].tolist(), "bias": data.meta["bias"]}))
    click.echo(f"wrote {n} rows to {out}")


@main.command()
@click.option("--train", "train_path", type=click.Path(exists=True), required=True)
@click.option("--validation", "val_path", type=click.Path(exists=True), required=True)
@click.option("--response-column", default="target", show_default=True)
@click.option("--rate", type=float, default=0.2, show_default=True)
@click.option("--init", type=click.Choice(["bflip", "iflip"]), default="bflip", show_default=True)
@click.option("--lam", type=float, default=0.01, show_default=True, help="Victim ridge lambda.")
@click.option("--eta-grid", default=None, help="Comma-separated step sizes.")
@click.option("--max-iters", type=int, default=30, show_default=True)
@click.option("--rel-tol", type=float, default=1e-5, show_default=True)
@click.option("--fixed-y", is_flag=True, help="Do not optimize poisoned responses.")
@click.option("--normalize/--no-normalize", default=True, show_default=True,
              help="Min-max scale both sets with training statistics first.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def attack(train_path, val_path, response_column, rate, init, lam, eta_grid, max_iters, rel_tol, fixed_y,
           normalize, seed, out_dir):
    """Poison a training CSV; writes contaminated.csv, poisoned_indices.csv, trace.csv."""
    train = load_csv(train_path, response_column)
    val = load_csv(val_path, response_column)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if normalize:
        norm = fit_normalizer(train)
        train, val = norm.apply(train), norm.apply(val)
        (out / "normalizer.json").write_text(norm.to_json())
    kwargs = {} if eta_grid is None else {"eta_grid": _floats(eta_grid)}
    cfg = AttackConfig(rate, init, max_iters=max_iters, rel_tol=rel_tol, optimize_y=not fixed_y, seed=seed, **kwargs)
    result = opt_attack(train, val, cfg, lam)
    result.write(out, response_column)
    final = result.trace[-1] if result.trace else float("nan")
    click.echo(f"injected {len(result.poisoned_indices)} rows; validation MSE {final:.6g}")


@main.command("defend")
@click.option("--train", "train_path", type=click.Path(exists=True), required=True)
@click.option("--response-column", default="target", show_default=True)
@click.option("--defense", type=click.Choice(DEFENSES), default="nlid_cvx", show_default=True)
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--lam", type=float, default=0.01, show_default=True)
@click.option("--lid-space", type=click.Choice(["features", "joint"]), default="features", show_default=True)
@click.option("--labels", type=click.Path(exists=True), default=None,
              help="poisoned_indices.csv marking the poisoned rows of --train (needed by nlid_lr).")
@click.option("--n-clean", type=int, default=None, help="Rows TRIM keeps (defaults to all).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def defend_cmd(train_path, response_column, defense, k, lam, lid_space, labels, n_clean, seed, out_dir):
    """Fit one defense; writes model.txt and, for N-LID defenses, weights.csv and nlid.csv."""
    train = load_csv(train_path, response_column)
    cfg = ExperimentConfig(dataset=train_path, response_column=response_column, lam=lam, k=k, lid_space=lid_space, seed=seed)
    simulation = None
    if defense == "nlid_lr":
        if labels is None:
            raise click.UsageError("nlid_lr needs --labels")
        simulation = PoisonResult(train, _read_indices(labels))
    model, weights, seconds = defend(defense, train, cfg, k=k, n_clean=n_clean, simulation=simulation, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.txt").write_text(model.to_record() + "\n")
    if weights is not None:
        weights.to_csv(out / "weights.csv")
        nlid_scores(lid_points(train, cfg), k).to_csv(out / "nlid.csv")
    click.echo(f"{defense}: training MSE {mse(model, train):.6g} in {seconds:.3g}s")


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--response-column", default="target", show_default=True)
@click.option("--normalizer", type=click.Path(exists=True), default=None,
              help="normalizer.json to scale the data with before scoring.")
def evaluate(model_path, data_path, response_column, normalizer):
    """Print the MSE of a saved model on a CSV."""
    from .data import Normalizer

    model = LinearModel.from_record(Path(model_path).read_text())
    data = load_csv(data_path, response_column)
    if normalizer:
        data = Normalizer.from_json(Path(normalizer).read_text()).apply(data)
    click.echo(f"{mse(model, data):.10g}")


def _config_from(config_path, overrides: dict) -> ExperimentConfig:
    raw = {}
    if config_path:
        import yaml

        with open(config_path) as fh:
            raw = yaml.safe_load(fh) or {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if raw.get("dataset") is not None:
        raw.pop("synth", None)
    return ExperimentConfig.from_dict(raw)


_sweep_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="YAML config file."),
    click.option("--dataset", default=None),
    click.option("--response-column", default=None),
    click.option("--rates", default=None, help="Comma-separated poisoning rates."),
    click.option("--inits", default=None, help="Comma-separated attack initializations."),
    click.option("--defenses", default=None, help="Comma-separated defense names."),
    click.option("--lam", type=float, default=None),
    click.option("--k", type=int, default=None),
    click.option("--k-grid", default=None, help="Comma-separated k values to tune over."),
    click.option("--eta-grid", default=None),
    click.option("--max-iters", type=int, default=None),
    click.option("--fold-count", type=int, default=None),
    click.option("--seed", type=int, default=None),
]


def sweep_options(fn):
    for opt in reversed(_sweep_options):
        fn = opt(fn)
    return fn


def _overrides(dataset, response_column, rates, inits, defenses, lam, k, k_grid, eta_grid, max_iters,
               fold_count, seed) -> dict:
    return {
        "dataset": dataset, "response_column": response_column, "rates": _floats(rates),
        "inits": None if inits is None else tuple(inits.split(",")),
        "defenses": None if defenses is None else tuple(defenses.split(",")),
        "lam": lam, "k": k, "k_grid": _ints(k_grid), "eta_grid": _floats(eta_grid),
        "max_iters": max_iters, "fold_count": fold_count, "seed": seed,
    }


@main.command()
@sweep_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def sweep(config_path, out_dir, **flags):
    """Run the full cross-validated experiment and write the report CSVs."""
    cfg = _config_from(config_path, _overrides(**flags))
    report = run_experiment(cfg)
    for path in emit_report(report, out_dir, cfg):
        click.echo(str(path))


@main.command("tune-k")
@sweep_options
@click.option("--defense", type=click.Choice(["nlid_lr", "nlid_cvx", "nlid_linear", "nlid_concave"]),
              default="nlid_cvx", show_default=True)
def tune_k_cmd(config_path, defense, **flags):
    """Print the k chosen for one N-LID defense on a (pristine) training CSV."""
    cfg = _config_from(config_path, _overrides(**flags))
    data = cfg.load()
    data = fit_normalizer(data).apply(data)
    click.echo(tune_k(data, cfg, defense))


def run():
    try:
        main(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()

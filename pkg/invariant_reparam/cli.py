"""Command-line interface for invariant-reparam.

Commands cover the structural analysis (SVD and monomial coordinates), maximum
likelihood, profile likelihoods, prediction bands, the Fisher rank check, and a
``reproduce-paper`` command running the whole workflow on every built-in model.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

# Allow running this file directly by ensuring the project root is on sys.path
if __package__ is None or __package__ == "":
    sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from invariant_reparam.errors import ConfigError, IIRError
from invariant_reparam.model_api import available_models
from invariant_reparam.pipeline import BUILTIN_MODELS, Session, reproduce_builtin, run_command
from invariant_reparam.runconfig import DATA_SOURCES, RunConfig, load_run_config
from invariant_reparam.settings import APP_NAME, load_settings

app = typer.Typer(add_completion=False,
                  help=f"{APP_NAME} - identifiable monomial reparameterisation of models")
console = Console()

DEFAULT_OUT = Path("iir-output")


def _setup_logging(verbose: bool) -> None:
    """Route package logs through a single RichHandler on stderr."""
    logger = logging.getLogger("invariant_reparam")
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False, show_time=False)
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    handler.setLevel(logging.DEBUG if verbose else logging.WARNING)


@app.callback()
def _root(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show progress and debug logs"),
) -> None:
    _setup_logging(verbose)


def _build_config(
    model: Optional[str],
    config: Optional[Path],
    seed: Optional[int],
    data: Optional[str],
    rounded: Optional[bool] = None,
    df: Optional[int] = None,
    level: Optional[float] = None,
) -> RunConfig:
    """RunConfig from --config (if any) with command-line flags applied on top."""
    if config is not None:
        run = load_run_config(config)
        if model is not None:
            run = dataclasses.replace(run, model=model)
    elif model is not None:
        run = RunConfig(model=model)
    else:
        raise ConfigError("pass --model or --config", field="model")
    if data is not None:
        if data in DATA_SOURCES:
            run = dataclasses.replace(run, data=dataclasses.replace(run.data, source=data))
        else:
            run = dataclasses.replace(
                run, data=dataclasses.replace(run.data, source="file", path=data)
            )
    if df is not None and df not in (1, 2, 3):
        raise ConfigError(f"df must be 1, 2 or 3, got {df}", field="--df")
    if level is not None and not 0.0 < level < 1.0:
        raise ConfigError(f"must lie in (0, 1), got {level}", field="--level")
    return run.with_overrides(seed=seed, rounded=rounded, df=df, level=level)


def _out_dir(out: Optional[Path], run: RunConfig) -> Path:
    if out is not None:
        return out
    if run.output_dir:
        return Path(run.output_dir)
    return DEFAULT_OUT


def _fail(action: str, e: Exception) -> typer.Exit:
    console.print(f"[red]Error {action}: {e}[/red]")
    if isinstance(e, IIRError):
        return typer.Exit(e.exit_code)
    if isinstance(e, ValueError):
        return typer.Exit(1)
    return typer.Exit(2)


def _report(outputs: List[Path], out_dir: Path) -> None:
    console.print(f"[green]Wrote {len(outputs)} file(s) to {out_dir}[/green]")


MODEL_HELP = "Built-in model name or package.module:attribute"
CONFIG_HELP = "RunConfig JSON file"
OUT_HELP = "Output directory"
DATA_HELP = "published, synthetic, auto, or a data file path"


def _run(command: str, run: RunConfig, out: Optional[Path],
         session: Optional[Session] = None) -> List[Path]:
    out_dir = _out_dir(out, run)
    outputs = run_command(command, run, out_dir, load_settings(), session)
    _report(outputs, out_dir)
    return outputs


@app.command()
def reparam(
    model: Optional[str] = typer.Option(None, help=MODEL_HELP),
    config: Optional[Path] = typer.Option(None, help=CONFIG_HELP),
    out: Optional[Path] = typer.Option(None, help=OUT_HELP),
    seed: Optional[int] = typer.Option(None, min=0, help="Seed for multistarts and sampling"),
    data: Optional[str] = typer.Option(None, help=DATA_HELP),
    rounded: Optional[bool] = typer.Option(None, "--rounded/--unrounded",
                                           help="Round exponent rows to monomials"),
) -> None:
    """SVD of the log-space Jacobian, identifiable coordinates and invariance check."""
    try:
        run = _build_config(model, config, seed, data, rounded)
        session = Session.open(run, load_settings())
        analysis = session.analysis()
        coords = session.coordinates()
        table = Table(title=f"{session.model.name} coordinates")
        table.add_column("#", justify="right")
        table.add_column("Coordinate")
        table.add_column("sigma_i/sigma_1", justify="right")
        table.add_column("Class")
        for i, label in enumerate(coords.labels):
            table.add_row(str(i), label, f"{analysis.ratios[i]:.3e}", coords.classification[i])
        console.print(table)
        _run("reparam", run, out, session)
    except Exception as e:
        raise _fail("computing reparameterisation", e) from e


@app.command("mle")
def mle_cmd(
    model: Optional[str] = typer.Option(None, help=MODEL_HELP),
    config: Optional[Path] = typer.Option(None, help=CONFIG_HELP),
    out: Optional[Path] = typer.Option(None, help=OUT_HELP),
    seed: Optional[int] = typer.Option(None, min=0, help="Seed for multistarts"),
    data: Optional[str] = typer.Option(None, help=DATA_HELP),
) -> None:
    """Maximum-likelihood estimate in original parameters."""
    try:
        run = _build_config(model, config, seed, data)
        _run("mle", run, out)
    except Exception as e:
        raise _fail("fitting model", e) from e


@app.command()
def profile(
    model: Optional[str] = typer.Option(None, help=MODEL_HELP),
    config: Optional[Path] = typer.Option(None, help=CONFIG_HELP),
    out: Optional[Path] = typer.Option(None, help=OUT_HELP),
    seed: Optional[int] = typer.Option(None, min=0, help="Seed for multistarts"),
    data: Optional[str] = typer.Option(None, help=DATA_HELP),
    rounded: Optional[bool] = typer.Option(None, "--rounded/--unrounded",
                                           help="Round exponent rows to monomials"),
    df: Optional[int] = typer.Option(None, help="Chi-square degrees of freedom (1-3)"),
    level: Optional[float] = typer.Option(None, help="Confidence level in (0, 1)"),
) -> None:
    """Profile likelihoods in original and reparameterised coordinates."""
    try:
        run = _build_config(model, config, seed, data, rounded, df, level)
        _run("profile", run, out)
    except Exception as e:
        raise _fail("computing profiles", e) from e


@app.command()
def predict(
    model: Optional[str] = typer.Option(None, help=MODEL_HELP),
    config: Optional[Path] = typer.Option(None, help=CONFIG_HELP),
    out: Optional[Path] = typer.Option(None, help=OUT_HELP),
    seed: Optional[int] = typer.Option(None, min=0, help="Seed for multistarts"),
    data: Optional[str] = typer.Option(None, help=DATA_HELP),
    rounded: Optional[bool] = typer.Option(None, "--rounded/--unrounded",
                                           help="Round exponent rows to monomials"),
    df: Optional[int] = typer.Option(None, help="Degrees of freedom for band cutoffs (1-3)"),
    level: Optional[float] = typer.Option(None, help="Confidence level in (0, 1)"),
) -> None:
    """Profile-wise prediction bands and their unions."""
    try:
        run = _build_config(model, config, seed, data, rounded, df, level)
        _run("predict", run, out)
    except Exception as e:
        raise _fail("computing prediction bands", e) from e


@app.command("fisher-check")
def fisher_check(
    model: Optional[str] = typer.Option(None, help=MODEL_HELP),
    config: Optional[Path] = typer.Option(None, help=CONFIG_HELP),
    out: Optional[Path] = typer.Option(None, help=OUT_HELP),
    seed: Optional[int] = typer.Option(None, min=0, help="Seed for multistarts"),
    data: Optional[str] = typer.Option(None, help=DATA_HELP),
) -> None:
    """Fisher information rank against the auxiliary Jacobian rank at the MLE."""
    try:
        run = _build_config(model, config, seed, data)
        _run("fisher-check", run, out)
    except Exception as e:
        raise _fail("running Fisher rank check", e) from e


@app.command("reproduce-paper")
def reproduce(
    out: Path = typer.Option(DEFAULT_OUT, help=OUT_HELP),
    seed: int = typer.Option(1, min=0, help="Seed for multistarts and synthetic sampling"),
    model: Optional[List[str]] = typer.Option(None, help="Restrict to these built-in models"),
) -> None:
    """Run every analysis on all built-in example models."""
    try:
        models = list(model) if model else list(BUILTIN_MODELS)
        unknown = [m for m in models if m not in BUILTIN_MODELS]
        if unknown:
            raise ConfigError(f"unknown model(s) {', '.join(unknown)} "
                              f"(available: {', '.join(BUILTIN_MODELS)})", field="--model")
        outputs = reproduce_builtin(out, seed, models, load_settings())
        _report(outputs, out)
    except Exception as e:
        raise _fail("reproducing analyses", e) from e


@app.command("models")
def list_models() -> None:
    """List registered model names."""
    for name in available_models():
        console.print(name)


def main() -> None:  # pragma: no cover - exercised via CLI
    app()


if __name__ == "__main__":  # pragma: no cover
    main()

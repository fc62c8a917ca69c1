"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numeric failure (partial outputs are retained).
"""

from __future__ import annotations

import sys

import click

from ..errors import ConfigError, NumericError, ParameterError, TrainingError
from . import runs
from .config import default_config, dump_config, load_config


def _common(f):
    f = click.option("--config", "config_path", type=str, default=None, help="YAML config file.")(f)
    f = click.option("--seed", type=int, default=None, help="Override the config seed.")(f)
    f = click.option("--out", type=str, default=None, help="Override the output directory.")(f)
    f = click.option("--print-config", is_flag=True, help="Print the resolved config and exit.")(f)
    f = click.option("--figures/--no-figures", "figures_flag", default=None, help="Toggle PNG rendering.")(f)
    return f


def _resolve(command: str, config_path, seed, out, figures_flag):
    overrides = {"seed": seed, "out": out}
    if figures_flag is not None:
        overrides["figures"] = figures_flag
    return load_config(command, config_path, overrides)


def _run(command: str, config_path, seed, out, print_config, figures_flag, fn):
    try:
        cfg = _resolve(command, config_path, seed, out, figures_flag)
        if print_config:
            click.echo(dump_config(cfg), nl=False)
            return
        fn(cfg)
    except (ConfigError, ParameterError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except (NumericError, TrainingError) as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        sys.exit(3)


@click.group()
@click.version_option()
def main():
    """Score-distillation laboratory on toy conditional diffusion models."""


@main.command()
@_common
def train(config_path, seed, out, print_config, figures_flag):
    """Train the toy conditional denoiser and write a checkpoint."""

    def go(cfg):
        path = runs.cmd_train(cfg)
        click.echo(f"checkpoint written to {path}")

    _run("train", config_path, seed, out, print_config, figures_flag, go)


@main.command()
@_common
def distill(config_path, seed, out, print_config, figures_flag):
    """Run one distillation method and write its run directory."""

    def go(cfg):
        path, history = runs.cmd_distill(cfg)
        if history.failed:
            click.echo(f"numeric failure: {history.failure_message}", err=True)
            click.echo(f"partial outputs retained in {path}", err=True)
            sys.exit(3)
        click.echo(f"run written to {path}")

    _run("distill", config_path, seed, out, print_config, figures_flag, go)


@main.command()
@_common
def compare(config_path, seed, out, print_config, figures_flag):
    """Run all methods at a matched denoiser-call budget."""

    def go(cfg):
        path = runs.cmd_compare(cfg)
        click.echo(f"comparison written to {path}")

    _run("compare", config_path, seed, out, print_config, figures_flag, go)


@main.command()
@_common
def ablate(config_path, seed, out, print_config, figures_flag):
    """Sweep the farthest-timestep / step-size grid."""

    def go(cfg):
        path = runs.cmd_ablate(cfg)
        click.echo(f"ablation written to {path}")

    _run("ablate", config_path, seed, out, print_config, figures_flag, go)


@main.command()
@_common
def verify(config_path, seed, out, print_config, figures_flag):
    """Run the identity and property self-checks."""

    def go(cfg):
        results, _ = runs.cmd_verify(cfg)
        for r in results:
            click.echo(r.line())
        if not all(r.passed for r in results):
            sys.exit(1)

    _run("verify", config_path, seed, out, print_config, figures_flag, go)


if __name__ == "__main__":
    main()

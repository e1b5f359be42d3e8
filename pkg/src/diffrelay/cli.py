"""Command-line surface: run experiments and ablation suites from a config file.

Output directories resolve against the config's ``output_dir``, which the
DIFFRELAY_OUTPUT_ROOT environment variable can re-root. All commands exit 0
on success and nonzero with a one-line diagnostic otherwise.
"""

from __future__ import annotations

import os
from pathlib import Path

import click

from .harness import (
    ExperimentConfig,
    ablate_denoising,
    ablate_long,
    ablate_te,
    metrics_from_run_dir,
    run_experiment,
)
from .metrics import MetricReport


def _load(config_path: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_file(config_path)
    except (OSError, KeyError, ValueError) as exc:
        raise click.ClickException(f"bad config {config_path}: {exc}") from exc


def _out_dir(config: ExperimentConfig, suffix: str = "") -> Path:
    root = os.environ.get("DIFFRELAY_OUTPUT_ROOT")
    base = Path(root) / config.output_dir if root else Path(config.output_dir)
    return base / suffix if suffix else base


@click.group()
def main():
    """Staged diffusion sampling experiments over synthetic frame data."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def run(config_path):
    """Run the configured experiment and write per-run records and reports."""
    config = _load(config_path)
    out = _out_dir(config)
    aggregate = run_experiment(config, out)
    for name, (mean, std) in aggregate.items():
        click.echo(f"{name}: {mean:.6g} +/- {std:.6g}")
    click.echo(f"wrote {out}")


@main.command("ablate-te")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--te", default="50,100,200,300,500", show_default=True,
              help="Comma-separated re-injection depths to sweep.")
def ablate_te_cmd(config_path, te):
    """Sweep the re-injection depth and report the error trend."""
    config = _load(config_path)
    try:
        te_values = [int(v) for v in te.split(",") if v.strip()]
    except ValueError as exc:
        raise click.ClickException(f"bad --te list {te!r}") from exc
    out = _out_dir(config, "ablate_te")
    rows = ablate_te(config, te_values, out)
    for r in rows:
        click.echo(
            f"te={r['te']}: spatial={r['spatial_fidelity_err']:.4f} "
            f"temporal={r['temporal_consistency_err']:.4f}"
        )
    click.echo(
        f"spearman spatial={rows[0]['spearman_spatial']:.3f} "
        f"temporal={rows[0]['spearman_temporal']:.3f}"
    )
    click.echo(f"wrote {out}")


@main.command("ablate-denoising")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def ablate_denoising_cmd(config_path):
    """Compare all refinement modes under shared seeds."""
    config = _load(config_path)
    out = _out_dir(config, "ablate_denoising")
    rows = ablate_denoising(config, out)
    for r in rows:
        click.echo(
            f"{r['mode']}: spatial={r['spatial_fidelity_err']:.4f} "
            f"temporal={r['temporal_consistency_err']:.4f}"
        )
    click.echo(f"wrote {out}")


@main.command("ablate-long")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def ablate_long_cmd(config_path):
    """Toggle each long-run coherence strategy off in turn."""
    config = _load(config_path)
    if config.long is None:
        raise click.ClickException("config has no 'long' section")
    out = _out_dir(config, "ablate_long")
    rows = ablate_long(config, out)
    for r in rows:
        click.echo(
            f"{r['variant']}: junction_jump={r['junction_jump']:.4f} "
            f"corr={r['inter_segment_corr']:.4f}"
        )
    click.echo(f"wrote {out}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def metrics(run_dir):
    """Recompute the metric row for a stored runs/NNN directory."""
    try:
        report = metrics_from_run_dir(run_dir)
    except (OSError, KeyError, ValueError) as exc:
        raise click.ClickException(f"cannot score {run_dir}: {exc}") from exc
    click.echo(",".join(MetricReport.CSV_COLUMNS))
    click.echo(report.to_csv_row())


if __name__ == "__main__":
    main()

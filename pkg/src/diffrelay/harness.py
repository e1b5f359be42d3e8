"""Experiment runner: seeded repeats, ablation suites, CSV + figure reports.

Every artifact written here is a pure function of the config document and its
master seed. Per-run seeds come from a splitmix64 expansion of the master
seed, so runs are independent streams without any coordination. CSV tables
start with a '#'-prefixed provenance line carrying the config hash and the
seed list (plus a timestamp, which comparisons should ignore).
"""

from __future__ import annotations

import hashlib
import json
import statistics
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from .experts import (
    ExpertSpec,
    GaussianTarget,
    make_control_expert,
    make_spatial_expert,
    make_temporal_expert,
)
from .longgen import LongConfig, run_long, save_long_run
from .metrics import (
    MetricReport,
    junction_jump,
    sliced_w2,
    spatial_fidelity_err,
    temporal_consistency_err,
)
from .presets import load_target
from .sampler import MODES, PipelineConfig, run_pipeline, save_record
from .schedule import make_linear_schedule

_MASK64 = (1 << 64) - 1

DEFAULT_EXPERT_PARAMS = {
    "total_steps": 1000,
    "blur": 0.5,
    # Deliberately distinct beta ranges per expert so cross-scheduler
    # re-noising is exercised nontrivially.
    "control_beta": [2.0e-4, 0.03],
    "spatial_beta": [1.0e-4, 0.02],
    "temporal_beta": [5.0e-5, 0.012],
}


def splitmix64(state: int) -> int:
    """One splitmix64 output for a 64-bit state (documented seed expansion)."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def expand_seeds(master_seed: int, n: int) -> list[int]:
    """Derive ``n`` independent per-run seeds from one master seed."""
    return [splitmix64(master_seed + i) for i in range(n)]


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a preset target, expert recipe, pipeline, and repeats."""

    preset: str
    pipeline: PipelineConfig
    n_runs: int = 5
    n_samples: int = 2000
    n_projections: int = 64
    master_seed: int = 0
    expert_params: dict = field(default_factory=lambda: dict(DEFAULT_EXPERT_PARAMS))
    long: LongConfig | None = None
    output_dir: str = "out"

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        params = dict(DEFAULT_EXPERT_PARAMS)
        params.update(self.expert_params or {})
        object.__setattr__(self, "expert_params", params)

    def to_dict(self) -> dict:
        d = {
            "preset": self.preset,
            "pipeline": self.pipeline.to_dict(),
            "n_runs": self.n_runs,
            "n_samples": self.n_samples,
            "n_projections": self.n_projections,
            "master_seed": self.master_seed,
            "expert_params": self.expert_params,
            "output_dir": self.output_dir,
        }
        if self.long is not None:
            lc = self.long
            d["long"] = {
                "n_segments": lc.n_segments,
                "segment_frames": lc.segment_frames,
                "gamma": lc.gamma,
                "enable_consistency_init": lc.enable_consistency_init,
                "enable_coherence_guidance": lc.enable_coherence_guidance,
                "enable_staggered_refinement": lc.enable_staggered_refinement,
            }
        return d

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        pipeline = PipelineConfig.from_dict(d["pipeline"])
        long_cfg = None
        if "long" in d and d["long"] is not None:
            long_cfg = LongConfig(pipeline=pipeline, **d["long"])
        return ExperimentConfig(
            preset=d["preset"],
            pipeline=pipeline,
            n_runs=d.get("n_runs", 5),
            n_samples=d.get("n_samples", 2000),
            n_projections=d.get("n_projections", 64),
            master_seed=d.get("master_seed", 0),
            expert_params=d.get("expert_params", {}),
            long=long_cfg,
            output_dir=d.get("output_dir", "out"),
        )

    @staticmethod
    def from_file(path: str | Path) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def build_experts(
    target: GaussianTarget, params: dict
) -> tuple[ExpertSpec, ExpertSpec, ExpertSpec]:
    """Construct (control, spatial, temporal) experts from a reference target."""
    T = int(params["total_steps"])
    s_con = make_linear_schedule(*params["control_beta"], T, "control")
    s_spa = make_linear_schedule(*params["spatial_beta"], T, "spatial")
    s_tem = make_linear_schedule(*params["temporal_beta"], T, "temporal")
    control = make_control_expert(target, s_con)
    spatial = make_spatial_expert(target, s_spa)
    temporal = make_temporal_expert(target, s_tem, float(params["blur"]))
    return control, spatial, temporal


def provenance_line(config: ExperimentConfig, seeds: list[int]) -> str:
    ts = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return f"# config_hash={config.config_hash()} seeds={seeds} generated={ts}"


def _write_table(path: Path, header_lines: list[str], columns: list[str],
                 rows: list[list]) -> None:
    lines = list(header_lines)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(
            ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row)
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _single_run_metrics(
    config: ExperimentConfig,
    experts: tuple[ExpertSpec, ExpertSpec, ExpertSpec],
    target: GaussianTarget,
    seed: int,
    out_dir: Path | None,
) -> MetricReport:
    """One seeded pipeline batch (or long run) plus its metric row."""
    control, spatial, temporal = experts
    rng = np.random.default_rng(seed)
    if config.long is None:
        cfg = replace(config.pipeline, seed=seed, record_states=False)
        record = run_pipeline(control, spatial, temporal, cfg, rng,
                              batch=config.n_samples)
        samples = record.final
        jump = 0.0
        if out_dir is not None:
            save_record(record, out_dir)
            arr = np.ascontiguousarray(samples, dtype="<f8")
            (out_dir / "samples.bin").write_bytes(arr.tobytes())
            (out_dir / "samples_manifest.json").write_text(
                json.dumps({"dtype": "<f8", "shape": list(arr.shape)})
            )
    else:
        long_cfg = replace(config.long, pipeline=replace(config.pipeline, seed=seed))
        video, records = run_long(control, spatial, temporal, long_cfg, rng)
        L = long_cfg.segment_frames
        samples = video.reshape(-1, L, video.shape[-1])
        jump = junction_jump(video, L)
        if out_dir is not None:
            save_long_run(out_dir, video, records, L)
    ref = target.sample(len(samples), np.random.default_rng(splitmix64(seed)))
    w2 = sliced_w2(samples, ref, config.n_projections,
                   np.random.default_rng(splitmix64(seed + 1)))
    return MetricReport(
        sliced_w2=w2,
        spatial_fidelity_err=spatial_fidelity_err(samples, target),
        temporal_consistency_err=temporal_consistency_err(samples, target),
        junction_jump=jump,
        n_samples=len(samples),
        n_projections=config.n_projections,
        seed=seed,
    )


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path | None = None
) -> dict:
    """Execute ``n_runs`` seeded pipelines and aggregate their metrics.

    Writes per-run record dirs, runs.csv (one row per run plus mean/std
    summary rows), and a metric figure. Returns the aggregate as a dict of
    column -> (mean, std).
    """
    target = load_target(config.preset)
    experts = build_experts(target, config.expert_params)
    seeds = expand_seeds(config.master_seed, config.n_runs)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            json.dumps(config.to_dict(), indent=2, sort_keys=True)
        )
    reports = []
    for i, seed in enumerate(seeds):
        run_out = (out / "runs" / f"{i:03d}") if out is not None else None
        if run_out is not None:
            run_out.mkdir(parents=True, exist_ok=True)
        reports.append(_single_run_metrics(config, experts, target, seed, run_out))

    metric_cols = ["sliced_w2", "spatial_fidelity_err",
                   "temporal_consistency_err", "junction_jump"]
    aggregate = {}
    for col in metric_cols:
        vals = [getattr(r, col) for r in reports]
        aggregate[col] = (
            statistics.fmean(vals),
            statistics.stdev(vals) if len(vals) > 1 else 0.0,
        )
    if out is not None:
        rows = [[i] + [getattr(r, c) for c in MetricReport.CSV_COLUMNS]
                for i, r in enumerate(reports)]
        rows.append(["mean"] + [aggregate[c][0] for c in metric_cols] + ["", "", ""])
        rows.append(["std"] + [aggregate[c][1] for c in metric_cols] + ["", "", ""])
        _write_table(
            out / "runs.csv",
            [provenance_line(config, seeds)],
            ["run"] + list(MetricReport.CSV_COLUMNS),
            rows,
        )
        from .plots import plot_run_metrics

        plot_run_metrics(reports, out / "runs.png")
    return aggregate


def ablate_te(
    config: ExperimentConfig,
    te_values: list[int],
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Sweep the re-injection depth with fixed seeds; report the error trend.

    Emits one row per depth (median metrics over the runs) and Spearman rank
    correlations of each error against the depth.
    """
    if not te_values:
        raise ValueError("te_values must be nonempty")
    rows = []
    target = load_target(config.preset)
    experts = build_experts(target, config.expert_params)
    seeds = expand_seeds(config.master_seed, config.n_runs)
    for te in te_values:
        cfg = replace(config, pipeline=replace(config.pipeline, reinject_depth=te))
        reports = [
            _single_run_metrics(cfg, experts, target, seed, None) for seed in seeds
        ]
        rows.append(
            {
                "te": te,
                "spatial_fidelity_err": statistics.median(
                    r.spatial_fidelity_err for r in reports
                ),
                "temporal_consistency_err": statistics.median(
                    r.temporal_consistency_err for r in reports
                ),
                "sliced_w2": statistics.median(r.sliced_w2 for r in reports),
            }
        )
    spearman_spatial = float(
        sstats.spearmanr(te_values, [r["spatial_fidelity_err"] for r in rows]).statistic
    )
    spearman_temporal = float(
        sstats.spearmanr(
            te_values, [r["temporal_consistency_err"] for r in rows]
        ).statistic
    )
    if out_dir is not None:
        out = Path(out_dir)
        _write_table(
            out / "te_ablation.csv",
            [
                provenance_line(config, seeds),
                f"# spearman_spatial={spearman_spatial!r} "
                f"spearman_temporal={spearman_temporal!r}",
            ],
            ["te", "spatial_fidelity_err", "temporal_consistency_err", "sliced_w2"],
            [[r["te"], r["spatial_fidelity_err"], r["temporal_consistency_err"],
              r["sliced_w2"]] for r in rows],
        )
        from .plots import plot_te_ablation

        plot_te_ablation(rows, out / "te_ablation.png")
    for r in rows:
        r["spearman_spatial"] = spearman_spatial
        r["spearman_temporal"] = spearman_temporal
    return rows


def ablate_denoising(
    config: ExperimentConfig, out_dir: str | Path | None = None
) -> list[dict]:
    """Run every refinement mode with shared seeds; one metric row per mode."""
    rows = []
    target = load_target(config.preset)
    experts = build_experts(target, config.expert_params)
    seeds = expand_seeds(config.master_seed, config.n_runs)
    for mode in MODES:
        cfg = replace(config, pipeline=replace(config.pipeline, mode=mode))
        reports = [
            _single_run_metrics(cfg, experts, target, seed, None) for seed in seeds
        ]
        rows.append(
            {
                "mode": mode,
                "spatial_fidelity_err": statistics.median(
                    r.spatial_fidelity_err for r in reports
                ),
                "temporal_consistency_err": statistics.median(
                    r.temporal_consistency_err for r in reports
                ),
                "sliced_w2": statistics.median(r.sliced_w2 for r in reports),
            }
        )
    if out_dir is not None:
        out = Path(out_dir)
        _write_table(
            out / "denoising_ablation.csv",
            [provenance_line(config, seeds)],
            ["mode", "spatial_fidelity_err", "temporal_consistency_err", "sliced_w2"],
            [[r["mode"], r["spatial_fidelity_err"], r["temporal_consistency_err"],
              r["sliced_w2"]] for r in rows],
        )
        from .plots import plot_mode_ablation

        plot_mode_ablation(rows, out / "denoising_ablation.png")
    return rows


LONG_VARIANTS = (
    "all_on",
    "no_consistency_init",
    "no_coherence_guidance",
    "no_staggered_refinement",
)


def ablate_long(
    config: ExperimentConfig, out_dir: str | Path | None = None
) -> list[dict]:
    """Toggle each long-run strategy off in turn, with shared seeds."""
    if config.long is None:
        raise ValueError("config has no long-run section")
    target = load_target(config.preset)
    experts = build_experts(target, config.expert_params)
    seeds = expand_seeds(config.master_seed, config.n_runs)
    control, spatial, temporal = experts
    rows = []
    for variant in LONG_VARIANTS:
        long_cfg = replace(
            config.long,
            enable_consistency_init=variant != "no_consistency_init",
            enable_coherence_guidance=variant != "no_coherence_guidance",
            enable_staggered_refinement=variant != "no_staggered_refinement",
        )
        jumps, corrs = [], []
        for i, seed in enumerate(seeds):
            lc = replace(long_cfg, pipeline=replace(config.pipeline, seed=seed))
            video, records = run_long(
                control, spatial, temporal, lc, np.random.default_rng(seed)
            )
            L = lc.segment_frames
            jumps.append(junction_jump(video, L))
            segs = video.reshape(-1, L, video.shape[-1])
            pair_corrs = [
                float(np.corrcoef(segs[j].ravel(), segs[j + 1].ravel())[0, 1])
                for j in range(len(segs) - 1)
            ]
            corrs.append(float(np.mean(pair_corrs)))
            if out_dir is not None:
                save_long_run(
                    Path(out_dir) / variant / f"run_{i:03d}", video, records, L
                )
        rows.append(
            {
                "variant": variant,
                "junction_jump": statistics.median(jumps),
                "inter_segment_corr": statistics.median(corrs),
            }
        )
    if out_dir is not None:
        out = Path(out_dir)
        _write_table(
            out / "long_ablation.csv",
            [provenance_line(config, seeds)],
            ["variant", "junction_jump", "inter_segment_corr"],
            [[r["variant"], r["junction_jump"], r["inter_segment_corr"]]
             for r in rows],
        )
        from .plots import plot_long_ablation

        plot_long_ablation(rows, out / "long_ablation.png")
    return rows


def metrics_from_run_dir(run_dir: str | Path) -> MetricReport:
    """Recompute the metric row for a stored experiment run directory.

    ``run_dir`` is one of the ``runs/NNN`` directories written by
    run_experiment; the experiment-level config.json two levels up names the
    preset the metrics are computed against.
    """
    run_dir = Path(run_dir)
    exp_config = ExperimentConfig.from_dict(
        json.loads((run_dir.parent.parent / "config.json").read_text())
    )
    target = load_target(exp_config.preset)
    manifest = json.loads((run_dir / "samples_manifest.json").read_text())
    samples = np.frombuffer(
        (run_dir / "samples.bin").read_bytes(), dtype=manifest["dtype"]
    ).reshape(manifest["shape"])
    seed = json.loads((run_dir / "config.json").read_text())["seed"]
    ref = target.sample(len(samples), np.random.default_rng(splitmix64(seed)))
    w2 = sliced_w2(samples, ref, exp_config.n_projections,
                   np.random.default_rng(splitmix64(seed + 1)))
    return MetricReport(
        sliced_w2=w2,
        spatial_fidelity_err=spatial_fidelity_err(samples, target),
        temporal_consistency_err=temporal_consistency_err(samples, target),
        junction_jump=0.0,
        n_samples=len(samples),
        n_projections=exp_config.n_projections,
        seed=seed,
    )

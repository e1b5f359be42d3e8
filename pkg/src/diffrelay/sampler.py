"""Deterministic reverse sampling and the two-stage expert pipeline.

The pipeline has a control stage (few coarse steps with the control expert,
producing a rough "structure") and a refinement stage (re-inject
``reinject_depth`` steps of noise under the spatial expert's schedule, then
denoise back down with one of five modes):

    standard        spatial expert only, directly on its own schedule
    coordinated     both experts every step, bridged through predicted x0
    naive_alternate strict alternation of the two experts on the spatial
                    schedule's state (the baseline this bridging fixes)
    spatial_only    alias behavior of standard, kept as an explicit ablation arm
    temporal_only   temporal expert throughout, applied to the spatial-schedule
                    state (scheduler-mismatched on purpose)

All reverse steps are deterministic (eta = 0); randomness enters only through
the initial draw and explicit re-noising, so a seed pins the whole run.
States are arrays of shape (F, d) or (B, F, d).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .experts import ExpertSpec, exact_epsilon
from .schedule import NoiseSchedule, renoise_to, uniform_grid

MODES = ("standard", "coordinated", "naive_alternate", "temporal_only", "spatial_only")


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline knobs.

    Attributes:
        control_steps: sampling steps in the control stage.
        refine_steps: sampling steps in the refinement stage.
        reinject_depth: noise depth applied to the control output before
            refinement (on the spatial expert's schedule).
        mode: one of MODES.
        alternation_start: which expert takes even steps in naive_alternate.
        seed: master seed for the run.
        record_noises: keep every re-noising draw in the record.
        record_states: keep per-step state/eps/x0 snapshots (disable for
            large batched runs).
    """

    control_steps: int
    refine_steps: int
    reinject_depth: int
    mode: str = "standard"
    alternation_start: str = "spatial_first"
    seed: int = 0
    record_noises: bool = False
    record_states: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.alternation_start not in ("spatial_first", "temporal_first"):
            raise ValueError(f"bad alternation_start {self.alternation_start!r}")
        if self.control_steps < 1 or self.refine_steps < 1:
            raise ValueError("control_steps and refine_steps must be >= 1")
        if self.reinject_depth < 1:
            raise ValueError("reinject_depth must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        return PipelineConfig(**d)


@dataclass
class StepRecord:
    stage: str
    timestep: int
    expert: str
    state: np.ndarray | None
    eps_hat: np.ndarray | None
    x0_hat: np.ndarray | None


@dataclass
class RunRecord:
    """Everything one pipeline run produced, for tests and downstream guidance."""

    config: PipelineConfig
    seed: int
    steps: list[StepRecord] = field(default_factory=list)
    noises: list[np.ndarray] = field(default_factory=list)
    final: np.ndarray | None = None
    control_calls: int = 0
    refine_calls: int = 0

    @property
    def expert_calls(self) -> int:
        return self.control_calls + self.refine_calls

    def control_eps(self) -> list[np.ndarray]:
        """Predicted (post-guidance) noises of the control stage, in step order."""
        return [s.eps_hat for s in self.steps if s.stage == "control"]

    def log_step(self, stage, timestep, expert, state, eps_hat, x0_hat):
        if self.config.record_states:
            self.steps.append(
                StepRecord(stage, timestep, expert,
                           np.array(state), np.array(eps_hat), np.array(x0_hat))
            )
        else:
            self.steps.append(StepRecord(stage, timestep, expert, None, None, None))


def predict_x0(
    x_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Invert the forward process given a noise estimate."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: {x_t.shape} vs {eps_hat.shape}")
    abar = schedule.alpha_bar(t)
    return (x_t - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)


def ddim_step(
    x0_hat: np.ndarray, eps_hat: np.ndarray, t_prev: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Deterministic reverse update to ``t_prev`` (returns x0_hat at t_prev=0)."""
    abar = schedule.alpha_bar(t_prev)
    return np.sqrt(abar) * np.asarray(x0_hat) + np.sqrt(1.0 - abar) * np.asarray(eps_hat)


def denoising(
    expert: ExpertSpec,
    x_t: np.ndarray,
    t: int,
    t_prev: int,
    step_schedule: NoiseSchedule | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One full reverse step: eps prediction, x0 prediction, DDIM update.

    ``step_schedule`` is the schedule the state actually lives on; it defaults
    to the expert's own. Passing a different one reproduces the scheduler
    mismatch of the naive baselines.
    """
    if not t > t_prev >= 0:
        raise ValueError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    sched = step_schedule or expert.schedule
    eps = exact_epsilon(expert, x_t, t)
    x0_hat = predict_x0(x_t, eps, t, sched)
    x_prev = ddim_step(x0_hat, eps, t_prev, sched)
    return x0_hat, x_prev


def control_stage(
    control: ExpertSpec,
    cfg: PipelineConfig,
    rng: np.random.Generator,
    record: RunRecord,
    batch: int | None = None,
    x_init: np.ndarray | None = None,
    guide=None,
) -> np.ndarray:
    """Coarse structure generation: few DDIM steps with the control expert.

    ``x_init`` overrides the initial standard-normal draw (used by the long
    pipeline's consistency initialization). ``guide`` is an optional
    ``(step_index, t, eps_hat) -> eps_hat`` hook applied to every prediction
    before it is used, and the guided value is what gets recorded.
    """
    F, d = control.target.frames, control.target.dims
    shape = (F, d) if batch is None else (batch, F, d)
    if x_init is not None:
        x = np.array(x_init, dtype=np.float64)
        if x.shape != shape:
            raise ValueError(f"x_init shape {x.shape}, expected {shape}")
    else:
        x = rng.standard_normal(shape)
    grid = uniform_grid(cfg.control_steps, control.schedule.total_steps)
    steps = list(grid.steps)
    for k in range(len(steps) - 1, -1, -1):
        t = steps[k]
        t_prev = steps[k - 1] if k > 0 else 0
        eps = exact_epsilon(control, x, t)
        record.control_calls += 1
        if guide is not None:
            eps = guide(k, t, eps)
        x0_hat = predict_x0(x, eps, t, control.schedule)
        x_next = ddim_step(x0_hat, eps, t_prev, control.schedule)
        record.log_step("control", t, control.label or "control", x, eps, x0_hat)
        x = x_next
    return x


def coordinated_step(
    x_t: np.ndarray,
    t: int,
    t_prev: int,
    spatial: ExpertSpec,
    temporal: ExpertSpec,
    rng: np.random.Generator,
    record: RunRecord | None = None,
) -> np.ndarray:
    """One refinement step using both experts, bridged through predicted x0.

    The state enters on the spatial schedule. The spatial expert predicts x0,
    which is re-noised onto the temporal schedule at the same timestep; the
    temporal expert refreshes the x0 prediction there; that refresh is
    re-noised back onto the spatial schedule; finally the spatial expert
    performs the actual reverse step down to ``t_prev``. Three expert calls.
    """
    sink = record.noises if (record is not None and record.config.record_noises) else None
    eps_s = exact_epsilon(spatial, x_t, t)
    x0_a = predict_x0(x_t, eps_s, t, spatial.schedule)
    v_temp = renoise_to(x0_a, t, temporal.schedule, rng, noise_sink=sink)
    eps_t = exact_epsilon(temporal, v_temp, t)
    x0_b = predict_x0(v_temp, eps_t, t, temporal.schedule)
    v_spat = renoise_to(x0_b, t, spatial.schedule, rng, noise_sink=sink)
    eps_s2 = exact_epsilon(spatial, v_spat, t)
    x0_c = predict_x0(v_spat, eps_s2, t, spatial.schedule)
    if record is not None:
        record.refine_calls += 3
        record.log_step("refine", t, "coordinated", x_t, eps_s2, x0_c)
    return ddim_step(x0_c, eps_s2, t_prev, spatial.schedule)


def _alternation_expert(k: int, cfg: PipelineConfig, spatial, temporal):
    even_first = spatial if cfg.alternation_start == "spatial_first" else temporal
    odd_next = temporal if cfg.alternation_start == "spatial_first" else spatial
    return even_first if k % 2 == 0 else odd_next


def refine_stage(
    v0: np.ndarray,
    spatial: ExpertSpec,
    temporal: ExpertSpec,
    cfg: PipelineConfig,
    rng: np.random.Generator,
    record: RunRecord,
) -> np.ndarray:
    """Re-noise the structure and denoise it back down in the configured mode."""
    sink = record.noises if cfg.record_noises else None
    x = renoise_to(v0, cfg.reinject_depth, spatial.schedule, rng, noise_sink=sink)
    grid = uniform_grid(cfg.refine_steps, cfg.reinject_depth)
    steps = list(grid.steps)
    for k in range(len(steps) - 1, -1, -1):
        t = steps[k]
        t_prev = steps[k - 1] if k > 0 else 0
        if cfg.mode == "coordinated":
            x = coordinated_step(x, t, t_prev, spatial, temporal, rng, record)
            continue
        if cfg.mode in ("standard", "spatial_only"):
            expert = spatial
        elif cfg.mode == "temporal_only":
            expert = temporal
        else:  # naive_alternate
            expert = _alternation_expert(k, cfg, spatial, temporal)
        # The state lives on the spatial schedule throughout; a temporal-expert
        # call here is deliberately scheduler-mismatched.
        eps = exact_epsilon(expert, x, t)
        record.refine_calls += 1
        x0_hat = predict_x0(x, eps, t, spatial.schedule)
        x_next = ddim_step(x0_hat, eps, t_prev, spatial.schedule)
        record.log_step("refine", t, expert.label or expert.role, x, eps, x0_hat)
        x = x_next
    return x


def run_pipeline(
    control: ExpertSpec,
    spatial: ExpertSpec,
    temporal: ExpertSpec,
    cfg: PipelineConfig,
    rng: np.random.Generator | None = None,
    batch: int | None = None,
) -> RunRecord:
    """Full control + refinement run; returns the populated RunRecord.

    Total expert evaluations are ``control_steps + refine_steps * 3`` in
    coordinated mode and ``control_steps + refine_steps`` otherwise.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    record = RunRecord(config=cfg, seed=cfg.seed)
    v0 = control_stage(control, cfg, rng, record, batch=batch)
    final = refine_stage(v0, spatial, temporal, cfg, rng, record)
    record.final = final
    return record


# --- run-record persistence -------------------------------------------------
#
# A record directory holds config.json, trajectory.bin (flat little-endian
# float64 payload described by manifest.json), noises.bin when re-noising
# draws were recorded, and final.csv with one row per frame.


def save_record(record: RunRecord, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"pipeline": record.config.to_dict(), "seed": record.seed},
                   indent=2, sort_keys=True)
    )
    manifest = {"entries": [], "dtype": "<f8"}
    payload = []
    offset = 0
    for i, s in enumerate(record.steps):
        for kind, arr in (("state", s.state), ("eps_hat", s.eps_hat),
                          ("x0_hat", s.x0_hat)):
            if arr is None:
                continue
            manifest["entries"].append(
                {"step": i, "stage": s.stage, "timestep": s.timestep,
                 "expert": s.expert, "kind": kind, "offset": offset,
                 "shape": list(arr.shape)}
            )
            payload.append(np.ascontiguousarray(arr, dtype="<f8"))
            offset += arr.size
    (out / "trajectory.bin").write_bytes(b"".join(p.tobytes() for p in payload))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    if record.config.record_noises and record.noises:
        blobs, noff, noise_manifest = [], 0, []
        for arr in record.noises:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            noise_manifest.append({"offset": noff, "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
            noff += arr.size
        (out / "noises.bin").write_bytes(b"".join(blobs))
        (out / "noises_manifest.json").write_text(json.dumps(noise_manifest))
    final = np.asarray(record.final)
    if final.ndim == 3:  # batched run: store the first sample per frame
        final = final[0]
    lines = [",".join(repr(float(v)) for v in row) for row in final]
    (out / "final.csv").write_text("\n".join(lines) + "\n")
    return out


def load_final(run_dir: str | Path) -> np.ndarray:
    rows = [
        [float(v) for v in line.split(",")]
        for line in Path(run_dir, "final.csv").read_text().strip().splitlines()
    ]
    return np.array(rows)

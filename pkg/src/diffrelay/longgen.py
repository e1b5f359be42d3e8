"""Long-sequence generation: segment chaining with three coherence strategies.

A long run generates ``n_segments`` structures with the control expert and
refines them into one (n_segments * L)-frame video. Three independently
switchable strategies fight boundary flicker and content drift:

  * consistency initialization - every segment starts from a frame-shuffled
    copy of one shared base noise,
  * coherence guidance - each control-stage noise prediction is pulled toward
    the previous segment's recorded prediction at the same grid timestep,
  * staggered refinement - each refinement pass covers the second half of one
    structure and the first half of the next, so segment boundaries sit in
    the middle of a refined window.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .experts import ExpertSpec
from .sampler import PipelineConfig, RunRecord, control_stage, refine_stage


@dataclass(frozen=True)
class LongConfig:
    """Knobs for long-sequence generation on top of a base PipelineConfig."""

    n_segments: int
    segment_frames: int
    gamma: float = 0.1
    enable_consistency_init: bool = True
    enable_coherence_guidance: bool = True
    enable_staggered_refinement: bool = True
    pipeline: PipelineConfig = None

    def __post_init__(self):
        if self.n_segments < 2:
            raise ValueError("n_segments must be >= 2")
        if self.segment_frames % 2 != 0:
            raise ValueError("segment_frames must be even (staggering splits at L/2)")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.enable_coherence_guidance and not self.gamma < 0.5:
            raise ValueError("guidance needs gamma < 0.5 (contraction regime)")
        if self.pipeline is None:
            raise ValueError("a base PipelineConfig is required")


def consistency_init(
    base: np.ndarray, n_segments: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Frame-shuffled copies of one base noise, one per segment.

    The first segment keeps the identity permutation, so a single-segment run
    reduces to the plain pipeline. Every output holds exactly the same
    multiset of frame rows as ``base``.
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    base = np.asarray(base, dtype=np.float64)
    out = [base.copy()]
    for _ in range(n_segments - 1):
        perm = rng.permutation(base.shape[0])
        out.append(base[perm])
    return out


def coherence_guide(
    eps_hat_cur: np.ndarray, eps_prev: np.ndarray, gamma: float
) -> np.ndarray:
    """Pull the current noise prediction toward the previous segment's.

    Implements the gradient step on the squared distance literally:
        eps_hat - gamma * grad ||eps_hat - eps_prev||^2
      = eps_hat - 2 * gamma * (eps_hat - eps_prev)
    so the distance to ``eps_prev`` shrinks by exactly |1 - 2*gamma|.
    """
    cur = np.asarray(eps_hat_cur, dtype=np.float64)
    prev = np.asarray(eps_prev, dtype=np.float64)
    if cur.shape != prev.shape:
        raise ValueError(f"shape mismatch: {cur.shape} vs {prev.shape}")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return cur - 2.0 * gamma * (cur - prev)


def _sliced(expert: ExpertSpec, start: int, stop: int) -> ExpertSpec:
    return expert.with_target(expert.target.frame_slice(start, stop))


def staggered_refine(
    prev_structure: np.ndarray,
    next_structure: np.ndarray,
    spatial: ExpertSpec,
    temporal: ExpertSpec,
    cfg: PipelineConfig,
    rng: np.random.Generator,
    record: RunRecord,
) -> np.ndarray:
    """Refine the tail of one structure together with the head of the next.

    The two half-windows are concatenated into one L-frame unit and refined
    in a single pass, so the boundary between the structures ends up in the
    middle of the refined window.
    """
    prev_structure = np.asarray(prev_structure)
    next_structure = np.asarray(next_structure)
    if prev_structure.shape != next_structure.shape:
        raise ValueError("structures must have identical shapes")
    L = prev_structure.shape[0]
    if L % 2 != 0:
        raise ValueError("structures need an even frame count")
    window = np.concatenate([prev_structure[L // 2 :], next_structure[: L // 2]], axis=0)
    return refine_stage(window, spatial, temporal, cfg, rng, record)


def run_long(
    control: ExpertSpec,
    spatial: ExpertSpec,
    temporal: ExpertSpec,
    long_cfg: LongConfig,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[RunRecord]]:
    """Generate a coherent long sequence of ``n_segments * L`` frames.

    Returns the assembled video and one RunRecord per segment (control-stage
    steps plus whatever refinement passes were anchored to that segment).
    """
    L = long_cfg.segment_frames
    if control.target.frames != L:
        raise ValueError(
            f"control expert covers {control.target.frames} frames, expected {L}"
        )
    d = control.target.dims
    cfg = replace(long_cfg.pipeline, record_states=True)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    if long_cfg.enable_consistency_init:
        base = rng.standard_normal((L, d))
        inits = consistency_init(base, long_cfg.n_segments, rng)
    else:
        inits = [rng.standard_normal((L, d)) for _ in range(long_cfg.n_segments)]

    structures: list[np.ndarray] = []
    records: list[RunRecord] = []
    for i in range(long_cfg.n_segments):
        record = RunRecord(config=cfg, seed=cfg.seed)
        guide = None
        if long_cfg.enable_coherence_guidance and i > 0:
            prev_eps = records[-1].control_eps()
            n_steps = len(prev_eps)

            def guide(k, t, eps, _prev=prev_eps, _n=n_steps):
                # grid index k counts up; execution order counts down
                return coherence_guide(eps, _prev[_n - 1 - k], long_cfg.gamma)

        structures.append(
            control_stage(control, cfg, rng, record, x_init=inits[i], guide=guide)
        )
        records.append(record)

    half = L // 2
    if long_cfg.enable_staggered_refinement:
        head = refine_stage(
            structures[0][:half], _sliced(spatial, 0, half),
            _sliced(temporal, 0, half), cfg, rng, records[0],
        )
        parts = [head]
        for i in range(1, long_cfg.n_segments):
            parts.append(
                staggered_refine(
                    structures[i - 1], structures[i], spatial, temporal,
                    cfg, rng, records[i],
                )
            )
        tail = refine_stage(
            structures[-1][half:], _sliced(spatial, half, L),
            _sliced(temporal, half, L), cfg, rng, records[-1],
        )
        parts.append(tail)
        video = np.concatenate(parts, axis=0)
    else:
        refined = [
            refine_stage(structures[i], spatial, temporal, cfg, rng, records[i])
            for i in range(long_cfg.n_segments)
        ]
        video = np.concatenate(refined, axis=0)

    for rec, struct in zip(records, structures):
        rec.final = struct
    return video, records


def save_long_run(
    out_dir, video: np.ndarray, records: list[RunRecord], segment_len: int
):
    """Persist a long run: per-segment record dirs, junction metrics, raw video."""
    import json
    from pathlib import Path

    from .metrics import junction_jump
    from .sampler import save_record

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, rec in enumerate(records):
        save_record(rec, out / "segments" / f"{i:03d}")
    video = np.asarray(video, dtype="<f8")
    (out / "video.bin").write_bytes(np.ascontiguousarray(video).tobytes())
    (out / "video_manifest.json").write_text(
        json.dumps({"dtype": "<f8", "shape": list(video.shape),
                    "segment_len": segment_len})
    )
    n_seg = video.shape[0] // segment_len
    lines = ["junction,boundary_msd,ratio_to_interior"]
    overall = junction_jump(video, segment_len)
    interior = []
    for i in range(video.shape[0] - 1):
        if (i + 1) % segment_len != 0:
            interior.append(float(np.mean((video[i + 1] - video[i]) ** 2)))
    interior_mean = max(float(np.mean(interior)), 1e-12)
    for j in range(1, n_seg):
        b = j * segment_len
        msd = float(np.mean((video[b] - video[b - 1]) ** 2))
        lines.append(f"{j},{msd!r},{msd / interior_mean!r}")
    lines.append(f"all,,{overall!r}")
    (out / "junctions.csv").write_text("\n".join(lines) + "\n")
    return out

"""Staged diffusion sampling with analytic expert denoisers.

A desk-scale engine for decoupled control/refinement diffusion pipelines:
exact Gaussian-mixture denoisers stand in for trained experts, so every
mechanism (cross-scheduler coordination, noise re-injection, long-sequence
stitching) is executable and testable in closed form.
"""

from .experts import (
    ExpertSpec,
    GaussianTarget,
    exact_epsilon,
    make_control_expert,
    make_spatial_expert,
    make_temporal_expert,
)
from .longgen import (
    LongConfig,
    coherence_guide,
    consistency_init,
    run_long,
    staggered_refine,
)
from .metrics import (
    MetricReport,
    junction_jump,
    sliced_w2,
    spatial_fidelity_err,
    temporal_consistency_err,
)
from .presets import load_target, preset_names
from .sampler import (
    MODES,
    PipelineConfig,
    RunRecord,
    control_stage,
    coordinated_step,
    ddim_step,
    denoising,
    predict_x0,
    refine_stage,
    run_pipeline,
)
from .schedule import (
    NoiseSchedule,
    TimestepGrid,
    forward_diffuse,
    make_linear_schedule,
    renoise_to,
    uniform_grid,
)

__version__ = "0.1.0"

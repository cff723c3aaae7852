"""Elastic decoding: arbitrary-size diffusion sampling with a fixed-size
denoiser, verified end to end against an exact mixture denoiser."""

from .denoiser import (
    AnalyticDataset,
    eps_pair,
    eps_star,
    log_density,
    make_procedural_dataset,
    nearest_exemplar,
    posterior_mean,
    posterior_weights,
)
from .grid import (
    Rect,
    blend_masked,
    block_share,
    crop,
    downsample_nearest,
    frobenius_distance,
    pad_center,
    upsample_nearest,
)
from .imageio import RunReport, load_report, render_image, save_report
from .patching import (
    PatchLayout,
    PatchTile,
    layout_no_overlap,
    plan_explicit,
    plan_implicit,
    score_explicit,
    score_implicit,
    seam_discontinuity,
)
from .rng import substream
from .sampler import (
    ElasticConfig,
    ElasticSampler,
    FusionStrategy,
    GlobalFrame,
    ResamplePlan,
    SampleTrace,
    StepRecord,
    choose_reference_dims,
    default_resample_iters,
    elastic_sample,
    make_global_frame,
    make_resample_plan,
    pad_and_crop_score,
    resample_step,
    rrg_gradient,
    rrg_weight,
    substituted_count,
)
from .schedule import (
    NoiseSchedule,
    cfg_combine,
    cfg_ddim_sample,
    ddim_step,
    forward_noise,
    make_linear_schedule,
    predict_x0,
)

__all__ = [
    "AnalyticDataset",
    "ElasticConfig",
    "ElasticSampler",
    "FusionStrategy",
    "GlobalFrame",
    "NoiseSchedule",
    "PatchLayout",
    "PatchTile",
    "Rect",
    "ResamplePlan",
    "RunReport",
    "SampleTrace",
    "StepRecord",
    "blend_masked",
    "block_share",
    "cfg_combine",
    "cfg_ddim_sample",
    "choose_reference_dims",
    "crop",
    "ddim_step",
    "default_resample_iters",
    "downsample_nearest",
    "elastic_sample",
    "eps_pair",
    "eps_star",
    "forward_noise",
    "frobenius_distance",
    "layout_no_overlap",
    "load_report",
    "log_density",
    "make_global_frame",
    "make_linear_schedule",
    "make_procedural_dataset",
    "make_resample_plan",
    "nearest_exemplar",
    "pad_and_crop_score",
    "pad_center",
    "plan_explicit",
    "plan_implicit",
    "posterior_mean",
    "posterior_weights",
    "predict_x0",
    "render_image",
    "resample_step",
    "rrg_gradient",
    "rrg_weight",
    "save_report",
    "score_explicit",
    "score_implicit",
    "seam_discontinuity",
    "substituted_count",
    "substream",
    "upsample_nearest",
]

__version__ = "0.1.0"

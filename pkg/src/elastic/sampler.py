"""The elastic decoding loop: generate at an arbitrary size with a denoiser
that only accepts its native size.

Per reverse step the sampler
  1. downsamples the working latent to an aspect-preserving reference size,
  2. scores the reference inside a noised constant-color padding (so the
     denoiser input stays native size) and crops the result back,
  3. upsamples the class direction (conditional minus unconditional score)
     to the target size,
  4. optionally refines that direction by substituting a fraction of the
     reference pixels with target-resolution pixels and rescoring,
  5. estimates the unconditional score at full size from local patches,
  6. applies the guided deterministic update, and
  7. nudges the result toward the upsampled reference prediction
     (reduced-resolution guidance) with a linearly decaying weight.

At target == native with no resampling and no reduced-resolution guidance
every stage degenerates and the trajectory is bit-identical to plain
classifier-free-guided sampling.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator

from . import rng as rng_mod
from .denoiser import AnalyticDataset, eps_pair, eps_star, make_procedural_dataset
from .grid import (
    Rect,
    blend_masked,
    crop,
    downsample_nearest,
    frobenius_distance,
    pad_center,
    upsample_nearest,
)
from .patching import (
    PatchLayout,
    layout_no_overlap,
    plan_explicit,
    plan_implicit,
    score_explicit,
    score_implicit,
    seam_discontinuity,
)
from .schedule import NoiseSchedule, ddim_step, forward_noise, make_linear_schedule, predict_x0
from .validation import check_grid, require

IMPLICIT = "implicit"
EXPLICIT = "explicit"
NO_OVERLAP = "none"


@dataclass(frozen=True)
class FusionStrategy:
    """How the full-size unconditional score is assembled from native calls."""

    kind: str = IMPLICIT
    stride: int | None = None

    def __post_init__(self):
        require(self.kind in (IMPLICIT, EXPLICIT, NO_OVERLAP), f"unknown strategy kind {self.kind!r}")
        if self.kind == EXPLICIT:
            require(
                self.stride is not None and int(self.stride) >= 1,
                "explicit strategy needs a positive stride",
            )
        else:
            require(self.stride is None, f"strategy {self.kind!r} takes no stride")

    @staticmethod
    def parse(text: str) -> "FusionStrategy":
        if text == IMPLICIT:
            return FusionStrategy(IMPLICIT)
        if text in (NO_OVERLAP, "no-overlap"):
            return FusionStrategy(NO_OVERLAP)
        if text.startswith(EXPLICIT + ":"):
            return FusionStrategy(EXPLICIT, int(text.split(":", 1)[1]))
        raise ValueError(f"cannot parse strategy {text!r}; expected implicit, none or explicit:STRIDE")

    def __str__(self) -> str:
        return f"{EXPLICIT}:{self.stride}" if self.kind == EXPLICIT else self.kind


@dataclass(frozen=True)
class ElasticConfig:
    """All sampler knobs.

    resample_iters None means "pick automatically from the area ratio".
    rrg_cutoff is the fraction of steps after which the reduced-resolution
    guidance weight has decayed to zero.
    """

    target_h: int
    target_w: int
    guidance: float = 7.0
    resample_fraction: float = 0.2
    resample_iters: int | None = None
    rrg_initial: float = 200.0
    rrg_cutoff: float = 0.6
    background_low: float = -1.0
    background_high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        require(self.target_h >= 1 and self.target_w >= 1, "target dims must be positive")
        require(self.guidance >= 0.0, f"guidance must be non-negative, got {self.guidance}")
        require(0.0 <= self.resample_fraction <= 1.0, f"resample_fraction must be in [0, 1], got {self.resample_fraction}")
        if self.resample_iters is not None:
            require(int(self.resample_iters) >= 0, "resample_iters must be non-negative")
        require(self.rrg_initial >= 0.0, f"rrg_initial must be non-negative, got {self.rrg_initial}")
        require(0.0 < self.rrg_cutoff <= 1.0, f"rrg_cutoff must be in (0, 1], got {self.rrg_cutoff}")
        require(self.background_low <= self.background_high, "background range is empty")
        require(int(self.seed) >= 0, f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class GlobalFrame:
    """Reference geometry: the aspect-preserving reference dims, where they
    sit inside the native canvas, and the per-channel background color."""

    ref_h: int
    ref_w: int
    placement: Rect
    background: np.ndarray  # (channels,)


@dataclass(frozen=True)
class ResamplePlan:
    """Per-iteration substitutions: which reference pixels are replaced, the
    target pixel each one is sourced from (the center of its upsample
    footprint), and the target-resolution blend mask for that iteration.
    Masks are pairwise disjoint across iterations."""

    ref_positions: tuple[np.ndarray, ...]     # (k, 2) int arrays, reference coords
    target_positions: tuple[np.ndarray, ...]  # (k, 2) int arrays, target coords
    masks: tuple[np.ndarray, ...]             # (target_h, target_w) bool arrays


@dataclass
class StepRecord:
    index: int
    t: int
    delta: float
    ref_call_pairs: int
    patch_calls: int
    seam: float
    wall_ms: float
    x_ref: np.ndarray | None = None


@dataclass
class SampleTrace:
    frame: GlobalFrame
    resample_iters: int
    substituted_per_iter: int
    records: list[StepRecord] = field(default_factory=list)
    latents: list[np.ndarray] | None = None


def choose_reference_dims(target_h: int, target_w: int, native_h: int, native_w: int) -> tuple[int, int]:
    """Largest (N, M) fitting the native canvas with N/M matching the target
    aspect ratio; targets no larger than native are used verbatim.

    Exact rational arithmetic keeps the ratio match exact whenever an exact
    match is feasible.
    """
    require(min(target_h, target_w, native_h, native_w) >= 1, "dims must be positive")
    if target_h <= native_h and target_w <= native_w:
        return int(target_h), int(target_w)
    ratio = Fraction(target_h, target_w)
    m = min(native_w, math.floor(Fraction(native_h) / ratio))
    n = min(native_h, math.floor(ratio * m))
    require(n >= 1 and m >= 1, f"no feasible reference dims for target {target_h}x{target_w}")
    return int(n), int(m)


def make_global_frame(cfg: ElasticConfig, ds: AnalyticDataset) -> GlobalFrame:
    """Reference dims, centered placement, and the per-generation background
    color drawn from its own substream."""
    n, m = choose_reference_dims(cfg.target_h, cfg.target_w, ds.native_h, ds.native_w)
    require(n <= cfg.target_h and m <= cfg.target_w, "reference dims exceed the target")
    placement = Rect((ds.native_h - n) // 2, (ds.native_w - m) // 2, n, m)
    bg_rng = rng_mod.substream(cfg.seed, rng_mod.BACKGROUND)
    background = bg_rng.uniform(cfg.background_low, cfg.background_high, size=ds.channels)
    return GlobalFrame(ref_h=n, ref_w=m, placement=placement, background=background)


def substituted_count(fraction: float, ref_h: int, ref_w: int) -> int:
    """Reference pixels substituted per resampling iteration."""
    return int(round(fraction * ref_h * ref_w))


def default_resample_iters(target_h: int, target_w: int, ref_h: int, ref_w: int, fraction: float) -> int:
    """Four refinement iterations per doubling of area over the reference,
    capped at eight and at the point where substitutions would exhaust the
    reference grid."""
    area_ratio = Fraction(target_h * target_w, ref_h * ref_w)
    iters = min(8, max(0, math.ceil(4 * (area_ratio - 1))))
    k = substituted_count(fraction, ref_h, ref_w)
    if iters > 0 and k > 0:
        iters = min(iters, (ref_h * ref_w) // k)
    return int(iters)


def _footprint_center(i: int, src_len: int, out_len: int) -> int:
    # rows y with floor(y * src / out) == i form the contiguous range
    # [ceil(i*out/src), ceil((i+1)*out/src)); take its middle element
    start = (i * out_len + src_len - 1) // src_len
    end = ((i + 1) * out_len + src_len - 1) // src_len
    return start + (end - start) // 2


def make_resample_plan(
    ref_h: int,
    ref_w: int,
    target_h: int,
    target_w: int,
    count: int,
    iters: int,
    rng: np.random.Generator,
) -> ResamplePlan:
    """Draw `iters` disjoint batches of `count` reference positions, uniform
    without replacement, and derive the matching target pixels and masks."""
    require(count >= 0 and iters >= 0, "count and iters must be non-negative")
    total = count * iters
    require(
        total <= ref_h * ref_w,
        f"resample budget {iters}x{count} exceeds the {ref_h}x{ref_w} reference grid",
    )
    flat = rng.choice(ref_h * ref_w, size=total, replace=False) if total else np.empty(0, dtype=np.int64)
    ref_positions, target_positions, masks = [], [], []
    for r in range(iters):
        chunk = flat[r * count : (r + 1) * count]
        ref_pos = np.stack([chunk // ref_w, chunk % ref_w], axis=1) if count else np.empty((0, 2), dtype=np.int64)
        tgt_pos = np.empty_like(ref_pos)
        mask = np.zeros((target_h, target_w), dtype=bool)
        for k, (i, j) in enumerate(ref_pos):
            y = _footprint_center(int(i), ref_h, target_h)
            x = _footprint_center(int(j), ref_w, target_w)
            tgt_pos[k] = (y, x)
            mask[y, x] = True
        ref_positions.append(ref_pos)
        target_positions.append(tgt_pos)
        masks.append(mask)
    return ResamplePlan(tuple(ref_positions), tuple(target_positions), tuple(masks))


def pad_and_crop_score(
    x_ref: np.ndarray,
    t: int,
    class_id: int,
    frame: GlobalFrame,
    rng: np.random.Generator,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Score a reference-size latent through a native-size denoiser call.

    The reference is embedded in a constant-color background noised to the
    current step (fresh Gaussian draw per call), both conditional and
    unconditional predictions are evaluated on the padded grid, and both are
    cropped back to the reference placement.

    Returns (conditional score, unconditional score, padded input).
    """
    x_ref = check_grid(x_ref, "x_ref")
    require(
        x_ref.shape == (frame.ref_h, frame.ref_w, ds.channels),
        f"x_ref shape {x_ref.shape} does not match frame ({frame.ref_h}, {frame.ref_w}, {ds.channels})",
    )
    background = np.broadcast_to(frame.background, (ds.native_h, ds.native_w, ds.channels))
    z = rng.standard_normal((ds.native_h, ds.native_w, ds.channels))
    fill = forward_noise(np.ascontiguousarray(background), t, z, sched)
    x_pad, placement = pad_center(x_ref, ds.native_h, ds.native_w, fill)
    require(placement == frame.placement, "padding placement drifted from the frame")
    eps_u, eps_c = eps_pair(x_pad, t, class_id, ds, sched)
    return crop(eps_c, placement), crop(eps_u, placement), x_pad


def resample_step(
    s_d_prev: np.ndarray,
    x_bar: np.ndarray,
    x_ref: np.ndarray,
    iteration: int,
    plan: ResamplePlan,
    t: int,
    class_id: int,
    frame: GlobalFrame,
    rng: np.random.Generator,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
) -> np.ndarray:
    """One refinement iteration of the upsampled class direction.

    All substitutions planned up to and including `iteration` are applied to
    the reference latent (target-resolution pixels replace reference
    pixels), the direction is rescored through the padded call, and only the
    target positions planned for this iteration take the fresh values.
    """
    require(0 <= iteration < len(plan.masks), f"iteration {iteration} out of range for plan of {len(plan.masks)}")
    s_d_prev = check_grid(s_d_prev, "s_d_prev")
    x_bar = check_grid(x_bar, "x_bar")
    x_sub = check_grid(x_ref, "x_ref").copy()
    for r in range(iteration + 1):
        ref_pos = plan.ref_positions[r]
        tgt_pos = plan.target_positions[r]
        if len(ref_pos):
            x_sub[ref_pos[:, 0], ref_pos[:, 1], :] = x_bar[tgt_pos[:, 0], tgt_pos[:, 1], :]
    s_c, s_u, _ = pad_and_crop_score(x_sub, t, class_id, frame, rng, ds, sched)
    s_tilde = upsample_nearest(s_c - s_u, x_bar.shape[0], x_bar.shape[1])
    return blend_masked(s_d_prev, s_tilde, plan.masks[iteration])


def rrg_weight(step_index: int, total_steps: int, cfg: ElasticConfig) -> float:
    """Guidance weight at a given progress: rrg_initial at the start,
    linearly decaying to zero at progress rrg_cutoff."""
    require(0 <= step_index < total_steps, f"step_index {step_index} out of range [0, {total_steps})")
    progress = step_index / total_steps
    return cfg.rrg_initial * max(0.0, 1.0 - progress / cfg.rrg_cutoff)


def rrg_gradient(
    x_bar: np.ndarray,
    eps_full: np.ndarray,
    x0_ref_hat: np.ndarray,
    t: int,
    sched: NoiseSchedule,
) -> np.ndarray:
    """Gradient of ||predict_x0(x_bar) - upsampled reference prediction||_F
    with the noise prediction held fixed; exactly zero at the minimum,
    otherwise direction / (sqrt(alpha_bar_t) * norm)."""
    x_bar = check_grid(x_bar, "x_bar")
    x0_hat = predict_x0(x_bar, eps_full, t, sched)
    ref_up = upsample_nearest(check_grid(x0_ref_hat, "x0_ref_hat"), x_bar.shape[0], x_bar.shape[1])
    d = x0_hat - ref_up
    norm = frobenius_distance(x0_hat, ref_up)
    if norm == 0.0:
        return np.zeros_like(x_bar)
    ab = sched.alpha_bar_at(t)
    return d / (np.sqrt(ab) * norm)


def _pad_to_native(
    x: np.ndarray,
    t: int,
    frame: GlobalFrame,
    rng: np.random.Generator,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
) -> tuple[np.ndarray, Rect]:
    """Embed a grid smaller than native (on either axis) in noised background
    so the patch planner always sees dims >= native."""
    big_h = max(x.shape[0], ds.native_h)
    big_w = max(x.shape[1], ds.native_w)
    background = np.broadcast_to(frame.background, (big_h, big_w, ds.channels))
    z = rng.standard_normal((big_h, big_w, ds.channels))
    fill = forward_noise(np.ascontiguousarray(background), t, z, sched)
    return pad_center(x, big_h, big_w, fill)


def _uncond_full_score(
    x: np.ndarray,
    t: int,
    strategy: FusionStrategy,
    frame: GlobalFrame,
    rng_pad: np.random.Generator,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
) -> tuple[np.ndarray, int]:
    """Full-size unconditional score plus the number of denoiser calls made."""
    calls = 0

    def denoise(window: np.ndarray, step: int) -> np.ndarray:
        nonlocal calls
        calls += 1
        return eps_star(window, step, ds, sched)

    padded = x.shape[0] < ds.native_h or x.shape[1] < ds.native_w
    if padded:
        x_big, placement = _pad_to_native(x, t, frame, rng_pad, ds, sched)
    else:
        x_big, placement = x, Rect(0, 0, x.shape[0], x.shape[1])

    h, w = x_big.shape[0], x_big.shape[1]
    if strategy.kind == IMPLICIT:
        score = score_implicit(x_big, t, plan_implicit(h, w, ds.native_h, ds.native_w), denoise)
    elif strategy.kind == NO_OVERLAP:
        score = score_implicit(x_big, t, layout_no_overlap(h, w, ds.native_h, ds.native_w), denoise)
    else:
        score = score_explicit(x_big, t, plan_explicit(h, w, ds.native_h, ds.native_w, int(strategy.stride)), denoise)
    if padded:
        score = crop(score, placement)
    return score, calls


def elastic_sample(
    cfg: ElasticConfig,
    class_id: int,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
    strategy: FusionStrategy = FusionStrategy(IMPLICIT),
    record_latents: bool = False,
    record_refs: bool = False,
) -> tuple[np.ndarray, SampleTrace]:
    """Run the full elastic decoding loop and return (image, trace).

    Identical arguments give bit-identical images and traces: every random
    draw comes from a named substream of cfg.seed.
    """
    require(0 <= int(class_id) < len(ds.class_names), f"unknown class id {class_id}")
    frame = make_global_frame(cfg, ds)
    n, m = frame.ref_h, frame.ref_w
    count = substituted_count(cfg.resample_fraction, n, m)
    if cfg.resample_iters is None:
        iters = default_resample_iters(cfg.target_h, cfg.target_w, n, m, cfg.resample_fraction)
    else:
        iters = int(cfg.resample_iters)
    if iters > 0:
        require(
            cfg.resample_fraction * n * m >= 1.0,
            "resample_fraction selects no reference pixels; lower resample_iters to 0 or raise the fraction",
        )
        require(
            count * iters <= n * m,
            f"resample budget {iters}x{count} exceeds the {n}x{m} reference grid",
        )

    init_rng = rng_mod.substream(cfg.seed, rng_mod.INIT_NOISE)
    pad_rng = rng_mod.substream(cfg.seed, rng_mod.PAD_NOISE)
    uncond_pad_rng = rng_mod.substream(cfg.seed, rng_mod.UNCOND_PAD_NOISE)
    resample_rng = rng_mod.substream(cfg.seed, rng_mod.RESAMPLE)

    x = init_rng.standard_normal((cfg.target_h, cfg.target_w, ds.channels))
    seam_layout = _seam_layout(cfg, ds)
    trace = SampleTrace(frame=frame, resample_iters=iters, substituted_per_iter=count,
                        latents=[] if record_latents else None)

    steps = sched.step_pairs()
    total = len(steps)
    for i, (t, t_prev) in enumerate(steps):
        started = time.perf_counter()
        x_ref = downsample_nearest(x, n, m)
        s_c, s_u_ref, _ = pad_and_crop_score(x_ref, t, class_id, frame, pad_rng, ds, sched)
        ref_pairs = 1
        direction_ref = s_c - s_u_ref
        s_d = upsample_nearest(direction_ref, cfg.target_h, cfg.target_w)
        if iters > 0:
            plan = make_resample_plan(n, m, cfg.target_h, cfg.target_w, count, iters, resample_rng)
            for r in range(iters):
                s_d = resample_step(s_d, x, x_ref, r, plan, t, class_id, frame, pad_rng, ds, sched)
                ref_pairs += 1
        s_u_full, patch_calls = _uncond_full_score(x, t, strategy, frame, uncond_pad_rng, ds, sched)
        eps_full = s_u_full + cfg.guidance * s_d
        x_next = ddim_step(x, eps_full, t, t_prev, sched)
        delta = rrg_weight(i, total, cfg)
        if delta > 0.0:
            x0_ref_hat = predict_x0(x_ref, s_u_ref + cfg.guidance * direction_ref, t, sched)
            x_next = x_next - delta * rrg_gradient(x, eps_full, x0_ref_hat, t, sched)
        wall_ms = (time.perf_counter() - started) * 1e3
        trace.records.append(
            StepRecord(
                index=i,
                t=t,
                delta=delta,
                ref_call_pairs=ref_pairs,
                patch_calls=patch_calls,
                seam=seam_discontinuity_or_zero(x_next, seam_layout),
                wall_ms=wall_ms,
                x_ref=x_ref if record_refs else None,
            )
        )
        if record_latents:
            trace.latents.append(x_next)
        x = x_next
    return x, trace


def _seam_layout(cfg: ElasticConfig, ds: AnalyticDataset) -> PatchLayout | None:
    if cfg.target_h >= ds.native_h and cfg.target_w >= ds.native_w:
        return layout_no_overlap(cfg.target_h, cfg.target_w, ds.native_h, ds.native_w)
    return None


def seam_discontinuity_or_zero(x: np.ndarray, layout: PatchLayout | None) -> float:
    return seam_discontinuity(x, layout) if layout is not None else 0.0


class ElasticSampler(BaseEstimator):
    """Estimator-style front end for the elastic decoding loop.

    Parameters mirror `ElasticConfig` plus the schedule knobs, so the
    sampler composes with parameter search and clone machinery.  `fit` takes
    exemplar images X of shape (n, h, w, c) (or (n, h, w)) with labels y and
    builds the analytic denoiser; `sample` generates an image for one class.
    """

    def __init__(
        self,
        target_h: int = 128,
        target_w: int = 128,
        guidance: float = 7.0,
        steps: int = 50,
        resample_fraction: float = 0.2,
        resample_iters: int | None = None,
        rrg_initial: float = 200.0,
        rrg_cutoff: float = 0.6,
        background_low: float = -1.0,
        background_high: float = 1.0,
        strategy: str = IMPLICIT,
        seed: int = 0,
        t_train: int = 1000,
        beta_start: float = 1e-4,
        beta_end: float = 2e-2,
    ):
        self.target_h = target_h
        self.target_w = target_w
        self.guidance = guidance
        self.steps = steps
        self.resample_fraction = resample_fraction
        self.resample_iters = resample_iters
        self.rrg_initial = rrg_initial
        self.rrg_cutoff = rrg_cutoff
        self.background_low = background_low
        self.background_high = background_high
        self.strategy = strategy
        self.seed = seed
        self.t_train = t_train
        self.beta_start = beta_start
        self.beta_end = beta_end

    def fit(self, X, y=None, class_names: tuple[str, ...] | None = None):
        """Bind exemplar images and labels; X may also be an AnalyticDataset
        (then y and class_names are ignored)."""
        if isinstance(X, AnalyticDataset):
            dataset = X
        else:
            arr = np.asarray(X, dtype=np.float64)
            if arr.ndim == 3:
                arr = arr[:, :, :, None]
            require(arr.ndim == 4, "X must have shape (n, h, w, c) or (n, h, w)")
            require(y is not None, "labels y are required when X is an array")
            labels = np.asarray(y)
            if labels.dtype.kind in "US":
                names = tuple(sorted(set(labels.tolist())))
                labels = np.asarray([names.index(v) for v in labels.tolist()], dtype=np.int64)
            else:
                labels = labels.astype(np.int64)
                names = class_names if class_names is not None else tuple(
                    f"class_{i}" for i in range(int(labels.max()) + 1)
                )
            dataset = AnalyticDataset(
                native_h=arr.shape[1],
                native_w=arr.shape[2],
                channels=arr.shape[3],
                exemplars=arr,
                labels=labels,
                class_names=names,
            )
        self.dataset_ = dataset
        self.schedule_ = make_linear_schedule(self.t_train, self.beta_start, self.beta_end, self.steps)
        return self

    def fit_procedural(self, dataset_seed: int = 0, per_class: int = 1, native_h: int = 64, native_w: int = 64):
        """Fit on the built-in procedural exemplar generator."""
        return self.fit(make_procedural_dataset(dataset_seed, per_class, native_h, native_w))

    def _check_fitted(self):
        require(hasattr(self, "dataset_"), "this sampler is not fitted; call fit first")

    def config(self, seed: int | None = None) -> ElasticConfig:
        return ElasticConfig(
            target_h=self.target_h,
            target_w=self.target_w,
            guidance=self.guidance,
            resample_fraction=self.resample_fraction,
            resample_iters=self.resample_iters,
            rrg_initial=self.rrg_initial,
            rrg_cutoff=self.rrg_cutoff,
            background_low=self.background_low,
            background_high=self.background_high,
            seed=self.seed if seed is None else seed,
        )

    def sample(self, condition: int | str = 0, seed: int | None = None) -> tuple[np.ndarray, SampleTrace]:
        """Generate one image for a class id or class name."""
        self._check_fitted()
        class_id = self.dataset_.class_id(condition) if isinstance(condition, str) else int(condition)
        return elastic_sample(
            self.config(seed),
            class_id,
            self.dataset_,
            self.schedule_,
            strategy=FusionStrategy.parse(str(self.strategy)),
        )

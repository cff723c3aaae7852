"""Command-line driver: generation, fusion-strategy comparison, parameter
sweeps and dataset dumps, all reproducible from a single seed.

Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .denoiser import CLASS_NAMES, AnalyticDataset, eps_star, make_procedural_dataset, nearest_exemplar
from .grid import upsample_nearest
from .imageio import FORMATS, PGM, RunReport, render_image, save_report
from .patching import layout_no_overlap, plan_explicit, plan_implicit, score_explicit, score_implicit, seam_discontinuity
from .sampler import (
    ElasticConfig,
    FusionStrategy,
    elastic_sample,
    seam_discontinuity_or_zero,
)
from .schedule import NoiseSchedule, forward_noise, make_linear_schedule
from .validation import require

T_TRAIN = 1000
BETA_START = 1e-4
BETA_END = 2e-2


@dataclass(frozen=True)
class RunConfig:
    """Fully validated CLI invocation."""

    subcommand: str
    target_h: int = 128
    target_w: int = 128
    class_name: str = CLASS_NAMES[0]
    steps: int = 50
    guidance: float = 7.0
    resample_iters: int | None = None
    resample_fraction: float = 0.2
    rrg_delta: float = 200.0
    rrg_cutoff: float = 0.6
    seed: int = 0
    dataset_seed: int = 0
    per_class: int = 3
    strategy: str = "implicit"
    out: str = "out"
    image_format: str = PGM
    trace: bool = False
    # compare-fusion only
    stride: int = 8
    t_index: int | None = None
    # sweep only
    axis: str | None = None
    values: str | None = None


def _parse_dims(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    try:
        h, w = int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integer dims, got {text!r}")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"dims must be positive, got {text!r}")
    return h, w


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset-seed", type=_nonneg_int, default=0, help="seed for the procedural exemplar set")
    p.add_argument("--per-class", type=_positive_int, default=3, help="exemplars per class")


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--format", choices=FORMATS, default=PGM, dest="image_format", help="image file format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elastic", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    gen = sub.add_parser("generate", help="sample one image at an arbitrary size")
    gen.add_argument("--target", type=_parse_dims, default=(128, 128), help="output size HxW")
    gen.add_argument("--class", dest="class_name", default=CLASS_NAMES[0], help="class name to condition on")
    gen.add_argument("--steps", type=_positive_int, default=50, help="number of reverse steps")
    gen.add_argument("--guidance", type=float, default=7.0, help="guidance scale on the class direction")
    gen.add_argument("--resample-iters", type=_nonneg_int, default=None, help="direction refinement iterations (default: auto)")
    gen.add_argument("--resample-fraction", type=float, default=0.2, help="reference fraction substituted per iteration")
    gen.add_argument("--rrg-delta", type=float, default=200.0, help="initial reduced-resolution guidance weight")
    gen.add_argument("--rrg-cutoff", type=float, default=0.6, help="progress fraction at which the weight reaches zero")
    gen.add_argument("--seed", type=_nonneg_int, default=0)
    gen.add_argument("--strategy", default="implicit", help="implicit | none | explicit:STRIDE")
    gen.add_argument("--trace", action="store_true", help="dump per-step reference snapshots")
    _add_dataset_flags(gen)
    _add_output_flags(gen)

    cmp_ = sub.add_parser("compare-fusion", help="score one latent with every fusion strategy")
    cmp_.add_argument("--target", type=_parse_dims, default=(128, 128), help="latent size HxW (must exceed native)")
    cmp_.add_argument("--seed", type=_nonneg_int, default=0)
    cmp_.add_argument("--stride", type=_positive_int, default=8, help="stride of the explicit-overlap strategy")
    cmp_.add_argument("--t-index", type=_nonneg_int, default=None, help="schedule index of the evaluation step")
    cmp_.add_argument("--steps", type=_positive_int, default=50)
    _add_dataset_flags(cmp_)
    _add_output_flags(cmp_)

    swp = sub.add_parser("sweep", help="run the sampler over one axis of values")
    swp.add_argument("--axis", choices=("R", "delta", "target"), required=True)
    swp.add_argument("--values", required=True, help="comma-separated values, e.g. 0,2,4 or 64x64,128x128")
    swp.add_argument("--target", type=_parse_dims, default=(128, 128))
    swp.add_argument("--class", dest="class_name", default=CLASS_NAMES[0])
    swp.add_argument("--steps", type=_positive_int, default=50)
    swp.add_argument("--guidance", type=float, default=7.0)
    swp.add_argument("--resample-iters", type=_nonneg_int, default=None)
    swp.add_argument("--resample-fraction", type=float, default=0.2)
    swp.add_argument("--rrg-delta", type=float, default=200.0)
    swp.add_argument("--rrg-cutoff", type=float, default=0.6)
    swp.add_argument("--seed", type=_nonneg_int, default=0)
    swp.add_argument("--strategy", default="implicit")
    _add_dataset_flags(swp)
    _add_output_flags(swp)

    dmp = sub.add_parser("dump-dataset", help="render the procedural exemplars to image files")
    dmp.add_argument("--seed", type=_nonneg_int, default=0, help="dataset seed")
    dmp.add_argument("--per-class", type=_positive_int, default=3)
    _add_output_flags(dmp)
    return parser


def parse_config(argv: list[str] | None = None) -> RunConfig:
    """Parse and validate argv into a RunConfig; exits 2 on any usage error."""
    parser = build_parser()
    args = parser.parse_args(argv)
    kwargs = {"subcommand": args.subcommand, "out": args.out, "image_format": args.image_format}
    if hasattr(args, "target"):
        kwargs["target_h"], kwargs["target_w"] = args.target
    if hasattr(args, "steps"):
        if not 1 <= args.steps <= T_TRAIN:
            parser.error(f"--steps must be in [1, {T_TRAIN}]")
        kwargs["steps"] = args.steps
    if hasattr(args, "class_name"):
        if args.class_name not in CLASS_NAMES:
            parser.error(f"--class must be one of {', '.join(CLASS_NAMES)}")
        kwargs["class_name"] = args.class_name
    if hasattr(args, "guidance"):
        if args.guidance < 0:
            parser.error("--guidance must be non-negative")
        kwargs["guidance"] = args.guidance
    if hasattr(args, "resample_fraction"):
        if not 0.0 <= args.resample_fraction <= 1.0:
            parser.error("--resample-fraction must be in [0, 1]")
        kwargs["resample_fraction"] = args.resample_fraction
        kwargs["resample_iters"] = args.resample_iters
    if hasattr(args, "rrg_delta"):
        if args.rrg_delta < 0:
            parser.error("--rrg-delta must be non-negative")
        if not 0.0 < args.rrg_cutoff <= 1.0:
            parser.error("--rrg-cutoff must be in (0, 1]")
        kwargs["rrg_delta"] = args.rrg_delta
        kwargs["rrg_cutoff"] = args.rrg_cutoff
    if hasattr(args, "strategy"):
        try:
            FusionStrategy.parse(args.strategy)
        except ValueError as exc:
            parser.error(str(exc))
        kwargs["strategy"] = args.strategy
    if hasattr(args, "seed"):
        kwargs["seed"] = args.seed
    if hasattr(args, "dataset_seed"):
        kwargs["dataset_seed"] = args.dataset_seed
    if hasattr(args, "per_class"):
        kwargs["per_class"] = args.per_class
    if args.subcommand == "dump-dataset":
        kwargs["dataset_seed"] = args.seed
        kwargs.pop("seed", None)
    if hasattr(args, "trace"):
        kwargs["trace"] = args.trace
    if hasattr(args, "stride"):
        kwargs["stride"] = args.stride
        kwargs["t_index"] = args.t_index
    if hasattr(args, "axis"):
        kwargs["axis"] = args.axis
        kwargs["values"] = args.values
    return RunConfig(**kwargs)


def _build_world(cfg: RunConfig) -> tuple[AnalyticDataset, NoiseSchedule]:
    ds = make_procedural_dataset(cfg.dataset_seed, cfg.per_class)
    sched = make_linear_schedule(T_TRAIN, BETA_START, BETA_END, cfg.steps)
    return ds, sched


def _elastic_config(cfg: RunConfig, seed: int | None = None, **overrides) -> ElasticConfig:
    base = dict(
        target_h=cfg.target_h,
        target_w=cfg.target_w,
        guidance=cfg.guidance,
        resample_fraction=cfg.resample_fraction,
        resample_iters=cfg.resample_iters,
        rrg_initial=cfg.rrg_delta,
        rrg_cutoff=cfg.rrg_cutoff,
        seed=cfg.seed if seed is None else seed,
    )
    base.update(overrides)
    return ElasticConfig(**base)


STEP_COLUMNS = ("step", "t", "delta", "ref_call_pairs", "patch_calls", "seam")


def _trace_rows(trace) -> list[dict]:
    return [
        {
            "step": rec.index,
            "t": rec.t,
            "delta": rec.delta,
            "ref_call_pairs": rec.ref_call_pairs,
            "patch_calls": rec.patch_calls,
            "seam": rec.seam,
        }
        for rec in trace.records
    ]


def run_generate(cfg: RunConfig) -> RunReport:
    ds, sched = _build_world(cfg)
    ecfg = _elastic_config(cfg)
    strategy = FusionStrategy.parse(cfg.strategy)
    image, trace = elastic_sample(ecfg, ds.class_id(cfg.class_name), ds, sched,
                                  strategy=strategy, record_refs=cfg.trace)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"image.{cfg.image_format}").write_bytes(render_image(image, cfg.image_format))
    idx, rms = nearest_exemplar(image, ds)
    report = RunReport(
        header={
            "subcommand": "generate",
            "target": f"{cfg.target_h}x{cfg.target_w}",
            "class": cfg.class_name,
            "steps": cfg.steps,
            "guidance": cfg.guidance,
            "resample_iters": trace.resample_iters,
            "resample_fraction": cfg.resample_fraction,
            "rrg_delta": cfg.rrg_delta,
            "rrg_cutoff": cfg.rrg_cutoff,
            "seed": cfg.seed,
            "dataset_seed": cfg.dataset_seed,
            "per_class": cfg.per_class,
            "strategy": str(strategy),
            "format": cfg.image_format,
            "ref_h": trace.frame.ref_h,
            "ref_w": trace.frame.ref_w,
            "substituted_per_iter": trace.substituted_per_iter,
            "final_nearest_class": ds.class_names[int(ds.labels[idx])],
            "final_nearest_rms": rms,
            "final_seam": seam_discontinuity_or_zero(image, _seam_layout_for(cfg.target_h, cfg.target_w, ds)),
        },
        columns=STEP_COLUMNS,
        rows=_trace_rows(trace),
    )
    save_report(report, out / "report.txt")
    if cfg.trace:
        trace_dir = out / "trace"
        trace_dir.mkdir(exist_ok=True)
        for rec in trace.records:
            if rec.x_ref is not None:
                path = trace_dir / f"ref_step{rec.index:04d}.{cfg.image_format}"
                path.write_bytes(render_image(rec.x_ref, cfg.image_format))
    return report


def _seam_layout_for(target_h: int, target_w: int, ds: AnalyticDataset):
    if target_h >= ds.native_h and target_w >= ds.native_w:
        return layout_no_overlap(target_h, target_w, ds.native_h, ds.native_w)
    return None


def compare_fusion_scores(
    target_h: int,
    target_w: int,
    seed: int,
    stride: int,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
    t_index: int | None = None,
) -> tuple[int, dict[str, tuple[np.ndarray, int, float]]]:
    """Score one seeded latent with each fusion strategy.

    The latent carries global content (a random convex mixture of the
    exemplars, enlarged to the target) forward-noised to a late schedule
    step where the posterior pattern is strong.  Every strategy is measured
    with the same instrument: the seam metric over the naive native-tile
    boundaries, i.e. exactly where patchwise scoring tears.

    Returns (t, {strategy: (score, n_calls, seam)}).
    """
    require(target_h > ds.native_h and target_w > ds.native_w, "compare-fusion needs a target larger than native")
    if t_index is None:
        t_index = (4 * len(sched.ddim_steps)) // 5
    require(0 <= t_index < len(sched.ddim_steps), f"t_index must be in [0, {len(sched.ddim_steps)})")
    t = int(sched.ddim_steps[t_index])
    rng = rng_mod.substream(seed, rng_mod.COMPARE_LATENT)
    weights = rng.dirichlet(np.ones(ds.n_exemplars))
    x0_big = upsample_nearest(np.tensordot(weights, ds.exemplars, axes=(0, 0)), target_h, target_w)
    x = forward_noise(x0_big, t, rng.standard_normal(x0_big.shape), sched)

    eval_layout = layout_no_overlap(target_h, target_w, ds.native_h, ds.native_w)
    results: dict[str, tuple[np.ndarray, int, float]] = {}

    def run(name: str, compute) -> None:
        calls = 0

        def denoise(window: np.ndarray, step: int) -> np.ndarray:
            nonlocal calls
            calls += 1
            return eps_star(window, step, ds, sched)

        score = compute(denoise)
        results[name] = (score, calls, seam_discontinuity(score, eval_layout))

    run("none", lambda d: score_implicit(x, t, eval_layout, d))
    run(f"explicit:{stride}", lambda d: score_explicit(x, t, plan_explicit(target_h, target_w, ds.native_h, ds.native_w, stride), d))
    run("implicit", lambda d: score_implicit(x, t, plan_implicit(target_h, target_w, ds.native_h, ds.native_w), d))
    return t, results


def run_compare_fusion(cfg: RunConfig) -> RunReport:
    ds, sched = _build_world(cfg)
    t, results = compare_fusion_scores(cfg.target_h, cfg.target_w, cfg.seed, cfg.stride, ds, sched, cfg.t_index)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, (score, calls, seam) in results.items():
        rows.append({"strategy": name, "calls": calls, "seam": seam})
        safe = name.replace(":", "_")
        if ds.channels == 1 or cfg.image_format == "png":
            data = render_image(np.clip(score, -1.0, 1.0), cfg.image_format)
            (out / f"score_{safe}.{cfg.image_format}").write_bytes(data)
    report = RunReport(
        header={
            "subcommand": "compare-fusion",
            "target": f"{cfg.target_h}x{cfg.target_w}",
            "seed": cfg.seed,
            "stride": cfg.stride,
            "t": t,
            "steps": cfg.steps,
            "dataset_seed": cfg.dataset_seed,
            "per_class": cfg.per_class,
            "format": cfg.image_format,
        },
        columns=("strategy", "calls", "seam"),
        rows=rows,
    )
    save_report(report, out / "report.txt")
    return report


def _sweep_values(cfg: RunConfig) -> list:
    raw = [v for v in (cfg.values or "").split(",") if v]
    require(len(raw) >= 1, "--values must list at least one value")
    if cfg.axis == "R":
        return [int(v) for v in raw]
    if cfg.axis == "delta":
        return [float(v) for v in raw]
    return [tuple(int(p) for p in v.lower().split("x")) for v in raw]


def run_sweep(cfg: RunConfig) -> list[RunReport]:
    ds, sched = _build_world(cfg)
    strategy = FusionStrategy.parse(cfg.strategy)
    values = _sweep_values(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    reports: list[RunReport] = []
    summary_rows = []
    for value in values:
        if cfg.axis == "R":
            ecfg = _elastic_config(cfg, resample_iters=int(value))
            label = str(value)
        elif cfg.axis == "delta":
            ecfg = _elastic_config(cfg, rrg_initial=float(value))
            label = repr(float(value))
        else:
            ecfg = _elastic_config(cfg, target_h=value[0], target_w=value[1])
            label = f"{value[0]}x{value[1]}"
        image, trace = elastic_sample(ecfg, ds.class_id(cfg.class_name), ds, sched, strategy=strategy)
        run_dir = out / f"run_{cfg.axis}_{label}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / f"image.{cfg.image_format}").write_bytes(render_image(image, cfg.image_format))
        idx, rms = nearest_exemplar(image, ds)
        ref_area = trace.frame.ref_h * trace.frame.ref_w
        resampled_fraction = trace.resample_iters * trace.substituted_per_iter / ref_area
        report = RunReport(
            header={
                "subcommand": "sweep",
                "axis": cfg.axis,
                "value": label,
                "target": f"{ecfg.target_h}x{ecfg.target_w}",
                "class": cfg.class_name,
                "steps": cfg.steps,
                "guidance": cfg.guidance,
                "resample_iters": trace.resample_iters,
                "resample_fraction": cfg.resample_fraction,
                "resampled_fraction": resampled_fraction,
                "rrg_delta": ecfg.rrg_initial,
                "rrg_cutoff": cfg.rrg_cutoff,
                "seed": cfg.seed,
                "dataset_seed": cfg.dataset_seed,
                "per_class": cfg.per_class,
                "strategy": str(strategy),
                "format": cfg.image_format,
                "final_nearest_rms": rms,
                "final_seam": seam_discontinuity_or_zero(image, _seam_layout_for(ecfg.target_h, ecfg.target_w, ds)),
            },
            columns=STEP_COLUMNS,
            rows=_trace_rows(trace),
        )
        save_report(report, run_dir / "report.txt")
        reports.append(report)
        summary_rows.append(
            {
                "value": label,
                "resample_iters": trace.resample_iters,
                "resampled_fraction": resampled_fraction,
                "delta0": trace.records[0].delta,
                "patch_calls_per_step": trace.records[0].patch_calls,
                "ref_call_pairs_per_step": trace.records[0].ref_call_pairs,
                "final_nearest_rms": rms,
            }
        )
    summary = RunReport(
        header={"subcommand": "sweep", "axis": cfg.axis, "values": ";".join(str(v) for v in (cfg.values or "").split(",")),
                "seed": cfg.seed, "dataset_seed": cfg.dataset_seed},
        columns=("value", "resample_iters", "resampled_fraction", "delta0",
                 "patch_calls_per_step", "ref_call_pairs_per_step", "final_nearest_rms"),
        rows=summary_rows,
    )
    save_report(summary, out / "summary.txt")
    return reports


def run_dump_dataset(cfg: RunConfig) -> RunReport:
    ds = make_procedural_dataset(cfg.dataset_seed, cfg.per_class)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(ds.n_exemplars):
        name = ds.class_names[int(ds.labels[i])]
        filename = f"exemplar_{i:03d}_{name}.{cfg.image_format}"
        (out / filename).write_bytes(render_image(ds.exemplars[i], cfg.image_format))
        rows.append({"index": i, "class": name, "file": filename})
    report = RunReport(
        header={
            "subcommand": "dump-dataset",
            "seed": cfg.dataset_seed,
            "per_class": cfg.per_class,
            "native": f"{ds.native_h}x{ds.native_w}",
            "channels": ds.channels,
            "format": cfg.image_format,
        },
        columns=("index", "class", "file"),
        rows=rows,
    )
    save_report(report, out / "report.txt")
    return report


def main(argv: list[str] | None = None) -> int:
    cfg = parse_config(argv)
    try:
        if cfg.subcommand == "generate":
            run_generate(cfg)
        elif cfg.subcommand == "compare-fusion":
            run_compare_fusion(cfg)
        elif cfg.subcommand == "sweep":
            run_sweep(cfg)
        else:
            run_dump_dataset(cfg)
    except Exception as exc:  # runtime failure, not usage
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

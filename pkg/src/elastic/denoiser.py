"""Exact Bayes-optimal noise prediction over a finite exemplar set.

The data prior is a uniform point mass on each exemplar, so at noise level
t the marginal is a Gaussian mixture with means sqrt(alpha_bar_t) * x0_i and
isotropic variance (1 - alpha_bar_t).  Posterior weights, the posterior mean
and the optimal noise prediction all have closed forms, which makes this a
drop-in stand-in for a trained denoising network that can be verified to
machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import resize_nearest
from .rng import DATASET, substream
from .schedule import NoiseSchedule
from .validation import check_grid, ensure_finite, require

UNCONDITIONAL = None

CLASS_NAMES = ("gradient", "stripes", "disk", "checker")


@dataclass(frozen=True, eq=False)
class AnalyticDataset:
    """Fixed-size exemplar images with class labels.

    exemplars: (n, native_h, native_w, channels) float64 in [-1, 1]
    labels:    (n,) int class ids indexing class_names
    """

    native_h: int
    native_w: int
    channels: int
    exemplars: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        ex = np.asarray(self.exemplars, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        require(ex.ndim == 4, "exemplars must have shape (n, h, w, c)")
        require(ex.shape[0] >= 1, "dataset needs at least one exemplar")
        require(
            ex.shape[1:] == (self.native_h, self.native_w, self.channels),
            f"exemplar shape {ex.shape[1:]} does not match native dims "
            f"({self.native_h}, {self.native_w}, {self.channels})",
        )
        ensure_finite(ex, "exemplars")
        require(bool((ex >= -1.0).all() and (ex <= 1.0).all()), "exemplar values must lie in [-1, 1]")
        require(labels.shape == (ex.shape[0],), "one label per exemplar required")
        require(len(self.class_names) >= 1, "at least one class name required")
        require(
            bool((labels >= 0).all() and (labels < len(self.class_names)).all()),
            "labels must index class_names",
        )
        present = np.unique(labels)
        require(
            present.size == len(self.class_names),
            "every class must have at least one exemplar",
        )
        object.__setattr__(self, "exemplars", ex)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_exemplars(self) -> int:
        return int(self.exemplars.shape[0])

    def class_id(self, name: str) -> int:
        require(name in self.class_names, f"unknown class {name!r}; known: {', '.join(self.class_names)}")
        return self.class_names.index(name)


def _render_exemplar(kind: str, h: int, w: int, c: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0.0:h, 0.0:w]
    u = xx / max(w - 1, 1)
    v = yy / max(h - 1, 1)
    out = np.empty((h, w, c))
    for ch in range(c):
        amp = rng.uniform(0.55, 1.0)
        if kind == "gradient":
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            img = sign * amp * (2.0 * u - 1.0)
        elif kind == "stripes":
            freq = int(rng.integers(2, 6))
            phase = rng.uniform(0.0, 2.0 * np.pi)
            img = amp * np.sin(2.0 * np.pi * freq * v + phase)
        elif kind == "disk":
            radius = rng.uniform(0.18, 0.38) * min(h, w)
            cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
            dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
            lo = -rng.uniform(0.55, 1.0)
            img = np.where(dist <= radius, amp, lo)
        elif kind == "checker":
            cell = max(1, min(h, w) // int(2 ** rng.integers(2, 5)))
            parity = ((yy.astype(np.int64) // cell) + (xx.astype(np.int64) // cell)) % 2
            img = amp * (2.0 * parity - 1.0)
        else:  # pragma: no cover - internal misuse
            raise ValueError(f"unknown exemplar kind {kind!r}")
        out[:, :, ch] = img
    return np.clip(out, -1.0, 1.0)


def make_procedural_dataset(
    seed: int = 0,
    per_class: int = 1,
    native_h: int = 64,
    native_w: int = 64,
    channels: int = 1,
) -> AnalyticDataset:
    """Deterministically generate four visually distinct classes of exemplars."""
    require(per_class >= 1, f"per_class must be >= 1, got {per_class}")
    rng = substream(seed, DATASET)
    exemplars = []
    labels = []
    for cid, kind in enumerate(CLASS_NAMES):
        for _ in range(per_class):
            exemplars.append(_render_exemplar(kind, native_h, native_w, channels, rng))
            labels.append(cid)
    return AnalyticDataset(
        native_h=native_h,
        native_w=native_w,
        channels=channels,
        exemplars=np.stack(exemplars),
        labels=np.asarray(labels, dtype=np.int64),
        class_names=CLASS_NAMES,
    )


def eligible_indices(ds: AnalyticDataset, condition: int | None) -> np.ndarray:
    """Exemplar indices matching the condition (None means all)."""
    if condition is UNCONDITIONAL:
        return np.arange(ds.n_exemplars)
    cid = int(condition)
    require(0 <= cid < len(ds.class_names), f"unknown class id {condition}")
    return np.flatnonzero(ds.labels == cid)


def _check_query(x: np.ndarray, t: int, ds: AnalyticDataset, sched: NoiseSchedule) -> np.ndarray:
    x = check_grid(x, "x")
    require(
        x.shape == (ds.native_h, ds.native_w, ds.channels),
        f"query shape {x.shape} does not match native dims "
        f"({ds.native_h}, {ds.native_w}, {ds.channels})",
    )
    require(1 <= int(t) <= sched.t_train, f"t must be in [1, {sched.t_train}], got {t}")
    return x


def posterior_weights(
    x: np.ndarray,
    t: int,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
    condition: int | None = UNCONDITIONAL,
) -> np.ndarray:
    """Posterior probability of each eligible exemplar given the noisy query.

    Computed as a softmax of -||x - sqrt(ab)*x0_i||^2 / (2*(1 - ab)) with
    max-shift stabilization; the result is a valid distribution for any t.
    """
    x = _check_query(x, t, ds, sched)
    idx = eligible_indices(ds, condition)
    require(idx.size >= 1, "no eligible exemplars for the requested condition")
    ab = sched.alpha_bar_at(t)
    diff = x[None, :, :, :] - np.sqrt(ab) * ds.exemplars[idx]
    logits = -np.sum(diff * diff, axis=(1, 2, 3)) / (2.0 * (1.0 - ab))
    w = np.exp(logits - logits.max())
    w /= w.sum()
    return ensure_finite(w, "posterior weights")


def posterior_mean(
    x: np.ndarray,
    t: int,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
    condition: int | None = UNCONDITIONAL,
) -> np.ndarray:
    """Posterior expectation of the clean image given the noisy query."""
    w = posterior_weights(x, t, ds, sched, condition)
    idx = eligible_indices(ds, condition)
    return np.tensordot(w, ds.exemplars[idx], axes=(0, 0))


def eps_star(
    x: np.ndarray,
    t: int,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
    condition: int | None = UNCONDITIONAL,
) -> np.ndarray:
    """Optimal noise prediction (x - sqrt(ab) * posterior mean) / sqrt(1 - ab)."""
    x = _check_query(x, t, ds, sched)
    mean = posterior_mean(x, t, ds, sched, condition)
    ab = sched.alpha_bar_at(t)
    out = (x - np.sqrt(ab) * mean) / np.sqrt(1.0 - ab)
    return ensure_finite(out, "eps_star output")


def eps_pair(
    x: np.ndarray,
    t: int,
    class_id: int,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
) -> tuple[np.ndarray, np.ndarray]:
    """(unconditional, class-conditional) noise predictions for one query."""
    eps_u = eps_star(x, t, ds, sched, UNCONDITIONAL)
    eps_c = eps_star(x, t, ds, sched, int(class_id))
    return eps_u, eps_c


def log_density(
    x: np.ndarray,
    t: int,
    ds: AnalyticDataset,
    sched: NoiseSchedule,
    condition: int | None = UNCONDITIONAL,
) -> float:
    """Log of the noisy-marginal mixture density; the reference object for
    finite-difference checks of the score identity."""
    x = _check_query(x, t, ds, sched)
    idx = eligible_indices(ds, condition)
    require(idx.size >= 1, "no eligible exemplars for the requested condition")
    ab = sched.alpha_bar_at(t)
    var = 1.0 - ab
    diff = x[None, :, :, :] - np.sqrt(ab) * ds.exemplars[idx]
    logits = -np.sum(diff * diff, axis=(1, 2, 3)) / (2.0 * var)
    m = logits.max()
    lse = m + np.log(np.sum(np.exp(logits - m)))
    dim = x.size
    return float(lse - np.log(idx.size) - 0.5 * dim * np.log(2.0 * np.pi * var))


def nearest_exemplar(img: np.ndarray, ds: AnalyticDataset) -> tuple[int, float]:
    """(index, rms) of the exemplar closest to `img` in root-mean-square error.

    Grids of non-native size are first remapped to native size with the
    nearest-neighbor rule.
    """
    img = check_grid(img, "img")
    require(img.shape[2] == ds.channels, f"channel mismatch: {img.shape[2]} vs dataset {ds.channels}")
    if img.shape[:2] != (ds.native_h, ds.native_w):
        img = resize_nearest(img, ds.native_h, ds.native_w)
    diff = ds.exemplars - img[None, :, :, :]
    rms = np.sqrt(np.mean(diff * diff, axis=(1, 2, 3)))
    i = int(np.argmin(rms))
    return i, float(rms[i])

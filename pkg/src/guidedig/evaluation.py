"""Evaluation protocols: closed-path error, AUC-ROC and path diagnostics."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from .attribution import (
    AttributionMap,
    PathTrace,
    guided_ig_anchored,
    integrated_gradients,
)
from .diffmodel import DifferentiableModel
from .errors import DegenerateMaskError, InputError
from .seeding import substream

SegmentMethod = Callable[[DifferentiableModel, np.ndarray, np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Closed paths
# ---------------------------------------------------------------------------

@dataclass
class ClosedPathReport:
    method: str
    trials: int
    n_inputs: int
    seed: int
    squared_errors: np.ndarray  # (n_inputs * trials, N), input-major
    config: dict = field(default_factory=dict)

    @property
    def per_trial_mse(self) -> np.ndarray:
        return self.squared_errors.mean(axis=1)

    @property
    def mse(self) -> float:
        return float(self.squared_errors.mean())

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "trials": self.trials,
            "n_inputs": self.n_inputs,
            "seed": self.seed,
            "config": self.config,
            "mse": self.mse,
            "per_trial_mse": self.per_trial_mse.tolist(),
        }


def _segment_method(method, steps, fraction, anchors, cls, mode) -> tuple[str, SegmentMethod]:
    if callable(method):
        return getattr(method, "__name__", "custom"), method
    if method == "ig":
        return "ig", lambda m, s, e: integrated_gradients(m, e, s, steps, cls, mode).attributions
    if method == "gig":
        return "gig", lambda m, s, e: guided_ig_anchored(
            m, e, s, steps, fraction, anchors, cls, mode).attributions
    raise InputError(f"closed-path method must be 'ig', 'gig' or a callable, got {method!r}")


def triangle_vertices(seed: int, input_index: int, trial: int, n_features: int,
                      bounds=(0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """The two intermediate points B, C of one closed-path trial."""
    rng = substream(seed, "closed_path", input_index, trial)
    return (rng.uniform(bounds[0], bounds[1], n_features),
            rng.uniform(bounds[0], bounds[1], n_features))


def closed_path_experiment(model: DifferentiableModel, method, inputs, trials: int = 50,
                           steps: int = 200, fraction: float = 0.10, anchors: int = 0,
                           seed: int = 0, bounds=(0.0, 1.0), cls: int = 0, mode: str = "logit",
                           workers: int | None = None) -> ClosedPathReport:
    """Attribute a random loop A -> B -> C -> A for every input A.

    The per-feature loop total should be zero; its square is the error. B and C
    are uniform in ``bounds`` and come from the ``closed_path`` substream keyed
    by ``(input index, trial)``. ``method`` is ``"ig"``, ``"gig"`` or a callable
    ``f(model, start, end) -> attributions`` for one segment.
    """
    if trials < 1:
        raise InputError("trials must be >= 1")
    xs = [model.check_input(x) for x in inputs]
    if not xs:
        raise InputError("closed-path experiment needs at least one input")
    name, seg = _segment_method(method, steps, fraction, anchors, cls, mode)
    n = model.n_features

    def run(job):
        a_idx, j = job
        a = xs[a_idx]
        b, c = triangle_vertices(seed, a_idx, j, n, bounds)
        total = seg(model, a, b) + seg(model, b, c) + seg(model, c, a)
        return total * total

    jobs = [(a, j) for a in range(len(xs)) for j in range(trials)]
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(job) for job in jobs]
    config = {"steps": steps, "class": cls, "mode": mode, "bounds": list(bounds)}
    if name == "gig":
        config.update(fraction=fraction, anchors=anchors)
    return ClosedPathReport(name, trials, len(xs), seed, np.array(rows), config)


# ---------------------------------------------------------------------------
# AUC-ROC
# ---------------------------------------------------------------------------

@dataclass
class AucResult:
    auc: float
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    n_pos: int
    n_neg: int

    def to_dict(self) -> dict:
        return {"auc": self.auc, "n_pos": self.n_pos, "n_neg": self.n_neg}


def auc_roc(attribution, ground_truth_mask) -> AucResult:
    """Area under the ROC curve of attributions scored against a binary mask.

    The area comes from the Mann-Whitney rank statistic (tied scores count one
    half), which equals the trapezoidal area under the full threshold sweep.
    The returned curve has one point per distinct score plus the origin.
    """
    scores = np.asarray(attribution, dtype=np.float64).reshape(-1)
    mask = np.asarray(ground_truth_mask).reshape(-1)
    if scores.size != mask.size:
        raise InputError(f"{scores.size} scores vs {mask.size} mask entries")
    if not np.all(np.isfinite(scores)):
        raise InputError("attribution scores must be finite")
    if not np.all((mask == 0) | (mask == 1)):
        raise InputError("mask values must be 0 or 1")
    pos = mask == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMaskError("mask needs at least one positive and one negative")

    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    auc = float(u / (n_pos * n_neg))

    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    tp = np.cumsum(pos[order])
    fp = np.cumsum(~pos[order])
    last = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    thresholds = np.r_[np.inf, s_sorted[last]]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    return AucResult(auc, thresholds, tpr, fpr, n_pos, n_neg)


def pixel_saliency(attribution, n_pixels: int) -> np.ndarray:
    """Sum channel attributions per pixel (channel-minor layout)."""
    a = np.asarray(attribution, dtype=np.float64).reshape(-1)
    if a.size % n_pixels:
        raise InputError(f"{a.size} attributions do not split over {n_pixels} pixels")
    return a.reshape(n_pixels, -1).sum(axis=1)


# ---------------------------------------------------------------------------
# Path diagnostics
# ---------------------------------------------------------------------------

@dataclass
class PathDiagnostics:
    noise_loss: float
    distance_loss: float
    cosine_profile: np.ndarray
    alphas: np.ndarray
    directional_delta: np.ndarray
    gradient_norm: np.ndarray

    def to_dict(self) -> dict:
        return {
            "noise_loss": self.noise_loss,
            "distance_loss": self.distance_loss,
            "alphas": self.alphas.tolist(),
            "directional_delta": self.directional_delta.tolist(),
            "gradient_norm": self.gradient_norm.tolist(),
            "cosine_profile": self.cosine_profile.tolist(),
        }


def cosine_matrix(grads: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of rows; a zero row has cosine 0 with everything."""
    norms = np.linalg.norm(grads, axis=1)
    unit = np.divide(grads, norms[:, None], out=np.zeros_like(grads), where=norms[:, None] > 0)
    return np.clip(unit @ unit.T, -1.0, 1.0)


def covered_fraction(trace: PathTrace) -> np.ndarray:
    """Fraction of the start-to-end L1 distance covered at each trace point."""
    total = float(np.abs(trace.end - trace.start).sum())
    if total == 0:
        return np.linspace(0.0, 1.0, trace.points.shape[0])
    return 1.0 - np.abs(trace.points - trace.end).sum(axis=1) / total


def path_diagnostics(trace: PathTrace) -> PathDiagnostics:
    """Noise loss, distance to the straight line, and gradient profiles of a trace.

    ``distance_loss`` matches each trace point with the straight-line point at
    the same covered L1 fraction, and weights by the change in that fraction.
    """
    if trace is None or trace.gradients is None or trace.n_steps == 0:
        raise InputError("trace has no recorded gradients")
    grads = trace.gradients
    if grads.shape != (trace.points.shape[0] - 1, trace.points.shape[1]):
        raise InputError("trace gradients do not match its points")
    dx = trace.deltas
    noise = float(np.abs(grads * dx).sum())
    alphas = covered_fraction(trace)
    straight = trace.start + alphas[:, None] * (trace.end - trace.start)
    dist = np.linalg.norm(trace.points - straight, axis=1)
    distance = float(np.sum(dist[1:] * np.diff(alphas)))
    return PathDiagnostics(
        noise_loss=noise,
        distance_loss=distance,
        cosine_profile=cosine_matrix(grads),
        alphas=alphas[1:],
        directional_delta=np.einsum("tn,tn->t", grads, dx),
        gradient_norm=np.linalg.norm(grads, axis=1),
    )


def directional_profile(model: DifferentiableModel, x_input, x_baseline, steps: int = 200,
                        cls: int = 0, mode: str = "logit") -> tuple[np.ndarray, np.ndarray]:
    """Directional derivative per step versus gradient norm on the straight line.

    Sampled at the midpoints ``alpha_t = (t - 0.5) / T``. The first curve is
    ``grad F . (x - b) / T`` (it sums to the IG total), the second ``|grad F|_2``.
    """
    if steps < 1:
        raise InputError("steps must be >= 1")
    xi = model.check_input(x_input)
    xb = model.check_input(x_baseline)
    diff = xi - xb
    if not np.any(diff):
        return np.zeros(steps), np.zeros(steps)
    alphas = profile_alphas(steps)
    _, g = model.value_and_grad_batch(xb + alphas[:, None] * diff, cls, mode)
    return g @ diff / steps, np.linalg.norm(g, axis=1)


def profile_alphas(steps: int) -> np.ndarray:
    return (np.arange(1, steps + 1) - 0.5) / steps


def noise_loss(amap: AttributionMap) -> float:
    """Noise loss of a map that carries a trace."""
    if amap.trace is None:
        raise InputError("attribution map carries no trace")
    return path_diagnostics(amap.trace).noise_loss


"""Path attribution methods and their simpler comparison baselines.

Integrated Gradients integrates along the straight line with a midpoint
Riemann sum. Guided IG builds its path step by step: at each step it moves
only the fraction of unfinished features whose partial derivatives are
smallest in magnitude, until the L1 distance to the input has shrunk by
``1/T`` of the total. Anchored Guided IG runs that procedure separately on
``K + 1`` consecutive pieces of the straight line.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels
from ._io import atomic_write_text
from .diffmodel import DifferentiableModel
from .errors import InputError, NumericalError, ProgressError
from .seeding import substream

_IG_BATCH = 64


@dataclass(frozen=True)
class BaselineSpec:
    """Which baselines to integrate from.

    ``kind`` is one of ``black``, ``white``, ``black+white`` or ``random``;
    random baselines are ``n`` vectors drawn uniformly in ``[lower, upper]``.
    """

    kind: str = "black"
    n: int = 1
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if self.kind not in ("black", "white", "black+white", "random"):
            raise InputError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "random" and self.n < 1:
            raise InputError("random baseline count must be >= 1")
        if not self.lower <= self.upper:
            raise InputError("baseline bounds must satisfy lower <= upper")

    @classmethod
    def parse(cls, text: str, lower: float = 0.0, upper: float = 1.0) -> "BaselineSpec":
        """Parse ``black``, ``white``, ``black+white`` or ``random:<n>``."""
        if text.startswith("random"):
            _, _, count = text.partition(":")
            try:
                n = int(count) if count else 1
            except ValueError as exc:
                raise InputError(f"bad random baseline count in {text!r}") from exc
            return cls("random", n, lower, upper)
        return cls(text, 1, lower, upper)

    def resolve(self, n_features: int, seed: int = 0) -> list[np.ndarray]:
        black = np.full(n_features, self.lower)
        white = np.full(n_features, self.upper)
        if self.kind == "black":
            return [black]
        if self.kind == "white":
            return [white]
        if self.kind == "black+white":
            return [black, white]
        return [substream(seed, "baseline", i).uniform(self.lower, self.upper, n_features)
                for i in range(self.n)]

    def __str__(self):
        return f"random:{self.n}" if self.kind == "random" else self.kind


@dataclass(frozen=True)
class GuidedIGConfig:
    steps: int = 200
    fraction: float = 0.10
    anchors: int = 0
    baseline: BaselineSpec = field(default_factory=BaselineSpec)
    mode: str = "logit"
    trace: bool = False
    seed: int = 0

    def __post_init__(self):
        _check_steps(self.steps)
        _check_fraction(self.fraction)
        if self.anchors < 0:
            raise InputError("anchor count must be >= 0")


@dataclass
class PathTrace:
    """Points visited by a path method.

    ``points`` has ``M + 1`` rows (start, after step 1, ..., end). Row ``t`` of
    ``gradients`` is the gradient used for step ``t + 1``; ``increments`` is
    that step's per-feature attribution.
    """

    points: np.ndarray
    gradients: np.ndarray
    increments: np.ndarray
    selected_counts: np.ndarray
    method: str = ""
    inner_iterations: np.ndarray | None = None

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.points, axis=0)

    @property
    def n_steps(self) -> int:
        return self.gradients.shape[0]

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    @staticmethod
    def concatenate(traces: list["PathTrace"]) -> "PathTrace":
        return PathTrace(
            points=np.vstack([traces[0].points[:1]] + [t.points[1:] for t in traces]),
            gradients=np.vstack([t.gradients for t in traces]),
            increments=np.vstack([t.increments for t in traces]),
            selected_counts=np.concatenate([t.selected_counts for t in traces]),
            method=traces[0].method,
            inner_iterations=(None if any(t.inner_iterations is None for t in traces)
                              else np.concatenate([t.inner_iterations for t in traces])),
        )


@dataclass
class AttributionMap:
    attributions: np.ndarray
    completeness_residual: float
    method: str
    config: dict = field(default_factory=dict)
    f_input: float = math.nan
    f_baseline: float = math.nan
    trace: PathTrace | None = None

    def __len__(self):
        return self.attributions.size

    def __array__(self, dtype=None, copy=None):
        a = self.attributions
        return a if dtype is None else a.astype(dtype)


def _check_steps(steps):
    if not isinstance(steps, (int, np.integer)) or steps < 1:
        raise InputError(f"steps must be a positive integer, got {steps!r}")


def _check_fraction(fraction):
    if not 0.0 < fraction <= 1.0:
        raise InputError(f"fraction must lie in (0, 1], got {fraction!r}")


def _endpoints(model, x_input, x_baseline):
    xi = model.check_input(x_input)
    xb = model.check_input(x_baseline)
    return xi, xb


def _finish(attr, f_in, f_base, method, config, trace=None) -> AttributionMap:
    if not np.all(np.isfinite(attr)):
        raise NumericalError(f"{method}: non-finite attribution")
    residual = abs(float(np.sum(attr)) - (f_in - f_base))
    return AttributionMap(attr, residual, method, config, f_in, f_base, trace)


# ---------------------------------------------------------------------------
# Integrated Gradients
# ---------------------------------------------------------------------------

def _ig_path(model, start, end, steps, cls, mode, record):
    diff = end - start
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    grad_sum = np.zeros(start.size)
    grads = np.empty((steps, start.size)) if record else None
    for lo in range(0, steps, _IG_BATCH):
        pts = start + alphas[lo:lo + _IG_BATCH, None] * diff
        _, g = model.value_and_grad_batch(pts, cls, mode)
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient on the integration path")
        grad_sum += g.sum(axis=0)
        if record:
            grads[lo:lo + _IG_BATCH] = g
    attr = grad_sum * diff / steps
    trace = None
    if record:
        frac = np.arange(steps + 1)[:, None] / steps
        points = start + frac * diff
        points[0], points[-1] = start, end
        trace = PathTrace(points, grads, grads * (diff / steps),
                          np.full(steps, int(np.count_nonzero(diff))), "ig")
    return attr, trace


def integrated_gradients(model: DifferentiableModel, x_input, x_baseline, steps: int = 200,
                         cls: int = 0, mode: str = "logit", trace: bool = False) -> AttributionMap:
    """Straight-line path integral with a midpoint Riemann sum.

    ``a_i = (x_i - b_i) / T * sum_t dF/dx_i(b + (t - 0.5) / T * (x - b))``
    """
    _check_steps(steps)
    model._check_target(cls, mode)
    xi, xb = _endpoints(model, x_input, x_baseline)
    attr, tr = _ig_path(model, xb, xi, steps, cls, mode, trace)
    f_in = model._value_and_grad(xi, cls, mode)[0]
    f_b = model._value_and_grad(xb, cls, mode)[0]
    return _finish(attr, f_in, f_b, "ig", {"steps": steps, "class": cls, "mode": mode}, tr)


# ---------------------------------------------------------------------------
# Guided IG
# ---------------------------------------------------------------------------

def _gig_path(model, start, end, steps, fraction, cls, mode, record):
    x = start.copy()
    attr = np.zeros(start.size)
    d_total = float(np.abs(start - end).sum())
    if record:
        points = np.empty((steps + 1, start.size))
        points[0] = start
        grads = np.empty((steps, start.size))
        incs = np.zeros((steps, start.size))
        counts = np.zeros(steps, dtype=np.int64)
        inner = np.zeros(steps, dtype=np.int64)
    incr = np.zeros(start.size)
    f_start = math.nan
    for t in range(1, steps + 1):
        value, g = model._value_and_grad(x, cls, mode)
        if t == 1:
            f_start = value
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient on the guided path")
        g = np.ascontiguousarray(g, dtype=np.float64)
        d_target = d_total * (1.0 - t / steps)
        incr[:] = 0.0
        status, iters, n_moved = kernels.gig_step(x, end, g, fraction, d_target, attr, incr)
        if status != kernels.GIG_OK:
            raise ProgressError(
                f"guided step {t}/{steps} could not reduce the L1 distance (status {status})")
        if record:
            points[t] = x
            grads[t - 1] = g
            incs[t - 1] = incr
            counts[t - 1] = n_moved
            inner[t - 1] = iters
    tr = PathTrace(points, grads, incs, counts, "gig", inner) if record else None
    return attr, f_start, tr


def guided_ig_unbounded(model: DifferentiableModel, x_input, x_baseline, steps: int = 200,
                        fraction: float = 0.10, cls: int = 0, mode: str = "logit",
                        trace: bool = False) -> AttributionMap:
    """Guided IG without anchors.

    For outer step ``t`` the target L1 distance to the input is
    ``d_total * (1 - t / T)``. The gradient is taken once at the start of the
    step; features are then moved in rounds, each round selecting the
    unfinished features with ``|grad_i|`` at or below the lower
    ``fraction``-quantile (ties included) and moving them a common convex
    fraction of the way to the input, or all the way when that is not enough.
    """
    _check_steps(steps)
    _check_fraction(fraction)
    model._check_target(cls, mode)
    xi, xb = _endpoints(model, x_input, x_baseline)
    attr, f_b, tr = _gig_path(model, xb, xi, steps, fraction, cls, mode, trace)
    f_in = model._value_and_grad(xi, cls, mode)[0]
    config = {"steps": steps, "fraction": fraction, "anchors": 0, "class": cls, "mode": mode}
    return _finish(attr, f_in, f_b, "gig", config, tr)


def anchor_points(x_input: np.ndarray, x_baseline: np.ndarray, anchors: int) -> list[np.ndarray]:
    """The ``K + 2`` segment endpoints ``b + (x - b) * k / (K + 1)``, k = 0..K+1."""
    diff = x_input - x_baseline
    pts = [diff * k / (anchors + 1) + x_baseline for k in range(anchors + 2)]
    pts[0], pts[-1] = x_baseline.copy(), x_input.copy()
    return pts


def guided_ig_anchored(model: DifferentiableModel, x_input, x_baseline, steps: int = 200,
                       fraction: float = 0.10, anchors: int = 0, cls: int = 0,
                       mode: str = "logit", trace: bool = False) -> AttributionMap:
    """Guided IG forced through ``anchors`` evenly spaced points on the straight line.

    Each of the ``anchors + 1`` segments gets ``ceil(steps / (anchors + 1))``
    steps and the per-segment attributions are summed.
    """
    _check_steps(steps)
    _check_fraction(fraction)
    if not isinstance(anchors, (int, np.integer)) or anchors < 0:
        raise InputError(f"anchors must be a non-negative integer, got {anchors!r}")
    model._check_target(cls, mode)
    xi, xb = _endpoints(model, x_input, x_baseline)
    seg_steps = math.ceil(steps / (anchors + 1))
    pts = anchor_points(xi, xb, anchors)
    attr = np.zeros(xi.size)
    traces = []
    f_b = math.nan
    for k in range(anchors + 1):
        a, f_start, tr = _gig_path(model, pts[k], pts[k + 1], seg_steps, fraction, cls, mode, trace)
        attr += a
        if k == 0:
            f_b = f_start
        if trace:
            traces.append(tr)
    f_in = model._value_and_grad(xi, cls, mode)[0]
    config = {"steps": steps, "segment_steps": seg_steps, "fraction": fraction,
              "anchors": anchors, "class": cls, "mode": mode}
    full = PathTrace.concatenate(traces) if trace else None
    return _finish(attr, f_in, f_b, "gig", config, full)


# ---------------------------------------------------------------------------
# Non-path comparisons
# ---------------------------------------------------------------------------

def vanilla_gradients(model: DifferentiableModel, x_input, cls: int = 0,
                      mode: str = "logit") -> AttributionMap:
    """Raw gradient at the input. Completeness does not apply (residual is NaN)."""
    value, grad = model.value_and_grad(x_input, cls, mode)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient")
    return AttributionMap(grad, math.nan, "gradients", {"class": cls, "mode": mode}, value)


def edge_detector(x_input, shape) -> AttributionMap:
    """Mean absolute intensity difference to the in-bounds 8-neighbours.

    Channels are averaged first, so the result has one value per pixel. A
    pixel with no neighbours (1x1 image) scores 0.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) not in (2, 3) or shape[0] < 1 or shape[1] < 1:
        raise InputError(f"edge detector needs a (height, width[, channels]) shape, got {shape}")
    img = np.asarray(x_input, dtype=np.float64).reshape(shape)
    if img.ndim == 3:
        img = img.mean(axis=2)
    h, w = img.shape
    padded = np.pad(img, 1)
    valid = np.pad(np.ones((h, w)), 1)
    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            ok = valid[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            total += ok * np.abs(img - nb)
            count += ok
    sal = np.divide(total, count, out=np.zeros((h, w)), where=count > 0)
    return AttributionMap(sal.reshape(-1), math.nan, "edge", {"shape": list(shape)})


def smoothgrad(base_method: Callable[..., AttributionMap], model: DifferentiableModel, x_input,
               n_samples: int = 8, sigma: float = 0.15, seed: int = 0,
               workers: int | None = None, **method_kwargs) -> AttributionMap:
    """Average ``base_method`` over ``n_samples`` Gaussian-perturbed copies of the input.

    Sample ``i`` adds ``N(0, sigma^2)`` noise drawn from the ``smoothgrad``
    substream ``i`` of ``seed``. Extra keyword arguments (baseline, steps, ...)
    are passed to ``base_method`` unchanged.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    if not sigma >= 0:
        raise InputError("sigma must be >= 0")
    x = model.check_input(x_input)
    tag = f"smoothgrad+{getattr(base_method, '__name__', 'method')}"
    config = {"n_samples": n_samples, "sigma": sigma, "seed": seed}
    if sigma == 0:
        res = base_method(model, x, **method_kwargs)
        return AttributionMap(res.attributions, res.completeness_residual, tag,
                              {**res.config, **config}, res.f_input, res.f_baseline)

    def run(i):
        noisy = x + substream(seed, "smoothgrad", i).normal(0.0, sigma, x.size)
        return base_method(model, noisy, **method_kwargs)

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(n_samples)))
    else:
        results = [run(i) for i in range(n_samples)]
    return average_maps(results, tag, {**results[0].config, **config})


def average_maps(maps: list[AttributionMap], method: str, config: dict) -> AttributionMap:
    """Mean of several maps; the residual is measured against the mean F difference."""
    attr = np.mean(np.stack([m.attributions for m in maps]), axis=0)
    f_in = float(np.mean([m.f_input for m in maps]))
    f_b = float(np.mean([m.f_baseline for m in maps]))
    if all(math.isnan(m.completeness_residual) for m in maps):
        residual = math.nan
    else:
        diffs = float(np.mean([m.f_input - m.f_baseline for m in maps]))
        residual = abs(float(np.sum(attr)) - diffs)
    return AttributionMap(attr, residual, method, config, f_in, f_b, maps[0].trace)


# ---------------------------------------------------------------------------
# Front end used by the CLI
# ---------------------------------------------------------------------------

PATH_METHODS = ("ig", "gig")
METHODS = PATH_METHODS + ("gradients", "edge", "smoothgrad-ig", "smoothgrad-gig")


def attribute(model: DifferentiableModel, x_input, method: str = "gig",
              baseline: BaselineSpec | str | None = None, steps: int = 200,
              fraction: float = 0.10, anchors: int = 0, cls: int = 0, mode: str = "logit",
              seed: int = 0, n_samples: int = 8, sigma: float = 0.15, trace: bool = False,
              image_shape=None, baselines: list[np.ndarray] | None = None) -> AttributionMap:
    """Run ``method`` against every baseline in ``baseline`` and average the maps.

    ``baselines`` overrides the spec with explicit vectors. The returned trace,
    when requested, is the one for the first baseline.
    """
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; expected one of {METHODS}")
    x = model.check_input(x_input)
    if method == "gradients":
        return vanilla_gradients(model, x, cls, mode)
    if method == "edge":
        return edge_detector(x, image_shape if image_shape is not None else model.input_shape)

    if isinstance(baseline, str):
        baseline = BaselineSpec.parse(baseline)
    baseline = baseline or BaselineSpec()
    if baselines is None:
        baselines = baseline.resolve(x.size, seed)

    def ig(m, xin, baseline):
        return integrated_gradients(m, xin, baseline, steps, cls, mode, trace)

    def gig(m, xin, baseline):
        return guided_ig_anchored(m, xin, baseline, steps, fraction, anchors, cls, mode, trace)

    base = ig if method.endswith("ig") and not method.endswith("gig") else gig
    maps = []
    for b in baselines:
        if method.startswith("smoothgrad"):
            maps.append(smoothgrad(base, model, x, n_samples, sigma, seed, baseline=b))
        else:
            maps.append(base(model, x, baseline=b))
    config = dict(maps[0].config)
    config.update(baseline=str(baseline), seed=seed)
    if method.startswith("smoothgrad"):
        config.update(n_samples=n_samples, sigma=sigma)
    return average_maps(maps, method, config)


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def save_attribution(amap: AttributionMap, csv_path) -> None:
    """Write ``index,attribution`` CSV plus a JSON sidecar next to it."""
    lines = ["index,attribution"]
    lines += [f"{i},{float(a)!r}" for i, a in enumerate(amap.attributions)]
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    meta = {
        "method": amap.method,
        "config": amap.config,
        "completeness_residual": amap.completeness_residual,
        "F_input": amap.f_input,
        "F_baseline": amap.f_baseline,
    }
    atomic_write_text(sidecar_path(csv_path), json.dumps(_jsonable(meta), indent=1) + "\n")


def load_attribution_csv(csv_path) -> np.ndarray:
    with open(csv_path) as fh:
        header = fh.readline().strip()
        if header != "index,attribution":
            raise InputError(f"{csv_path}: expected header 'index,attribution'")
        rows = [line.split(",") for line in fh if line.strip()]
    try:
        idx = np.array([int(r[0]) for r in rows])
        vals = np.array([float(r[1]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise InputError(f"{csv_path}: malformed row") from exc
    if not np.array_equal(idx, np.arange(idx.size)):
        raise InputError(f"{csv_path}: indices must run 0..N-1 in order")
    return vals


def trace_records(trace: PathTrace) -> list[dict]:
    """One record per step, preceded by a ``t = 0`` record holding the start point.

    Besides the summary fields each record carries the point reached (``x``),
    the gradient used for the step (``grad``) and the displacement (``dx``),
    which is what the diagnostics need to rebuild the trace.
    """
    start, end = trace.start, trace.end
    total = float(np.abs(end - start).sum())
    deltas = trace.deltas
    recs = [{"t": 0, "alpha_equivalent": 0.0, "x_l1_remaining": total, "selected_count": 0,
             "step_attr_sum": 0.0, "x": start.tolist(), "grad": None, "dx": None}]
    for t in range(trace.n_steps):
        x = trace.points[t + 1]
        remaining = float(np.abs(end - x).sum())
        alpha = 1.0 - remaining / total if total > 0 else (t + 1) / trace.n_steps
        recs.append({
            "t": t + 1,
            "alpha_equivalent": alpha,
            "x_l1_remaining": remaining,
            "selected_count": int(trace.selected_counts[t]),
            "step_attr_sum": float(trace.increments[t].sum()),
            "x": x.tolist(),
            "grad": trace.gradients[t].tolist(),
            "dx": deltas[t].tolist(),
        })
    return recs


def write_trace_jsonl(trace: PathTrace, path) -> None:
    text = "".join(json.dumps(r) + "\n" for r in trace_records(trace))
    atomic_write_text(path, text)


def read_trace_jsonl(path) -> PathTrace:
    with open(path) as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    if len(recs) < 2 or recs[0].get("t") != 0:
        raise InputError(f"{path}: trace needs a t=0 record and at least one step")
    try:
        points = np.array([r["x"] for r in recs], dtype=np.float64)
        grads = np.array([r["grad"] for r in recs[1:]], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: trace records are missing points or gradients") from exc
    if grads.ndim != 2 or grads.shape != (len(recs) - 1, points.shape[1]):
        raise InputError(f"{path}: trace records are missing points or gradients")
    incs = grads * np.diff(points, axis=0)
    counts = np.array([r.get("selected_count", 0) for r in recs[1:]], dtype=np.int64)
    return PathTrace(points, grads, incs, counts, "trace")

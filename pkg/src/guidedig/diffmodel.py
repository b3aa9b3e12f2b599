"""Differentiable models consumed by the attribution methods.

Every model maps a flat float64 feature vector of length ``N`` to ``C``
logits and can return the full ``C x N`` Jacobian analytically. The scalar
that attribution methods integrate is either ``logits[c]`` or
``softmax(logits)[c]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import (
    DimensionMismatchError,
    InputError,
    ModelSpecParseError,
    UnknownActivationError,
)

MODES = ("logit", "softmax")
ACTIVATIONS = ("identity", "relu", "softplus")


@dataclass(frozen=True)
class FeatureVector:
    """Flat feature values plus the shape they were flattened from."""

    values: np.ndarray
    shape: tuple

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        shape = tuple(int(s) for s in self.shape)
        if int(np.prod(shape)) != values.size:
            raise InputError(f"{values.size} values do not fill shape {shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("feature vector contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", shape)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class ModelOutput:
    logits: np.ndarray
    selected_class: int
    mode: str

    @property
    def scores(self) -> np.ndarray:
        return self.logits if self.mode == "logit" else softmax(self.logits)

    @property
    def value(self) -> float:
        return float(self.scores[self.selected_class])


@dataclass(frozen=True)
class GradientRecord:
    value: float
    gradient: np.ndarray


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    # tanh form avoids overflow for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class DifferentiableModel:
    """Base class. Subclasses implement :meth:`logits_and_jacobian`.

    Models are immutable after construction; every method is pure.
    """

    input_shape: tuple
    n_outputs: int

    @property
    def n_features(self) -> int:
        return int(np.prod(self.input_shape))

    # -- subclass hooks -----------------------------------------------------
    def logits_and_jacobian(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def logits_and_jacobian_batch(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pairs = [self.logits_and_jacobian(x) for x in xs]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.logits_and_jacobian(x)[0]

    def to_spec(self) -> dict:
        raise NotImplementedError

    # -- public API ---------------------------------------------------------
    def check_input(self, x) -> np.ndarray:
        x = np.ascontiguousarray(np.asarray(x, dtype=np.float64)).reshape(-1)
        if x.size != self.n_features:
            raise InputError(
                f"expected {self.n_features} features for shape {self.input_shape}, got {x.size}"
            )
        if not np.all(np.isfinite(x)):
            raise InputError("input contains non-finite values")
        return x

    def _check_target(self, cls: int, mode: str) -> None:
        if mode not in MODES:
            raise InputError(f"unknown mode {mode!r}; expected one of {MODES}")
        if not 0 <= cls < self.n_outputs:
            raise InputError(f"class {cls} out of range for {self.n_outputs} outputs")

    def output(self, x, cls: int = 0, mode: str = "logit") -> ModelOutput:
        self._check_target(cls, mode)
        return ModelOutput(self.logits(self.check_input(x)), cls, mode)

    def evaluate(self, x, cls: int = 0, mode: str = "logit") -> float:
        return self.value_and_grad(x, cls, mode)[0]

    def gradient(self, x, cls: int = 0, mode: str = "logit") -> GradientRecord:
        value, grad = self.value_and_grad(x, cls, mode)
        return GradientRecord(value, grad)

    def value_and_grad(self, x, cls: int = 0, mode: str = "logit") -> tuple[float, np.ndarray]:
        self._check_target(cls, mode)
        return self._value_and_grad(self.check_input(x), cls, mode)

    def _value_and_grad(self, x: np.ndarray, cls: int, mode: str) -> tuple[float, np.ndarray]:
        """Unchecked scalar value and gradient; callers validate once up front."""
        z, jac = self.logits_and_jacobian(x)
        if mode == "logit":
            return float(z[cls]), jac[cls].copy()
        s = softmax(z)
        v = -s[cls] * s
        v[cls] += s[cls]
        return float(s[cls]), v @ jac

    def value_and_grad_batch(self, xs: np.ndarray, cls: int, mode: str):
        """Values ``(B,)`` and gradients ``(B, N)`` for a stack of points."""
        z, jac = self.logits_and_jacobian_batch(xs)
        if mode == "logit":
            return z[:, cls].copy(), jac[:, cls, :].copy()
        s = softmax(z)
        v = -s[:, cls, None] * s
        v[:, cls] += s[:, cls]
        return s[:, cls].copy(), np.einsum("bc,bcn->bn", v, jac)


class LinearModel(DifferentiableModel):
    """``logits = W x + b``."""

    def __init__(self, weights, bias=None, input_shape=None):
        w = np.array(weights, dtype=np.float64)
        if w.ndim == 1:
            w = w[None, :]
        self.weights = w
        self.bias = (
            np.zeros(w.shape[0]) if bias is None
            else np.atleast_1d(np.array(bias, dtype=np.float64))
        )
        if self.bias.shape != (w.shape[0],):
            raise DimensionMismatchError("bias length must equal number of weight rows")
        self.input_shape = tuple(input_shape) if input_shape else (w.shape[1],)
        if int(np.prod(self.input_shape)) != w.shape[1]:
            raise DimensionMismatchError("input_shape does not match weight columns")
        self.n_outputs = w.shape[0]

    def logits_and_jacobian(self, x):
        return self.weights @ x + self.bias, self.weights

    def logits_and_jacobian_batch(self, xs):
        z = xs @ self.weights.T + self.bias
        return z, np.broadcast_to(self.weights, (xs.shape[0],) + self.weights.shape)

    def to_spec(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [{"weights": self.weights.tolist(), "bias": self.bias.tolist(),
                        "activation": "identity"}],
            "outputs": self.n_outputs,
        }


class BilinearModel(DifferentiableModel):
    """Sum of pairwise products ``F = sum_(i,j) x_i * x_j`` (one output)."""

    def __init__(self, n_features: int, pairs: Sequence[tuple[int, int]] = ((0, 1),)):
        self.pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        if self.pairs.size and (self.pairs.min() < 0 or self.pairs.max() >= n_features):
            raise DimensionMismatchError("pair index out of range")
        self.input_shape = (int(n_features),)
        self.n_outputs = 1

    def logits_and_jacobian(self, x):
        i, j = self.pairs[:, 0], self.pairs[:, 1]
        grad = np.zeros(x.size)
        np.add.at(grad, i, x[j])
        np.add.at(grad, j, x[i])
        return np.array([np.sum(x[i] * x[j])]), grad[None, :]

    def to_spec(self):
        return {"kind": "bilinear", "input_shape": list(self.input_shape), "outputs": 1,
                "params": {"pairs": self.pairs.tolist()}}


class SymmetricSumModel(DifferentiableModel):
    """``F = sum_i w_i g(x_i) + coupling * (sum_i w_i x_i)^2`` with shared ``g``.

    ``g(u) = sin(curvature * u) / curvature + u^2 / 2``. Features that share a
    weight are interchangeable; when their values coincide their partial
    derivatives are computed by identical arithmetic and agree exactly.
    """

    def __init__(self, weights, curvature: float = 3.0, coupling: float = 0.5):
        self.weights = np.array(weights, dtype=np.float64).reshape(-1)
        self.curvature = float(curvature)
        self.coupling = float(coupling)
        if self.curvature == 0.0:
            raise InputError("curvature must be non-zero")
        self.input_shape = (self.weights.size,)
        self.n_outputs = 1

    def logits_and_jacobian(self, x):
        k, w = self.curvature, self.weights
        s = np.dot(w, x)
        value = np.dot(w, np.sin(k * x) / k + 0.5 * x * x) + self.coupling * s * s
        grad = w * (np.cos(k * x) + x) + (2.0 * self.coupling * s) * w
        return np.array([value]), grad[None, :]

    def to_spec(self):
        return {"kind": "symmetric_sum", "input_shape": list(self.input_shape), "outputs": 1,
                "params": {"weights": self.weights.tolist(), "curvature": self.curvature,
                           "coupling": self.coupling}}


class BumpMixtureModel(DifferentiableModel):
    """Sum of isotropic Gaussian bumps ``a_k exp(-|x - c_k|^2 / (2 s_k^2))``."""

    def __init__(self, centers, amplitudes, widths, offset: float = 0.0, input_shape=None):
        self.centers = np.ascontiguousarray(np.array(centers, dtype=np.float64))
        if self.centers.ndim != 2:
            raise DimensionMismatchError("centers must be a (bumps, features) matrix")
        k, n = self.centers.shape
        self.amplitudes = np.ascontiguousarray(np.broadcast_to(
            np.array(amplitudes, dtype=np.float64), (k,)))
        self.widths = np.ascontiguousarray(np.broadcast_to(
            np.array(widths, dtype=np.float64), (k,)))
        if np.any(self.widths <= 0):
            raise InputError("bump widths must be positive")
        self.gammas = 1.0 / (2.0 * self.widths ** 2)
        self.offset = float(offset)
        self.input_shape = tuple(input_shape) if input_shape else (n,)
        if int(np.prod(self.input_shape)) != n:
            raise DimensionMismatchError("input_shape does not match bump centers")
        self.n_outputs = 1

    def logits_and_jacobian(self, x):
        v, g = kernels.bump_value_grad(x, self.centers, self.amplitudes, self.gammas, self.offset)
        return np.array([v]), g[None, :]

    def logits_and_jacobian_batch(self, xs):
        xs = np.ascontiguousarray(xs)
        v, g = kernels.bump_value_grad_batch(xs, self.centers, self.amplitudes, self.gammas,
                                             self.offset)
        return v[:, None], g[:, None, :]

    def _value_and_grad(self, x, cls, mode):
        if mode == "softmax":  # single output: constant 1, zero gradient
            return super()._value_and_grad(x, cls, mode)
        v, g = kernels.bump_value_grad(x, self.centers, self.amplitudes, self.gammas, self.offset)
        return float(v), g

    def to_spec(self):
        return {"kind": "bump_mixture", "input_shape": list(self.input_shape), "outputs": 1,
                "params": {"centers": self.centers.tolist(),
                           "amplitudes": self.amplitudes.tolist(),
                           "widths": self.widths.tolist(), "offset": self.offset}}


class MLPModel(DifferentiableModel):
    """Dense feed-forward network; ReLU uses derivative 0 at exactly 0."""

    def __init__(self, layers: Sequence[tuple[np.ndarray, np.ndarray, str]], input_shape,
                 n_outputs: int | None = None):
        self.layers = []
        self.input_shape = tuple(int(s) for s in input_shape)
        width = int(np.prod(self.input_shape))
        for idx, (w, b, act) in enumerate(layers):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if act not in ACTIVATIONS:
                raise UnknownActivationError(f"layer {idx}: unknown activation {act!r}")
            if w.ndim != 2 or w.shape[1] != width:
                raise DimensionMismatchError(
                    f"layer {idx}: weights {w.shape} do not accept {width} inputs")
            if b.shape != (w.shape[0],):
                raise DimensionMismatchError(
                    f"layer {idx}: bias length {b.size} != {w.shape[0]} rows")
            self.layers.append((w, b, act))
            width = w.shape[0]
        if not self.layers:
            raise DimensionMismatchError("model needs at least one layer")
        if n_outputs is not None and n_outputs != width:
            raise DimensionMismatchError(f"declared outputs {n_outputs} != final width {width}")
        self.n_outputs = width

    @staticmethod
    def _act(z, act):
        if act == "relu":
            return np.maximum(z, 0.0), (z > 0.0).astype(np.float64)
        if act == "softplus":
            return _softplus(z), _sigmoid(z)
        return z, np.ones_like(z)

    def logits_and_jacobian(self, x):
        z, jac = self.logits_and_jacobian_batch(x[None, :])
        return z[0], jac[0]

    def logits_and_jacobian_batch(self, xs):
        a = xs
        derivs = []
        for w, b, act in self.layers:
            a, d = self._act(a @ w.T + b, act)
            derivs.append(d)
        # back-propagate all C output cotangents at once: g has shape (B, C, width)
        g = np.broadcast_to(np.eye(self.n_outputs), (xs.shape[0], self.n_outputs, self.n_outputs))
        for (w, _, _), d in zip(reversed(self.layers), reversed(derivs)):
            g = (g * d[:, None, :]) @ w
        return a, g

    def to_spec(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [{"weights": w.tolist(), "bias": b.tolist(), "activation": act}
                       for w, b, act in self.layers],
            "outputs": self.n_outputs,
        }


# -- constructors -------------------------------------------------------------

def linear(w, b=0.0, input_shape=None) -> LinearModel:
    return LinearModel(w, b, input_shape)


def bilinear_product(n_features: int = 2, pairs=((0, 1),)) -> BilinearModel:
    return BilinearModel(n_features, pairs)


def symmetric_sum(weights, curvature: float = 3.0, coupling: float = 0.5) -> SymmetricSumModel:
    return SymmetricSumModel(weights, curvature, coupling)


def bump_mixture(centers, amplitudes, widths, offset: float = 0.0,
                 input_shape=None) -> BumpMixtureModel:
    return BumpMixtureModel(centers, amplitudes, widths, offset, input_shape)


# -- spec files ---------------------------------------------------------------

def _finite_array(obj, what: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelSpecParseError(f"{what}: not a numeric array") from exc
    if arr.ndim != ndim:
        raise ModelSpecParseError(f"{what}: expected {ndim}-d array, got {arr.ndim}-d")
    if not np.all(np.isfinite(arr)):
        raise ModelSpecParseError(f"{what}: non-finite values")
    return arr


def model_from_spec(spec: dict) -> DifferentiableModel:
    """Build a model from a parsed ModelSpec dictionary."""
    if not isinstance(spec, dict):
        raise ModelSpecParseError("model spec must be a JSON object")
    try:
        input_shape = tuple(int(s) for s in spec["input_shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelSpecParseError("missing or invalid 'input_shape'") from exc
    if not input_shape or any(s < 1 for s in input_shape):
        raise ModelSpecParseError("'input_shape' entries must be positive")
    outputs = spec.get("outputs")
    if outputs is not None and (not isinstance(outputs, int) or outputs < 1):
        raise ModelSpecParseError("'outputs' must be a positive integer")
    n = int(np.prod(input_shape))
    kind = spec.get("kind", "mlp")
    params = spec.get("params", {})

    if kind == "mlp":
        layers_raw = spec.get("layers")
        if not isinstance(layers_raw, list) or not layers_raw:
            raise ModelSpecParseError("'layers' must be a non-empty list")
        layers = []
        for idx, layer in enumerate(layers_raw):
            if not isinstance(layer, dict):
                raise ModelSpecParseError(f"layer {idx} must be an object")
            try:
                w = _finite_array(layer["weights"], f"layer {idx} weights", 2)
                b = _finite_array(layer["bias"], f"layer {idx} bias", 1)
                act = layer.get("activation", "identity")
            except KeyError as exc:
                raise ModelSpecParseError(f"layer {idx}: missing {exc.args[0]!r}") from exc
            if not isinstance(act, str):
                raise ModelSpecParseError(f"layer {idx}: activation must be a string")
            layers.append((w, b, act))
        return MLPModel(layers, input_shape, outputs)

    try:
        if kind == "bilinear":
            model = BilinearModel(n, [tuple(p) for p in params["pairs"]])
        elif kind == "symmetric_sum":
            model = SymmetricSumModel(_finite_array(params["weights"], "weights", 1),
                                      params.get("curvature", 3.0), params.get("coupling", 0.5))
        elif kind == "bump_mixture":
            centers = _finite_array(params["centers"], "centers", 2)
            model = BumpMixtureModel(centers, params["amplitudes"], params["widths"],
                                     params.get("offset", 0.0), input_shape)
        else:
            raise ModelSpecParseError(f"unknown model kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise ModelSpecParseError(f"{kind}: missing or malformed params ({exc})") from exc
    if model.n_features != n:
        raise DimensionMismatchError(f"{kind}: {model.n_features} features != input_shape {n}")
    if outputs is not None and outputs != model.n_outputs:
        raise DimensionMismatchError(f"declared outputs {outputs} != {model.n_outputs}")
    return model


def load_model(path) -> DifferentiableModel:
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as exc:
        raise ModelSpecParseError(f"{path}: not a text file") from exc
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelSpecParseError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_spec(spec)


def save_model(model: DifferentiableModel, path, meta: dict | None = None) -> None:
    from ._io import atomic_write_text

    spec = model.to_spec()
    if meta:
        spec["meta"] = meta
    atomic_write_text(path, json.dumps(spec, indent=1) + "\n")


# -- finite differences -------------------------------------------------------

def finite_difference_gradient(model: DifferentiableModel, x, cls: int = 0,
                               mode: str = "logit", h: float = 1e-4) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    x = model.check_input(x)
    out = np.empty(x.size)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (model.evaluate(xp, cls, mode) - model.evaluate(xm, cls, mode)) / (2.0 * h)
    return out


def check_gradient(model: DifferentiableModel, x, cls: int = 0, mode: str = "logit",
                   h: float = 1e-4) -> float:
    """Max over coordinates of ``|analytic - numeric| / (|numeric| + 1e-8)``."""
    if not h > 0 or not math.isfinite(h):
        raise InputError("finite-difference step h must be positive")
    analytic = model.gradient(x, cls, mode).gradient
    numeric = finite_difference_gradient(model, x, cls, mode, h)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))

"""Seeded fixture models and images used by tests, benchmarks and ``gen-fixtures``."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from . import diffmodel as dm
from .seeding import substream

# Sharp bumps: at typical points of the 64-d unit box the mixture sits in the
# bumps' tails, so gradients are large relative to values and point away from
# most straight baseline-to-input lines.
BUMP_FEATURES = 64
BUMP_COUNT = 16
BUMP_WIDTH = 0.8


def bump_family(seed: int, n_features: int = BUMP_FEATURES, n_bumps: int = BUMP_COUNT,
                width: float = BUMP_WIDTH, amplitude: float = 1.0,
                input_shape=None) -> dm.BumpMixtureModel:
    rng = substream(seed, "fixtures", 0)
    centers = rng.uniform(0.0, 1.0, (n_bumps, n_features))
    amps = rng.normal(0.0, amplitude, n_bumps)
    return dm.bump_mixture(centers, amps, width, input_shape=input_shape)


def mlp(seed: int, input_shape=(4, 4, 1), hidden: int = 16, outputs: int = 3,
        activation: str = "softplus") -> dm.MLPModel:
    """Two-layer network with He-style scaled normal weights."""
    rng = substream(seed, "fixtures", 1)
    n = int(np.prod(input_shape))
    w1 = rng.normal(0.0, 2.0 / np.sqrt(n), (hidden, n))
    b1 = rng.normal(0.0, 0.5, hidden)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), (outputs, hidden))
    b2 = rng.normal(0.0, 0.1, outputs)
    return dm.MLPModel([(w1, b1, activation), (w2, b2, "identity")], input_shape)


def bumpy(seed: int = 0) -> dm.MLPModel:
    """The bundled "bumpy" fixture: softplus MLP on 4x4 grayscale inputs."""
    return mlp(seed, (4, 4, 1), 16, 3, "softplus")


def symmetric_fixture(seed: int, n_pairs: int = 4, n_free: int = 2):
    """Symmetric-sum model whose features ``2k`` and ``2k + 1`` share a weight.

    Returns ``(model, pairs)``; the last ``n_free`` features have their own
    weights.
    """
    rng = substream(seed, "fixtures", 2)
    pair_w = rng.uniform(0.5, 2.0, n_pairs)
    weights = np.concatenate([np.repeat(pair_w, 2), rng.uniform(0.5, 2.0, n_free)])
    model = dm.symmetric_sum(weights, curvature=float(rng.uniform(2.0, 6.0)),
                             coupling=float(rng.uniform(0.1, 1.0)))
    return model, [(2 * k, 2 * k + 1) for k in range(n_pairs)]


def symmetric_endpoints(seed: int, pairs, n_features: int):
    """Baseline and input in the unit box with paired features equal."""
    rng = substream(seed, "fixtures", 3)
    b = rng.uniform(0.0, 1.0, n_features)
    x = rng.uniform(0.0, 1.0, n_features)
    for i, j in pairs:
        b[j] = b[i]
        x[j] = x[i]
    return x, b


def off_path_bump(n_features: int = 16, offset: float = 0.6, width: float = 0.25,
                  amplitude: float = 1.0) -> dm.BumpMixtureModel:
    """One bump beside the diagonal from 0 to 1, level with its midpoint.

    Along that line the gradient points mostly across the path, so the
    directional derivative stays small while the gradient norm peaks.
    """
    u = np.ones(n_features)
    u[n_features // 2:] = -1.0
    u /= np.linalg.norm(u)  # orthogonal to the all-ones direction
    center = 0.5 * np.ones(n_features) + offset * u
    return dm.bump_mixture(center[None, :], [amplitude], width)


# ---------------------------------------------------------------------------
# Bundled copies
# ---------------------------------------------------------------------------

def bundled_dir() -> Path:
    return Path(str(resources.files("guidedig") / "data"))


def load_bundled(name: str) -> dm.DifferentiableModel:
    return dm.load_model(bundled_dir() / f"{name}.json")


def bundled_meta(name: str) -> dict:
    return json.loads((bundled_dir() / f"{name}.json").read_text()).get("meta", {})

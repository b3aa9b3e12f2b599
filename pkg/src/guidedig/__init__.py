"""Integrated Gradients and Guided IG attributions with evaluation tools."""
from .attribution import (
    AttributionMap,
    BaselineSpec,
    GuidedIGConfig,
    PathTrace,
    attribute,
    edge_detector,
    guided_ig_anchored,
    guided_ig_unbounded,
    integrated_gradients,
    smoothgrad,
    vanilla_gradients,
)
from .diffmodel import (
    DifferentiableModel,
    FeatureVector,
    check_gradient,
    load_model,
)
from .evaluation import auc_roc, closed_path_experiment, directional_profile, path_diagnostics

__version__ = "0.1.0"

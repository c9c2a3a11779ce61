"""Kinematic-layout-aware random forests.

Decision forests whose training exploits privileged scene-plane and
skeleton-joint geometry through specialized split-quality functions,
while inference consumes appearance features only.
"""

from klrf.model import (
    ActionSequence,
    AugmentationConfig,
    KLRFConfig,
    LayoutPlane,
    Sample,
    SkeletonFrame,
    build_label_map,
    validate_dataset,
)
from klrf.forest import Forest, SplitFunction, TreeNode, predict, train_forest
from klrf.learning import KLRFModel, kcf, train_baseline, train_klrf

__all__ = [
    "ActionSequence",
    "AugmentationConfig",
    "Forest",
    "KLRFConfig",
    "KLRFModel",
    "LayoutPlane",
    "Sample",
    "SkeletonFrame",
    "SplitFunction",
    "TreeNode",
    "build_label_map",
    "kcf",
    "predict",
    "train_baseline",
    "train_forest",
    "train_klrf",
    "validate_dataset",
]

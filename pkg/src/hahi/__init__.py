"""Hierarchical alignment and interaction network for functional/structural MRI."""

from .config import HAHIConfig, hierarchical_ablations, tiny_config
from .data import BlockAtlas, DatasetManifest, read_manifest, read_tensor, split_dataset, write_tensor
from .estimator import HAHIClassifier
from .features import FeatureExtractor, alff, dynamic_fc, multiscale_dfc, static_fc
from .metrics import classification_metrics, metrics_from_counts
from .network import HAHINet
from .sam import explain_subject, synergistic_activation
from .synthetic import SyntheticConfig, generate_synthetic_cohort

__all__ = [
    "BlockAtlas", "DatasetManifest", "FeatureExtractor", "HAHIClassifier", "HAHIConfig", "HAHINet",
    "SyntheticConfig", "alff", "classification_metrics", "dynamic_fc", "explain_subject",
    "generate_synthetic_cohort", "hierarchical_ablations", "metrics_from_counts", "multiscale_dfc",
    "read_manifest", "read_tensor", "split_dataset", "static_fc", "synergistic_activation", "tiny_config",
    "write_tensor",
]
__version__ = "0.1.0"

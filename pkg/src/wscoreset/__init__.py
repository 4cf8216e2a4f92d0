"""Coresets for k-median, (k,z) and fair clustering with weak and strong distance oracles."""

from .metric import Dataset, MetricConfig, LoadError, load_dataset, load_matrix, true_distance, diameter
from .oracle import OracleEnv, QueryLedger, OracleAccessError, EstimatorError, estimate_distance_to_set
from .weak import WeakClustering, weak_kz_clustering, plugin_exact_clustering

__version__ = "0.1.0"

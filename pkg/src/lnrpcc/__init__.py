"""Particle competition and cooperation for semi-supervised learning with label noise."""

from .baselines import AffinityConfig, lgc_classify, lp_classify
from .datasets import (
    NO_LABEL,
    Dataset,
    LabelConfig,
    gen_gaussians,
    inject_label_noise,
    load_builtin,
    load_csv,
    sample_labeled_subset,
    zscore_normalize,
)
from .engine import LabelAssignment, VariantConfig, init_epoch, run, step
from .graph import Graph, GraphPolicy, NeighborOrder, build_graph, components
from .harness import ExperimentSpec, ResultTable, beta_sweep, emit, grid_search, run_experiment

__version__ = "0.1.0"

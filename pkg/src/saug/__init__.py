"""Selective structural augmentation for graph neural networks."""
from .augment import AugmentConfig, EdgeEditPlan, augment, denoise_hubs, discover_tails
from .generate import GenConfig, inject_pseudo_nodes, select_similar_neighbors, train_generative
from .graph import Graph, apply_delta, generate_powerlaw, load_graph, load_graph_dir, strip_pseudo_nodes
from .pagerank import pagerank, partition_nodes, resample_tails
from .pipeline import RunConfig, run_pipeline, run_seed, sweep

__version__ = "0.1.0"

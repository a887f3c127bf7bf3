"""Multivariate forecasting with attention over EMD-derived dynamic graphs.

Modules: ``emd`` (sifting and decomposition), ``graph`` (edge tensor and
adjacency per window), ``autograd`` (tape-based reverse mode and Adam),
``model`` (the transformer), ``training`` (loop, metrics, gradient checks,
ablation), ``data`` (CSV, splits, windows, graph files) and ``cli``.
"""

from .emd import ImfDecomposition, decompose, pad_to_k, sift
from .graph import DynamicGraph, NodeMatrix, build_graph
from .model import TsatConfig, TsatParams, forward, parameter_init
from .training import EvalReport, TrainConfig, ablation_run, grad_check, train

__version__ = "0.1.0"

__all__ = [
    "DynamicGraph", "EvalReport", "ImfDecomposition", "NodeMatrix", "TrainConfig", "TsatConfig", "TsatParams",
    "ablation_run", "build_graph", "decompose", "forward", "grad_check", "pad_to_k", "parameter_init", "sift",
    "train",
]

"""Attention export, key-cycle importance, input reduction, batch statistics and baselines."""

from .attention import (ALLOWED_SIZES, AttentionNotAvailable, AttentionReport, ReductionPlan, export_attention,
                        key_importance, read_pgm, recommend_input_size, to_gray, write_matrix_csv, write_pgm)
from .elastic_net import (EnResult, elastic_net, elastic_net_benchmark, en_objective, soft_threshold,
                          vit_features, write_table)
from .stats import average_crate, batch_stats

__all__ = [
    "ALLOWED_SIZES", "AttentionNotAvailable", "AttentionReport", "EnResult", "ReductionPlan", "average_crate",
    "batch_stats", "elastic_net", "elastic_net_benchmark", "en_objective", "export_attention",
    "key_importance", "read_pgm", "recommend_input_size", "soft_threshold", "to_gray", "vit_features",
    "write_matrix_csv", "write_pgm", "write_table",
]

"""Signed temporal message passing for node classification on event graphs."""
from .errors import (ContractError, CoverageError, DataError, IntegrityError, ParseError,
                     SchemaError, ShapeError, ThegcnError, TrainingDivergence)
from .graph import (EventGraph, GraphSchema, LabeledQuery, NodeFeatures, TemporalEvent,
                    load_event_graph, save_event_graph)
from .metrics import (heterophily_report, node_edge_heterophily, resolve_label,
                      static_edge_heterophily, temporal_changing_ratio,
                      temporal_edge_heterophily)
from .model import AttentionPair, ThegcnModel, forward, tmp_block, tmp_edge_weight
from .sampler import (SampledContext, StaticView, check_causality, collate,
                      context_to_static_view, sample_context)
from .synthgen import (SensorSeries, SynthSpec, SyntheticDataset, build_pems_style,
                       generate_synthetic, save_synthetic)
from .training import (RunConfig, RunReport, evaluate, run_ablation_suite, run_param_study,
                       split_queries, train)

__version__ = "0.1.0"

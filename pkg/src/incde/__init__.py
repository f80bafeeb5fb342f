"""Continual knowledge-graph embedding with hierarchical ordering and incremental distillation."""

from .centrality import CentralityScores, compute_centrality, entity_betweenness, node_centrality, relation_betweenness
from .datagen import (
    DESK_CONFIG,
    GrowthSchedule,
    build_growth_dataset,
    desk_benchmark,
    make_translational_kg,
    split_train_valid_test,
)
from .estimator import IncDE
from .evaluation import AggregateReport, MetricsReport, emit_report, rank_triple, time_averaged_metrics
from .kg import (
    Delta,
    GrowingDataset,
    KgSnapshot,
    Vocabulary,
    compute_delta,
    load_dataset,
    save_dataset,
    validate_dataset,
)
from .ordering import HierarchicalOrdering, LayerPlan, build_layer_plan, inter_hierarchical_layering, triple_importance
from .trainer import TrainConfig, train_time_step

__version__ = "0.1.0"

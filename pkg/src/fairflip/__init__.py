"""Edge-flip attacks on the group fairness of graph node classifiers."""

from .graph import (Graph, EdgeFlip, load_graph, save_graph, flip_edge,
                    check_feasible, classify_edge_group, generate_sbm,
                    validate_graph)
from .surrogate import (AggregatedFeatures, SurrogateClassifier, aggregate,
                        kde_density, tv_loss, ce_loss, train_surrogate)
from .metrics import (MetricReport, attacker_objective, accuracy, delta_dp,
                      delta_eo, auc, wasserstein1_empirical,
                      mutual_information_kde)
from .fastpath import (AttackState, FlipDelta, incremental_flip_z, commit_flip,
                       importance_score, build_candidates)
from .attack import (AttackConfig, AttackResult, FairnessAttack, ScoreRound,
                     score_candidates, run_attack, greedy_unconstrained_attack,
                     pgd_step_closed_form)
from .victims import (GCNClassifier, train_victim, evaluate_victim,
                      random_attack, cross_group_injection_attack)

__version__ = "0.1.0"

__all__ = [
    "Graph", "EdgeFlip", "load_graph", "save_graph", "flip_edge",
    "check_feasible", "classify_edge_group", "generate_sbm", "validate_graph",
    "AggregatedFeatures", "SurrogateClassifier", "aggregate", "kde_density",
    "tv_loss", "ce_loss", "train_surrogate",
    "MetricReport", "attacker_objective", "accuracy", "delta_dp", "delta_eo",
    "auc", "wasserstein1_empirical", "mutual_information_kde",
    "AttackState", "FlipDelta", "incremental_flip_z", "commit_flip",
    "importance_score", "build_candidates",
    "AttackConfig", "AttackResult", "FairnessAttack", "ScoreRound",
    "score_candidates", "run_attack", "greedy_unconstrained_attack",
    "pgd_step_closed_form",
    "GCNClassifier", "train_victim", "evaluate_victim", "random_attack",
    "cross_group_injection_attack",
]

"""Shilling-attack detection workbench for collaborative-filtering data.

Pipeline: load a rating matrix, synthesize attack profiles under 14 attack
models, extract 18 per-user detection features, train stump-based boosting
(plain or re-scaled) and a kNN baseline, and evaluate everything over a
seeded attack-size x filler-size grid with CSV reporting.
"""

from .attack_models import (ALL_MODELS, POWER_MODELS, STANDARD_MODELS,
                            AttackConfig, AttackIntent, AttackParams,
                            AttackProfile, LabeledDataset, generate,
                            generate_power_attack, generate_profiles,
                            generate_standard, inject_profiles,
                            select_power_items, select_power_users)
from .dataset import (GlobalStats, ItemStats, ParseError, PopularityRank,
                      RatingMatrix, ValidationError, dump_ratings,
                      global_stats, item_stats, load_ratings, popularity_rank,
                      user_profile)
from .features import (FEATURE_NAMES, ExtremePartition, FeatureSubset,
                       FeatureTable, extract_all, generic_features,
                       model_features, filler_size_features,
                       rating_distribution_features)
from .harness import (ATTACK_SIZES, FILLER_SIZES, ConfusionCounts,
                      ExperimentGrid, MetricsReport, MetricsRow,
                      build_test_cell, build_training_set, compute_metrics,
                      feature_ablation, parse_report, run_grid, write_report)
from .learners import (DecisionStump, KnnModel, StumpEnsemble, TrainConfig,
                       adaboost_train, classify, knn_classify, knn_predict,
                       knn_train, radaboost_train, select_hyperparams,
                       train_stump)

__version__ = "0.1.0"

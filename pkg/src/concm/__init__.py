"""Few-shot class-incremental learning on pre-extracted features.

Pipeline: memory-aware prototype calibration, Gaussian prototype
augmentation, dynamic simplex-ETF target structures aligned to the current
feature layout, projector training with matching + contrastive losses, and
nearest-class-mean evaluation with the full incremental metric suite.
"""

from .attributes import (AssociationMatrix, AttributePool, AttributeTable,
                         SemanticKnowledge, attribute_visual_prototypes,
                         build_knowledge, load_attribute_table,
                         load_semantic_embeddings)
from .augment import (ClassStats, PrototypeRepository, SampleCounts,
                      class_statistics, novel_covariance, sample_augmented,
                      shot_variance, transfer_weights)
from .autodiff import Tape, grad_check
from .calibration import (CalibrationParams, MetaTrainConfig, Prototype, blend,
                          calibrate, init_calibration_params, meta_train,
                          relevance_weights)
from .data import FeatureSet, Manifest, load_features, load_manifest, save_features
from .linalg import svd_compact
from .metrics import (RunReport, SessionRecord, balanced_error_rate,
                      format_report_table, harmonic_mean, ncm_classify,
                      report_from_json, report_to_csv, report_to_json,
                      run_metrics, session_metrics, similarity_stats)
from .projector import (ProjectorParams, TrainBatch, TrainSchedule,
                        contrastive_loss, init_projector_params, matching_loss,
                        project, train_projector)
from .session import (STRATEGIES, PipelineInputs, RunResult, SessionConfig,
                      SessionState, SessionTrace, evaluate_session, load_inputs,
                      run_base_session, run_from_files, run_incremental_session,
                      run_pipeline)
from .structure import (InitialStructure, StructureMatrix,
                        geometric_optimality_deviation, initial_structure,
                        nearest_optimal_structure, random_optimal_structure,
                        structure_matching_rate)
from .synth import GenConfig, GeneratedBenchmark, generate_benchmark, write_benchmark

__version__ = "0.1.0"

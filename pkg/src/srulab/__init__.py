"""srulab: a small laboratory for multi-scale recurrent sequence models.

Tensors with a reverse-mode tape, recurrent cells built on simple
moving-average statistics plus GRU/LSTM baselines, a synthetic
long-memory data generator, SGD training, random hyperparameter
search, and kernel-level analysis of what averaging read-outs compute.
"""

from .cells import (CellSpec, DEFAULT_ALPHAS, GruParams, GruState,
                    LstmParams, LstmState, SruParams, SruState, TaskHead,
                    cell_step, gru_step, head_apply, init_cell, init_head,
                    init_model, lstm_step, named_tensors, replace_tensors,
                    sru_step, state_zero, unroll, watch)
from .checkpoint import (CheckpointError, describe, load_model, read_records,
                         save_model, write_records)
from .config import ConfigError, parse_config_text, read_config, write_config
from .datasets import (DataError, SequenceDataset, export_sequences_csv,
                       images_to_dataset, load_binary_sequences,
                       load_idx_images, load_idx_labels, pixels_to_sequence,
                       read_seqd, write_idx_images, write_idx_labels,
                       write_seqd)
from .ema import (ViewpointSpec, apply_kernel, combine_scans,
                  default_viewpoints, difference_view, ema_scan,
                  ema_weight_profile, export_profiles, read_profiles,
                  viewpoint_kernel)
from .rng import derive_seed, stream
from .search import (SearchSpace, SweepResult, TrialResult, TrialSpec,
                     cell_spec_for, run_sweep, sample_trial)
from .synthetic import (GroundTruthSru, GtState, generate_dataset,
                        generate_sequences, gt_step, sequence_mse)
from .tensor import (Gradients, NonFiniteError, Tape, Tensor, backward,
                     finite_diff_check)
from .training import (MetricsRecord, TrainConfig, TrainResult,
                       TrainingDiverged, bernoulli_nll, clip_global_norm,
                       evaluate, evaluate_model, loss_on_batch, lr_at,
                       read_metrics_csv, sgd_step, softmax_cross_entropy,
                       train, write_metrics_csv)

__version__ = "0.1.0"

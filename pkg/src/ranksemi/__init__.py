"""Semi-supervised important-people detection on per-person feature vectors.

Train a permutation-equivariant relation scorer from a few labelled event
images plus a large unlabelled pool: unlabelled images are scored with the
current model, ranked, pseudo-labelled (top-1 important, sampled others not),
weighted per person (ISW) and per image (EW), and folded into the objective
with a ramped weight. Baselines (pseudo-label, mean teacher, label
propagation), evaluation metrics and a synthetic benchmark generator are
included; see the ``ranksemi`` CLI.
"""

from .core import (Dataset, DatasetError, EventImage, PersonInstance,
                   load_dataset, save_dataset, split_dataset, strip_labels)
from .model import (ForwardTape, ModelError, OptimizerState, RelationModel,
                    encode_persons, forward, gradients, importance_probs,
                    init_model, init_optimizer, load_model, n_params,
                    save_model, sgd_step)
from .pseudolabel import (PseudoLabelAssignment, PseudoLabelError,
                          assign_pseudo_labels, importance_scores,
                          rank_and_label, write_pseudo_label_audit)
from .weighting import (UnlabelledWeights, WeightingError,
                        effectiveness_weight, importance_score_weights,
                        write_ew_audit)
from .loss import (LossBreakdown, LossError, labelled_loss, labelled_loss_grad,
                   lambda_schedule, learning_rate, sample_labelled, total_loss,
                   unlabelled_loss, unlabelled_loss_grad)
from .baselines import (SCORE_SOURCES, BaselineError, TeacherState, ema_update,
                        lp_scores, mt_loss, pl_labels, pluggable_score_source,
                        uniform_person_sample)
from .metrics import (EvaluationReport, MetricsError, average_precision, cmc,
                      evaluate, mean_ap, pseudo_label_histogram,
                      write_evaluation_report)
from .synthgen import (SynthError, SynthSpec, generate, read_noise_flags,
                       write_noise_flags, write_synth)
from .trainer import (METHODS, AblationCell, EpochRecord, TrainError,
                      TrainingConfig, TrainingHistory, apply_overrides,
                      parse_config, run_ablation, train, write_ablation_csv,
                      write_ablation_runs_csv, write_config, write_history_csv)
from .seeding import derive_rng

__version__ = "0.1.0"

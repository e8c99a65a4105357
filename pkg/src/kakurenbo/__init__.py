"""kakurenbo: a sample-hiding training laboratory.

Small, fully deterministic stochastic-optimization testbed built around
adaptive sample hiding: each epoch the lowest-loss samples are hidden from
the gradient passes (unless their lagging prediction is not confidently
correct), the learning rate is rescaled by 1/(1 - F_e) to compensate, and
the hidden samples get a forward-only refresh so their statistics never go
stale.  Comparator strategies (loss-proportional resampling, selective
backprop, forgetting-count pruning) and a Monte-Carlo verifier for the
method's convergence bound round out the lab.
"""

from .comparators import (ForgetState, IswrState, PhaseError, SbState,
                          forget_prune, forget_update, iswr_draw, sb_select)
from .data import (CountMismatch, Dataset, IndexOutOfRange, MagicMismatch,
                   NonNumericCell, RaggedRow, SampleState, SampleStore,
                   TruncatedFile, UnknownLabelColumn, UnsupportedCombination,
                   gen_synthetic, load_csv, load_idx)
from .hiding import (EpochPlan, HidingConfig, StoreNotPopulated, dump_plan,
                     fraction_at, grad_norm_ratio, load_plan, refresh_hidden,
                     select_hidden, steps_per_epoch)
from .harness import (ComparisonResult, DatasetConfig, LemmaConfig,
                      LemmaReport, MetricsRecord, ModelConfig,
                      PreconditionViolated, RunConfig, RunResult, compare,
                      default_lemma_grid, run_epoch, run_experiment,
                      verify_lemma)
from .model import (DimMismatch, Model, backward, forward, forward_backward,
                    grad_check, init_model, load_checkpoint, save_checkpoint)
from .optim import (FractionTooLarge, NonFiniteGradient, OptimConfig,
                    SgdState, adjusted_lr, base_lr_at, sgd_step)
from .rng import Xoshiro256StarStar, splitmix64

__version__ = "0.1.0"

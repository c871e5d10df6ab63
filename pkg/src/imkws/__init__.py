"""Imbalance-aware test-time adaptation for streaming keyword classification."""

from .adapt import METHODS, AdaptConfig, AdaptTrace, OnlineAdapter, adapt_stream
from .augment import MaskPolicy, freq_mask, make_views, time_mask
from .gradcheck import run_gradcheck
from .losses import (
    DemParams,
    WeightParams,
    consistency_grad,
    consistency_loss,
    dem_grad,
    dem_loss,
    penalty_term,
    pkc_score,
    reward_term,
    sample_weight,
    sce_loss,
    total_loss,
)
from .metrics import EvalReport, confusion_matrix, evaluate_predictions, f1_scores
from .model import NormPoolClassifier, load_checkpoint, save_checkpoint, sgd_step, update_bn_stats
from .numerics import entropy, log_sum_exp, softmax
from .select import SelectionOutcome, SelectionThresholds, select_batch
from .stream import (
    StreamBatch,
    StreamConfig,
    generate_stream,
    load_feature_csv,
    make_class_templates,
    mix_noise_at_snr,
    save_feature_csv,
)

__version__ = "0.1.0"

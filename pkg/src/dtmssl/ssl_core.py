"""Semi-supervised training loop: labeled branch, dual-view pseudo-labels,
per-class confidence gating and the weighted two-term objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dtmssl import dtm
from dtmssl.dataflow import AugmentConfig, Dataset, balanced_indices, strong_augment, weak_augment
from dtmssl.errors import ConfigError
from dtmssl.metrics import MetricsReport, evaluate
from dtmssl.postprocess import smooth
from dtmssl.tinynet import (
    AdamState,
    ModelParams,
    adam_step,
    backward,
    backward_logits,
    cross_entropy,
    ema_update,
    forward,
    init_params,
    one_hot,
    predict_proba,
)

UNLABELED_TARGETS = ("strong_view", "averaged")
THRESHOLD_MODES = ("dtm", "fixed")


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 0.8
    labeled_batch: int = 32
    unlabeled_batch: int = 32
    steps_per_epoch: int = 200
    epochs: int = 15
    mu: float = 0.9
    ema_decay: float = 0.999
    seed: int = 0
    lr: float = 5e-4
    hidden: int = 32
    labeled_per_class: int = 50
    unlabeled_loss_target: str = "strong_view"
    use_unlabeled: bool = True
    threshold_mode: str = "dtm"
    fixed_threshold: float = 0.95
    smoothing_window: int = 0  # 0 disables post-processing at evaluation

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative")
        if not (0.0 <= self.mu <= 1.0 and 0.0 <= self.ema_decay <= 1.0):
            raise ConfigError("mu and ema_decay must lie in [0, 1]")
        if not 0.0 <= self.fixed_threshold <= 1.0:
            raise ConfigError("fixed_threshold must lie in [0, 1]")
        if min(self.labeled_batch, self.unlabeled_batch, self.hidden, self.labeled_per_class) < 1:
            raise ConfigError("batch sizes, hidden width and labeled_per_class must be >= 1")
        if self.steps_per_epoch < 0 or self.epochs < 0 or self.smoothing_window < 0:
            raise ConfigError("steps_per_epoch, epochs and smoothing_window must be >= 0")
        if self.unlabeled_loss_target not in UNLABELED_TARGETS:
            raise ConfigError(f"unlabeled_loss_target must be one of {UNLABELED_TARGETS}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"threshold_mode must be one of {THRESHOLD_MODES}")


@dataclass
class LossBreakdown:
    labeled_loss: float
    unlabeled_loss: float
    total: float


@dataclass
class PseudoLabelBatch:
    weak_inputs: np.ndarray
    strong_inputs: np.ndarray
    weak_probs: np.ndarray
    strong_probs: np.ndarray
    averaged: np.ndarray
    pseudo_label: np.ndarray
    confidence: np.ndarray
    accepted: np.ndarray

    def __len__(self) -> int:
        return self.pseudo_label.shape[0]


def predict_labeled(student: ModelParams, features: np.ndarray, aug: AugmentConfig, rng: np.random.Generator):
    """Weakly augment an already balanced labeled batch and classify it.

    Returns ``(probs, augmented_inputs)``.
    """
    x = weak_augment(features, aug, rng)
    return predict_proba(student, x), x


def gate(averaged: np.ndarray, tau: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pseudo-label, confidence and acceptance mask for averaged distributions."""
    label = averaged.argmax(axis=1)
    conf = averaged[np.arange(averaged.shape[0]), label]
    return label, conf, conf >= tau[label]


def pseudo_label_from_probs(weak_probs, strong_probs, tau, weak_inputs=None, strong_inputs=None) -> PseudoLabelBatch:
    averaged = 0.5 * (weak_probs + strong_probs)
    label, conf, ok = gate(averaged, np.asarray(tau, dtype=np.float64))
    return PseudoLabelBatch(weak_inputs, strong_inputs, weak_probs, strong_probs, averaged, label, conf, ok)


def pseudo_label(student: ModelParams, features: np.ndarray, thresholds: dtm.ThresholdState,
                 aug: AugmentConfig, rng: np.random.Generator) -> PseudoLabelBatch:
    xw = weak_augment(features, aug, rng)
    xs = strong_augment(features, aug, rng)
    return pseudo_label_from_probs(predict_proba(student, xw), predict_proba(student, xs), thresholds.tau, xw, xs)


def unlabeled_loss(pseudo: PseudoLabelBatch, target: str = "strong_view") -> float:
    """Cross-entropy over accepted samples only; 0 when none are accepted."""
    ok = pseudo.accepted
    if not ok.any():
        return 0.0
    k = pseudo.averaged.shape[1]
    probs = pseudo.strong_probs if target == "strong_view" else pseudo.averaged
    return cross_entropy(probs[ok], one_hot(pseudo.pseudo_label[ok], k))


def combined_loss(p_l: np.ndarray, y_l: np.ndarray, pseudo: PseudoLabelBatch | None, config: TrainConfig) -> LossBreakdown:
    k = p_l.shape[1]
    l_l = cross_entropy(p_l, one_hot(y_l, k))
    l_u = 0.0 if pseudo is None else unlabeled_loss(pseudo, config.unlabeled_loss_target)
    return LossBreakdown(l_l, l_u, config.lambda1 * l_l + config.lambda2 * l_u)


def unlabeled_gradients(student: ModelParams, pseudo: PseudoLabelBatch, target: str = "strong_view") -> ModelParams:
    """Gradient of the unlabeled loss with pseudo-labels held fixed.

    ``strong_view`` differentiates only the strong-view predictions;
    ``averaged`` differentiates through both views and their mean.
    Rejected rows get exactly zero upstream gradient.
    """
    ok = pseudo.accepted
    n_acc = int(ok.sum())
    if n_acc == 0:
        return ModelParams.zeros_like(student)
    k = student.num_classes
    y = one_hot(pseudo.pseudo_label, k)
    w = np.where(ok, 1.0 / n_acc, 0.0)[:, None]
    if target == "strong_view":
        ps = predict_proba(student, pseudo.strong_inputs)
        return backward_logits(student, pseudo.strong_inputs, (ps - y) * w)
    pw = predict_proba(student, pseudo.weak_inputs)
    ps = predict_proba(student, pseudo.strong_inputs)
    pbar = 0.5 * (pw + ps)
    # d(-log pbar_y)/dpbar, then through each view's softmax Jacobian
    g = -y / np.maximum(pbar, 1e-12) * w
    dzw = 0.5 * pw * (g - (g * pw).sum(axis=1, keepdims=True))
    dzs = 0.5 * ps * (g - (g * ps).sum(axis=1, keepdims=True))
    gw = backward_logits(student, pseudo.weak_inputs, dzw)
    gs = backward_logits(student, pseudo.strong_inputs, dzs)
    return gw.map(np.add, gs)


@dataclass
class TrainState:
    student: ModelParams
    teacher: ModelParams
    adam: AdamState
    thresholds: dtm.ThresholdState
    rngs: dict[str, np.random.Generator] = field(repr=False)


@dataclass
class Pools:
    labeled: Dataset
    unlabeled: Dataset
    heldout: Dataset
    augment: AugmentConfig = AugmentConfig()


@dataclass
class EpochReport:
    epoch: int
    losses: LossBreakdown
    accepted_fraction: float
    accepted_per_class: list[int]
    thresholds: list[float]
    heldout_macro_f1: float
    pseudo_label_accuracy: float
    steps: int


RNG_STREAMS = ("init", "labeled", "labeled_aug", "unlabeled", "unlabeled_aug", "dtm_pool")


def init_state(config: TrainConfig, d: int, k: int) -> TrainState:
    seqs = np.random.SeedSequence(config.seed).spawn(len(RNG_STREAMS))
    rngs = {name: np.random.default_rng(s) for name, s in zip(RNG_STREAMS, seqs)}
    student = init_params(d, config.hidden, k, rngs["init"])
    if config.threshold_mode == "fixed":
        thr = dtm.ThresholdState.fixed(k, config.fixed_threshold)
    else:
        thr = dtm.ThresholdState.initial(k, config.mu)
    return TrainState(student, student.copy(), AdamState.for_params(student, lr=config.lr), thr, rngs)


def heldout_predictions(params: ModelParams, heldout: Dataset, window: int = 0) -> np.ndarray:
    preds = forward(params, heldout.features).argmax(axis=1)
    if window:
        preds = smooth(preds, window, heldout.segment_ids, heldout.class_count)
    return preds


def dtm_pool(labeled: Dataset, config: TrainConfig, rng: np.random.Generator) -> Dataset:
    """Balanced labeled pool the teacher is scored on at the end of each epoch."""
    return labeled.subset(balanced_indices(labeled.labels, labeled.class_count, config.labeled_per_class, rng))


def train_epoch(state: TrainState, pools: Pools, config: TrainConfig, epoch: int = 0,
                threshold_pool: Dataset | None = None) -> tuple[TrainState, EpochReport]:
    labeled, unlabeled = pools.labeled, pools.unlabeled
    if len(labeled) == 0 or len(unlabeled) == 0:
        raise ConfigError("labeled and unlabeled pools must be non-empty")
    k = labeled.class_count
    per_class = max(1, config.labeled_batch // k)
    rngs = state.rngs
    student, teacher, adam = state.student, state.teacher, state.adam
    thresholds = state.thresholds

    sum_l = sum_u = sum_t = 0.0
    n_seen = n_acc = n_correct = 0
    acc_per_class = np.zeros(k, dtype=np.int64)
    for _ in range(config.steps_per_epoch):
        idx = balanced_indices(labeled.labels, k, per_class, rngs["labeled"])
        y_l = labeled.labels[idx]
        p_l, x_l = predict_labeled(student, labeled.features[idx], pools.augment, rngs["labeled_aug"])
        grads = backward(student, x_l, one_hot(y_l, k))
        pseudo = None
        if config.use_unlabeled:
            u_idx = rngs["unlabeled"].integers(0, len(unlabeled), size=config.unlabeled_batch)
            pseudo = pseudo_label(student, unlabeled.features[u_idx], thresholds, pools.augment, rngs["unlabeled_aug"])
            g_u = unlabeled_gradients(student, pseudo, config.unlabeled_loss_target)
            grads = grads.map(lambda a, b: config.lambda1 * a + config.lambda2 * b, g_u)
            n_seen += len(pseudo)
            n_acc += int(pseudo.accepted.sum())
            acc_per_class += np.bincount(pseudo.pseudo_label[pseudo.accepted], minlength=k)
            if unlabeled.hidden_labels is not None:
                truth = unlabeled.hidden_labels[u_idx]
                n_correct += int((pseudo.pseudo_label == truth)[pseudo.accepted].sum())
        else:
            grads = grads.map(lambda a: config.lambda1 * a)
        losses = combined_loss(p_l, y_l, pseudo, config)
        sum_l += losses.labeled_loss
        sum_u += losses.unlabeled_loss
        sum_t += losses.total
        student, adam = adam_step(student, grads, adam)
        teacher = ema_update(teacher, student, config.ema_decay)

    if config.threshold_mode == "dtm":
        pool = threshold_pool if threshold_pool is not None else dtm_pool(labeled, config, rngs["dtm_pool"])
        stats = dtm.class_confidences(dtm.teacher_predict(teacher, pool.features), pool.labels)
        thresholds = dtm.update_thresholds(thresholds, stats)
    else:
        thresholds = dtm.ThresholdState(thresholds.tau.copy(), thresholds.mu, thresholds.epoch + 1)

    steps = config.steps_per_epoch
    mean = (lambda s: s / steps) if steps else (lambda s: 0.0)
    preds = heldout_predictions(student, pools.heldout, config.smoothing_window)
    report = EpochReport(
        epoch=epoch,
        losses=LossBreakdown(mean(sum_l), mean(sum_u), mean(sum_t)),
        accepted_fraction=n_acc / n_seen if n_seen else 0.0,
        accepted_per_class=[int(c) for c in acc_per_class],
        thresholds=[float(t) for t in thresholds.tau],
        heldout_macro_f1=evaluate(preds, pools.heldout.labels, k).macro_f1,
        pseudo_label_accuracy=n_correct / n_acc if n_acc else 0.0,
        steps=steps,
    )
    return TrainState(student, teacher, adam, thresholds, rngs), report


@dataclass
class RunResult:
    state: TrainState
    reports: list[EpochReport]
    threshold_history: list[np.ndarray]
    final_metrics: MetricsReport
    final_predictions: np.ndarray


def train_run(config: TrainConfig, pools: Pools) -> RunResult:
    """Train for ``config.epochs`` epochs and evaluate the student on the held-out set."""
    k = pools.labeled.class_count
    state = init_state(config, pools.labeled.features.shape[1], k)
    pool = dtm_pool(pools.labeled, config, state.rngs["dtm_pool"])
    reports, history = [], [state.thresholds.tau.copy()]
    for epoch in range(config.epochs):
        state, rep = train_epoch(state, pools, config, epoch + 1, threshold_pool=pool)
        reports.append(rep)
        history.append(state.thresholds.tau.copy())
    preds = heldout_predictions(state.student, pools.heldout, config.smoothing_window)
    return RunResult(state, reports, history, evaluate(preds, pools.heldout.labels, k), preds)


"""Two-layer ReLU classifier with an analytic backward pass, Adam and EMA.

All tensors are float64 numpy arrays. Biases are stored as ``(1, width)`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from dtmssl.errors import DimensionError

LOG_FLOOR = 1e-12


@dataclass
class ModelParams:
    W1: np.ndarray  # (d, h)
    b1: np.ndarray  # (1, h)
    W2: np.ndarray  # (h, K)
    b2: np.ndarray  # (1, K)

    def __post_init__(self):
        d, h = self.W1.shape
        if self.b1.shape != (1, h) or self.W2.shape[0] != h:
            raise DimensionError(f"inconsistent hidden width: W1 {self.W1.shape}, b1 {self.b1.shape}, W2 {self.W2.shape}")
        if self.b2.shape != (1, self.W2.shape[1]):
            raise DimensionError(f"b2 shape {self.b2.shape} does not match W2 {self.W2.shape}")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.W2.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def map(self, fn, *others: "ModelParams") -> "ModelParams":
        """Apply ``fn`` field-wise across this and ``others``."""
        names = [f.name for f in fields(self)]
        return ModelParams(**{n: fn(getattr(self, n), *(getattr(o, n) for o in others)) for n in names})

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    @classmethod
    def zeros(cls, d: int, h: int, k: int) -> "ModelParams":
        return cls(np.zeros((d, h)), np.zeros((1, h)), np.zeros((h, k)), np.zeros((1, k)))

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return other.map(np.zeros_like)


def init_params(d: int, h: int, k: int, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    lim1 = np.sqrt(6.0 / (d + h))
    lim2 = np.sqrt(6.0 / (h + k))
    W1 = rng.uniform(-lim1, lim1, size=(d, h))
    W2 = rng.uniform(-lim2, lim2, size=(h, k))
    return ModelParams(W1, np.zeros((1, h)), W2, np.zeros((1, k)))


def _check_inputs(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.input_dim:
        raise DimensionError(f"inputs of shape {inputs.shape} do not match input dim {params.input_dim}")
    return inputs


def _hidden(params: ModelParams, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pre = inputs @ params.W1 + params.b1
    return pre, np.maximum(pre, 0.0)


def forward(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Return the ``(n, K)`` logits for a batch of inputs."""
    inputs = _check_inputs(params, inputs)
    _, act = _hidden(params, inputs)
    return act @ params.W2 + params.b2


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    return softmax(forward(params, inputs))


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Batch-mean of ``-sum(y * log(p))`` with probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape or probs.ndim != 2:
        raise DimensionError(f"probs {probs.shape} vs targets {targets.shape}")
    if probs.shape[0] == 0:
        return 0.0
    per_sample = -(targets * np.log(np.maximum(probs, LOG_FLOOR))).sum(axis=1)
    return float(per_sample.mean())


def backward_logits(params: ModelParams, inputs: np.ndarray, dlogits: np.ndarray) -> ModelParams:
    """Backpropagate an upstream gradient on the logits to every parameter.

    ReLU's subgradient at zero is taken as zero.
    """
    inputs = _check_inputs(params, inputs)
    if dlogits.shape != (inputs.shape[0], params.num_classes):
        raise DimensionError(f"dlogits {dlogits.shape} vs batch {inputs.shape[0]} x {params.num_classes}")
    pre, act = _hidden(params, inputs)
    gW2 = act.T @ dlogits
    gb2 = dlogits.sum(axis=0, keepdims=True)
    dpre = (dlogits @ params.W2.T) * (pre > 0.0)
    gW1 = inputs.T @ dpre
    gb1 = dpre.sum(axis=0, keepdims=True)
    return ModelParams(gW1, gb1, gW2, gb2)


def backward(params: ModelParams, inputs: np.ndarray, targets: np.ndarray, weights: np.ndarray | None = None) -> ModelParams:
    """Gradient of cross-entropy w.r.t. all parameters.

    With ``weights=None`` the loss is the batch mean; otherwise it is
    ``sum_i weights[i] * CE_i``.
    """
    inputs = _check_inputs(params, inputs)
    targets = np.asarray(targets, dtype=np.float64)
    n = inputs.shape[0]
    if targets.shape != (n, params.num_classes):
        raise DimensionError(f"targets {targets.shape} vs batch {n} x {params.num_classes}")
    if weights is None:
        weights = np.full(n, 1.0 / n) if n else np.zeros(0)
    probs = predict_proba(params, inputs)
    return backward_logits(params, inputs, (probs - targets) * weights[:, None])


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    step: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, **kwargs) -> "AdamState":
        return cls(ModelParams.zeros_like(params), ModelParams.zeros_like(params), **kwargs)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    for p, g in zip(params.arrays(), grads.arrays()):
        if p.shape != g.shape:
            raise DimensionError(f"grad shape {g.shape} vs param {p.shape}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m = state.m.map(lambda m_, g: b1 * m_ + (1.0 - b1) * g, grads)
    v = state.v.map(lambda v_, g: b2 * v_ + (1.0 - b2) * g * g, grads)
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new = params.map(lambda p, m_, v_: p - state.lr * (m_ / c1) / (np.sqrt(v_ / c2) + state.eps), m, v)
    return new, AdamState(m, v, t, state.lr, b1, b2, state.eps)


def ema_update(teacher: ModelParams, student: ModelParams, decay: float) -> ModelParams:
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    for a, b in zip(teacher.arrays(), student.arrays()):
        if a.shape != b.shape:
            raise DimensionError(f"teacher {a.shape} vs student {b.shape}")
    return teacher.map(lambda t, s: decay * t + (1.0 - decay) * s, student)

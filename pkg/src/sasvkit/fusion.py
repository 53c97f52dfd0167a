"""Back-end fusion of ASV and CM subsystems.

* B1: cosine ASV score plus the raw bona fide CM logit.
* B1-v2: cosine ASV score plus the softmax bona fide probability.
* B2: an MLP over ``[enroll_spk | test_spk | test_cm]`` with leaky-ReLU hidden
  layers and a two-unit output (unit 0 = target, unit 1 = non-target).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from sasvkit.protocol import TrialClass

MODEL_MAGIC = b"SASVMLP1"
MODEL_VERSION = 1

DEFAULT_HIDDEN = (256, 128, 64)
DEFAULT_SLOPE = 0.01
MOMENTUM = 0.9

_F32 = np.dtype("<f4")


class FusionError(ValueError):
    pass


class ModelFormatError(FusionError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SubsystemScores:
    asv: float
    cm_logits: tuple[float, float]

    def __post_init__(self):
        if not -1.0 <= self.asv <= 1.0:
            raise FusionError(f"ASV score {self.asv} outside [-1, 1]")
        if len(self.cm_logits) != 2 or not all(math.isfinite(v) for v in self.cm_logits):
            raise FusionError(f"CM logits must be two finite reals, got {self.cm_logits}")


def score_b1(s: SubsystemScores) -> float:
    return s.asv + s.cm_logits[0]


def softmax_bonafide(logits: Sequence[float]) -> float:
    """Bona fide posterior ``exp(l0) / (exp(l0) + exp(l1))``, overflow-safe."""
    l0, l1 = float(logits[0]), float(logits[1])
    m = max(l0, l1)
    e0, e1 = math.exp(l0 - m), math.exp(l1 - m)
    return e0 / (e0 + e1)


def score_b1v2(s: SubsystemScores) -> float:
    return s.asv + softmax_bonafide(s.cm_logits)


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class MlpFusionModel:
    """B2 fusion network.

    ``weights[k]`` has shape ``(fan_in, fan_out)``. Parameters are stored as
    float32, the model-file precision; all arithmetic runs in float64.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise FusionError("need matching weight/bias lists with at least one hidden layer")
        self.weights = [np.array(w, dtype=_F32) for w in self.weights]
        self.biases = [np.array(b, dtype=_F32).reshape(-1) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape[0] != w.shape[1]:
                raise FusionError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and w.shape[0] != self.weights[k - 1].shape[1]:
                raise FusionError(f"layer {k}: fan-in {w.shape[0]} does not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise FusionError(f"layer {k}: non-finite parameters")
        if self.weights[-1].shape[1] != 2:
            raise FusionError("output layer must have exactly 2 units")
        self.slope = float(np.float32(self.slope))

    @classmethod
    def init(cls, input_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN,
             slope: float = DEFAULT_SLOPE, seed: int = 0) -> "MlpFusionModel":
        """Glorot-uniform weights and zero biases from a seeded generator."""
        rng = np.random.default_rng(seed)
        sizes = [int(input_dim), *map(int, hidden), 2]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, slope)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def params64(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return ([w.astype(np.float64) for w in self.weights],
                [b.astype(np.float64) for b in self.biases])

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise FusionError(f"input dimension {x.shape[1]} != model input {self.input_dim}")
        ws, bs = self.params64()
        return _forward(ws, bs, self.slope, x)[-1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Target-class posterior for each row of ``x``."""
        return _softmax_rows(self.logits(x))[:, 0]

    def same_params(self, other: "MlpFusionModel") -> bool:
        return (self.slope == other.slope and len(self.weights) == len(other.weights)
                and all(a.shape == b.shape and a.tobytes() == b.tobytes()
                        for a, b in zip(self.weights + self.biases, other.weights + other.biases)))


def _forward(ws, bs, slope, x):
    """Return pre-activations of every layer; the last entry is the logits."""
    zs = []
    h = x
    for k, (w, b) in enumerate(zip(ws, bs)):
        z = h @ w + b
        zs.append(z)
        if k < len(ws) - 1:
            h = _leaky(z, slope)
    return zs


def loss_and_grads(ws, bs, slope, x, target_idx, sample_weight=None):
    """Weighted mean softmax cross-entropy and its parameter gradients.

    ``target_idx`` holds the class index per row (0 = target, 1 = non-target).
    """
    n = x.shape[0]
    zs = _forward(ws, bs, slope, x)
    logits = zs[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    nll = logsum - shifted[np.arange(n), target_idx]
    if sample_weight is None:
        sw = np.full(n, 1.0 / n)
    else:
        sw = np.asarray(sample_weight, dtype=np.float64)
        sw = sw / sw.sum()
    loss = float(np.dot(sw, nll))

    delta = np.exp(shifted - logsum[:, None])
    delta[np.arange(n), target_idx] -= 1.0
    delta *= sw[:, None]

    gws, gbs = [None] * len(ws), [None] * len(ws)
    for k in range(len(ws) - 1, -1, -1):
        h_in = x if k == 0 else _leaky(zs[k - 1], slope)
        gws[k] = h_in.T @ delta
        gbs[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ ws[k].T) * np.where(zs[k - 1] > 0, 1.0, slope)
    return loss, gws, gbs


def fusion_input(enroll_spk, test_spk, test_cm) -> np.ndarray:
    return np.concatenate([np.asarray(enroll_spk, dtype=np.float64).reshape(-1),
                           np.asarray(test_spk, dtype=np.float64).reshape(-1),
                           np.asarray(test_cm, dtype=np.float64).reshape(-1)])


def mlp_forward(model: MlpFusionModel, enroll_spk, test_spk, test_cm) -> tuple[tuple[float, float], float]:
    """Logits and SASV score (target posterior) for one trial."""
    x = fusion_input(enroll_spk, test_spk, test_cm)
    z = model.logits(x)
    p = _softmax_rows(z)[0, 0]
    return (float(z[0, 0]), float(z[0, 1])), float(p)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 40
    seed: int = 0
    weight_decay: float = 0.0
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    slope: float = DEFAULT_SLOPE
    class_weights: tuple[float, float] | None = None  # (target, non-target)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise FusionError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise FusionError("batch size must be >= 1")
        if self.epochs < 1:
            raise FusionError("epochs must be >= 1")
        if self.weight_decay < 0:
            raise FusionError("weight decay must be non-negative")
        if self.class_weights is not None and (
                len(self.class_weights) != 2 or min(self.class_weights) <= 0):
            raise FusionError("class weights must be two positive reals")


def _is_target(label) -> bool:
    if isinstance(label, TrialClass):
        return label is TrialClass.TARGET
    if isinstance(label, str):
        return label == TrialClass.TARGET.value
    return bool(label)


@dataclass
class TrainResult:
    model: MlpFusionModel
    losses: list[float] = field(default_factory=list)

    def __iter__(self):
        return iter((self.model, self.losses))


def mlp_train(data, cfg: TrainConfig = TrainConfig(), init: MlpFusionModel | None = None) -> TrainResult:
    """Mini-batch SGD (momentum 0.9) on softmax cross-entropy.

    ``data`` is a sequence of ``(enroll_spk, test_spk, test_cm, label)`` where
    ``label`` is a ``TrialClass``, ``"target"``-style string, or bool
    (True = target). Spoofed and bona fide non-targets share class 1.
    The loss trace holds the full-data loss after every epoch.
    """
    if not data:
        raise FusionError("no training data")
    x = np.stack([fusion_input(e, t, c) for e, t, c, _ in data])
    target_idx = np.array([0 if _is_target(lab) else 1 for *_, lab in data])
    if len(np.unique(target_idx)) < 2:
        raise FusionError("training data must contain both target and non-target trials")

    model = init or MlpFusionModel.init(x.shape[1], cfg.hidden, cfg.slope, seed=cfg.seed)
    if model.input_dim != x.shape[1]:
        raise FusionError(f"model input {model.input_dim} != data dimension {x.shape[1]}")
    if cfg.class_weights is None:
        weights_all = None
    else:
        weights_all = np.asarray(cfg.class_weights, dtype=np.float64)[target_idx]

    ws, bs = model.params64()
    vws = [np.zeros_like(w) for w in ws]
    vbs = [np.zeros_like(b) for b in bs]
    # shuffling stream is separate from initialisation so that init= does not shift it
    rng = np.random.default_rng([cfg.seed, 1])
    n = x.shape[0]
    losses = []
    # divergence is reported through the loss check below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                sw = None if weights_all is None else weights_all[idx]
                loss, gws, gbs = loss_and_grads(ws, bs, model.slope, x[idx], target_idx[idx], sw)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss {loss} at epoch {epoch + 1}, batch starting {start}; "
                        f"try a smaller learning rate (currently {cfg.learning_rate})")
                for k in range(len(ws)):
                    gws[k] = gws[k] + cfg.weight_decay * ws[k]
                    vws[k] = MOMENTUM * vws[k] + gws[k]
                    vbs[k] = MOMENTUM * vbs[k] + gbs[k]
                    ws[k] = ws[k] - cfg.learning_rate * vws[k]
                    bs[k] = bs[k] - cfg.learning_rate * vbs[k]
            epoch_loss, _, _ = loss_and_grads(ws, bs, model.slope, x, target_idx, weights_all)
            if not math.isfinite(epoch_loss):
                raise TrainingDivergedError(f"non-finite loss {epoch_loss} after epoch {epoch + 1}")
            losses.append(epoch_loss)
    return TrainResult(MlpFusionModel(ws, bs, model.slope), losses)


def save_model(model: MlpFusionModel) -> bytes:
    """Serialise: magic, version byte, uint32 layer count, then per layer
    uint32 rows (fan-in), uint32 cols (fan-out), float32 weights row-major,
    float32 biases; finally the float32 leaky-ReLU slope."""
    parts = [MODEL_MAGIC, struct.pack("<BI", MODEL_VERSION, len(model.weights))]
    for w, b in zip(model.weights, model.biases):
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype=_F32).tobytes())
        parts.append(b.astype(_F32).tobytes())
    parts.append(struct.pack("<f", model.slope))
    return b"".join(parts)


def load_model(data: bytes) -> MlpFusionModel:
    data = bytes(data)
    if data[:8] != MODEL_MAGIC:
        raise ModelFormatError(f"bad model magic {data[:8]!r}")
    pos = 8

    def take(nbytes: int) -> int:
        nonlocal pos
        if pos + nbytes > len(data):
            raise ModelFormatError(f"model file truncated at offset {pos}")
        start, pos = pos, pos + nbytes
        return start

    version, n_layers = struct.unpack_from("<BI", data, take(5))
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    if n_layers < 2:
        raise ModelFormatError(f"model needs at least 2 layers, file has {n_layers}")
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = struct.unpack_from("<II", data, take(8))
        weights.append(np.frombuffer(data, _F32, rows * cols, take(4 * rows * cols)).reshape(rows, cols))
        biases.append(np.frombuffer(data, _F32, cols, take(4 * cols)))
    (slope,) = struct.unpack_from("<f", data, take(4))
    if pos != len(data):
        raise ModelFormatError(f"{len(data) - pos} trailing bytes after model")
    try:
        return MlpFusionModel(weights, biases, slope)
    except FusionError as exc:
        raise ModelFormatError(f"inconsistent model: {exc}") from None

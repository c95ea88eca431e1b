"""Shallow-deep neural network: 2-3 ReLU hidden layers of odd-prime width.

Everything is plain float64 numpy. A network's parameters are a list of
``Layer(weights, bias)`` with ``weights`` shaped ``(fan_out, fan_in)``, so
``h_next = relu(weights @ h + bias)`` and the last layer is followed by a
sigmoid.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

from ._util import check_seed
from .cohort import FEATURES, StandardizationParams, fit_standardizer
from .errors import DataError, ModelFormatError, NumericError
from .metrics import ScoredSet

FORMAT_VERSION = 1
DEFAULT_WIDTHS = (17, 5, 23)
PROB_CLIP = 1e-12
# largest double below 1; keeps sigmoid outputs inside the open interval
_ONE_MINUS = float(np.nextafter(1.0, 0.0))
_TINY = float(np.finfo(np.float64).tiny)


def is_odd_prime(k):
    if k < 3 or k % 2 == 0:
        return False
    return all(k % d for d in range(3, math.isqrt(k) + 1, 2))


@dataclass(frozen=True)
class Architecture:
    hidden_widths: tuple = DEFAULT_WIDTHS
    input_dim: int = len(FEATURES)
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))

    @property
    def dims(self):
        return (self.input_dim, *self.hidden_widths, self.output_dim)


class Verdict(NamedTuple):
    valid: bool
    reasons: tuple

    def __bool__(self):
        return self.valid


def validate_architecture(arch):
    reasons = []
    if len(arch.hidden_widths) not in (2, 3):
        reasons.append(f"{len(arch.hidden_widths)} hidden layers; 2 or 3 required")
    for w in arch.hidden_widths:
        if w == 2:
            reasons.append("2 is not odd")
        elif not is_odd_prime(w):
            reasons.append(f"{w} is not prime" if w % 2 else f"{w} is not odd")
    if arch.input_dim < 1:
        reasons.append("input_dim must be positive")
    if arch.output_dim != 1:
        reasons.append("output_dim must be 1")
    return Verdict(not reasons, tuple(reasons))


def _require_valid(arch):
    verdict = validate_architecture(arch)
    if not verdict:
        raise ValueError("invalid s-DNN architecture: " + "; ".join(verdict.reasons))


def count_parameters(arch):
    _require_valid(arch)
    d = arch.dims
    return sum((d[i] + 1) * d[i + 1] for i in range(len(d) - 1))


class Layer(NamedTuple):
    weights: np.ndarray
    bias: np.ndarray


def init_params(arch, seed):
    """Glorot-uniform weights, zero biases."""
    _require_valid(arch)
    rng = np.random.default_rng(check_seed(seed))
    d = arch.dims
    layers = []
    for fan_in, fan_out in zip(d[:-1], d[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(rng.uniform(-limit, limit, (fan_out, fan_in)), np.zeros(fan_out)))
    return layers


def zero_params(arch):
    d = arch.dims
    return [Layer(np.zeros((o, i)), np.zeros(o)) for i, o in zip(d[:-1], d[1:])]


def n_scalars(params):
    return sum(l.weights.size + l.bias.size for l in params)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    p = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(p, _TINY, _ONE_MINUS)


def _check_shapes(params, x):
    if x.shape[-1] != params[0].weights.shape[1]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params[0].weights.shape[1]}")


def _forward_trace(params, x):
    """Pre-activations of every layer and the hidden activations."""
    acts = [x]
    pre = []
    for i, layer in enumerate(params):
        z = acts[-1] @ layer.weights.T + layer.bias
        pre.append(z)
        if i < len(params) - 1:
            acts.append(np.maximum(z, 0.0))
    return pre, acts


def forward(params, x):
    """Positive-class probability for one input vector or a ``(n, d)`` batch."""
    x = np.asarray(x, dtype=np.float64)
    _check_shapes(params, x)
    single = x.ndim == 1
    pre, _ = _forward_trace(params, np.atleast_2d(x))
    p = sigmoid(pre[-1][:, 0])
    return float(p[0]) if single else p


def _sample_weights(labels, class_weights):
    labels = np.asarray(labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be 0 or 1")
    w_neg, w_pos = class_weights
    return np.where(labels == 1, float(w_pos), float(w_neg))


def weighted_bce_loss(probs, labels, class_weights=(1.0, 1.0)):
    """Class-weighted mean binary cross-entropy.

    ``sum_i w_i * bce_i / sum_i w_i``; probabilities are clipped to
    ``[1e-12, 1 - 1e-12]`` before the logarithm.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise DataError(f"{probs.size} probabilities for {labels.size} labels")
    w = _sample_weights(labels, class_weights)
    p = np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    losses = -(labels * np.log(p) + (1 - labels) * np.log1p(-p))
    return float(np.sum(w * losses) / np.sum(w))


def balanced_weights(labels):
    """Inverse-frequency weights ``n / (2 n_c)`` as ``(w_neg, w_pos)``."""
    labels = np.asarray(labels)
    n = labels.size
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("single-class cohort")
    return n / (2.0 * n_neg), n / (2.0 * n_pos)


def gradient(params, x, labels, class_weights=(1.0, 1.0)):
    """Backpropagated gradient of :func:`weighted_bce_loss` of the network.

    Returns a list of ``Layer`` holding d loss / d weights and d loss / d bias.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if x.shape[0] == 0:
        raise DataError("empty batch")
    _check_shapes(params, x)
    w = _sample_weights(labels, class_weights)
    pre, acts = _forward_trace(params, x)
    p = sigmoid(pre[-1][:, 0])
    # the loss clips p, so its derivative vanishes where clipping is active
    live = (p > PROB_CLIP) & (p < 1.0 - PROB_CLIP)
    delta = (w * (p - labels) * live / w.sum())[:, None]
    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        grads[i] = Layer(delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ params[i].weights) * (pre[i - 1] > 0)
    return grads


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: Union[int, str] = 32
    class_weighting: Union[str, tuple] = "balanced"
    init: str = "glorot_uniform"
    seed: int = 0

    def __post_init__(self):
        if not (isinstance(self.epochs, int) and self.epochs > 0):
            raise ValueError("epochs must be a positive integer")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.batch_size != "full" and not (isinstance(self.batch_size, int) and self.batch_size > 0):
            raise ValueError("batch_size must be a positive integer or 'full'")
        cw = self.class_weighting
        if isinstance(cw, (list, tuple)):
            if len(cw) != 2 or min(cw) <= 0:
                raise ValueError("explicit class weights need two positive values (w_neg, w_pos)")
            object.__setattr__(self, "class_weighting", (float(cw[0]), float(cw[1])))
        elif cw not in ("balanced", "none"):
            raise ValueError(f"unknown class weighting {cw!r}")
        if self.init != "glorot_uniform":
            raise ValueError(f"unknown init scheme {self.init!r}")
        object.__setattr__(self, "seed", check_seed(self.seed))

    def weights_for(self, labels):
        if self.class_weighting == "balanced":
            return balanced_weights(labels)
        if self.class_weighting == "none":
            return (1.0, 1.0)
        return self.class_weighting

    def to_dict(self):
        d = asdict(self)
        if isinstance(self.class_weighting, tuple):
            d["class_weighting"] = list(self.class_weighting)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("class_weighting"), list):
            d["class_weighting"] = tuple(d["class_weighting"])
        return cls(**d)


@dataclass(eq=False)
class SdnnModel:
    architecture: Architecture
    params: list
    standardizer: StandardizationParams
    config: TrainingConfig = field(default_factory=TrainingConfig)
    final_loss: Optional[float] = None
    loss_history: tuple = ()
    format_version: int = FORMAT_VERSION

    @property
    def features(self):
        return self.standardizer.feature_order

    def predict_raw(self, x_raw):
        """Probabilities for a raw ``(n, d)`` matrix in the model's feature order."""
        return forward(self.params, self.standardizer.apply(np.atleast_2d(x_raw)))


class _Adam:
    def __init__(self, params, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [Layer(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in params]
        self.v = [Layer(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in params]

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for layer, g, m, v in zip(params, grads, self.m, self.v):
            for p_arr, g_arr, m_arr, v_arr in zip(layer, g, m, v):
                m_arr *= self.beta1
                m_arr += (1.0 - self.beta1) * g_arr
                v_arr *= self.beta2
                v_arr += (1.0 - self.beta2) * g_arr * g_arr
                p_arr -= self.lr * (m_arr / c1) / (np.sqrt(v_arr / c2) + self.eps)


def train(cohort, config=None, hidden_widths=DEFAULT_WIDTHS, features=FEATURES):
    """Fit an s-DNN on a labeled cohort with Adam.

    The standardizer is fit on ``cohort`` and stored in the model. Each
    epoch visits the rows in a fresh seed-derived order; ``final_loss`` is the
    weighted mean mini-batch loss of the last epoch.
    """
    config = config or TrainingConfig()
    labels = cohort.labels()
    if labels.min() == labels.max():
        raise DataError("single-class cohort")
    arch = Architecture(tuple(hidden_widths), input_dim=len(features))
    rng = np.random.default_rng(config.seed)
    # independent stream for init so batch-size changes don't shift weights
    params = init_params(arch, int(rng.integers(0, 2**63)))
    scaler = fit_standardizer(cohort, features)
    x = scaler.apply(cohort.matrix(features))
    y = labels.astype(np.float64)
    cw = config.weights_for(labels)
    w = np.where(labels == 1, cw[1], cw[0])
    n = len(y)
    bs = n if config.batch_size == "full" else config.batch_size
    opt = _Adam(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        weight = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            xb, yb = x[idx], y[idx]
            loss = weighted_bce_loss(forward(params, xb), yb, cw)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            total += loss * w[idx].sum()
            weight += w[idx].sum()
            opt.step(params, gradient(params, xb, yb, cw))
        history.append(total / weight)
    return SdnnModel(arch, params, scaler, config, history[-1], tuple(history))


def predict(model, cohort, tag=None):
    """Scores for every record, in cohort order; labels attached when present."""
    probs = model.predict_raw(cohort.matrix(model.features))
    labels = cohort.labels() if cohort.is_labeled else None
    return ScoredSet(probs, labels, tag or f"s-DNN:{cohort.name}", ids=tuple(cohort.ids()))


# -- serialization ----------------------------------------------------------------

def model_to_dict(model):
    arch = model.architecture
    return {
        "format_version": model.format_version,
        "architecture": {"input_dim": arch.input_dim, "hidden_widths": list(arch.hidden_widths),
                         "output_dim": arch.output_dim},
        "standardizer": {"means": list(model.standardizer.means), "sds": list(model.standardizer.sds),
                         "feature_order": list(model.standardizer.feature_order)},
        "layers": [{"rows": int(l.weights.shape[0]), "cols": int(l.weights.shape[1]),
                    "weights": [float(v) for v in l.weights.ravel()],
                    "bias": [float(v) for v in l.bias]} for l in model.params],
        "training": model.config.to_dict(),
        "final_loss": model.final_loss,
    }


def serialize_model(model):
    """UTF-8 JSON bytes; floats use the shortest round-trip representation."""
    try:
        text = json.dumps(model_to_dict(model), indent=2, allow_nan=False)
    except ValueError as exc:
        raise ModelFormatError(f"model contains non-finite values: {exc}") from None
    return (text + "\n").encode("utf-8")


def _finite_list(values, what):
    if not isinstance(values, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in values):
        raise ModelFormatError(f"{what} must be a list of finite numbers")
    return [float(v) for v in values]


def deserialize_model(data):
    try:
        doc = json.loads(data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {doc.get('format_version')!r}, expected {FORMAT_VERSION}")
    try:
        a = doc["architecture"]
        arch = Architecture(tuple(a["hidden_widths"]), int(a["input_dim"]), int(a["output_dim"]))
        verdict = validate_architecture(arch)
        if not verdict:
            raise ModelFormatError("invalid architecture: " + "; ".join(verdict.reasons))
        dims = arch.dims
        layers_doc = doc["layers"]
        if len(layers_doc) != len(dims) - 1:
            raise ModelFormatError(f"{len(layers_doc)} layers stored, architecture needs {len(dims) - 1}")
        params = []
        for k, (ld, fan_in, fan_out) in enumerate(zip(layers_doc, dims[:-1], dims[1:])):
            if (ld["rows"], ld["cols"]) != (fan_out, fan_in):
                raise ModelFormatError(f"layer {k}: shape {ld['rows']}x{ld['cols']}, expected {fan_out}x{fan_in}")
            wts = _finite_list(ld["weights"], f"layer {k} weights")
            bias = _finite_list(ld["bias"], f"layer {k} bias")
            if len(wts) != fan_out * fan_in or len(bias) != fan_out:
                raise ModelFormatError(f"layer {k}: stored length does not match {fan_out}x{fan_in}")
            params.append(Layer(np.array(wts).reshape(fan_out, fan_in), np.array(bias)))
        s = doc["standardizer"]
        means = _finite_list(s["means"], "standardizer means")
        sds = _finite_list(s["sds"], "standardizer sds")
        order = tuple(s["feature_order"])
        if len(order) != arch.input_dim or not set(order) <= set(FEATURES):
            raise ModelFormatError(f"standardizer feature order {order} does not fit input_dim {arch.input_dim}")
        try:
            scaler = StandardizationParams(tuple(means), tuple(sds), order)
        except ValueError as exc:
            raise ModelFormatError(str(exc)) from None
        config = TrainingConfig.from_dict(doc["training"])
        final_loss = doc["final_loss"]
        if final_loss is not None and not isinstance(final_loss, (int, float)):
            raise ModelFormatError("final_loss must be a number or null")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {exc!r}") from None
    return SdnnModel(arch, params, scaler, config, None if final_loss is None else float(final_loss))


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())

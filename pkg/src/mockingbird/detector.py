"""Softmax MLP classifier over burst vectors.

The same code serves as the defender's detector and as the simulated attacker;
only the :class:`TrainConfig` (and hence ``arch_id``) differs. Besides class
probabilities, the model exposes exact input gradients of three scalar
objectives so the generators can query it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadK, DimensionMismatch, ModelFormatError, SingleClassDataset, UnknownClass
from .trace_model import BurstTrace

OBJECTIVES = ("proba_of_class", "cw_targeted", "cw_untargeted")

_MAGIC = b"MBDET\x001\n"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    hidden_dims: tuple[int, ...] = (128,)
    arch_id: str = "mlp"
    scale_quantile: float = 1.0

    def __post_init__(self):
        if not 0 < self.scale_quantile <= 1:
            raise ValueError("scale_quantile must lie in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))


@dataclass(eq=False)
class DetectorModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    normalization_scale: float = 1.0
    arch_id: str = "mlp"
    activation: str = "softplus"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer_dims does not match the number of parameter arrays")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i], self.layer_dims[i + 1]) or b.shape != (self.layer_dims[i + 1],):
                raise ValueError(f"layer {i} parameter shape mismatch")
        if not self.normalization_scale > 0:
            raise ValueError("normalization_scale must be positive")
        if self.activation != "softplus":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def classes(self) -> int:
        return self.layer_dims[-1]

    def normalize(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) / self.normalization_scale

    def parameters_equal(self, other: "DetectorModel") -> bool:
        return (
            self.layer_dims == other.layer_dims
            and self.normalization_scale == other.normalization_scale
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


def init_model(layer_dims, seed=0, normalization_scale=1.0, arch_id="mlp", zero=False) -> DetectorModel:
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        if zero:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return DetectorModel(list(layer_dims), weights, biases, float(normalization_scale), arch_id)


# -- forward / backward ------------------------------------------------------


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(model: DetectorModel, x: np.ndarray):
    """x is normalized, shape (n, d). Returns probabilities and per-layer caches."""
    pre, acts = [], [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else _softplus(z)
        acts.append(h)
    return _softmax(h), pre, acts


def _backward_input(model: DetectorModel, pre, grad_logits):
    """Propagate d(objective)/d(logits) back to the normalized input."""
    g = grad_logits
    for i in range(len(model.weights) - 1, -1, -1):
        if i != len(model.weights) - 1:
            g = g * _sigmoid(pre[i])
        g = g @ model.weights[i].T
    return g


def _as_matrix(model: DetectorModel, x) -> np.ndarray:
    if isinstance(x, BurstTrace):
        x = x.bursts
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != model.input_dim:
        raise DimensionMismatch(f"input width {x.shape[-1]} != model input {model.input_dim}")
    return x


def predict_proba(model: DetectorModel, trace, normalized: bool = False) -> np.ndarray:
    """Class probabilities for one trace (vector) or a batch (matrix) of raw bursts."""
    single = isinstance(trace, BurstTrace) or np.ndim(trace) == 1
    x = _as_matrix(model, trace)
    if not normalized:
        x = model.normalize(x)
    p, _, _ = _forward(model, x)
    return p[0] if single else p


def objective_value(probs: np.ndarray, objective: str, cls: int) -> float:
    """Scalar objective on one probability vector."""
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    if not 0 <= cls < probs.size:
        raise UnknownClass(f"class {cls} outside [0, {probs.size})")
    if objective == "proba_of_class":
        return float(probs[cls])
    others = np.delete(probs, cls)
    if objective == "cw_targeted":
        return float(others.max() - probs[cls])
    return float(probs[cls] - others.max())


def _objective_grad_wrt_probs(probs, objective, cls):
    g = np.zeros_like(probs)
    if objective == "proba_of_class":
        g[cls] = 1.0
        return g
    masked = probs.copy()
    masked[cls] = -np.inf
    j = int(np.argmax(masked))
    sign = 1.0 if objective == "cw_targeted" else -1.0
    g[j] = sign
    g[cls] = -sign
    return g


def input_gradient(model: DetectorModel, x, objective: str, cls: int, normalized: bool = True):
    """Value and gradient of ``objective`` w.r.t. the normalized input.

    ``x`` is taken as already normalized unless ``normalized=False``; the
    returned gradient is always with respect to the normalized input.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    if not 0 <= cls < model.classes:
        raise UnknownClass(f"class {cls} outside [0, {model.classes})")
    xm = _as_matrix(model, x)
    if xm.shape[0] != 1:
        raise DimensionMismatch("input_gradient takes a single trace")
    if not normalized:
        xm = model.normalize(xm)
    probs, pre, _ = _forward(model, xm)
    p = probs[0]
    gp = _objective_grad_wrt_probs(p, objective, cls)
    # softmax Jacobian-vector product
    gz = p * (gp - p @ gp)
    grad = _backward_input(model, pre, gz[None, :])[0]
    return objective_value(p, objective, cls), grad


def top_k_labels(model: DetectorModel, trace, k: int) -> list[int]:
    probs = predict_proba(model, trace)
    return top_k_from_probs(probs, k)


def top_k_from_probs(probs, k: int) -> list[int]:
    probs = np.asarray(probs)
    if not 1 <= k <= probs.shape[-1]:
        raise BadK(f"k={k} outside [1, {probs.shape[-1]}]")
    # stable sort on -p keeps lower class ids first among ties
    order = np.argsort(-probs, kind="stable", axis=-1)
    return order[..., :k].tolist()


# -- training ----------------------------------------------------------------


def train(dataset, config: TrainConfig = TrainConfig()) -> DetectorModel:
    """Mini-batch SGD with momentum on softmax cross-entropy.

    ``dataset`` is a LabeledDataset of BurstTrace. Inputs are divided by the
    largest burst magnitude seen in training.
    """
    x_raw = dataset.matrix()
    y = dataset.labels
    if len(np.unique(y)) < 2:
        raise SingleClassDataset("training needs at least two classes")
    nonzero = x_raw[x_raw > 0]
    scale = float(np.quantile(nonzero, config.scale_quantile)) if nonzero.size else 0.0
    if scale <= 0:
        raise ValueError("training data are all zero")
    x = x_raw / scale
    dims = [x.shape[1], *config.hidden_dims, dataset.classes]
    model = init_model(dims, config.seed, scale, config.arch_id)
    rng = np.random.default_rng(config.seed + 1)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    n = x.shape[0]
    onehot = np.eye(dataset.classes)[y]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, tb = x[idx], onehot[idx]
            probs, pre, acts = _forward(model, xb)
            g = (probs - tb) / len(idx)
            for i in range(len(model.weights) - 1, -1, -1):
                if i != len(model.weights) - 1:
                    g = g * _sigmoid(pre[i])
                gw = acts[i].T @ g
                gb = g.sum(axis=0)
                g = g @ model.weights[i].T
                vel_w[i] = config.momentum * vel_w[i] - config.learning_rate * gw
                vel_b[i] = config.momentum * vel_b[i] - config.learning_rate * gb
                model.weights[i] += vel_w[i]
                model.biases[i] += vel_b[i]
    model.meta = {"train_config": config.__dict__ | {"hidden_dims": list(config.hidden_dims)}}
    return model


def accuracy(model: DetectorModel, dataset) -> float:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    probs = predict_proba(model, dataset.matrix())
    return float(np.mean(np.argmax(probs, axis=1) == dataset.labels))


# -- persistence -------------------------------------------------------------
#
# Layout (all integers and floats little-endian):
#   8 bytes   magic b"MBDET\x001\n"
#   uint32    header length H
#   H bytes   UTF-8 JSON: arch_id, activation, layer_dims, normalization_scale,
#             param_order ("W0","b0","W1",...), dtype "<f8"
#   rest      parameters in param_order, each row-major float64 '<f8'


def save_model(model: DetectorModel, path) -> None:
    header = {
        "arch_id": model.arch_id,
        "activation": model.activation,
        "layer_dims": model.layer_dims,
        "normalization_scale": model.normalization_scale,
        "param_order": [f"{kind}{i}" for i in range(len(model.weights)) for kind in ("W", "b")],
        "dtype": "<f8",
        "meta": model.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [_MAGIC, struct.pack("<I", len(hbytes)), hbytes]
    for w, b in zip(model.weights, model.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_model(path) -> DetectorModel:
    data = Path(path).read_bytes()
    if data[: len(_MAGIC)] != _MAGIC:
        raise ModelFormatError("not a detector model file")
    off = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    dims = header["layer_dims"]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_in, fan_out)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(data):
        raise ModelFormatError("trailing or missing parameter bytes")
    return DetectorModel(
        dims, weights, biases, float(header["normalization_scale"]),
        header["arch_id"], header["activation"], header.get("meta", {}),
    )

"""Small feed-forward classifier over encoded rows.

Beyond class probabilities, the model exposes exact first and second
derivatives of any class logit with respect to its encoded input. The
default activation is softplus: attribution needs a nonvanishing input
Hessian, and piecewise-linear activations have none almost everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    Row,
    Table,
    TableSchema,
    encode_row,
    encode_table,
    encoded_dim,
    schema_from_dict,
    schema_to_dict,
)
from .errors import DataError

CHECKPOINT_FORMAT = "tabalign-predictor-v1"


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_d2(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


def _tanh_d1(z):
    return 1.0 - np.tanh(z) ** 2


def _tanh_d2(z):
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


# activation -> (value, first derivative, second derivative); all must be
# twice differentiable for the interaction attribution to make sense
ACTIVATIONS = {
    "softplus": (_softplus, _sigmoid, _softplus_d2),
    "tanh": (np.tanh, _tanh_d1, _tanh_d2),
}


@dataclass(frozen=True)
class PredictorSpec:
    hidden_layers: tuple[int, ...] = (64, 32)
    activation: str = "softplus"
    l2: float = 1e-4
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if len(self.hidden_layers) < 1 or any(w < 1 for w in self.hidden_layers):
            raise DataError("at least one hidden layer with width >= 1 is required")
        if self.activation not in ACTIVATIONS:
            raise DataError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")

    def to_dict(self) -> dict:
        return {
            "hidden_layers": list(self.hidden_layers),
            "activation": self.activation,
            "l2": self.l2,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PredictorSpec":
        return cls(
            hidden_layers=tuple(raw["hidden_layers"]),
            activation=raw["activation"],
            l2=raw["l2"],
            learning_rate=raw["learning_rate"],
            epochs=raw["epochs"],
            batch_size=raw["batch_size"],
            seed=raw["seed"],
        )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class TrainedPredictor:
    """Immutable after training; forward/gradient/Hessian calls are thread-safe."""

    spec: PredictorSpec
    schema: TableSchema
    weights: list[np.ndarray] = field(repr=False)  # hidden layers then output layer
    biases: list[np.ndarray] = field(repr=False)
    loss_trace: list[float] = field(default_factory=list, repr=False)

    @property
    def class_labels(self) -> tuple[str, ...]:
        return self.schema.label_column.vocabulary or ()

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        act = ACTIVATIONS[self.spec.activation][0]
        a = x
        pre, post = [], []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w.T + b
            pre.append(z)
            a = act(z)
            post.append(a)
        logits = a @ self.weights[-1].T + self.biases[-1]
        return logits, pre, post

    def logits(self, v: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(v, dtype=np.float64))[0]

    def predict_proba_vector(self, v: np.ndarray) -> np.ndarray:
        return _softmax(self.logits(v))

    def predict_proba(self, row: Row) -> np.ndarray:
        return self.predict_proba_vector(encode_row(row, self.schema))

    def predict_proba_table(self, table: Table) -> np.ndarray:
        return _softmax(self.logits(encode_table(table, self.schema)))

    def input_gradient(self, v: np.ndarray, class_index: int) -> np.ndarray:
        """Exact gradient of the pre-softmax logit of class_index at v."""
        v = np.asarray(v, dtype=np.float64)
        _, pre, _ = self._forward(v)
        d1 = ACTIVATIONS[self.spec.activation][1]
        g = self.weights[-1][class_index].copy()
        for w, z in zip(reversed(self.weights[:-1]), reversed(pre)):
            g = w.T @ (d1(z) * g)
        return g

    def input_hessian(self, v: np.ndarray, class_index: int) -> np.ndarray:
        """Exact input Hessian of the class logit at v.

        Affine layers contribute no curvature, so the Hessian is the sum over
        hidden layers of A_l^T diag(act''(z_l) * g_l) A_l, where A_l is the
        Jacobian of the layer's pre-activation w.r.t. the input and g_l the
        gradient of the logit w.r.t. the layer's activation.
        """
        v = np.asarray(v, dtype=np.float64)
        _, pre, _ = self._forward(v)
        _, d1, d2 = ACTIVATIONS[self.spec.activation]

        # backward: gradient of the logit w.r.t. each hidden activation
        grads = [self.weights[-1][class_index].copy()]
        for w, z in zip(reversed(self.weights[1:-1]), reversed(pre[1:])):
            grads.append(w.T @ (d1(z) * grads[-1]))
        grads.reverse()  # grads[l] = d logit / d a_l

        hess = np.zeros((v.size, v.size))
        jac = np.eye(v.size)  # Jacobian of a_{l-1} w.r.t. input
        for w, z, g in zip(self.weights[:-1], pre, grads):
            a_jac = w @ jac
            hess += a_jac.T @ ((d2(z) * g)[:, None] * a_jac)
            jac = d1(z)[:, None] * a_jac
        return (hess + hess.T) / 2.0

    def save(self, path: str | Path) -> None:
        arrays = {"format": np.array(CHECKPOINT_FORMAT)}
        arrays["spec"] = np.array(json.dumps(self.spec.to_dict()))
        arrays["schema"] = np.array(json.dumps(schema_to_dict(self.schema)))
        arrays["loss_trace"] = np.asarray(self.loss_trace, dtype=np.float64)
        arrays["n_layers"] = np.array(len(self.weights))
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "TrainedPredictor":
        with np.load(path, allow_pickle=False) as blob:
            if str(blob["format"]) != CHECKPOINT_FORMAT:
                raise DataError(f"unsupported checkpoint format {blob['format']!r}")
            spec = PredictorSpec.from_dict(json.loads(str(blob["spec"])))
            schema = schema_from_dict(json.loads(str(blob["schema"])))
            n = int(blob["n_layers"])
            weights = [blob[f"w{i}"].copy() for i in range(n)]
            biases = [blob[f"b{i}"].copy() for i in range(n)]
            trace = [float(x) for x in blob["loss_trace"]]
        return cls(spec=spec, schema=schema, weights=weights, biases=biases, loss_trace=trace)


def _init_parameters(
    spec: PredictorSpec, n_inputs: int, n_classes: int, rng: np.random.Generator
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    sizes = [n_inputs, *spec.hidden_layers]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    # zero-initialized output layer: an untrained net predicts the uniform distribution
    weights.append(np.zeros((n_classes, sizes[-1])))
    biases.append(np.zeros(n_classes))
    return weights, biases


def train(table: Table, spec: PredictorSpec) -> TrainedPredictor:
    """Mini-batch gradient descent on (optionally class-weighted) cross-entropy.

    Deterministic under spec.seed. Classes are reweighted inversely to
    frequency when the most/least frequent class ratio exceeds 10.
    """
    schema = table.schema
    x = encode_table(table, schema)
    vocab = schema.label_column.vocabulary or ()
    y = np.array([vocab.index(v) for v in table.label_values()], dtype=np.int64)
    present, counts = np.unique(y, return_counts=True)
    if present.size < 2:
        raise DataError("training table has a single label class")
    n_classes = len(vocab)

    sample_weight = np.ones(len(y))
    if counts.max() / counts.min() > 10.0:
        per_class = len(y) / (present.size * counts.astype(np.float64))
        lookup = np.zeros(n_classes)
        lookup[present] = per_class
        sample_weight = lookup[y]

    rng = np.random.default_rng(spec.seed)
    weights, biases = _init_parameters(spec, encoded_dim(schema), n_classes, rng)
    act, act_d1, _ = ACTIVATIONS[spec.activation]

    n = len(y)
    trace = []
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            xb, yb, wb = x[idx], y[idx], sample_weight[idx]

            pre, post = [], []
            a = xb
            for w, b in zip(weights[:-1], biases[:-1]):
                z = a @ w.T + b
                pre.append(z)
                a = act(z)
                post.append(a)
            probs = _softmax(a @ weights[-1].T + biases[-1])

            picked = np.clip(probs[np.arange(len(yb)), yb], 1e-12, None)
            epoch_loss += float(np.sum(wb * -np.log(picked)))

            delta = probs
            delta[np.arange(len(yb)), yb] -= 1.0
            delta *= (wb / len(yb))[:, None]

            grads_w = [None] * len(weights)
            grads_b = [None] * len(biases)
            back = delta
            for li in range(len(weights) - 1, 0, -1):
                a_prev = post[li - 1]
                grads_w[li] = back.T @ a_prev
                grads_b[li] = back.sum(axis=0)
                back = (back @ weights[li]) * act_d1(pre[li - 1])
            grads_w[0] = back.T @ xb
            grads_b[0] = back.sum(axis=0)

            for li in range(len(weights)):
                weights[li] -= spec.learning_rate * (grads_w[li] + spec.l2 * weights[li])
                biases[li] -= spec.learning_rate * grads_b[li]
        trace.append(epoch_loss / n)

    return TrainedPredictor(spec=spec, schema=schema, weights=weights, biases=biases, loss_trace=trace)

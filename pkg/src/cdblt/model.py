"""Softmax regression / one-hidden-layer ReLU MLP with explicit backprop."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .losses import BatchProbs, LossSpec, loss_backward, loss_forward

CHECKPOINT_FORMAT = "cdblt.ckpt/1"
PARAM_ORDER = ("W1", "b1", "W2", "b2", "scales")


@dataclass
class MlpModel:
    """Parameters keyed by name. ``W1``/``b1`` exist only when ``hidden_dim > 0``;
    ``scales`` exists only in learnable-weight-scaling mode."""

    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    params: dict = field(default_factory=dict)

    @property
    def lws(self) -> bool:
        return "scales" in self.params

    def copy(self) -> "MlpModel":
        return MlpModel(self.input_dim, self.num_classes, self.hidden_dim,
                        {k: v.copy() for k, v in self.params.items()})

    def trainable(self, mode: str = "all") -> tuple[str, ...]:
        if mode == "all":
            return tuple(k for k in ("W1", "b1", "W2", "b2") if k in self.params)
        if mode == "classifier":
            return ("W2", "b2")
        if mode == "scales":
            return ("scales",)
        raise ConfigError(f"unknown trainable set {mode!r}")


def init_classifier(model: MlpModel, rng: np.random.Generator) -> None:
    fan_in = model.hidden_dim or model.input_dim
    model.params["W2"] = rng.standard_normal((fan_in, model.num_classes)) * np.sqrt(2.0 / fan_in)
    model.params["b2"] = np.zeros(model.num_classes)


def init_model(input_dim: int, num_classes: int, hidden_dim: int, seed) -> MlpModel:
    """He-normal weights, zero biases."""
    if input_dim < 1 or num_classes < 2 or hidden_dim < 0:
        raise ConfigError("need input_dim >= 1, num_classes >= 2, hidden_dim >= 0")
    rng = np.random.default_rng(seed)
    model = MlpModel(input_dim, num_classes, hidden_dim)
    if hidden_dim:
        model.params["W1"] = rng.standard_normal((input_dim, hidden_dim)) * np.sqrt(2.0 / input_dim)
        model.params["b1"] = np.zeros(hidden_dim)
    init_classifier(model, rng)
    return model


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: MlpModel, features) -> tuple[np.ndarray, dict]:
    """Return softmax probabilities and the activations needed by ``backward``."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ConfigError(f"expected {model.input_dim} input features, got shape {x.shape}")
    cache = {"x": x}
    h = x
    if model.hidden_dim:
        pre = x @ model.params["W1"] + model.params["b1"]
        h = np.maximum(pre, 0.0)
        cache["pre"] = pre
    cache["h"] = h
    raw = h @ model.params["W2"] + model.params["b2"]
    cache["raw"] = raw
    logits = raw * model.params["scales"] if model.lws else raw
    cache["logits"] = logits
    return softmax(logits), cache


def backward(model: MlpModel, cache: dict, dlogits: np.ndarray, names=None) -> dict:
    """Gradients for ``names`` (default: every parameter) given d loss / d logits."""
    names = set(model.params) if names is None else set(names)
    grads = {}
    draw = dlogits
    if model.lws:
        if "scales" in names:
            grads["scales"] = (dlogits * cache["raw"]).sum(axis=0)
        draw = dlogits * model.params["scales"]
    if "W2" in names:
        grads["W2"] = cache["h"].T @ draw
    if "b2" in names:
        grads["b2"] = draw.sum(axis=0)
    if model.hidden_dim and ({"W1", "b1"} & names):
        dpre = (draw @ model.params["W2"].T) * (cache["pre"] > 0)
        if "W1" in names:
            grads["W1"] = cache["x"].T @ dpre
        if "b1" in names:
            grads["b1"] = dpre.sum(axis=0)
    return grads


def loss_and_grads(model: MlpModel, features, labels, spec: LossSpec, names=None):
    probs, cache = forward(model, features)
    batch = BatchProbs(probs, labels)
    per_sample, mean = loss_forward(spec, batch)
    grads = backward(model, cache, loss_backward(spec, batch), names)
    return mean, grads, per_sample


def predict_proba(model: MlpModel, features, chunk: int = 8192) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if len(features) == 0:
        return np.zeros((0, model.num_classes))
    return np.concatenate([forward(model, features[i:i + chunk])[0] for i in range(0, len(features), chunk)])


def predict(model: MlpModel, features) -> np.ndarray:
    # argmax breaks ties toward the lowest class index
    return predict_proba(model, features).argmax(axis=1)


# --------------------------------------------------------------------------
# checkpoints: raw little-endian float64 tensors + JSON manifest


def save_checkpoint(model: MlpModel, path, seed=None, config_hash=None) -> tuple[Path, Path]:
    path = Path(path)
    bin_path, manifest_path = path.with_suffix(".bin"), path.with_suffix(".json")
    tensors, offset, chunks = [], 0, []
    for name in PARAM_ORDER:
        if name not in model.params:
            continue
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    bin_path.write_bytes(b"".join(chunks))
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "hidden_dim": model.hidden_dim,
        "seed": seed,
        "config_hash": config_hash,
        "dtype": "float64-le",
        "tensors": tensors,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return bin_path, manifest_path


def load_checkpoint(path) -> tuple[MlpModel, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    raw = path.with_suffix(".bin").read_bytes()
    model = MlpModel(manifest["input_dim"], manifest["num_classes"], manifest["hidden_dim"])
    for t in manifest["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=t["offset"]).reshape(t["shape"])
        model.params[t["name"]] = arr.astype(np.float64)
    return model, manifest

"""The four network architectures, their training loop, and per-frame prediction.

Architecture layouts are fixed: the MLP has four hidden SELU layers of 50
units; GRU/BGRU use one 100-unit layer; BSRU stacks two bidirectional
100-unit SRU layers. All end in a 2-class softmax head applied per frame.

The MLP trains on shuffled i.i.d. mini-batches; recurrent models consume
per-link time-ordered chunks whose length is the training batch size, with
several chunks grouped per optimizer step. Prediction windows recurrent
models into per-link chunks of the test batch size, so both directions of
a window inform every frame in it.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .datamodel import FeatureView
from .evalsuite import confusion_counts, weighted_accuracy
from .numcore import (ConfigurationError, InputError, OptimizerState, ParamTensor,
                      affine_backward, affine_forward, clip_grads, glorot,
                      optimizer_step, selu, selu_grad, softmax,
                      softmax_cross_entropy, zeros_param)
from .recurrent import BiRun, GruCell, SequenceBatch, SruCell, run_sequence

ARCHITECTURES = ("mlp", "gru", "bgru", "bsru")
MLP_HIDDEN = (50, 50, 50, 50)
RNN_HIDDEN = 100
N_CLASSES = 2

PREDICT_COLUMNS = 64   # chunks evaluated together at prediction time


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss."""


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str
    input_dim: int
    allow_nonstandard_input: bool = False

    def __post_init__(self):
        if self.kind not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.kind!r}")
        if self.input_dim not in (2, 3) and not self.allow_nonstandard_input:
            raise ConfigurationError(
                f"input_dim {self.input_dim} outside the reduced feature dims (2, 3); "
                "pass allow_nonstandard_input=True for synthetic studies")


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    train_batch: int = 1024
    test_batch: int = 128
    epochs: int = 10
    seed: int = 0
    grad_clip: Optional[float] = None
    chunks_per_step: int = 16

    def __post_init__(self):
        if self.train_batch < 1 or self.test_batch < 1:
            raise ConfigurationError("batch sizes must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def for_architecture(cls, kind: str, **overrides) -> "TrainConfig":
        """Per-architecture optimizer defaults: SGD lr .01 for the MLP,
        Adam lr .0001 for the recurrent models."""
        base = {"optimizer": "sgd", "learning_rate": 0.01} if kind == "mlp" \
            else {"optimizer": "adam", "learning_rate": 0.0001}
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_weighted_accuracy: list = field(default_factory=list)
    wall_seconds: list = field(default_factory=list)


# ----------------------------------------------------------------------
# network internals
# ----------------------------------------------------------------------

class _MlpNet:
    def __init__(self, input_dim: int, rng: np.random.Generator):
        widths = (input_dim,) + MLP_HIDDEN + (N_CLASSES,)
        self.weights = []
        self.biases = []
        for i in range(len(widths) - 1):
            self.weights.append(glorot(rng, widths[i], widths[i + 1], name=f"dense{i}.w"))
            self.biases.append(zeros_param((1, widths[i + 1]), f"dense{i}.b"))

    @property
    def params(self) -> list[ParamTensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def _forward(self, X):
        h = X
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = affine_forward(h, w, b)
            cache.append((h, pre))
            h = selu(pre) if i < last else pre
        return h, cache

    def predict_logits(self, X) -> np.ndarray:
        return self._forward(X)[0]

    def loss_and_grad(self, X, y) -> float:
        logits, cache = self._forward(X)
        loss, d = softmax_cross_entropy(logits, y)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            x_in, pre = cache[i]
            if i < last:
                d = d * selu_grad(pre)
            d = affine_backward(d, x_in, self.weights[i], self.biases[i])
        return loss


class _RecurrentNet:
    """One of gru/bgru/bsru: recurrent feature extractor plus a dense head."""

    def __init__(self, kind: str, input_dim: int, rng: np.random.Generator):
        self.kind = kind
        H = RNN_HIDDEN
        if kind == "gru":
            self.cells = [GruCell(input_dim, H, rng, name="gru")]
            feat_dim = H
        elif kind == "bgru":
            self.cells = [GruCell(input_dim, H, rng, name="gru_fwd"),
                          GruCell(input_dim, H, rng, name="gru_bwd")]
            feat_dim = 2 * H
        elif kind == "bsru":
            self.cells = [SruCell(input_dim, H, rng, name="sru1_fwd"),
                          SruCell(input_dim, H, rng, name="sru1_bwd"),
                          SruCell(2 * H, H, rng, name="sru2_fwd"),
                          SruCell(2 * H, H, rng, name="sru2_bwd")]
            feat_dim = 2 * H
        else:
            raise ConfigurationError(f"not a recurrent architecture: {kind!r}")
        self.head_w = glorot(rng, feat_dim, N_CLASSES, name="head.w")
        self.head_b = zeros_param((1, N_CLASSES), "head.b")

    @property
    def params(self) -> list[ParamTensor]:
        out = []
        for c in self.cells:
            out.extend(c.params)
        out.extend([self.head_w, self.head_b])
        return out

    def _features(self, batch: SequenceBatch):
        if self.kind == "gru":
            run = run_sequence(self.cells[0], batch)
            return [run], run.outputs
        if self.kind == "bgru":
            run = BiRun(self.cells[0], self.cells[1], batch)
            return [run], run.outputs
        run1 = BiRun(self.cells[0], self.cells[1], batch)
        inner = SequenceBatch(run1.outputs, batch.lengths)
        run2 = BiRun(self.cells[2], self.cells[3], inner)
        return [run1, run2], run2.outputs

    def _features_backward(self, runs, d_feats):
        for run in reversed(runs):
            d_feats = run.backward(d_feats)
        return d_feats

    @staticmethod
    def _valid_rows(batch: SequenceBatch):
        T, B = batch.x.shape[0], batch.x.shape[1]
        valid = (np.arange(T)[:, None] < batch.lengths[None, :]).ravel()
        return np.flatnonzero(valid)

    def loss_and_grad(self, batch: SequenceBatch) -> float:
        runs, feats = self._features(batch)
        T, B, K = feats.shape
        rows_idx = self._valid_rows(batch)
        rows = feats.reshape(T * B, K)[rows_idx]
        labels = batch.labels.reshape(T * B)[rows_idx]
        logits = affine_forward(rows, self.head_w, self.head_b)
        loss, dlogits = softmax_cross_entropy(logits, labels)
        drows = affine_backward(dlogits, rows, self.head_w, self.head_b)
        d_feats = np.zeros((T * B, K))
        d_feats[rows_idx] = drows
        self._features_backward(runs, d_feats.reshape(T, B, K))
        return loss

    def predict_proba(self, batch: SequenceBatch) -> np.ndarray:
        """(T, B) probability of frame error; zeros at padded positions."""
        runs, feats = self._features(batch)
        T, B, K = feats.shape
        rows_idx = self._valid_rows(batch)
        rows = feats.reshape(T * B, K)[rows_idx]
        logits = affine_forward(rows, self.head_w, self.head_b)
        probs = softmax(logits)[:, 1]
        out = np.zeros(T * B)
        out[rows_idx] = probs
        for run in runs:
            run.release()
        return out.reshape(T, B)


class TrainedModel:
    """Architecture + parameters + the feature schema it was trained against."""

    def __init__(self, spec: ArchitectureSpec, seed: int):
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        if spec.kind == "mlp":
            self.net = _MlpNet(spec.input_dim, rng)
        else:
            self.net = _RecurrentNet(spec.kind, spec.input_dim, rng)
        self.feature_names: Optional[tuple[str, ...]] = None
        self.mean: Optional[np.ndarray] = None
        self.std: Optional[np.ndarray] = None
        self.history = TrainingHistory()
        self.trained_config: Optional[TrainConfig] = None

    @property
    def params(self) -> list[ParamTensor]:
        return self.net.params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params)


def build(spec: ArchitectureSpec, seed: int = 0) -> TrainedModel:
    """Seeded construction of an untrained model per the fixed layouts."""
    return TrainedModel(spec, seed)


def parameter_count(spec: ArchitectureSpec) -> int:
    """Closed-form parameter count; guards against architecture drift."""
    I, H, K = spec.input_dim, RNN_HIDDEN, N_CLASSES
    if spec.kind == "mlp":
        widths = (I,) + MLP_HIDDEN + (K,)
        return sum(a * b + b for a, b in zip(widths, widths[1:]))
    gru = lambda i: 3 * (i * H + H * H + H)
    sru = lambda i: 3 * i * H + 4 * H + (i * H if i != H else 0)
    if spec.kind == "gru":
        return gru(I) + H * K + K
    if spec.kind == "bgru":
        return 2 * gru(I) + 2 * H * K + K
    return 2 * sru(I) + 2 * sru(2 * H) + 2 * H * K + K


# ----------------------------------------------------------------------
# chunking
# ----------------------------------------------------------------------

def link_chunks(view: FeatureView, window: int) -> list[np.ndarray]:
    """Per-link, time-ordered row-index chunks of at most `window` frames."""
    order = np.lexsort((view.t_ms, view.link_ids))
    ids = view.link_ids[order]
    chunks = []
    start = 0
    n = len(ids)
    for i in range(1, n + 1):
        if i == n or ids[i] != ids[start]:
            rows = order[start:i]
            for s in range(0, len(rows), window):
                chunks.append(rows[s:s + window])
            start = i
    return chunks


def build_sequence_batch(view: FeatureView, chunks: list[np.ndarray],
                         window: int, with_labels: bool = True) -> SequenceBatch:
    B = len(chunks)
    F = view.X.shape[1]
    x = np.zeros((window, B, F))
    labels = np.full((window, B), -1, dtype=np.int64) if with_labels else None
    lengths = np.zeros(B, dtype=np.int64)
    starts = np.zeros(B, dtype=np.int64)
    link_ids = []
    for j, idx in enumerate(chunks):
        L = len(idx)
        x[:L, j] = view.X[idx]
        if with_labels:
            labels[:L, j] = view.y[idx]
        lengths[j] = L
        starts[j] = view.t_ms[idx[0]]
        link_ids.append(str(view.link_ids[idx[0]]))
    return SequenceBatch(x, lengths, tuple(link_ids), starts, labels)


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------

def _check_schema(model: TrainedModel, view: FeatureView):
    if model.feature_names is None:
        raise InputError("model has no bound feature schema; train it first")
    if tuple(view.feature_names) != tuple(model.feature_names):
        raise InputError(
            f"feature schema mismatch: view has {view.feature_names}, "
            f"model expects {model.feature_names}")


def train(model: TrainedModel, train_view: FeatureView, val_view: FeatureView,
          config: TrainConfig) -> TrainedModel:
    """Run `epochs` passes, tracking per-epoch loss, validation weighted
    accuracy and wall time; the epoch with the best validation weighted
    accuracy is kept. Deterministic for a fixed config seed."""
    if train_view.n == 0:
        raise InputError("training set is empty")
    if len(train_view.feature_names) != model.spec.input_dim:
        raise ConfigurationError(
            f"view has {len(train_view.feature_names)} features but architecture "
            f"expects input_dim={model.spec.input_dim}")
    model.feature_names = tuple(train_view.feature_names)
    model.mean = train_view.mean.copy()
    model.std = train_view.std.copy()
    model.trained_config = config
    rng = np.random.default_rng(config.seed)
    params = model.params
    state = OptimizerState(config.optimizer, params, config.learning_rate)

    best_wacc = -np.inf
    best_values = None
    mlp = model.spec.kind == "mlp"
    if not mlp:
        chunks = link_chunks(train_view, config.train_batch)

    for _ in range(config.epochs):
        t0 = time.perf_counter()
        loss_sum = 0.0
        frame_count = 0
        if mlp:
            perm = rng.permutation(train_view.n)
            for s in range(0, train_view.n, config.train_batch):
                idx = perm[s:s + config.train_batch]
                loss = model.net.loss_and_grad(train_view.X[idx], train_view.y[idx])
                _step(model, params, state, config, loss, len(idx))
                loss_sum += loss * len(idx)
                frame_count += len(idx)
        else:
            order = rng.permutation(len(chunks))
            for s in range(0, len(chunks), config.chunks_per_step):
                group = [chunks[i] for i in order[s:s + config.chunks_per_step]]
                batch = build_sequence_batch(train_view, group, config.train_batch)
                nf = int(batch.lengths.sum())
                loss = model.net.loss_and_grad(batch)
                _step(model, params, state, config, loss, nf)
                loss_sum += loss * nf
                frame_count += nf
        # wall time covers the training passes only, not validation scoring
        model.history.wall_seconds.append(time.perf_counter() - t0)
        model.history.train_loss.append(loss_sum / max(frame_count, 1))
        if val_view.n > 0:
            probs = predict_proba(model, val_view, config.test_batch)
            cm = confusion_counts(val_view.y, (probs > 0.5).astype(np.int64))
            wacc = weighted_accuracy(cm)
        else:
            wacc = float("nan")
        model.history.val_weighted_accuracy.append(wacc)
        if val_view.n > 0 and wacc > best_wacc:
            best_wacc = wacc
            best_values = [p.value.copy() for p in params]

    if best_values is not None:
        for p, v in zip(params, best_values):
            p.value[...] = v
    return model


def _step(model, params, state, config, loss, n_frames):
    if not np.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss {loss} for {model.spec.kind} after "
            f"{state.t} steps ({n_frames} frames in batch)")
    if config.grad_clip is not None:
        clip_grads(params, config.grad_clip)
    optimizer_step(params, state)


# ----------------------------------------------------------------------
# prediction
# ----------------------------------------------------------------------

def predict_proba(model: TrainedModel, view: FeatureView,
                  test_batch: Optional[int] = None) -> np.ndarray:
    """Per-frame probability of decode failure, aligned with view rows.

    Recurrent models window each link's frames into chunks of `test_batch`
    (128 default); the MLP is framewise and ignores the window size.
    """
    _check_schema(model, view)
    if model.spec.kind == "mlp":
        return softmax(model.net.predict_logits(view.X))[:, 1]
    window = test_batch if test_batch is not None else (
        model.trained_config.test_batch if model.trained_config else 128)
    chunks = link_chunks(view, window)
    out = np.zeros(view.n)
    for s in range(0, len(chunks), PREDICT_COLUMNS):
        group = chunks[s:s + PREDICT_COLUMNS]
        batch = build_sequence_batch(view, group, window, with_labels=False)
        probs = model.net.predict_proba(batch)
        for j, idx in enumerate(group):
            out[idx] = probs[:len(idx), j]
    return out


def predict_labels(model: TrainedModel, view: FeatureView,
                   test_batch: Optional[int] = None) -> np.ndarray:
    return (predict_proba(model, view, test_batch) > 0.5).astype(np.int64)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

FORMAT_VERSION = 1


def save_model(model: TrainedModel, path):
    """Versioned JSON container; float64 values round-trip bit-exactly
    through JSON's repr encoding. Layout documented in docs/model_format.md."""
    doc = {
        "format_version": FORMAT_VERSION,
        "architecture": {
            "kind": model.spec.kind,
            "input_dim": model.spec.input_dim,
            "allow_nonstandard_input": model.spec.allow_nonstandard_input,
        },
        "seed": model.seed,
        "features": None if model.feature_names is None else {
            "names": list(model.feature_names),
            "mean": model.mean.tolist(),
            "std": model.std.tolist(),
        },
        "params": [
            {"name": p.name, "shape": list(p.shape), "data": p.value.ravel().tolist()}
            for p in model.params
        ],
        "history": {
            "train_loss": model.history.train_loss,
            "val_weighted_accuracy": model.history.val_weighted_accuracy,
            "wall_seconds": model.history.wall_seconds,
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_model(path) -> TrainedModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise InputError(f"unsupported model format version {doc.get('format_version')}")
    arch = doc["architecture"]
    spec = ArchitectureSpec(arch["kind"], arch["input_dim"],
                            arch["allow_nonstandard_input"])
    model = build(spec, doc["seed"])
    stored = doc["params"]
    live = model.params
    if len(stored) != len(live):
        raise InputError("stored parameter list does not match architecture")
    for p, rec in zip(live, stored):
        if rec["name"] != p.name or tuple(rec["shape"]) != p.shape:
            raise InputError(f"parameter mismatch: stored {rec['name']}{rec['shape']} "
                             f"vs live {p.name}{list(p.shape)}")
        p.value[...] = np.array(rec["data"], dtype=np.float64).reshape(p.shape)
    feats = doc.get("features")
    if feats is not None:
        model.feature_names = tuple(feats["names"])
        model.mean = np.array(feats["mean"], dtype=np.float64)
        model.std = np.array(feats["std"], dtype=np.float64)
    hist = doc.get("history", {})
    model.history = TrainingHistory(
        train_loss=list(hist.get("train_loss", [])),
        val_weighted_accuracy=list(hist.get("val_weighted_accuracy", [])),
        wall_seconds=list(hist.get("wall_seconds", [])),
    )
    return model

"""Numpy multi-layer perceptron: ReLU hidden layers, one sigmoid logit, BCE, plain mini-batch GD."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimMismatch, EmptyTestSplit, NonFiniteLoss, SingleClassTraining

MALICIOUS, BENIGN = "malicious", "benign"
LABELS = (BENIGN, MALICIOUS)


def label_to_int(label: str) -> int:
    if label not in LABELS:
        raise ValueError(f"label must be 'malicious' or 'benign', not {label!r}")
    return int(label == MALICIOUS)


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_layers: tuple[int, ...] = (256, 64)
    activation: str = "relu"
    init_seed: int = 0
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    train_fraction: float = 0.8
    threshold: float = 0.5

    def __post_init__(self):
        if self.input_dim < 1 or any(w < 1 for w in self.hidden_layers):
            raise ConfigError("layer widths must be >= 1")
        if self.activation != "relu":
            raise ConfigError("only relu activation is supported")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("learning_rate > 0, epochs >= 0 and batch_size >= 1 are required")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in (0, 1]")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden_layers, 1]

    def to_json(self) -> dict:
        d = asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> MlpConfig:
        d = dict(d)
        if "hidden_layers" in d:
            d["hidden_layers"] = tuple(int(w) for w in d["hidden_layers"])
        return cls(**d)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^-|z|) form avoids overflow for large |z|
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


@dataclass
class MlpModel:
    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    history: list[tuple[int, float]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, cfg: MlpConfig) -> MlpModel:
        rng = np.random.default_rng(cfg.init_seed)
        ws, bs = [], []
        widths = cfg.widths
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            ws.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            bs.append(np.zeros(fan_out))
        return cls(cfg, ws, bs)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self._forward(X)[-1][:, 0]

    def _forward(self, X):
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray):
        """Mean BCE and gradients, ordered like ``params``."""
        acts = self._forward(X)
        z = acts[-1][:, 0]
        loss = bce_with_logits(z, y)
        delta = ((_sigmoid(z) - y) / len(y))[:, None]
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = acts[i]
            grads = [h_in.T @ delta, delta.sum(axis=0)] + grads
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return loss, grads

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.config.input_dim:
            raise DimMismatch(self.config.input_dim, X.shape[-1])
        return _sigmoid(self.logits(X))

    def predict(self, x: np.ndarray, threshold: float | None = None) -> tuple[str, float]:
        score = float(self.scores(np.atleast_2d(x))[0])
        t = self.config.threshold if threshold is None else threshold
        return (MALICIOUS if score > t else BENIGN), score

    def predict_batch(self, X: np.ndarray, threshold: float | None = None) -> tuple[list[str], np.ndarray]:
        s = self.scores(X)
        t = self.config.threshold if threshold is None else threshold
        return [MALICIOUS if v > t else BENIGN for v in s], s

    # -- persistence: magic, u32 header length, JSON header, float32 params --

    MAGIC = b"APKMLP1\n"

    def save(self, path, meta: dict | None = None):
        header = {
            "format_version": 1,
            "config": self.config.to_json(),
            "shapes": [list(p.shape) for p in self.params],
            "history": [[e, loss] for e, loss in self.history],
            "meta": meta or {},
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with Path(path).open("wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for p in self.params:
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> MlpModel:
        data = Path(path).read_bytes()
        if not data.startswith(cls.MAGIC):
            raise ValueError(f"{path}: not a model file")
        off = len(cls.MAGIC)
        (n,) = struct.unpack_from("<I", data, off)
        header = json.loads(data[off + 4: off + 4 + n])
        off += 4 + n
        params = []
        for shape in header["shapes"]:
            count = int(np.prod(shape))
            params.append(np.frombuffer(data, "<f4", count, off).reshape(shape).astype(np.float64))
            off += 4 * count
        cfg = MlpConfig.from_dict(header["config"])
        history = [(int(e), float(v)) for e, v in header["history"]]
        return cls(cfg, params[0::2], params[1::2], history, header.get("meta", {}))


# ----------------------------------------------------------------------------
# datasets


@dataclass
class LabeledDataset:
    apk_ids: list[str]
    X: np.ndarray
    y: np.ndarray  # 1 = malicious
    split_seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if len(set(self.apk_ids)) != len(self.apk_ids):
            raise ValueError("apk_ids must be unique")
        if self.X.shape[0] != len(self.apk_ids) or self.y.shape != (len(self.apk_ids),):
            raise ValueError("rows, labels and ids must align")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("labels must be binary")

    @classmethod
    def from_labels(cls, apk_ids, X, labels, split_seed=0, train_fraction=0.8) -> LabeledDataset:
        return cls(list(apk_ids), X, np.array([label_to_int(lab) for lab in labels]), split_seed, train_fraction)

    def split_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Stratified split: per class, ids sorted then shuffled by ``split_seed``.

        Depends only on the (id, label) set, never on row order.
        """
        rng = np.random.default_rng(self.split_seed)
        train, test = [], []
        for cls_value in (0.0, 1.0):
            idx = [i for i in range(len(self.apk_ids)) if self.y[i] == cls_value]
            idx.sort(key=lambda i: self.apk_ids[i])
            perm = [idx[j] for j in rng.permutation(len(idx))]
            n_train = int(round(self.train_fraction * len(perm)))
            train += perm[:n_train]
            test += perm[n_train:]
        key = lambda i: self.apk_ids[i]  # noqa: E731
        return np.array(sorted(train, key=key), dtype=int), np.array(sorted(test, key=key), dtype=int)

    def subset(self, idx: np.ndarray) -> LabeledDataset:
        return LabeledDataset([self.apk_ids[i] for i in idx], self.X[idx], self.y[idx], self.split_seed, 1.0)

    def train_split(self) -> LabeledDataset:
        return self.subset(self.split_indices()[0])

    def test_split(self) -> LabeledDataset:
        return self.subset(self.split_indices()[1])


# ----------------------------------------------------------------------------
# training


def train(data: LabeledDataset, cfg: MlpConfig, use_full: bool = False) -> MlpModel:
    """Fit on the training split (or on every row with ``use_full``)."""
    tr = data if use_full else data.train_split()
    if tr.X.shape[1] != cfg.input_dim:
        raise DimMismatch(cfg.input_dim, tr.X.shape[1])
    if len(set(tr.y.tolist())) < 2:
        raise SingleClassTraining("training split must contain both classes")
    model = MlpModel.init(cfg)
    rng = np.random.default_rng(cfg.init_seed + 1)
    n = len(tr.y)
    loss0, _ = model.loss_and_grads(tr.X, tr.y)
    model.history.append((0, loss0))
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(tr.X[b], tr.y[b])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch)
            for p, g in zip(model.params, grads):
                p -= cfg.learning_rate * g
        full_loss = bce_with_logits(model.logits(tr.X), tr.y)
        if not np.isfinite(full_loss):
            raise NonFiniteLoss(epoch)
        model.history.append((epoch, full_loss))
    return model


def grad_check(model: MlpModel, X: np.ndarray, y: np.ndarray, n_params: int = 128,
               seed: int = 0, eps: float = 1e-4, corrupt=None) -> float:
    """Max relative error between backprop and central differences on sampled parameters.

    ``corrupt`` (test hook) receives the analytic gradient list and may alter it in place.
    """
    if len(y) == 0:
        raise ValueError("grad_check needs a non-empty batch")
    _, grads = model.loss_and_grads(X, y)
    if corrupt is not None:
        corrupt(grads)
    params = model.params
    sizes = np.array([p.size for p in params])
    rng = np.random.default_rng(seed)
    flat = rng.choice(int(sizes.sum()), size=min(n_params, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for f in np.sort(flat):
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        idx = np.unravel_index(int(f - offsets[k]), params[k].shape)
        p = params[k]
        orig = p[idx]
        p[idx] = orig + eps
        up, _ = model.loss_and_grads(X, y)
        p[idx] = orig - eps
        down, _ = model.loss_and_grads(X, y)
        p[idx] = orig
        num = (up - down) / (2 * eps)
        ana = grads[k][idx]
        denom = max(abs(ana), abs(num), 1e-7)
        worst = max(worst, abs(ana - num) / denom)
    return worst


# ----------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def acc(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def f1(self) -> float | None:
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    @property
    def f1_direct(self) -> float | None:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else None

    def as_rows(self) -> list[tuple[str, str]]:
        def fmt(v):
            if v is None:
                return "undefined"
            return str(v) if isinstance(v, int) else f"{v:.6f}"

        return [
            ("TP", fmt(self.tp)), ("TN", fmt(self.tn)), ("FP", fmt(self.fp)), ("FN", fmt(self.fn)),
            ("ACC", fmt(self.acc)), ("Precision", fmt(self.precision)),
            ("Recall", fmt(self.recall)), ("F1", fmt(self.f1)),
        ]

    def to_tsv(self) -> str:
        return "metric\tvalue\n" + "".join(f"{k}\t{v}\n" for k, v in self.as_rows())


def confusion(y_true, y_pred) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    return MetricsReport(
        tp=int(np.sum((y_true == 1) & (y_pred == 1))),
        tn=int(np.sum((y_true == 0) & (y_pred == 0))),
        fp=int(np.sum((y_true == 0) & (y_pred == 1))),
        fn=int(np.sum((y_true == 1) & (y_pred == 0))),
    )


def evaluate(model: MlpModel, data: LabeledDataset, use_full: bool = False) -> MetricsReport:
    te = data if use_full else data.test_split()
    if len(te.y) == 0:
        raise EmptyTestSplit("test split is empty")
    labels, _ = model.predict_batch(te.X)
    return confusion(te.y, [label_to_int(lab) for lab in labels])

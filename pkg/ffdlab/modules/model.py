"""Residual multilayer perceptron for 3-class labels, trained with Adam.

Layout of the network:

    initial block    h = A2(act(A1(x)))
    residual block   h = h + act(B2(act(B1(h))))      (repeated)
    output layer     logits = O(h)

Everything is plain numpy with hand-written backpropagation so that the
gradients can be checked against finite differences.
"""

import json
import zipfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from loguru import logger
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from ffdlab.errors import (
    DimensionMismatch,
    EmptyInput,
    LengthMismatch,
    NonFiniteLoss,
)

MODEL_FORMAT = "ffdlab-mlp"
MODEL_VERSION = 1
CLASS_NAMES = ("down", "flat", "up")


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 16
    hidden_dim: int = 64
    n_residual_blocks: int = 2
    n_classes: int = 3
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    activation: str = "relu"
    leaky_slope: float = 0.01

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.n_classes) < 1:
            raise ValueError("network dimensions must be positive")
        if self.n_residual_blocks < 0:
            raise ValueError("n_residual_blocks must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.activation not in ("relu", "leaky_relu"):
            raise ValueError(f"unknown activation '{self.activation}'")


@dataclass(frozen=True)
class MlpModel:
    config: MlpConfig
    params: dict
    loss_history: list = field(default_factory=list)

    def freeze(self) -> "MlpModel":
        for value in self.params.values():
            value.setflags(write=False)
        return self


@dataclass(frozen=True)
class ClassificationReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_avg: tuple
    weighted_avg: tuple
    accuracy: float
    confusion_matrix: np.ndarray
    zero_division: dict

    def to_dict(self) -> dict:
        classes = {
            str(i): {
                "precision": float(self.precision[i]),
                "recall": float(self.recall[i]),
                "f1-score": float(self.f1[i]),
                "support": int(self.support[i]),
            }
            for i in range(len(self.support))
        }
        total = int(self.support.sum())
        metrics = ("precision", "recall", "f1-score")
        return {
            "classes": classes,
            "accuracy": float(self.accuracy),
            "macro avg": {
                **dict(zip(metrics, map(float, self.macro_avg))),
                "support": total,
            },
            "weighted avg": {
                **dict(zip(metrics, map(float, self.weighted_avg))),
                "support": total,
            },
            "confusion_matrix": self.confusion_matrix.tolist(),
            "zero_division": {
                k: [bool(x) for x in v] for k, v in self.zero_division.items()
            },
        }

    def to_text(self, digits: int = 2) -> str:
        n = len(self.support)
        width = max(len("weighted avg"), *(len(str(i)) for i in range(n)))

        def row(name, cells, support):
            body = " ".join(
                f"{'':>9}" if c is None else f"{c:>9.{digits}f}" for c in cells
            )
            return f"{name:>{width}} {body} {support:>9}"

        cols = ("precision", "recall", "f1-score", "support")
        head = f"{'':>{width}} " + " ".join(f"{c:>9}" for c in cols)
        lines = [head, ""]
        for i in range(n):
            cells = (self.precision[i], self.recall[i], self.f1[i])
            lines.append(row(str(i), cells, int(self.support[i])))
        total = int(self.support.sum())
        lines.append("")
        lines.append(row("accuracy", (None, None, self.accuracy), total))
        lines.append(row("macro avg", self.macro_avg, total))
        lines.append(row("weighted avg", self.weighted_avg, total))
        return "\n".join(lines) + "\n"


# layers


def _act(z: np.ndarray, cfg: MlpConfig) -> np.ndarray:
    if cfg.activation == "relu":
        return np.maximum(z, 0.0)
    return np.where(z > 0, z, cfg.leaky_slope * z)


def _act_grad(z: np.ndarray, cfg: MlpConfig) -> np.ndarray:
    if cfg.activation == "relu":
        return (z > 0).astype(z.dtype)
    return np.where(z > 0, 1.0, cfg.leaky_slope)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(y)), y].mean())


def _he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(cfg: MlpConfig, rng: np.random.Generator | None = None) -> dict:
    rng = rng or np.random.default_rng(cfg.seed)
    h = cfg.hidden_dim
    params = {
        "init.W1": _he_uniform(rng, cfg.input_dim, h),
        "init.b1": np.zeros(h),
        "init.W2": _he_uniform(rng, h, h),
        "init.b2": np.zeros(h),
    }
    for i in range(cfg.n_residual_blocks):
        params[f"block{i}.W1"] = _he_uniform(rng, h, h)
        params[f"block{i}.b1"] = np.zeros(h)
        params[f"block{i}.W2"] = _he_uniform(rng, h, h)
        params[f"block{i}.b2"] = np.zeros(h)
    params["out.W"] = _he_uniform(rng, h, cfg.n_classes)
    params["out.b"] = np.zeros(cfg.n_classes)
    return params


def _forward(params: dict, cfg: MlpConfig, x: np.ndarray):
    cache = {"x": x}
    z1 = x @ params["init.W1"] + params["init.b1"]
    a1 = _act(z1, cfg)
    h = a1 @ params["init.W2"] + params["init.b2"]
    cache["init"] = (z1, a1)
    for i in range(cfg.n_residual_blocks):
        p = f"block{i}"
        bz1 = h @ params[f"{p}.W1"] + params[f"{p}.b1"]
        ba1 = _act(bz1, cfg)
        bz2 = ba1 @ params[f"{p}.W2"] + params[f"{p}.b2"]
        cache[p] = (h, bz1, ba1, bz2)
        h = h + _act(bz2, cfg)
    cache["h"] = h
    logits = h @ params["out.W"] + params["out.b"]
    return logits, cache


def _backward(
    params: dict, cfg: MlpConfig, cache: dict, probs: np.ndarray, y: np.ndarray
) -> dict:
    n = len(y)
    grads = {}
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    grads["out.W"] = cache["h"].T @ dlogits
    grads["out.b"] = dlogits.sum(axis=0)
    dh = dlogits @ params["out.W"].T

    for i in reversed(range(cfg.n_residual_blocks)):
        p = f"block{i}"
        h_in, bz1, ba1, bz2 = cache[p]
        dz2 = dh * _act_grad(bz2, cfg)
        grads[f"{p}.W2"] = ba1.T @ dz2
        grads[f"{p}.b2"] = dz2.sum(axis=0)
        dz1 = (dz2 @ params[f"{p}.W2"].T) * _act_grad(bz1, cfg)
        grads[f"{p}.W1"] = h_in.T @ dz1
        grads[f"{p}.b1"] = dz1.sum(axis=0)
        dh = dh + dz1 @ params[f"{p}.W1"].T

    z1, a1 = cache["init"]
    grads["init.W2"] = a1.T @ dh
    grads["init.b2"] = dh.sum(axis=0)
    dz1 = (dh @ params["init.W2"].T) * _act_grad(z1, cfg)
    grads["init.W1"] = cache["x"].T @ dz1
    grads["init.b1"] = dz1.sum(axis=0)
    return grads


def loss_and_grads(params: dict, cfg: MlpConfig, x: np.ndarray, y: np.ndarray):
    logits, cache = _forward(params, cfg, x)
    probs = softmax(logits)
    return cross_entropy(logits, y), _backward(params, cfg, cache, probs, y)


def _check_input(model_or_cfg, batch: np.ndarray) -> np.ndarray:
    cfg = model_or_cfg.config if isinstance(model_or_cfg, MlpModel) else model_or_cfg
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise DimensionMismatch(
            f"expected batch with {cfg.input_dim} columns, got shape {x.shape}"
        )
    return x


def forward(model: MlpModel, batch) -> tuple[np.ndarray, np.ndarray]:
    x = _check_input(model, batch)
    logits, _ = _forward(model.params, model.config, x)
    return logits, softmax(logits)


def fit(x, y, cfg: MlpConfig) -> MlpModel:
    """Mini-batch Adam on mean cross-entropy; deterministic for a given seed.

    ``loss_history[e]`` is the full training-set loss after epoch ``e``.
    """
    x = _check_input(cfg, x)
    y = np.asarray(y, dtype=np.int64)
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} rows but {len(y)} labels")
    if len(x) < cfg.batch_size:
        raise ValueError(
            f"{len(x)} training rows is fewer than batch_size={cfg.batch_size}"
        )
    if y.min() < 0 or y.max() >= cfg.n_classes:
        raise ValueError(f"labels must lie in [0, {cfg.n_classes})")

    init_seed, shuffle_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    params = init_params(cfg, np.random.default_rng(init_seed))
    shuffle_rng = np.random.default_rng(shuffle_seed)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    history = []

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(params, cfg, x[idx], y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, cfg.learning_rate)
            step += 1
            for k in params:
                g = grads[k]
                m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g
                v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g
                m_hat = m[k] / (1 - cfg.beta1**step)
                v_hat = v[k] / (1 - cfg.beta2**step)
                step_size = cfg.learning_rate * m_hat
                params[k] = params[k] - step_size / (np.sqrt(v_hat) + cfg.epsilon)

        logits, _ = _forward(params, cfg, x)
        epoch_loss = cross_entropy(logits, y)
        if not np.isfinite(epoch_loss):
            raise NonFiniteLoss(epoch, cfg.learning_rate)
        history.append(epoch_loss)
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            logger.debug(f"epoch {epoch}: train loss {epoch_loss:.6f}")

    logger.info(
        f"Trained MLP for {cfg.epochs} epochs, final train loss {history[-1]:.6f}"
    )
    return MlpModel(config=cfg, params=params, loss_history=history).freeze()


def train(dataset, cfg: MlpConfig) -> MlpModel:
    """Fit on the dataset's training rows; ``input_dim`` follows the data."""
    if cfg.input_dim != dataset.X_train.shape[1]:
        cfg = replace(cfg, input_dim=dataset.X_train.shape[1])
    return fit(dataset.X_train, dataset.y_train, cfg)


def argmax_classes(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the lowest class
    return np.argmax(np.asarray(logits), axis=1).astype(np.int64)


def predict(model: MlpModel, features) -> np.ndarray:
    logits, _ = forward(model, features)
    return argmax_classes(logits)


def classification_report(y_true, y_pred, n_classes: int = 3) -> ClassificationReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    if len(y_true) == 0:
        raise EmptyInput("no labels to score")
    labels = list(range(n_classes))
    for arr in (y_true, y_pred):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"labels must lie in [0, {n_classes})")

    cm = confusion_matrix(y_true, y_pred, labels=labels)
    precision, recall, f1, support = precision_recall_fscore_support(
        y_true, y_pred, labels=labels, zero_division=0
    )
    predicted = cm.sum(axis=0)
    zero_division = {
        "precision": predicted == 0,
        "recall": support == 0,
        "f1": (precision + recall) == 0,
    }
    if any(flags.any() for flags in zero_division.values()):
        logger.warning("Some metrics had a zero denominator and were set to 0")

    macro = (float(precision.mean()), float(recall.mean()), float(f1.mean()))
    weights = support / support.sum()
    weighted = (
        float(precision @ weights),
        float(recall @ weights),
        float(f1 @ weights),
    )
    return ClassificationReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        macro_avg=macro,
        weighted_avg=weighted,
        accuracy=float(np.trace(cm) / cm.sum()),
        confusion_matrix=cm,
        zero_division=zero_division,
    )


def save_model(model: MlpModel, path: str, config_hash: str | None = None) -> None:
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": asdict(model.config),
        "param_names": list(model.params),
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    arrays = {
        "header": np.array(json.dumps(header, sort_keys=True)),
        "loss_history": np.asarray(model.loss_history, dtype=np.float64),
        **{f"param::{k}": v for k, v in model.params.items()},
    }
    # np.savez layout with fixed entry dates
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, value in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as f:
                np.lib.format.write_array(f, np.asanyarray(value), allow_pickle=False)


def model_header(path: str) -> dict:
    with np.load(path, allow_pickle=False) as data:
        return json.loads(str(data["header"]))


def load_model(path: str) -> MlpModel:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path} is not an ffdlab model file")
        if header.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {header.get('version')}")
        params = {k: np.array(data[f"param::{k}"]) for k in header["param_names"]}
        history = data["loss_history"].tolist()
    return MlpModel(
        config=MlpConfig(**header["config"]), params=params, loss_history=history
    ).freeze()

"""MLP encoder/classifier trained with a centroid-constrained embedding loss.

Everything is plain numpy with hand-written backpropagation. The encoder is
``q -> 256 -> 64 -> 3`` (ReLU on the two wide layers, linear embedding) and
the classifier is a single ``3 -> k`` layer followed by softmax.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, DataSplits, NormStats

HIDDEN = (256, 64)
EMBED_DIM = 3
PROB_FLOOR = 1e-12
MODEL_VERSION = "driftlab-model/1"


class TrainingDiverged(RuntimeError):
    """Raised when a loss or parameter becomes non-finite during training."""


@dataclass
class MlpParams:
    """Weights are stored ``(fan_in, fan_out)``; the last layer is the classifier."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def q(self) -> int:
        return self.weights[0].shape[0]

    @property
    def k(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    dropout_rate: float = 0.25
    weight_decay: float = 0.001
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        for name in ("learning_rate", "momentum", "dropout_rate", "weight_decay"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class TrainHistory:
    loss_c: list[float] = field(default_factory=list)
    loss_ce: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    valid_acc: list[float] = field(default_factory=list)


@dataclass
class Model:
    """A trained network together with what is needed to apply it."""

    params: MlpParams
    centroids: np.ndarray
    norm: Optional[NormStats]
    config: TrainConfig
    constrained: bool
    data_seed: Optional[int] = None

    def embed(self, x: np.ndarray) -> np.ndarray:
        return forward(self.params, x)[0]


def init_params(q: int, k: int, rng: np.random.Generator) -> MlpParams:
    sizes = [q, *HIDDEN, EMBED_DIM, k]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _forward_cache(params: MlpParams, x: np.ndarray, masks: Optional[list[np.ndarray]] = None):
    acts = [x]
    pre = []
    h = x
    for layer in range(len(HIDDEN)):
        a = h @ params.weights[layer] + params.biases[layer]
        pre.append(a)
        h = np.maximum(a, 0.0)
        if masks is not None:
            h = h * masks[layer]
        acts.append(h)
    emb = h @ params.weights[2] + params.biases[2]
    logits = emb @ params.weights[3] + params.biases[3]
    return emb, _log_softmax(logits), acts, pre


def forward(
    params: MlpParams,
    x: np.ndarray,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    dropout_rate: float = 0.25,
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(embedding, probs)`` for one sample or a batch.

    ``mode="train"`` applies inverted dropout to the two wide hidden layers
    and requires ``rng``; ``mode="eval"`` is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != params.q:
        raise ValueError(f"input arity {xb.shape[1]} does not match model arity {params.q}")
    masks = None
    if mode == "train":
        if rng is None:
            raise ValueError("train mode needs an rng for dropout")
        masks = dropout_masks(rng, xb.shape[0], dropout_rate)
    elif mode != "eval":
        raise ValueError(f"unknown mode {mode!r}")
    emb, logp, _, _ = _forward_cache(params, xb, masks)
    probs = np.exp(logp)
    if single:
        return emb[0], probs[0]
    return emb, probs


def dropout_masks(rng: np.random.Generator, b: int, rate: float) -> list[np.ndarray]:
    keep = 1.0 - rate
    return [(rng.random((b, width)) < keep) / keep for width in HIDDEN]


# ----------------------------------------------------------------------- losses


def centroid_regularizer(C: np.ndarray) -> tuple[float, np.ndarray]:
    """``-sum_l log(min_{j != l} ||C_l - C_j||)`` and its gradient; 0 for k = 1."""
    k = C.shape[0]
    grad = np.zeros_like(C)
    if k < 2:
        return 0.0, grad
    diff = C[:, None, :] - C[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    nearest = dist.argmin(axis=1)
    value = 0.0
    for l in range(k):
        j = nearest[l]
        dlj = dist[l, j]
        value -= math.log(dlj)
        g = diff[l, j] / (dlj * dlj)
        grad[l] -= g
        grad[j] += g
    return value, grad


def _embedding_loss(emb: np.ndarray, labels: np.ndarray, C: np.ndarray):
    b = emb.shape[0]
    diff = emb[:, None, :] - C[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    own = diff[np.arange(b), labels]
    intra = (own**2).sum(axis=1)
    s = -dist
    smax = s.max(axis=1, keepdims=True)
    expo = np.exp(s - smax)
    lse = np.log(expo.sum(axis=1)) + smax[:, 0]
    attn = expo / expo.sum(axis=1, keepdims=True)
    safe = np.where(dist > 0, dist, 1.0)
    unit = np.where((dist > 0)[:, :, None], diff / safe[:, :, None], 0.0)
    reg, grad_reg = centroid_regularizer(C)
    loss = float(np.mean(intra + lse)) + reg

    # d/d e_i and d/d C_j of the batch mean
    pull = 2.0 * own
    push = (attn[:, :, None] * unit).sum(axis=1)
    grad_emb = (pull - push) / b
    grad_C = np.zeros_like(C)
    np.add.at(grad_C, labels, -pull / b)
    grad_C += (attn[:, :, None] * unit).sum(axis=0) / b
    grad_C += grad_reg
    return loss, grad_emb, grad_C


def compute_losses(embeddings: np.ndarray, probs: np.ndarray, labels: np.ndarray, C: np.ndarray):
    """Classification and constrained-embedding losses for a batch.

    Returns ``(loss_c, loss_ce)``. Probabilities are floored at 1e-12 before
    the log.
    """
    labels = np.asarray(labels, dtype=np.int64)
    b = embeddings.shape[0]
    if b < 1:
        raise ValueError("empty batch")
    p_true = np.maximum(probs[np.arange(b), labels], PROB_FLOOR)
    loss_c = float(-np.mean(np.log(p_true)))
    loss_ce, _, _ = _embedding_loss(np.asarray(embeddings, float), labels, np.asarray(C, float))
    return loss_c, loss_ce


def loss_and_grads(
    params: MlpParams,
    C: Optional[np.ndarray],
    x: np.ndarray,
    labels: np.ndarray,
    masks: Optional[list[np.ndarray]] = None,
):
    """Total loss ``L_c (+ L_ce if C is given)`` and gradients.

    Returns ``(loss_c, loss_ce, param_grads, centroid_grad)`` where
    ``param_grads`` mirrors ``params.arrays()``. No weight decay here.
    """
    b = x.shape[0]
    emb, logp, acts, pre = _forward_cache(params, x, masks)
    rows = np.arange(b)
    logp_true = logp[rows, labels]
    floor = math.log(PROB_FLOOR)
    clamped = logp_true < floor
    loss_c = float(-np.mean(np.maximum(logp_true, floor)))

    dz = np.exp(logp)
    dz[rows, labels] -= 1.0
    dz[clamped] = 0.0
    dz /= b

    W = params.weights
    gW = [None] * 4
    gb = [None] * 4
    gW[3] = emb.T @ dz
    gb[3] = dz.sum(axis=0)
    d_emb = dz @ W[3].T

    loss_ce = 0.0
    grad_C = None
    if C is not None:
        loss_ce, g_emb_ce, grad_C = _embedding_loss(emb, labels, C)
        d_emb = d_emb + g_emb_ce

    gW[2] = acts[2].T @ d_emb
    gb[2] = d_emb.sum(axis=0)
    delta = d_emb @ W[2].T
    for layer in (1, 0):
        if masks is not None:
            delta = delta * masks[layer]
        delta = delta * (pre[layer] > 0)
        gW[layer] = acts[layer].T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer:
            delta = delta @ W[layer].T
    return loss_c, loss_ce, gW + gb, grad_C


# --------------------------------------------------------------------- training


def evaluate_accuracy(params: MlpParams, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of eval-mode argmax predictions equal to the label (ties -> lowest index)."""
    if len(labels) == 0:
        raise ValueError("cannot evaluate accuracy on an empty slice")
    _, probs = forward(params, features)
    return float(np.mean(probs.argmax(axis=1) == labels))


def train(
    ds: Dataset,
    splits: DataSplits,
    cfg: TrainConfig,
    constrained: bool = True,
) -> tuple[MlpParams, Optional[np.ndarray], TrainHistory]:
    """SGD with momentum on ``L_c + L_ce`` (or ``L_c`` alone when unconstrained).

    Only the ``fit`` part of the train range receives gradient steps; the
    ``validation`` tail is used for per-epoch accuracy. L2 decay touches the
    weight matrices only.
    """
    cfg.validate()
    fit = np.arange(splits.fit.start, splits.fit.stop)
    val = np.arange(splits.validation.start, splits.validation.stop)
    if fit.size == 0:
        raise ValueError("train split is empty")
    x_fit, y_fit = ds.features[fit], ds.labels[fit]
    present = np.unique(ds.labels[splits.train.start : splits.train.stop])
    if present.size != ds.k:
        missing = sorted(set(range(ds.k)) - set(present.tolist()))
        raise ValueError(f"classes {missing} are absent from the train split")

    rng = np.random.default_rng([cfg.seed, 1])
    params = init_params(ds.q, ds.k, rng)
    C = rng.standard_normal((ds.k, EMBED_DIM)) if constrained else None
    arrays = params.arrays()
    velocity = [np.zeros_like(a) for a in arrays]
    c_velocity = np.zeros_like(C) if C is not None else None
    n_weights = len(params.weights)
    history = TrainHistory()

    for _epoch in range(cfg.epochs):
        order = rng.permutation(fit.size)
        sum_c = sum_ce = 0.0
        n_batches = 0
        for start in range(0, fit.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            masks = dropout_masks(rng, idx.size, cfg.dropout_rate) if cfg.dropout_rate > 0 else None
            lc, lce, grads, gC = loss_and_grads(params, C, x_fit[idx], y_fit[idx], masks)
            if not (math.isfinite(lc) and math.isfinite(lce)):
                raise TrainingDiverged(f"non-finite loss at epoch {_epoch}")
            sum_c += lc
            sum_ce += lce
            n_batches += 1
            for i, (a, g) in enumerate(zip(arrays, grads)):
                if i < n_weights and cfg.weight_decay:
                    g = g + cfg.weight_decay * a
                velocity[i] *= cfg.momentum
                velocity[i] += g
                a -= cfg.learning_rate * velocity[i]
            if C is not None:
                c_velocity *= cfg.momentum
                c_velocity += gC
                C -= cfg.learning_rate * c_velocity
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise TrainingDiverged(f"non-finite parameters after epoch {_epoch}")
        history.loss_c.append(sum_c / n_batches)
        history.loss_ce.append(sum_ce / n_batches)
        history.train_acc.append(evaluate_accuracy(params, x_fit, y_fit))
        if val.size:
            history.valid_acc.append(evaluate_accuracy(params, ds.features[val], ds.labels[val]))
        else:
            history.valid_acc.append(float("nan"))
    return params, C, history


def compute_centroids_posthoc(params: MlpParams, features: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Per-class mean of eval-mode embeddings."""
    emb, _ = forward(params, features)
    C = np.empty((k, EMBED_DIM))
    for j in range(k):
        mask = labels == j
        if not mask.any():
            raise ValueError(f"class {j} has no samples")
        C[j] = emb[mask].mean(axis=0)
    return C


def fit_model(
    ds: Dataset,
    splits: DataSplits,
    cfg: TrainConfig,
    constrained: bool,
    norm: Optional[NormStats] = None,
    data_seed: Optional[int] = None,
) -> tuple[Model, TrainHistory]:
    """Train and, for unconstrained runs, attach post-hoc centroids."""
    params, C, history = train(ds, splits, cfg, constrained)
    if C is None:
        tr = slice(splits.train.start, splits.train.stop)
        C = compute_centroids_posthoc(params, ds.features[tr], ds.labels[tr], ds.k)
    return Model(params, C, norm, cfg, constrained, data_seed), history


# ---------------------------------------------------------------- serialization


def model_to_dict(model: Model) -> dict:
    p = model.params
    return {
        "version": MODEL_VERSION,
        "layers": [
            {
                "shape": list(w.shape),
                "weights": w.ravel(order="C").tolist(),
                "bias": b.tolist(),
            }
            for w, b in zip(p.weights, p.biases)
        ],
        "centroids": model.centroids.tolist(),
        "norm_stats": model.norm.to_dict() if model.norm is not None else None,
        "train_config": asdict(model.config),
        "constrained": model.constrained,
        "data_seed": model.data_seed,
    }


def model_from_dict(d: dict) -> Model:
    if d.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {d.get('version')!r}")
    weights, biases = [], []
    for layer in d["layers"]:
        weights.append(np.asarray(layer["weights"], dtype=np.float64).reshape(layer["shape"]))
        biases.append(np.asarray(layer["bias"], dtype=np.float64))
    norm = NormStats.from_dict(d["norm_stats"]) if d.get("norm_stats") else None
    return Model(
        MlpParams(weights, biases),
        np.asarray(d["centroids"], dtype=np.float64),
        norm,
        TrainConfig(**d["train_config"]),
        bool(d["constrained"]),
        d.get("data_seed"),
    )


def save_model(model: Model, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path: str | os.PathLike) -> Model:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))

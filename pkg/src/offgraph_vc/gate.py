"""Instance-conditioned softmax gate over three rationale embeddings.

A shared scorer ``g`` rates each view ``[r_i || a]``; the softmax of the
scores mixes the views into ``r_f``; an auxiliary head ``h`` maps
``[r_f || a]`` to a success probability used only as a training signal and
a diagnostic. An optional query/key term adds ``(a W_Q) . (r_i W_K) / sqrt(k)``
to each view score.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .nn import AdamW, Params, load_checkpoint, relu, save_checkpoint, softmax, stable_sigmoid, uniform_init

logger = logging.getLogger(__name__)

KIND = "gate"
N_VIEWS = 3
DEFAULT_RATIONALE_DIM = 384
DEFAULT_ATTR_DIM = 14
PROB_EPS = 1e-12


@dataclass
class GateConfig:
    epochs: int = 50
    lr: float = 5e-4
    batch_size: int = 256
    hidden: int = 256
    weight_decay: float = 0.01
    seed: int = 0
    attention: bool = False
    key_dim: int = 64
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0 or self.hidden <= 0 or self.lr <= 0:
            raise ValueError("epochs, batch_size, hidden and lr must be positive")


@dataclass
class GateInput:
    r: np.ndarray  # (3, d_r), rows in canonical view order
    a: np.ndarray  # (d_a,) one-hot attributes

    def __post_init__(self) -> None:
        self.r = np.asarray(self.r, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.r.ndim != 2 or self.r.shape[0] != N_VIEWS:
            raise ValueError(f"expected ({N_VIEWS}, d_r) rationale matrix, got {self.r.shape}")
        if self.a.ndim != 1:
            raise ValueError("attribute vector must be 1-D")


@dataclass
class GateOutput:
    weights: np.ndarray
    fused: np.ndarray
    p: float


@dataclass
class GateData:
    r: np.ndarray  # (N, 3, d_r)
    a: np.ndarray  # (N, d_a)
    y: np.ndarray  # (N,)

    def __post_init__(self) -> None:
        self.r = np.asarray(self.r, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.r.ndim != 3 or self.r.shape[1] != N_VIEWS:
            raise ValueError(f"rationale tensor must be (N, {N_VIEWS}, d_r), got {self.r.shape}")
        if not (len(self.r) == len(self.a) == len(self.y)):
            raise ValueError("r, a and y lengths differ")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "GateData":
        return GateData(self.r[idx], self.a[idx], self.y[idx])

    @classmethod
    def from_inputs(cls, inputs: Sequence[GateInput], labels: Sequence[int]) -> "GateData":
        return cls(np.stack([g.r for g in inputs]), np.stack([g.a for g in inputs]), np.asarray(labels))


class GateModel:
    def __init__(self, params: Params, attention: bool = False, meta: Optional[dict] = None):
        self.params = params
        self.attention = attention
        self.meta = dict(meta or {})

    @classmethod
    def init(
        cls,
        rationale_dim: int = DEFAULT_RATIONALE_DIM,
        attr_dim: int = DEFAULT_ATTR_DIM,
        hidden: int = 256,
        seed: int = 0,
        attention: bool = False,
        key_dim: int = 64,
    ) -> "GateModel":
        rng = np.random.default_rng(seed)
        f = rationale_dim + attr_dim
        params = {
            "g_W1": uniform_init(rng, f, (f, hidden)),
            "g_b1": uniform_init(rng, f, (hidden,)),
            # zero output layer: every view starts with the same score
            "g_W2": np.zeros(hidden),
            "g_b2": np.zeros(1),
            "h_W1": uniform_init(rng, f, (f, hidden)),
            "h_b1": uniform_init(rng, f, (hidden,)),
            "h_W2": uniform_init(rng, hidden, (hidden,)),
            "h_b2": uniform_init(rng, hidden, (1,)),
        }
        if attention:
            params["W_Q"] = np.zeros((attr_dim, key_dim))
            params["W_K"] = uniform_init(rng, rationale_dim, (rationale_dim, key_dim))
        meta = {"rationale_dim": rationale_dim, "attr_dim": attr_dim, "hidden": hidden, "attention": attention}
        return cls(params, attention, meta)

    @property
    def rationale_dim(self) -> int:
        return self.params["h_W1"].shape[0] - self.attr_dim

    @property
    def attr_dim(self) -> int:
        return int(self.meta.get("attr_dim", DEFAULT_ATTR_DIM))

    def check(self, r: np.ndarray, a: np.ndarray) -> None:
        if r.shape[-1] != self.rationale_dim or a.shape[-1] != self.attr_dim:
            raise ValueError(
                f"gate expects d_r={self.rationale_dim}, d_a={self.attr_dim}; got {r.shape[-1]}, {a.shape[-1]}"
            )

    def forward_batch(self, r: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        self.check(r, a)
        cache = _forward(self.params, r, a, self.attention)
        return cache["w"], cache["rf"], cache["p"]

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, KIND, self.params, {**self.meta, "attention": self.attention})

    @classmethod
    def load(cls, path: str | Path) -> "GateModel":
        params, meta = load_checkpoint(path, KIND)
        return cls(params, bool(meta.get("attention", False)), meta)


def _view_inputs(r: np.ndarray, a: np.ndarray) -> np.ndarray:
    n = r.shape[0]
    return np.concatenate([r, np.broadcast_to(a[:, None, :], (n, N_VIEWS, a.shape[1]))], axis=2)


def _forward(params: Params, r: np.ndarray, a: np.ndarray, attention: bool, weights: Optional[np.ndarray] = None) -> dict:
    c: dict = {"r": r, "a": a}
    if weights is None:
        x = _view_inputs(r, a)  # (B, 3, F)
        z = x @ params["g_W1"] + params["g_b1"]
        hid = relu(z)
        s = hid @ params["g_W2"] + params["g_b2"][0]
        if attention:
            kd = params["W_K"].shape[1]
            q = a @ params["W_Q"]  # (B, k)
            k = r @ params["W_K"]  # (B, 3, k)
            s = s + np.einsum("bk,bvk->bv", q, k) / math.sqrt(kd)
            c.update(q=q, k=k)
        w = softmax(s, axis=1)
        c.update(x=x, z=z, hid=hid, s=s)
    else:
        w = weights
    rf = np.einsum("bv,bvd->bd", w, r)
    u = np.concatenate([rf, a], axis=1)
    zh = u @ params["h_W1"] + params["h_b1"]
    hh = relu(zh)
    o = hh @ params["h_W2"] + params["h_b2"][0]
    p = stable_sigmoid(o)
    c.update(w=w, rf=rf, u=u, zh=zh, hh=hh, o=o, p=p)
    return c


def bce(y: np.ndarray, o: np.ndarray) -> float:
    """Mean binary cross-entropy from logits (numerically stable)."""
    return float(np.mean(np.logaddexp(0.0, o) - y * o))


def loss_and_grads(
    params: Params,
    r: np.ndarray,
    a: np.ndarray,
    y: np.ndarray,
    attention: bool = False,
    weights: Optional[np.ndarray] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean BCE and its closed-form gradient.

    With ``weights`` given the scorer is bypassed and only the head
    receives gradients.
    """
    c = _forward(params, r, a, attention, weights)
    n = len(y)
    loss = bce(y, c["o"])
    do = (c["p"] - y) / n
    g: dict[str, np.ndarray] = {}
    g["h_W2"] = c["hh"].T @ do
    g["h_b2"] = np.array([do.sum()])
    dzh = np.outer(do, params["h_W2"]) * (c["zh"] > 0)
    g["h_W1"] = c["u"].T @ dzh
    g["h_b1"] = dzh.sum(axis=0)
    if weights is not None:
        return loss, g
    d_r = r.shape[2]
    drf = (dzh @ params["h_W1"].T)[:, :d_r]
    dw = np.einsum("bd,bvd->bv", drf, r)
    w = c["w"]
    ds = w * (dw - np.sum(w * dw, axis=1, keepdims=True))
    g["g_W2"] = np.einsum("bvh,bv->h", c["hid"], ds)
    g["g_b2"] = np.array([ds.sum()])
    dz = ds[:, :, None] * params["g_W2"] * (c["z"] > 0)
    g["g_W1"] = np.einsum("bvf,bvh->fh", c["x"], dz)
    g["g_b1"] = dz.sum(axis=(0, 1))
    if attention:
        scale = 1.0 / math.sqrt(params["W_K"].shape[1])
        dq = np.einsum("bv,bvk->bk", ds, c["k"]) * scale
        dk = ds[:, :, None] * c["q"][:, None, :] * scale
        g["W_Q"] = a.T @ dq
        g["W_K"] = np.einsum("bvd,bvk->dk", r, dk)
    return loss, g


def gate_forward(inp: GateInput, model: GateModel) -> GateOutput:
    w, rf, p = model.forward_batch(inp.r[None], inp.a[None])
    return GateOutput(w[0], rf[0], float(p[0]))


def gate_weights_for_manager(inp: GateInput, model: GateModel) -> np.ndarray:
    """View weights only; the auxiliary probability stays internal."""
    return gate_forward(inp, model).weights


def binary_scores(y: np.ndarray, pred: np.ndarray) -> dict:
    y = np.asarray(y).astype(int)
    pred = np.asarray(pred).astype(int)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


@dataclass
class GateEpoch:
    epoch: int
    loss: float
    val_precision: float
    val_f1: float


@dataclass
class GateTrainResult:
    model: GateModel
    log: list[GateEpoch] = field(default_factory=list)
    best_epoch: int = 0


def _check_classes(y: np.ndarray) -> None:
    if len(y) == 0:
        raise ValueError("empty gate dataset")
    if len(np.unique(y)) < 2:
        raise ValueError("gate training needs both classes")


def evaluate_gate(model: GateModel, data: GateData, threshold: float = 0.5, weights: Optional[np.ndarray] = None) -> dict:
    c = _forward(model.params, data.r, data.a, model.attention, weights)
    out = binary_scores(data.y, c["p"] >= threshold)
    out["loss"] = bce(data.y, c["o"])
    out["mean_weights"] = c["w"].mean(axis=0).tolist()
    return out


def train_gate(
    train: GateData,
    config: GateConfig = GateConfig(),
    val: Optional[GateData] = None,
    fixed_weights: Optional[np.ndarray] = None,
    val_weights: Optional[np.ndarray] = None,
) -> GateTrainResult:
    """Minibatch AdamW on mean BCE; keeps the epoch with the best validation F1.

    ``fixed_weights`` (N, 3) freezes the mixture, which is how the
    random-weight baseline is trained.
    """
    _check_classes(train.y)
    model = GateModel.init(
        train.r.shape[2], train.a.shape[1], config.hidden, config.seed, config.attention, config.key_dim
    )
    opt_params = model.params if fixed_weights is None else {k: v for k, v in model.params.items() if k.startswith("h_")}
    opt = AdamW(opt_params, config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    val = val if val is not None else train
    if val is train and val_weights is None:
        val_weights = fixed_weights
    result = GateTrainResult(model)
    best_f1, best_params = -1.0, None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            fw = fixed_weights[idx] if fixed_weights is not None else None
            loss, grads = loss_and_grads(model.params, train.r[idx], train.a[idx], train.y[idx], model.attention, fw)
            opt.step(grads)
            total += loss * len(idx)
        ev = evaluate_gate(model, val, config.threshold, val_weights)
        result.log.append(GateEpoch(epoch, total / len(train), ev["precision"], ev["f1"]))
        if ev["f1"] > best_f1:
            best_f1, result.best_epoch = ev["f1"], epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
    model.params = best_params
    model.meta.update(best_epoch=result.best_epoch, best_val_f1=best_f1, seed=config.seed)
    return result


def random_weights(n: int, seed: int = 0) -> np.ndarray:
    """Per-instance Dirichlet(1, 1, 1) view weights."""
    return np.random.default_rng(seed).dirichlet(np.ones(N_VIEWS), size=n)


def random_weight_baseline(train: GateData, test: GateData, config: GateConfig = GateConfig()) -> dict:
    """Head trained and evaluated on randomly weighted mixtures."""
    w_train = random_weights(len(train), config.seed)
    w_test = random_weights(len(test), config.seed + 1)
    res = train_gate(train, config, fixed_weights=w_train)
    return evaluate_gate(res.model, test, config.threshold, w_test)


def write_gate_log(path: str | Path, rows: Sequence[GateEpoch]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "loss", "val_precision", "val_f1"])
        for r in rows:
            wr.writerow([r.epoch, f"{r.loss:.6f}", f"{r.val_precision:.6f}", f"{r.val_f1:.6f}"])


def planted_gate_data(
    n: int,
    rationale_dim: int = 32,
    attr_dim: int = DEFAULT_ATTR_DIM,
    informative: int = 2,
    base_rate: float = 0.3,
    signal: float = 1.0,
    noise: float = 1.0,
    seed: int = 0,
) -> GateData:
    """One view linearly encodes the label; the other two are pure noise."""
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < base_rate).astype(float)
    direction = rng.normal(size=rationale_dim)
    direction /= np.linalg.norm(direction)
    r = rng.normal(scale=noise, size=(n, N_VIEWS, rationale_dim))
    clean = rng.normal(scale=0.2, size=(n, rationale_dim)) + np.outer(2 * y - 1, direction) * signal
    r[:, informative, :] = clean
    a = np.zeros((n, attr_dim))
    a[np.arange(n), rng.integers(attr_dim, size=n)] = 1.0
    return GateData(r, a, y)

"""Listwise path-expansion selector and inference-time path extraction."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .encoders import TextEncoder
from .gains import PathState, RankingGroup, verbalize_path
from .graph import GraphView, TargetLabel
from .nn import AdamW, Params, load_checkpoint, log_softmax, relu, save_checkpoint, softmax, uniform_init

logger = logging.getLogger(__name__)

GAIN_TIE_TOL = 1e-12


@dataclass
class SelectorConfig:
    tau: float = 0.5
    batch_size: int = 256
    epochs: int = 30
    lr: float = 3e-4
    weight_decay: float = 0.01
    hidden: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if min(self.batch_size, self.epochs, self.hidden) <= 0 or self.lr <= 0:
            raise ValueError("batch_size, epochs, hidden and lr must be positive")


# -- targets and loss ------------------------------------------------------

def shifted_gains(gains: Sequence[float]) -> np.ndarray:
    g = np.asarray(gains, dtype=np.float64)
    return g - g.min()


def listwise_targets(gains: Sequence[float], tau: float) -> Optional[np.ndarray]:
    """Temperature-smoothed target distribution, or ``None`` when the group
    carries no signal (all shifted gains zero)."""
    if len(gains) == 0:
        raise ValueError("empty group")
    r = shifted_gains(gains)
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite gains")
    if r.sum() == 0.0:
        return None
    return softmax(r / tau)


def listwise_loss(q: np.ndarray, p: np.ndarray) -> float:
    """KL(q || p) with 0 * log 0 = 0."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError("q and p differ in length")
    nz = q > 0
    return float(np.sum(q[nz] * (np.log(q[nz]) - np.log(p[nz]))))


def selector_features(e_base: np.ndarray, e_v: np.ndarray) -> np.ndarray:
    """``[e_base | e_v | e_v - e_base]`` along the last axis."""
    e_base = np.broadcast_to(e_base, np.shape(e_v))
    return np.concatenate([e_base, e_v, e_v - e_base], axis=-1)


# -- model -----------------------------------------------------------------

class SelectorModel:
    """Two-layer rectifier MLP mapping a 3D feature vector to a scalar score."""

    kind = "path-selector"

    def __init__(self, params: Params, tau: float = 0.5, meta: Optional[dict] = None):
        self.params = params
        self.tau = tau
        self.meta = dict(meta or {})

    @classmethod
    def init(cls, embed_dim: int, hidden: int = 256, seed: int = 0, tau: float = 0.5) -> "SelectorModel":
        rng = np.random.default_rng(seed)
        f = 3 * embed_dim
        params = {
            "W1": uniform_init(rng, f, (f, hidden)),
            "b1": uniform_init(rng, f, (hidden,)),
            "W2": uniform_init(rng, hidden, (hidden,)),
            "b2": uniform_init(rng, hidden, (1,)),
        }
        return cls(params, tau, {"embed_dim": embed_dim, "hidden": hidden, "seed": seed})

    @property
    def embed_dim(self) -> int:
        return self.params["W1"].shape[0] // 3

    def score(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        h = relu(x @ p["W1"] + p["b1"])
        return h @ p["W2"] + p["b2"][0]

    def score_pairs(self, e_base: np.ndarray, e_v: np.ndarray) -> np.ndarray:
        return self.score(selector_features(e_base, e_v))

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.kind, self.params, {**self.meta, "tau": self.tau})

    @classmethod
    def load(cls, path: str | Path) -> "SelectorModel":
        params, meta = load_checkpoint(path, cls.kind)
        return cls(params, float(meta.get("tau", 0.5)), meta)


def batch_loss_and_grads(
    params: Params,
    x: np.ndarray,
    mask: np.ndarray,
    q: np.ndarray,
    tau: float,
) -> tuple[float, Params]:
    """Mean listwise KL over a padded batch and its closed-form gradients.

    ``x``: (G, K, F) features, ``mask``: (G, K) bool, ``q``: (G, K) targets
    (zero on padding).
    """
    n_groups = x.shape[0]
    z1 = x @ params["W1"] + params["b1"]
    a1 = relu(z1)
    s = a1 @ params["W2"] + params["b2"][0]
    logits = np.where(mask, s / tau, -np.inf)
    logp = log_softmax(logits, axis=1)
    p = np.where(mask, np.exp(logp), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_terms = np.where(q > 0, q * (np.log(np.where(q > 0, q, 1.0)) - np.where(mask, logp, 0.0)), 0.0)
    loss = float(kl_terms.sum() / n_groups)

    ds = (p - q) / (tau * n_groups)
    grads = {
        "W2": np.einsum("gkh,gk->h", a1, ds),
        "b2": np.array([ds.sum()]),
    }
    dz1 = ds[..., None] * params["W2"] * (z1 > 0)
    grads["W1"] = np.einsum("gkf,gkh->fh", x, dz1)
    grads["b1"] = dz1.sum(axis=(0, 1))
    return loss, grads


# -- datasets --------------------------------------------------------------

@dataclass
class GroupTensors:
    """Padded embeddings for a list of labeled ranking groups."""

    e_base: np.ndarray  # (G, D)
    e_cand: np.ndarray  # (G, K, D)
    mask: np.ndarray  # (G, K)
    gains: np.ndarray  # (G, K), 0 on padding

    def __len__(self) -> int:
        return self.e_base.shape[0]

    def features(self, idx: np.ndarray | slice = slice(None)) -> np.ndarray:
        return selector_features(self.e_base[idx][:, None, :], self.e_cand[idx])

    def gain_list(self, g: int) -> np.ndarray:
        return self.gains[g][self.mask[g]]


def embed_groups(
    groups: Sequence[RankingGroup],
    encoder: TextEncoder,
    view_for: Callable[[TargetLabel], GraphView],
) -> GroupTensors:
    if not groups:
        raise ValueError("no groups to embed")
    k_max = max(len(g.candidates) for g in groups)
    d = encoder.dim
    e_base = np.zeros((len(groups), d))
    e_cand = np.zeros((len(groups), k_max, d))
    mask = np.zeros((len(groups), k_max), dtype=bool)
    gains = np.zeros((len(groups), k_max))
    for i, g in enumerate(groups):
        view = view_for(g.label)
        cache: dict = {}
        texts = [verbalize_path(g.base, view, cache)] + [verbalize_path(c.path, view, cache) for c in g.candidates]
        vecs = encoder.encode_many(texts)
        e_base[i] = vecs[0]
        k = len(g.candidates)
        e_cand[i, :k] = vecs[1:]
        mask[i, :k] = True
        gains[i, :k] = g.gains
    return GroupTensors(e_base, e_cand, mask, gains)


def _targets_matrix(data: GroupTensors, tau: float) -> tuple[np.ndarray, np.ndarray]:
    keep, rows = [], []
    for g in range(len(data)):
        q = listwise_targets(data.gain_list(g), tau)
        if q is None:
            continue
        row = np.zeros(data.mask.shape[1])
        row[data.mask[g]] = q
        keep.append(g)
        rows.append(row)
    if not keep:
        return np.zeros(0, dtype=int), np.zeros((0, data.mask.shape[1]))
    return np.asarray(keep), np.stack(rows)


# -- evaluation ------------------------------------------------------------

def _argmax_first(x: np.ndarray) -> int:
    return int(np.argmax(x))


def _group_metrics(scores: np.ndarray, gains: np.ndarray) -> tuple[float, float]:
    chosen = _argmax_first(scores)
    r = gains - gains.min()
    hit = float(r[chosen] >= r.max() - GAIN_TIE_TOL)
    return hit, float(r[chosen] / r.max())


def evaluate_scores(score_rows: Sequence[np.ndarray], data: GroupTensors) -> dict:
    hits, ndcgs = [], []
    for g, scores in enumerate(score_rows):
        gains = data.gain_list(g)
        if gains.max() - gains.min() <= 0.0:
            continue
        hit, nd = _group_metrics(np.asarray(scores), gains)
        hits.append(hit)
        ndcgs.append(nd)
    n = len(hits)
    return {
        "hit_at_1": float(np.mean(hits)) if n else float("nan"),
        "ndcg_at_1": float(np.mean(ndcgs)) if n else float("nan"),
        "groups": n,
    }


def evaluate_selector(model: SelectorModel, data: GroupTensors) -> dict:
    """Hit@1 and NDCG@1 (shifted-gain ratio) over groups with distinct gains."""
    scores = model.score(data.features())
    return evaluate_scores([scores[g][data.mask[g]] for g in range(len(data))], data)


def random_baseline(data: GroupTensors, seed: int = 0, draws: int = 200) -> dict:
    """Same metrics when every candidate receives an i.i.d. U(0,1) score."""
    rng = np.random.default_rng(seed)
    acc = {"hit_at_1": 0.0, "ndcg_at_1": 0.0}
    res: dict = {}
    for _ in range(draws):
        rows = [rng.uniform(size=int(data.mask[g].sum())) for g in range(len(data))]
        res = evaluate_scores(rows, data)
        acc["hit_at_1"] += res["hit_at_1"] / draws
        acc["ndcg_at_1"] += res["ndcg_at_1"] / draws
    return {**acc, "groups": res.get("groups", 0), "draws": draws}


# -- training --------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_ndcg_at_1: float


def train_selector(
    train: GroupTensors,
    config: SelectorConfig = SelectorConfig(),
    val: Optional[GroupTensors] = None,
) -> tuple[SelectorModel, list[EpochLog]]:
    """Mini-batch AdamW on the summed listwise KL (averaged per batch).

    The checkpoint with the best validation NDCG@1 is returned (earliest on
    ties); without validation data the final epoch wins.
    """
    keep, q_all = _targets_matrix(train, config.tau)
    if len(keep) == 0:
        raise ValueError("no trainable groups")
    model = SelectorModel.init(train.e_base.shape[1], config.hidden, config.seed, config.tau)
    model.meta["config"] = asdict(config)
    opt = AdamW(model.params, config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed + 1)
    mask_all = train.mask[keep]
    best, best_score, log = None, -np.inf, []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(keep))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            b = order[start : start + config.batch_size]
            x = train.features(keep[b])
            loss, grads = batch_loss_and_grads(model.params, x, mask_all[b], q_all[b], config.tau)
            opt.step(grads)
            total += loss * len(b)
            count += len(b)
        val_nd = evaluate_selector(model, val)["ndcg_at_1"] if val is not None and len(val) else float("nan")
        log.append(EpochLog(epoch, total / count, val_nd))
        logger.debug("selector epoch %d loss %.5f val ndcg@1 %.4f", epoch, total / count, val_nd)
        if val is not None and np.isfinite(val_nd) and val_nd > best_score:
            best_score = val_nd
            best = {k: v.copy() for k, v in model.params.items()}
            model.meta["best_epoch"] = epoch
    if best is not None:
        model.params = best
    else:
        model.meta["best_epoch"] = config.epochs
    return model, log


def write_training_log(path: str | Path, rows: Sequence) -> None:
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        fields = list(asdict(rows[0]))
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in asdict(r).items()})


# -- inference -------------------------------------------------------------

def _score_extensions(
    path: PathState,
    view: GraphView,
    model: SelectorModel,
    encoder: TextEncoder,
    cache: dict,
    max_candidates: Optional[int],
) -> tuple[list[PathState], np.ndarray]:
    cands = []
    for nb, edge in view.neighbors(path.last):
        if nb in path.nodes:
            continue
        cands.append(path.extend(nb, edge))
        if max_candidates is not None and len(cands) >= max_candidates:
            break
    if not cands:
        return [], np.zeros(0)
    texts = [verbalize_path(path, view, cache)] + [verbalize_path(c, view, cache) for c in cands]
    vecs = encoder.encode_many(texts)
    return cands, model.score_pairs(vecs[0], vecs[1:])


def extract_paths(
    target: TargetLabel,
    view: GraphView,
    model: SelectorModel,
    encoder: TextEncoder,
    num_paths: int = 2,
    max_depth: int = 4,
    max_candidates: Optional[int] = None,
) -> list[PathState]:
    """Top-``num_paths`` fan-out at the first hop, then greedy top-1 per beam."""
    root = PathState((target.company,))
    cache: dict = {}
    cands, scores = _score_extensions(root, view, model, encoder, cache, max_candidates)
    if not cands or max_depth < 1:
        return []
    order = sorted(range(len(cands)), key=lambda i: (-scores[i], i))
    beams = [cands[i] for i in order[:num_paths]]
    out: list[PathState] = []
    for path in beams:
        while path.hop < max_depth:
            nxt, sc = _score_extensions(path, view, model, encoder, cache, max_candidates)
            if not nxt:
                break
            path = nxt[_argmax_first(sc)]
        if path not in out:
            out.append(path)
    return out


def random_paths(
    target: TargetLabel,
    view: GraphView,
    num_paths: int = 2,
    max_depth: int = 4,
    rng: Optional[np.random.Generator] = None,
) -> list[PathState]:
    """Uniform random walks without revisits (ablation baseline)."""
    rng = rng or np.random.default_rng(0)
    root = PathState((target.company,))
    first = view.neighbors(target.company)
    if not first or max_depth < 1:
        return []
    picks = rng.permutation(len(first))[:num_paths]
    out = []
    for i in picks:
        nb, edge = first[int(i)]
        path = root.extend(nb, edge)
        while path.hop < max_depth:
            opts = [(n, e) for n, e in view.neighbors(path.last) if n not in path.nodes]
            if not opts:
                break
            n, e = opts[int(rng.integers(len(opts)))]
            path = path.extend(n, e)
        if path not in out:
            out.append(path)
    return out


def exhaustive_paths(target: TargetLabel, view: GraphView, max_depth: int = 3) -> list[PathState]:
    """Every root-to-node path of the BFS tree up to ``max_depth`` hops."""
    root = PathState((target.company,))
    visited = {target.company}
    frontier, out = [root], []
    for _ in range(max_depth):
        nxt = []
        for path in frontier:
            for nb, edge in view.neighbors(path.last):
                if nb in visited:
                    continue
                visited.add(nb)
                p = path.extend(nb, edge)
                nxt.append(p)
                out.append(p)
        frontier = nxt
    # keep only maximal paths; prefixes add no new nodes
    prefixes = {p.nodes[:-1] for p in out}
    return [p for p in out if p.nodes not in prefixes]

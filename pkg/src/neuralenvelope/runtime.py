"""Training over the routing tree and hierarchical (greedy or beam) inference."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import SiteSet
from .hierarchy import SiteTree, TreeNode
from .neural import (AdamState, Encoding, Mlp, adam_step, constant_model, cross_entropy,
                     forward, loss_and_grad, make_model)
from .rng import derive_seed, make_rng
from .sampler import LabeledSamples, SamplePlan, make_dataset

log = logging.getLogger(__name__)


class NodeTrainingError(RuntimeError):
    def __init__(self, node_id: int, cause: Exception):
        super().__init__(f"node {node_id}: {cause}")
        self.node_id = node_id
        self.cause = cause


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    hidden: tuple[int, ...] = (128, 128)
    encoding: Encoding = field(default_factory=lambda: Encoding("none"))
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    plan: SamplePlan = field(default_factory=SamplePlan)
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.workers < 1:
            raise ValueError("epochs, batch_size and workers must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        self.plan.validate()


@dataclass
class TrainResult:
    model: Mlp
    losses: list[float]
    initial_loss: float
    train_accuracy: float
    n_samples: int
    data: Optional[LabeledSamples] = None


def node_seed(run_seed: int, node_id: int) -> int:
    return derive_seed(run_seed, "node", node_id)


def fit(model: Mlp, data: LabeledSamples, cfg: TrainConfig, seed: int) -> tuple[list[float], float]:
    """Mini-batch Adam on ``data``; returns per-epoch mean losses and the loss before training."""
    state = AdamState.for_model(model, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    initial = float(cross_entropy(forward(model, data.x), data.label).mean())
    losses = []
    n = len(data)
    for epoch in range(cfg.epochs):
        perm = make_rng(derive_seed(seed, "epoch", epoch)).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = loss_and_grad(model, data.x[idx], data.label[idx])
            adam_step(model, state, grads)
            total += loss * len(idx)
        losses.append(total / n)
    return losses, initial


def train_node(node: TreeNode, ss: SiteSet, cfg: TrainConfig) -> TrainResult:
    """Sample, label and fit the node's classifier; the model is stored on ``node``."""
    seed = node_seed(cfg.seed, node.id)
    if node.n_classes < 2:
        model = constant_model(ss.dim, node.region, 1, node.id)
        node.model = model
        return TrainResult(model, [0.0] * cfg.epochs, 0.0, 1.0, 0)
    data = make_dataset(node, ss, cfg.plan, derive_seed(seed, "data"))
    model = make_model(ss.dim, cfg.hidden, node.n_classes, cfg.encoding, node.region,
                       derive_seed(seed, "init"), node.id)
    losses, initial = fit(model, data, cfg, derive_seed(seed, "batches"))
    acc = float(np.mean(np.argmax(forward(model, data.x), axis=1) == data.label))
    node.model = model
    return TrainResult(model, losses, initial, acc, len(data), data)


def _train_job(args):
    node, ss, cfg = args
    try:
        return train_node(node, ss, cfg)
    except Exception as exc:  # re-raised with node id in the parent
        return exc


def train_tree(tree: SiteTree, ss: SiteSet, cfg: TrainConfig) -> dict[int, TrainResult]:
    """Train every node in BFS order; with ``cfg.workers > 1`` nodes train in parallel."""
    cfg.validate()
    order = tree.bfs()
    if cfg.workers > 1 and len(order) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            outcomes = list(pool.map(_train_job, [(n, ss, cfg) for n in order]))
    else:
        outcomes = []
        for node in order:
            outcomes.append(_train_job((node, ss, cfg)))
            if not isinstance(outcomes[-1], Exception):
                log.info("node %d: %d classes, loss %.4f -> %.4f, train acc %.4f", node.id,
                         node.n_classes, outcomes[-1].initial_loss,
                         outcomes[-1].losses[-1] if outcomes[-1].losses else 0.0,
                         outcomes[-1].train_accuracy)
    results = {}
    for node, out in zip(order, outcomes):
        if isinstance(out, Exception):
            raise NodeTrainingError(node.id, out) from out
        node.model = out.model
        results[node.id] = out
    return results


# --- inference ---------------------------------------------------------------

@dataclass
class Ranking:
    """Per-query candidate sites with ranking scores and raw leaf logits.

    ``scores`` is the ranking key (cumulative log-probability of the routing
    path plus the leaf log-softmax; for the oracle, negated distance) and
    ``logits`` holds the raw leaf logits. Padding entries are -1 / -inf.
    Columns are not sorted; use ``top`` for ranked site indices.
    """

    candidates: np.ndarray
    scores: np.ndarray
    logits: np.ndarray
    leaf: np.ndarray
    clamped: np.ndarray

    def order(self) -> np.ndarray:
        # stable: equal scores keep candidate order
        return np.argsort(-self.scores, axis=1, kind="stable")

    def top(self, k: int) -> np.ndarray:
        """Site indices ranked by score; -1 where fewer than k candidates exist."""
        cols = self.order()[:, :k]
        out = np.take_along_axis(self.candidates, cols, axis=1)
        sc = np.take_along_axis(self.scores, cols, axis=1)
        out[~np.isfinite(sc)] = -1
        if out.shape[1] < k:
            out = np.pad(out, ((0, 0), (0, k - out.shape[1])), constant_values=-1)
        return out

    def best_score(self) -> np.ndarray:
        return self.scores.max(axis=1)

    def winning_logit(self) -> np.ndarray:
        col = np.argmax(self.scores, axis=1)
        return self.logits[np.arange(len(col)), col]


@dataclass
class Prediction:
    site: int
    score: float
    path: list[int]
    runner_up: Optional[tuple[int, float]] = None
    clamped: bool = False


def _top_b(q: np.ndarray, score: np.ndarray, tiebreak: np.ndarray, b: int) -> np.ndarray:
    """Mask keeping the ``b`` best entries per query (score desc, then tiebreak asc)."""
    order = np.lexsort((tiebreak, -score, q))
    qs = q[order]
    starts = np.r_[0, np.flatnonzero(qs[1:] != qs[:-1]) + 1]
    group_start = np.repeat(starts, np.diff(np.r_[starts, len(qs)]))
    rank = np.arange(len(qs)) - group_start
    keep = np.zeros(len(q), dtype=bool)
    keep[order[rank < b]] = True
    return keep


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def route(tree: SiteTree, x: np.ndarray, beam: int = 1) -> Ranking:
    """Route queries to leaves and collect the leaf candidates.

    ``beam == 1`` follows the argmax child at every internal node. Larger
    beams keep the ``beam`` most probable branches per level, probability
    being the product of softmax outputs along the path, and pool the
    candidates of every surviving leaf. Queries outside the root region are
    clamped into it.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    root = tree.nodes[tree.root]
    xc = root.region.clamp(x)
    clamped = np.any(xc != x, axis=1)
    n = len(xc)

    q = np.arange(n)
    node = np.full(n, tree.root)
    logp = np.zeros(n)
    is_leaf = np.array([nd.is_leaf for nd in tree.nodes])
    while not np.all(is_leaf[node]):
        done = is_leaf[node]
        parts_q, parts_node, parts_lp = [q[done]], [node[done]], [logp[done]]
        for nid in np.unique(node[~done]):
            nd = tree.nodes[nid]
            sel = np.flatnonzero((node == nid))
            qs = q[sel]
            lp = _log_softmax(forward(nd.model, xc[qs])) + logp[sel][:, None]
            kids = np.asarray(nd.children)
            parts_q.append(np.repeat(qs, len(kids)))
            parts_node.append(np.tile(kids, len(qs)))
            parts_lp.append(lp.ravel())
        q, node, logp = (np.concatenate(v) for v in (parts_q, parts_node, parts_lp))
        keep = _top_b(q, logp, node, beam)
        q, node, logp = q[keep], node[keep], logp[keep]

    # pool leaf candidates per query, surviving branches in rank order
    order = np.lexsort((node, -logp, q))
    q, node, logp = q[order], node[order], logp[order]
    sizes = np.array([len(tree.nodes[i].site_subset) for i in node])
    width = int(np.bincount(q, weights=sizes, minlength=n).max())
    cand = np.full((n, width), -1, dtype=np.int64)
    scores = np.full((n, width), -np.inf)
    logits_out = np.full((n, width), -np.inf)
    csum = np.cumsum(sizes)
    starts = np.r_[0, np.flatnonzero(q[1:] != q[:-1]) + 1]
    first = np.repeat(starts, np.diff(np.r_[starts, len(q)]))
    offset = csum - sizes - (csum[first] - sizes[first])
    for lid in np.unique(node):
        leaf = tree.nodes[lid]
        sel = np.flatnonzero(node == lid)
        qs = q[sel]
        logits = forward(leaf.model, xc[qs])
        cols = offset[sel][:, None] + np.arange(len(leaf.site_subset))[None, :]
        cand[qs[:, None], cols] = np.asarray(leaf.site_subset)[None, :]
        scores[qs[:, None], cols] = _log_softmax(logits) + logp[sel][:, None]
        logits_out[qs[:, None], cols] = logits
    win = np.argmax(scores, axis=1)
    leaf_of_site = np.empty(len(tree.nodes[tree.root].site_subset), dtype=np.int64)
    for leaf in tree.leaves():
        leaf_of_site[list(leaf.site_subset)] = leaf.id
    winner_leaf = leaf_of_site[cand[np.arange(n), win]]
    return Ranking(cand, scores, logits_out, winner_leaf, clamped)


def path_to(tree: SiteTree, node_id: int) -> list[int]:
    path = [node_id]
    while tree.nodes[path[-1]].parent is not None:
        path.append(tree.nodes[path[-1]].parent)
    return path[::-1]


def infer(tree: SiteTree, x: Sequence[float], beam: int = 1) -> Prediction:
    r = route(tree, np.asarray(x, dtype=float)[None], beam)
    order = r.order()[0]
    cand, sc, lg = r.candidates[0], r.scores[0], r.logits[0]
    runner = None
    if len(order) > 1 and np.isfinite(sc[order[1]]):
        runner = (int(cand[order[1]]), float(lg[order[1]]))
    return Prediction(int(cand[order[0]]), float(lg[order[0]]), path_to(tree, int(r.leaf[0])),
                      runner, bool(r.clamped[0]))


def neural_envelope(tree: SiteTree, x: np.ndarray) -> np.ndarray | float:
    """Winning leaf logit under greedy routing (a score, not a calibrated distance)."""
    x = np.asarray(x, dtype=float)
    vals = route(tree, np.atleast_2d(x), 1).winning_logit()
    return float(vals[0]) if x.ndim == 1 else vals


class TreePredictor:
    def __init__(self, tree: SiteTree, beam: int = 1):
        self.tree = tree
        self.beam = beam

    def rank(self, x: np.ndarray) -> Ranking:
        return route(self.tree, x, self.beam)


class OraclePredictor:
    """Exact predictor scoring each site by its negated distance."""

    def __init__(self, ss: SiteSet):
        self.ss = ss

    def rank(self, x: np.ndarray) -> Ranking:
        from .geometry import distance_matrix

        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = distance_matrix(self.ss, x)
        cand = np.broadcast_to(np.arange(len(self.ss)), d.shape).copy()
        return Ranking(cand, -d, -d, np.zeros(len(x), dtype=np.int64), np.zeros(len(x), dtype=bool))

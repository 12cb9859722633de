"""Tutor policies: behavioural cloning and greedy Q wrappers.

Two behavioural cloning variants are provided.  The frequency table is
exact and fully inspectable: it maps canonicalised states to action
counts and is the variant used wherever tests need checkable behaviour.
The MLP classifier scales past exact state matches and mirrors the
table's interface.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    ACTIONS,
    Dataset,
    HighLevelAction,
    LatentState,
    N_ACTIONS,
    canonical_pair,
    flatten,
    scaled_features,
    stable_seed,
)
from .errors import TrainingDivergedError, ValidationError


class Policy:
    """Minimal policy interface: map a latent state to an action.

    Deterministic policies ignore `rng`; stochastic ones require it.
    """

    kind = "abstract"

    def act(self, state: LatentState, rng: Optional[random.Random] = None) -> HighLevelAction:
        raise NotImplementedError


def _argmax_lowest(values) -> int:
    # np.argmax returns the first maximal index, which is the tie rule
    # used everywhere: lowest action index wins.
    return int(np.argmax(np.asarray(values, dtype=np.float64)))


class TablePolicy(Policy):
    """Frequency-table behavioural cloning.

    At a canonicalised state seen during fitting, play the most frequent
    action there (ties to the lowest action index).  At unseen states,
    fall back to the most frequent action overall.
    """

    kind = "bc_table"

    def __init__(self, counts: dict, global_counts, dataset_fingerprint: Optional[str] = None):
        self.counts = counts
        self.global_counts = list(global_counts)
        self.dataset_fingerprint = dataset_fingerprint
        if len(self.global_counts) != N_ACTIONS:
            raise ValidationError("global_counts must have one entry per action")

    def act(self, state: LatentState, rng: Optional[random.Random] = None) -> HighLevelAction:
        row = self.counts.get(state.canonical())
        if row is None:
            row = self.global_counts
        return HighLevelAction(_argmax_lowest(row))

    def action_marginal(self) -> np.ndarray:
        total = float(sum(self.global_counts))
        return np.asarray(self.global_counts, dtype=np.float64) / total


def fit_bc_table(dataset: Dataset) -> TablePolicy:
    """Count (canonical state, action) occurrences across the dataset."""
    if len(dataset) == 0:
        raise ValidationError("cannot fit a policy on an empty dataset")
    counts: dict = {}
    global_counts = [0] * N_ACTIONS
    for tagged in flatten(dataset):
        key = tagged.state.canonical()
        row = counts.get(key)
        if row is None:
            row = [0] * N_ACTIONS
            counts[key] = row
        row[int(tagged.action)] += 1
        global_counts[int(tagged.action)] += 1
    return TablePolicy(counts, global_counts, dataset.config_fingerprint)


@dataclass(frozen=True)
class BcClassifierConfig:
    hidden: tuple = (128, 128)
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    val_fraction: float = 0.1
    max_epochs: int = 1000
    batch_size: Optional[int] = None  # None = full batch
    seed: int = 0


def _make_mlp(in_dim: int, hidden: Sequence[int], out_dim: int):
    import torch.nn as nn

    layers = []
    prev = in_dim
    for h in hidden:
        layers += [nn.Linear(prev, h), nn.ReLU()]
        prev = h
    layers.append(nn.Linear(prev, out_dim))
    return nn.Sequential(*layers)


class ClassifierPolicy(Policy):
    """MLP behavioural cloning over scaled latent features."""

    kind = "bc_classifier"

    def __init__(self, net, config: BcClassifierConfig, dataset_fingerprint=None,
                 val_losses=None, best_epoch=None):
        self.net = net
        self.config = config
        self.dataset_fingerprint = dataset_fingerprint
        self.val_losses = val_losses or []
        self.best_epoch = best_epoch

    def logits(self, state: LatentState) -> np.ndarray:
        import torch

        x = torch.as_tensor(scaled_features(state), dtype=torch.float32).unsqueeze(0)
        with torch.no_grad():
            out = self.net(x).squeeze(0).numpy()
        return out

    def act(self, state: LatentState, rng: Optional[random.Random] = None) -> HighLevelAction:
        return HighLevelAction(_argmax_lowest(self.logits(state)))


def fit_bc_classifier(dataset: Dataset, cfg: BcClassifierConfig = BcClassifierConfig()) -> ClassifierPolicy:
    """Train the MLP cloner; the snapshot with the lowest validation
    cross-entropy is kept."""
    import torch
    import torch.nn as nn

    tagged = flatten(dataset)
    if not tagged:
        raise ValidationError("cannot fit a policy on an empty dataset")
    X = np.stack([scaled_features(t.state) for t in tagged]).astype(np.float32)
    y = np.asarray([int(t.action) for t in tagged], dtype=np.int64)

    order = np.random.RandomState(stable_seed(cfg.seed, "split") % (2**32)).permutation(len(X))
    n_val = max(1, int(round(cfg.val_fraction * len(X)))) if len(X) > 1 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        train_idx = val_idx

    torch.manual_seed(stable_seed(cfg.seed, "init"))
    net = _make_mlp(X.shape[1], cfg.hidden, N_ACTIONS)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    loss_fn = nn.CrossEntropyLoss()

    Xt = torch.from_numpy(X[train_idx])
    yt = torch.from_numpy(y[train_idx])
    Xv = torch.from_numpy(X[val_idx]) if n_val else Xt
    yv = torch.from_numpy(y[val_idx]) if n_val else yt

    gen = torch.Generator().manual_seed(stable_seed(cfg.seed, "batches") % (2**63))
    best_state = {k: v.clone() for k, v in net.state_dict().items()}
    best_val = math.inf
    best_epoch = -1
    val_losses = []
    for epoch in range(cfg.max_epochs):
        net.train()
        if cfg.batch_size is None:
            opt.zero_grad()
            loss = loss_fn(net(Xt), yt)
            loss.backward()
            opt.step()
        else:
            perm = torch.randperm(len(Xt), generator=gen)
            for start in range(0, len(Xt), cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                opt.zero_grad()
                loss = loss_fn(net(Xt[idx]), yt[idx])
                loss.backward()
                opt.step()
        net.eval()
        with torch.no_grad():
            vl = float(loss_fn(net(Xv), yv))
        if not math.isfinite(vl):
            raise TrainingDivergedError(f"validation loss diverged at epoch {epoch}")
        val_losses.append(vl)
        if vl < best_val:
            best_val = vl
            best_epoch = epoch
            best_state = {k: v.clone() for k, v in net.state_dict().items()}
    net.load_state_dict(best_state)
    net.eval()
    return ClassifierPolicy(net, cfg, dataset.config_fingerprint, val_losses, best_epoch)


class GreedyQPolicy(Policy):
    """Play argmax_a Q(s, a), ties to the lowest action index."""

    kind = "greedy_q"

    def __init__(self, q):
        self.q = q

    @property
    def dataset_fingerprint(self):
        return getattr(self.q, "dataset_fingerprint", None)

    def act(self, state: LatentState, rng: Optional[random.Random] = None) -> HighLevelAction:
        return HighLevelAction(_argmax_lowest(self.q.values(state)))


def greedy_policy(q) -> GreedyQPolicy:
    return GreedyQPolicy(q)


def action_marginal_of_policy(policy: Policy, states: Sequence[LatentState]) -> np.ndarray:
    """Empirical action distribution of a deterministic policy over a
    probe set of states."""
    counts = np.zeros(N_ACTIONS)
    for s in states:
        counts[int(policy.act(s))] += 1
    return counts / max(1, len(states))


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return 0.5 * float(np.abs(p - q).sum())

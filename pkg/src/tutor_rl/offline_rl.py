"""Offline value learning: fitted Q-iteration and conservative Q-learning.

Fitted Q-iteration repeatedly regresses the one-step Bellman targets

    y = r + gamma * max_a Q_prev(s', a)        (y = r at terminals)

starting from Q_0 = 0.  Two regressor backends are provided: an exact
tabular mean over canonicalised (state, action) pairs, and an
extremely-randomised tree ensemble over the state concatenated with a
one-hot action.

Conservative Q-learning trains a small MLP with the same Bellman error
plus a penalty that pushes down out-of-data actions:

    loss = bellman + alpha * mean(logsumexp_a Q(s, a) - Q(s, a_data))

`neural_fqi_train` is the penalty-free twin sharing initialisation and
batch order, so with alpha = 0 both produce identical greedy policies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    ACTIONS,
    HighLevelAction,
    LatentState,
    N_ACTIONS,
    N_FEATURES,
    canonical_pair,
    scaled_features,
)
from .errors import TrainingDivergedError, ValidationError

PAPER_SCALE_TRAIN_STEPS = 1_000_000  # full-scale CQL budget; desk default below


@dataclass(frozen=True)
class FqiConfig:
    gamma: float = 0.9
    iterations: int = 50
    ensemble_trees: int = 25
    min_split: int = 2
    seed: int = 0


@dataclass(frozen=True)
class CqlConfig:
    alpha: float = 4.0
    gamma: float = 0.9
    learning_rate: float = 5e-5
    batch_size: int = 32
    target_update_interval: int = 2000
    train_steps: int = 100_000
    adam_eps: float = 1e-2 / 32
    hidden: tuple = (128, 128)
    seed: int = 0


class QFunction:
    """Action-value interface shared by all backends."""

    backend = "abstract"

    def __init__(self, gamma: float, dataset_fingerprint: Optional[str] = None):
        self.gamma = gamma
        self.dataset_fingerprint = dataset_fingerprint

    def values(self, state: LatentState) -> np.ndarray:
        raise NotImplementedError

    def value(self, state: LatentState, action: HighLevelAction) -> float:
        return float(self.values(state)[int(action)])

    def batch_values(self, states: Sequence[LatentState]) -> np.ndarray:
        return np.stack([self.values(s) for s in states])


def q_values(q: QFunction, state: LatentState) -> list:
    """The four action values at `state` as a plain list."""
    return [float(v) for v in q.values(state)]


class TabularQ(QFunction):
    """Exact per-(state, action) values keyed by canonical form.

    Unseen pairs are worth 0, which matches the Q_0 = 0 start.
    """

    backend = "tabular"

    def __init__(self, table: dict, gamma: float, dataset_fingerprint=None):
        super().__init__(gamma, dataset_fingerprint)
        self.table = table

    def values(self, state: LatentState) -> np.ndarray:
        c = state.canonical()
        return np.asarray(
            [self.table.get((c, int(a)), 0.0) for a in ACTIONS], dtype=np.float64
        )


class TreeEnsembleQ(QFunction):
    """Extra-trees regressor over [state ; one-hot action]."""

    backend = "tree_ensemble"

    def __init__(self, model, gamma: float, config: FqiConfig, dataset_fingerprint=None,
                 diagnostics=None):
        super().__init__(gamma, dataset_fingerprint)
        self.model = model
        self.config = config
        self.diagnostics = diagnostics or {}

    @staticmethod
    def encode(states: Sequence[LatentState]) -> np.ndarray:
        """(n*4, 29) design matrix: every state paired with every action."""
        base = np.stack([s.as_array() for s in states])
        n = base.shape[0]
        out = np.zeros((n * N_ACTIONS, N_FEATURES + N_ACTIONS))
        for a in range(N_ACTIONS):
            out[a::N_ACTIONS, :N_FEATURES] = base
            out[a::N_ACTIONS, N_FEATURES + a] = 1.0
        return out

    def values(self, state: LatentState) -> np.ndarray:
        return self.batch_values([state])[0]

    def batch_values(self, states: Sequence[LatentState]) -> np.ndarray:
        X = self.encode(states)
        return self.model.predict(X).reshape(len(states), N_ACTIONS)


def _row_features(transitions) -> tuple:
    states = [t.state for t in transitions]
    actions = np.asarray([int(t.action) for t in transitions], dtype=np.int64)
    rewards = np.asarray([t.reward for t in transitions], dtype=np.float64)
    terminal = np.asarray([t.terminal for t in transitions], dtype=bool)
    next_states = [t.next_state for t in transitions]
    return states, actions, rewards, terminal, next_states


def _fit_tabular(transitions, cfg: FqiConfig, fingerprint) -> TabularQ:
    groups: dict = {}
    for t in transitions:
        key = canonical_pair(t.state, t.action)
        nxt = None if t.terminal else t.next_state.canonical()
        groups.setdefault(key, []).append((float(t.reward), nxt))

    canon_next = sorted({n for rows in groups.values() for _, n in rows if n is not None})
    table: dict = {}
    drift = []
    for _ in range(cfg.iterations):
        # Pre-compute max_a Q(s', a) under the current table.
        next_best = {
            c: max(table.get((c, a), 0.0) for a in range(N_ACTIONS)) for c in canon_next
        }
        new_table = {}
        for (c, a), rows in groups.items():
            target = 0.0
            for r, nxt in rows:
                target += r if nxt is None else r + cfg.gamma * next_best[nxt]
            new_table[(c, a)] = target / len(rows)
        drift.append(
            max(
                (abs(new_table[k] - table.get(k, 0.0)) for k in new_table),
                default=0.0,
            )
        )
        table = new_table
    return TabularQ(table, cfg.gamma, fingerprint)


def _fit_tree(transitions, cfg: FqiConfig, fingerprint) -> TreeEnsembleQ:
    from sklearn.ensemble import ExtraTreesRegressor

    states, actions, rewards, terminal, next_states = _row_features(transitions)
    base = np.stack([s.as_array() for s in states])
    n = len(states)
    X = np.zeros((n, N_FEATURES + N_ACTIONS))
    X[:, :N_FEATURES] = base
    X[np.arange(n), N_FEATURES + actions] = 1.0

    live = ~terminal
    live_next = [s for s in next_states if s is not None]
    X_next = TreeEnsembleQ.encode(live_next) if live_next else None

    model = None
    prev_y = None
    fit_mse = []
    target_drift = []
    for _ in range(cfg.iterations):
        y = rewards.copy()
        if model is not None and X_next is not None:
            nxt_q = model.predict(X_next).reshape(len(live_next), N_ACTIONS)
            y[live] += cfg.gamma * nxt_q.max(axis=1)
        # n_jobs only parallelizes tree building; results stay
        # deterministic under the fixed random_state.
        model = ExtraTreesRegressor(
            n_estimators=cfg.ensemble_trees,
            min_samples_split=cfg.min_split,
            random_state=cfg.seed % (2**32),
            n_jobs=-1,
        )
        model.fit(X, y)
        fit_mse.append(float(np.mean((model.predict(X) - y) ** 2)))
        if prev_y is not None:
            target_drift.append(float(np.mean(np.abs(y - prev_y))))
        prev_y = y
    return TreeEnsembleQ(
        model,
        cfg.gamma,
        cfg,
        fingerprint,
        diagnostics={"fit_mse": fit_mse, "target_drift": target_drift},
    )


def fitted_q_iteration(
    transitions,
    cfg: FqiConfig = FqiConfig(),
    backend: str = "tree_ensemble",
    dataset_fingerprint: Optional[str] = None,
) -> QFunction:
    """Run fitted Q-iteration over logged transitions."""
    transitions = list(transitions)
    if not transitions:
        raise ValidationError("cannot run Q-iteration on an empty transition set")
    if cfg.iterations < 1:
        raise ValidationError("iterations must be >= 1")
    if backend == "tabular":
        return _fit_tabular(transitions, cfg, dataset_fingerprint)
    if backend == "tree_ensemble":
        return _fit_tree(transitions, cfg, dataset_fingerprint)
    raise ValidationError(f"unknown FQI backend {backend!r}")


class NeuralQ(QFunction):
    """MLP Q-network over scaled state features with one head per action."""

    backend = "neural"

    def __init__(self, net, gamma: float, config: CqlConfig, dataset_fingerprint=None,
                 losses=None):
        super().__init__(gamma, dataset_fingerprint)
        self.net = net
        self.config = config
        self.losses = losses or []

    def values(self, state: LatentState) -> np.ndarray:
        return self.batch_values([state])[0]

    def batch_values(self, states: Sequence[LatentState]) -> np.ndarray:
        import torch

        X = np.stack([scaled_features(s) for s in states]).astype(np.float32)
        with torch.no_grad():
            return self.net(torch.from_numpy(X)).numpy().astype(np.float64)


def _train_q_network(transitions, cfg: CqlConfig, conservative: bool, fingerprint):
    import torch

    from .policies import _make_mlp

    transitions = list(transitions)
    if not transitions:
        raise ValidationError("cannot train on an empty transition set")
    states, actions, rewards, terminal, next_states = _row_features(transitions)

    S = torch.from_numpy(np.stack([scaled_features(s) for s in states]).astype(np.float32))
    A = torch.from_numpy(actions)
    R = torch.from_numpy(rewards.astype(np.float32))
    D = torch.from_numpy(terminal.astype(np.float32))
    # Terminal rows bootstrap nothing; a zero row keeps the tensor dense.
    S2 = torch.from_numpy(
        np.stack(
            [scaled_features(s) if s is not None else np.zeros(N_FEATURES) for s in next_states]
        ).astype(np.float32)
    )

    torch.manual_seed(cfg.seed)
    net = _make_mlp(N_FEATURES, cfg.hidden, N_ACTIONS)
    target = _make_mlp(N_FEATURES, cfg.hidden, N_ACTIONS)
    target.load_state_dict(net.state_dict())
    target.eval()
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, eps=cfg.adam_eps)
    gen = torch.Generator().manual_seed(int(cfg.seed) % (2**63))

    n = len(transitions)
    losses = []
    for step_i in range(cfg.train_steps):
        if step_i % cfg.target_update_interval == 0:
            target.load_state_dict(net.state_dict())
        idx = torch.randint(0, n, (cfg.batch_size,), generator=gen)
        with torch.no_grad():
            bootstrap = target(S2[idx]).max(dim=1).values * (1.0 - D[idx])
            y = R[idx] + cfg.gamma * bootstrap
        q_all = net(S[idx])
        q_data = q_all.gather(1, A[idx].unsqueeze(1)).squeeze(1)
        loss = torch.nn.functional.mse_loss(q_data, y)
        if conservative:
            penalty = (torch.logsumexp(q_all, dim=1) - q_data).mean()
            loss = loss + cfg.alpha * penalty
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step_i % 1000 == 0:
            val = float(loss.detach())
            if not math.isfinite(val):
                raise TrainingDivergedError(f"loss diverged at step {step_i}")
            losses.append(val)
    net.eval()
    return NeuralQ(net, cfg.gamma, cfg, fingerprint, losses)


def cql_train(
    transitions, cfg: CqlConfig = CqlConfig(), dataset_fingerprint: Optional[str] = None
) -> NeuralQ:
    """Conservative Q-learning on logged transitions."""
    return _train_q_network(transitions, cfg, conservative=True, fingerprint=dataset_fingerprint)


def neural_fqi_train(
    transitions, cfg: CqlConfig = CqlConfig(), dataset_fingerprint: Optional[str] = None
) -> NeuralQ:
    """The conservative-penalty-free twin of `cql_train`.

    Matched seeds give batch-for-batch identical training, so comparing
    against `cql_train(alpha=0)` isolates the penalty term exactly.
    """
    return _train_q_network(transitions, cfg, conservative=False, fingerprint=dataset_fingerprint)

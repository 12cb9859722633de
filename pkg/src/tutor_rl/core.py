"""Core data model for latent-state tutoring dialogues.

Every dialogue turn is summarised into a fixed 25-slot latent vector:

* slots 0-19   binary observation flags for the most recent exchange
* slots 20-21  cumulative counters (tutor questions, student questions)
* slot 22      turn index, 1-based
* slots 23-24  bounded scores in [0, 1] (math density, student reasoning)

An episode is the usual offline-RL trajectory: the state observed before
the tutor acts, the tutor's high-level action, the reward produced by the
student's response, and the follow-up state.  Rewards are sparse: +1 on a
clean solve (terminal), -1 when the turn budget runs out, 0 otherwise.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ValidationError

N_FEATURES = 25
DEFAULT_MAX_TURNS = 20
DEFAULT_GAMMA = 0.9

# Count slots are capped at this value when states are canonicalised, so
# behaviour lookups treat "many questions" as one bucket.
CANONICAL_COUNT_CAP = 9
CANONICAL_SCORE_DECIMALS = 2

# Slot layout.  Names describe what the flag tracks in the dialogue.
IDX_MATH_CONTENT = 0  # student produced math-related content
IDX_SOLVED = 1  # student stated a correct solution this turn
IDX_REEXPLAIN = 2  # student asked the tutor to re-explain
IDX_REPEATS_TUTOR = 3  # student echoed the tutor's explanation
IDX_OFF_TOPIC = 4  # student drifted off-topic
IDX_UNRELATED = 5  # utterance unrelated to the problem
IDX_STUDENT_QUESTION = 6  # student explicitly asked a question
IDX_DESCRIBES_STUCK = 7  # student described where they are stuck
IDX_BACKGROUND_ASSESSED = 8  # enough diagnostic probing has happened
IDX_FRUSTRATION = 9  # student expressed frustration
IDX_UNCERTAIN = 10  # student lacks confidence
IDX_POSITIVE = 11  # positive sentiment in the response
IDX_BREAK_REQUEST = 12  # student asked for a break
IDX_ON_PROBLEM = 13  # response engages the problem at hand
IDX_BACKGROUND_TALK = 14  # student discussed their math background
IDX_RELATED_CONCEPTS = 15  # student mentioned related concepts
IDX_WROTE_EQUATION = 16  # response contains an equation
IDX_TUTOR_QUESTION = 17  # tutor asked a question this turn
IDX_MISTAKE = 18  # student made a mistake this turn
IDX_REFOCUS_ATTEMPTED = 19  # tutor has tried to refocus so far
IDX_TUTOR_Q_COUNT = 20
IDX_STUDENT_Q_COUNT = 21
IDX_TURN = 22
IDX_MATH_DENSITY = 23
IDX_REASONING = 24

BINARY_SLOTS = tuple(range(20))
COUNT_SLOTS = (IDX_TUTOR_Q_COUNT, IDX_STUDENT_Q_COUNT)
SCORE_SLOTS = (IDX_MATH_DENSITY, IDX_REASONING)


class HighLevelAction(IntEnum):
    """The four dialogue moves available to the tutor."""

    INSTRUCT = 0
    ENCOURAGE = 1
    REFOCUS = 2
    ASK_QUESTION = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "HighLevelAction":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValidationError(f"unknown action label {label!r}") from None


ACTIONS = tuple(HighLevelAction)
N_ACTIONS = len(ACTIONS)


def _check_binary(i: int, v: float) -> int:
    if v not in (0, 1):
        raise ValidationError(f"slot {i} must be 0 or 1, got {v!r}")
    return int(v)


@dataclass(frozen=True)
class LatentState:
    """A validated 25-slot dialogue summary.

    Integer-valued slots are normalised to int on construction so equality
    and serialisation are exact.
    """

    values: tuple

    def __post_init__(self) -> None:
        vals = tuple(self.values)
        if len(vals) != N_FEATURES:
            raise ValidationError(f"expected {N_FEATURES} slots, got {len(vals)}")
        norm = []
        for i, v in enumerate(vals):
            if isinstance(v, bool):
                v = int(v)
            if not isinstance(v, (int, float)) or isinstance(v, float) and not math.isfinite(v):
                raise ValidationError(f"slot {i} is not a finite number: {v!r}")
            if i in SCORE_SLOTS:
                v = float(v)
                if not 0.0 <= v <= 1.0:
                    raise ValidationError(f"score slot {i} out of [0, 1]: {v}")
                norm.append(v)
                continue
            if v != int(v):
                raise ValidationError(f"slot {i} must be integral, got {v!r}")
            v = int(v)
            if i in BINARY_SLOTS:
                norm.append(_check_binary(i, v))
            elif i in COUNT_SLOTS:
                if v < 0:
                    raise ValidationError(f"count slot {i} negative: {v}")
                norm.append(v)
            else:  # turn slot
                if v < 1:
                    raise ValidationError(f"turn slot must be >= 1, got {v}")
                norm.append(v)
        turn = norm[IDX_TURN]
        for i in COUNT_SLOTS:
            if norm[i] > turn:
                raise ValidationError(
                    f"count slot {i} = {norm[i]} exceeds turn index {turn}"
                )
        object.__setattr__(self, "values", tuple(norm))

    def __getitem__(self, i: int):
        return self.values[i]

    def __len__(self) -> int:
        return N_FEATURES

    @property
    def turn(self) -> int:
        return self.values[IDX_TURN]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def canonical(self) -> tuple:
        """Collapse the state onto the lookup key used for matching.

        Binary slots pass through, counters cap at CANONICAL_COUNT_CAP,
        the turn index passes through, scores round to two decimals.
        """
        v = self.values
        return (
            v[:20]
            + (min(v[IDX_TUTOR_Q_COUNT], CANONICAL_COUNT_CAP),
               min(v[IDX_STUDENT_Q_COUNT], CANONICAL_COUNT_CAP),
               v[IDX_TURN])
            + tuple(round(v[i], CANONICAL_SCORE_DECIMALS) for i in SCORE_SLOTS)
        )


def canonical_pair(state: LatentState, action: int) -> tuple:
    return (state.canonical(), int(action))


def scaled_features(state: LatentState) -> np.ndarray:
    """Feature encoding for neural models: binary and score slots as-is,
    counters and turn divided by the default turn budget so every input
    lives in [0, 1]."""
    v = np.asarray(state.values, dtype=np.float64)
    v[IDX_TUTOR_Q_COUNT] /= DEFAULT_MAX_TURNS
    v[IDX_STUDENT_Q_COUNT] /= DEFAULT_MAX_TURNS
    v[IDX_TURN] /= DEFAULT_MAX_TURNS
    return v


VALID_REWARDS = (-1, 0, 1)


@dataclass(frozen=True)
class Transition:
    """One tutor turn: act in `state`, observe `reward` and `next_state`."""

    state: LatentState
    action: HighLevelAction
    reward: int
    next_state: Optional[LatentState]
    terminal: bool

    def __post_init__(self) -> None:
        if not isinstance(self.state, LatentState):
            raise ValidationError("state must be a LatentState")
        object.__setattr__(self, "action", HighLevelAction(self.action))
        if self.reward not in VALID_REWARDS:
            raise ValidationError(f"reward must be in {VALID_REWARDS}, got {self.reward}")
        object.__setattr__(self, "reward", int(self.reward))
        if self.terminal != (self.next_state is None):
            raise ValidationError("terminal transitions have no next_state and vice versa")
        if self.next_state is not None and not isinstance(self.next_state, LatentState):
            raise ValidationError("next_state must be a LatentState or None")


PROVENANCE_ORIGINAL = "original"
PROVENANCE_EXPLORATORY = "exploratory"
_PROVENANCES = (PROVENANCE_ORIGINAL, PROVENANCE_EXPLORATORY)


@dataclass(frozen=True)
class Episode:
    """A complete dialogue trajectory.

    The only nonzero reward sits on the final transition: +1 for a solved
    problem, -1 when the turn budget ran out.
    """

    transitions: tuple
    success: bool
    problem_id: str
    provenance: str
    seed: int

    def __post_init__(self) -> None:
        ts = tuple(self.transitions)
        if not ts:
            raise ValidationError("episode has no transitions")
        for t in ts:
            if not isinstance(t, Transition):
                raise ValidationError("episode transitions must be Transition objects")
        for i, t in enumerate(ts[:-1]):
            if t.terminal:
                raise ValidationError(f"non-final transition {i} marked terminal")
            if t.reward != 0:
                raise ValidationError(f"nonzero reward at non-final transition {i}")
            if t.next_state != ts[i + 1].state:
                raise ValidationError(f"transition {i} next_state does not chain")
        last = ts[-1]
        if not last.terminal:
            raise ValidationError("final transition must be terminal")
        if last.reward not in (-1, 1):
            raise ValidationError("episodes end with reward +1 or -1")
        if self.success != (last.reward == 1):
            raise ValidationError("success flag disagrees with final reward")
        if self.provenance not in _PROVENANCES:
            raise ValidationError(f"provenance must be one of {_PROVENANCES}")
        object.__setattr__(self, "transitions", ts)

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass(frozen=True)
class TaggedTransition:
    """A transition plus its position and provenance inside a dataset."""

    transition: Transition
    episode_index: int
    turn_index: int  # 1-based within the episode
    provenance: str

    @property
    def state(self) -> LatentState:
        return self.transition.state

    @property
    def action(self) -> HighLevelAction:
        return self.transition.action

    @property
    def reward(self) -> int:
        return self.transition.reward

    @property
    def next_state(self) -> Optional[LatentState]:
        return self.transition.next_state

    @property
    def terminal(self) -> bool:
        return self.transition.terminal


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of episodes plus the fingerprint of the
    configuration that produced it."""

    episodes: tuple
    config_fingerprint: str

    def __post_init__(self) -> None:
        eps = tuple(self.episodes)
        seeds = [e.seed for e in eps]
        if len(set(seeds)) != len(seeds):
            raise ValidationError("episode seeds must be unique within a dataset")
        object.__setattr__(self, "episodes", eps)

    def __len__(self) -> int:
        return len(self.episodes)


def episode_value(episode: Episode, gamma: float = DEFAULT_GAMMA) -> float:
    """Discounted return with the first turn discounted once.

    value = sum_n gamma^n * r_n for n = 1..len(episode).
    """
    return sum(gamma ** n * t.reward for n, t in enumerate(episode.transitions, start=1))


def flatten(dataset: Dataset) -> list:
    """All transitions in episode order, tagged with their origin."""
    out = []
    for ei, ep in enumerate(dataset.episodes):
        for ti, t in enumerate(ep.transitions, start=1):
            out.append(TaggedTransition(t, ei, ti, ep.provenance))
    return out


@dataclass(frozen=True)
class DatasetStats:
    n_episodes: int
    n_turns: int
    success_rate_pct: float
    diversity_pct: float


def dataset_stats(dataset: Dataset) -> DatasetStats:
    """Success rate and state-action diversity, both as percentages.

    Diversity is the share of transitions whose canonicalised
    (state, action) pair is distinct across the whole dataset.
    """
    if len(dataset) == 0:
        raise ValidationError("dataset_stats on an empty dataset")
    n_eps = len(dataset)
    n_succ = sum(1 for e in dataset.episodes if e.success)
    pairs = set()
    n_trans = 0
    for ep in dataset.episodes:
        for t in ep.transitions:
            pairs.add(canonical_pair(t.state, t.action))
            n_trans += 1
    return DatasetStats(
        n_episodes=n_eps,
        n_turns=n_trans,
        success_rate_pct=100.0 * n_succ / n_eps,
        diversity_pct=100.0 * len(pairs) / n_trans,
    )


def stable_seed(*parts) -> int:
    """Deterministic, platform-independent 63-bit seed from a key path.

    Built on SHA-256 so derived seed streams never depend on Python's
    salted hash().
    """
    import hashlib

    key = ":".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


def sample_latent_states(
    n: int, seed: int, max_turns: int = DEFAULT_MAX_TURNS
) -> list:
    """Random valid latent states, useful as probe sets for Q functions."""
    rng = random.Random(stable_seed("probe", seed))
    out = []
    for _ in range(n):
        turn = rng.randint(1, max_turns)
        vals = [rng.randint(0, 1) for _ in range(20)]
        vals.append(rng.randint(0, min(turn, CANONICAL_COUNT_CAP)))
        vals.append(rng.randint(0, min(turn, CANONICAL_COUNT_CAP)))
        vals.append(turn)
        vals.append(round(rng.random(), 2))
        vals.append(round(rng.random(), 2))
        out.append(LatentState(tuple(vals)))
    return out

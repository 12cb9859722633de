"""Optimism-guided exploratory data collection.

Every logged transition is scored with

    val = max_a Q(s, a) - Q(s, pi_bc(s))

i.e. how much the value estimate thinks the cloned behaviour at s leaves
on the table.  The highest-val states are revisited: the source episode
is replayed up to the matched turn under its original seed (restoring
the hidden simulator state), the estimated best action is injected, and
the dialogue then continues under the baseline tutor with fresh seeded
randomness.  Each selected candidate contributes `rollouts_per` new
episodes tagged as exploratory; each stores only the continuation from
the intervened turn onward, so it begins mid-dialogue.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    Dataset,
    Episode,
    HighLevelAction,
    LatentState,
    Transition,
    canonical_pair,
    flatten,
    stable_seed,
)
from .errors import FingerprintMismatchError, ValidationError
from .studentsim import ProblemSpec, baseline_policy, replay_to_turn, step
from .persist import fingerprint_of


@dataclass(frozen=True)
class CandidateIntervention:
    """A state where the value estimate disagrees with cloned behaviour."""

    val: float
    state: LatentState
    best_action: HighLevelAction
    episode_index: int
    turn_index: int


def score_candidates(tagged_transitions, q, bc) -> list:
    """Score and rank every transition's state.

    Candidates are sorted by descending val; ties break on
    (episode_index, turn_index) so the order is fully deterministic.
    """
    q_fp = getattr(q, "dataset_fingerprint", None)
    bc_fp = getattr(bc, "dataset_fingerprint", None)
    if q_fp is not None and bc_fp is not None and q_fp != bc_fp:
        raise FingerprintMismatchError(
            "value function and cloned policy were trained on different datasets"
        )
    tagged = list(tagged_transitions)
    if not tagged:
        raise ValidationError("no transitions to score")
    states = [t.state for t in tagged]
    values = q.batch_values(states)  # (n, 4)
    best_idx = values.argmax(axis=1)
    bc_actions = np.asarray([int(bc.act(s)) for s in states])
    vals = values.max(axis=1) - values[np.arange(len(states)), bc_actions]
    out = [
        CandidateIntervention(
            val=float(vals[i]),
            state=states[i],
            best_action=HighLevelAction(int(best_idx[i])),
            episode_index=tagged[i].episode_index,
            turn_index=tagged[i].turn_index,
        )
        for i in range(len(states))
    ]
    out.sort(key=lambda c: (-c.val, c.episode_index, c.turn_index))
    return out


@dataclass(frozen=True)
class AugmentResult:
    combined: Dataset  # D+ = D plus the exploratory episodes
    exploratory: Dataset  # D* alone
    selected: tuple  # the candidates actually used, in rank order
    skipped: int  # candidates with no matching state in the dataset


def _augment_fingerprint(base: str, problem: ProblemSpec, n_top, rollouts_per, seed,
                         exclude_zero_val, max_turns, subset=None) -> str:
    payload = {
        "kind": "augment",
        "base": base,
        "problem": problem.to_dict(),
        "n_top": n_top,
        "rollouts_per": rollouts_per,
        "seed": seed,
        "exclude_zero_val": exclude_zero_val,
        "max_turns": max_turns,
    }
    if subset:
        payload["subset"] = subset
    return fingerprint_of(payload)


def collect_exploratory(
    dataset: Dataset,
    candidates: Sequence[CandidateIntervention],
    problem: ProblemSpec,
    seed: int,
    n_top: int = 500,
    rollouts_per: int = 5,
    max_turns: int = 20,
    exclude_zero_val: bool = False,
) -> AugmentResult:
    """Turn ranked candidates into new exploratory episodes.

    For each of the first `n_top` candidates we locate the first episode
    and turn (in dataset order) whose canonicalised state matches, replay
    that episode's prefix under its stored seed, inject the candidate's
    best action, and let the baseline tutor finish the dialogue.
    Candidates whose state matches nothing are counted as skipped.
    """
    if n_top < 0 or rollouts_per < 1:
        raise ValidationError("n_top must be >= 0 and rollouts_per >= 1")
    pool = [c for c in candidates if c.val > 0.0] if exclude_zero_val else list(candidates)
    selected = pool[:n_top]

    # First occurrence of each canonical state, in dataset order.
    first_match: dict = {}
    for ei, ep in enumerate(dataset.episodes):
        for ti, tr in enumerate(ep.transitions, start=1):
            first_match.setdefault(tr.state.canonical(), (ei, ti))

    new_episodes = []
    skipped = 0
    for rank, cand in enumerate(selected):
        match = first_match.get(cand.state.canonical())
        if match is None:
            skipped += 1
            continue
        ei, ti = match
        source = dataset.episodes[ei]
        base_sim = replay_to_turn(problem, source, ti, max_turns)
        for j in range(rollouts_per):
            rollout_seed = stable_seed(seed, "exploration", rank, j)
            sim = replace(
                base_sim, rng_state=random.Random(rollout_seed).getstate()
            )
            policy_rng = random.Random(stable_seed(rollout_seed, "policy"))
            # The replayed prefix only reconstructs hidden simulator
            # state; the stored episode is the fresh continuation.
            transitions = []
            action: HighLevelAction = cand.best_action
            while True:
                result = step(sim, action, problem, max_turns)
                transitions.append(
                    Transition(
                        state=sim.latent,
                        action=action,
                        reward=result.reward,
                        next_state=None if result.terminal else result.next.latent,
                        terminal=result.terminal,
                    )
                )
                if result.terminal:
                    break
                sim = result.next
                action = baseline_policy(sim.latent, policy_rng)
            new_episodes.append(
                Episode(
                    transitions=tuple(transitions),
                    success=transitions[-1].reward == 1,
                    problem_id=problem.problem_id,
                    provenance="exploratory",
                    seed=rollout_seed,
                )
            )

    combined = Dataset(
        episodes=dataset.episodes + tuple(new_episodes),
        config_fingerprint=_augment_fingerprint(
            dataset.config_fingerprint, problem, n_top, rollouts_per, seed,
            exclude_zero_val, max_turns,
        ),
    )
    exploratory = Dataset(
        episodes=tuple(new_episodes),
        config_fingerprint=_augment_fingerprint(
            dataset.config_fingerprint, problem, n_top, rollouts_per, seed,
            exclude_zero_val, max_turns, subset="exploratory",
        ),
    )
    return AugmentResult(
        combined=combined,
        exploratory=exploratory,
        selected=tuple(selected),
        skipped=skipped,
    )

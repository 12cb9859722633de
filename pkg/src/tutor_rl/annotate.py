"""Turn-level annotation and state folding.

A dialogue turn (tutor utterance + student response) is summarised by a
`TurnAnnotation`: eighteen yes/no answers about the exchange, three
independent answers to the mistake question (majority voted), a flag for
whether the tutor tried to refocus, two bounded scores, the tutor's
action label, and the solve/confusion outcome used for the reward.

`fold_state` turns a running latent state plus one annotation into the
next latent state; `annotate_episode` chains folds over a provider's
output to build a complete `Episode`.

Providers:

* `EpisodeIdentityProvider` reconstructs annotations from an existing
  episode, so folding them reproduces that episode exactly.  It is the
  reference provider for all tests.
* `TextTurnProvider` holds the prompt templates an LLM-backed annotator
  would use, but deliberately performs no inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional, Sequence

from .core import (
    DEFAULT_MAX_TURNS,
    IDX_MATH_DENSITY,
    IDX_MISTAKE,
    IDX_REASONING,
    IDX_REFOCUS_ATTEMPTED,
    IDX_SOLVED,
    IDX_STUDENT_Q_COUNT,
    IDX_STUDENT_QUESTION,
    IDX_TURN,
    IDX_TUTOR_Q_COUNT,
    IDX_TUTOR_QUESTION,
    Episode,
    HighLevelAction,
    LatentState,
    Transition,
)
from .errors import AnnotationError, ValidationError

N_TURN_ANSWERS = 18  # slots 0-17 come straight from per-turn answers
N_MISTAKE_VOTES = 3


@dataclass(frozen=True)
class FeatureDescriptor:
    slot: int
    name: str
    kind: str  # binary | count | turn | score
    source: str  # per-turn answer | majority vote | cumulative rule | score model


FEATURE_SCHEMA = (
    FeatureDescriptor(0, "math_content", "binary", "per-turn answer"),
    FeatureDescriptor(1, "solved", "binary", "per-turn answer"),
    FeatureDescriptor(2, "reexplain_request", "binary", "per-turn answer"),
    FeatureDescriptor(3, "repeats_tutor", "binary", "per-turn answer"),
    FeatureDescriptor(4, "off_topic", "binary", "per-turn answer"),
    FeatureDescriptor(5, "unrelated_utterance", "binary", "per-turn answer"),
    FeatureDescriptor(6, "student_question", "binary", "per-turn answer"),
    FeatureDescriptor(7, "describes_stuck", "binary", "per-turn answer"),
    FeatureDescriptor(8, "background_assessed", "binary", "per-turn answer"),
    FeatureDescriptor(9, "frustration", "binary", "per-turn answer"),
    FeatureDescriptor(10, "uncertainty", "binary", "per-turn answer"),
    FeatureDescriptor(11, "positive_sentiment", "binary", "per-turn answer"),
    FeatureDescriptor(12, "break_request", "binary", "per-turn answer"),
    FeatureDescriptor(13, "on_problem", "binary", "per-turn answer"),
    FeatureDescriptor(14, "background_talk", "binary", "per-turn answer"),
    FeatureDescriptor(15, "related_concepts", "binary", "per-turn answer"),
    FeatureDescriptor(16, "wrote_equation", "binary", "per-turn answer"),
    FeatureDescriptor(17, "tutor_question", "binary", "per-turn answer"),
    FeatureDescriptor(18, "mistake_this_turn", "binary", "majority vote"),
    FeatureDescriptor(19, "refocus_attempted", "binary", "cumulative rule"),
    FeatureDescriptor(20, "tutor_question_count", "count", "cumulative rule"),
    FeatureDescriptor(21, "student_question_count", "count", "cumulative rule"),
    FeatureDescriptor(22, "turn_index", "turn", "cumulative rule"),
    FeatureDescriptor(23, "math_density", "score", "score model"),
    FeatureDescriptor(24, "reasoning", "score", "score model"),
)


@dataclass(frozen=True)
class TurnAnnotation:
    """Raw annotation of one exchange (or of the student's opening message).

    For the opening message `tutor_action` is None and the solve fields are
    ignored; for the final turn only the action and solve fields matter.
    """

    answers: tuple  # 18 bools, slots 0-17
    mistake_votes: tuple  # 3 bools, majority voted into slot 18
    refocus_attempt: bool
    math_density: float
    reasoning: float
    tutor_action: Optional[HighLevelAction] = None
    solved: bool = False
    confused: bool = False

    def __post_init__(self) -> None:
        ans = tuple(bool(a) for a in self.answers)
        if len(ans) != N_TURN_ANSWERS:
            raise ValidationError(f"expected {N_TURN_ANSWERS} answers, got {len(ans)}")
        votes = tuple(bool(v) for v in self.mistake_votes)
        if len(votes) != N_MISTAKE_VOTES:
            raise ValidationError(f"expected {N_MISTAKE_VOTES} mistake votes")
        object.__setattr__(self, "answers", ans)
        object.__setattr__(self, "mistake_votes", votes)
        object.__setattr__(self, "refocus_attempt", bool(self.refocus_attempt))
        if self.tutor_action is not None:
            object.__setattr__(self, "tutor_action", HighLevelAction(self.tutor_action))


def majority_vote(votes: Sequence[bool]) -> bool:
    """True when strictly more than half of the votes are True."""
    votes = list(votes)
    return sum(bool(v) for v in votes) * 2 > len(votes)


def fold_state(
    prev: Optional[LatentState], t: TurnAnnotation, turn_index: int
) -> LatentState:
    """Fold one annotation into the running latent state.

    Binary slots 0-17 copy the per-turn answers, slot 18 is the mistake
    majority, slot 19 ORs refocus attempts over the episode, the two
    counters accumulate, and the turn slot is set to `turn_index`.
    """
    if prev is None:
        if turn_index != 1:
            raise ValidationError(f"first fold must use turn_index 1, got {turn_index}")
        prev_refocus = 0
        prev_tq = 0
        prev_sq = 0
    else:
        if turn_index != prev.turn + 1:
            raise ValidationError(
                f"turn_index {turn_index} does not follow previous turn {prev.turn}"
            )
        prev_refocus = prev[IDX_REFOCUS_ATTEMPTED]
        prev_tq = prev[IDX_TUTOR_Q_COUNT]
        prev_sq = prev[IDX_STUDENT_Q_COUNT]

    vals = [int(a) for a in t.answers]
    vals.append(int(majority_vote(t.mistake_votes)))
    vals.append(int(bool(prev_refocus) or t.refocus_attempt))
    vals.append(prev_tq + int(t.answers[IDX_TUTOR_QUESTION]))
    vals.append(prev_sq + int(t.answers[IDX_STUDENT_QUESTION]))
    vals.append(turn_index)
    vals.append(float(t.math_density))
    vals.append(float(t.reasoning))
    return LatentState(tuple(vals))


def reward_from_annotation(
    t: TurnAnnotation, turn_index: int, max_turns: int = DEFAULT_MAX_TURNS
) -> int:
    """Sparse reward rule.

    +1 for a clean solve; a solve with expressed confusion is nullified
    to 0 and the dialogue continues; running out of turns costs -1.
    """
    if t.solved and not t.confused:
        return 1
    if t.solved and t.confused:
        return 0
    if turn_index >= max_turns:
        return -1
    return 0


class AnnotationProvider:
    """Produces one TurnAnnotation for the opening message plus one per turn."""

    name = "abstract"

    def annotations(self) -> Iterable[TurnAnnotation]:
        raise NotImplementedError


def annotate_episode(
    provider: AnnotationProvider,
    problem_id: str,
    seed: int,
    provenance: str = "original",
    max_turns: int = DEFAULT_MAX_TURNS,
) -> Episode:
    """Assemble an Episode from a provider's annotation stream.

    The first annotation describes the student's opening message and
    builds the initial state; each later annotation i supplies action,
    reward, and the state observed after turn i.
    """
    anns = list(provider.annotations())
    if len(anns) < 2:
        raise AnnotationError("need the opening annotation plus at least one turn")
    n_turns = len(anns) - 1
    if n_turns > max_turns:
        raise AnnotationError(f"{n_turns} turns exceed the budget of {max_turns}")

    try:
        states = [fold_state(None, anns[0], 1)]
    except ValidationError as exc:
        raise AnnotationError(f"opening annotation rejected: {exc}") from exc
    # States 2..n are inputs to turns 2..n; the state after the final turn
    # is never materialised because the final transition is terminal.
    for i in range(1, n_turns):
        try:
            states.append(fold_state(states[-1], anns[i], i + 1))
        except ValidationError as exc:
            raise AnnotationError(f"turn {i} rejected: {exc}") from exc

    transitions = []
    for i in range(1, n_turns + 1):
        t = anns[i]
        if t.tutor_action is None:
            raise AnnotationError(f"turn {i} has no tutor action label")
        reward = reward_from_annotation(t, i, max_turns)
        terminal = i == n_turns
        transitions.append(
            Transition(
                state=states[i - 1],
                action=t.tutor_action,
                reward=reward,
                next_state=None if terminal else states[i],
                terminal=terminal,
            )
        )
    try:
        return Episode(
            transitions=tuple(transitions),
            success=transitions[-1].reward == 1,
            problem_id=problem_id,
            provenance=provenance,
            seed=seed,
        )
    except ValidationError as exc:
        raise AnnotationError(f"annotated episode is inconsistent: {exc}") from exc


class EpisodeIdentityProvider(AnnotationProvider):
    """Derives annotations from an episode's own states.

    Folding the derived annotations reproduces the source episode
    exactly, which makes this the reference adapter between recorded
    trajectories and the annotation pipeline.
    """

    name = "identity"

    def __init__(self, episode: Episode):
        self._episode = episode

    def annotations(self) -> Iterable[TurnAnnotation]:
        first = self._episode.transitions[0].state
        yield self._annotation_from_state(first, tutor_action=None, solved=False, confused=False)
        n = len(self._episode.transitions)
        for i, tr in enumerate(self._episode.transitions, start=1):
            if i < n:
                nxt = tr.next_state
                solved = bool(nxt[IDX_SOLVED])
                # A solve observed mid-episode was nullified by confusion,
                # otherwise the episode would have ended here.
                yield self._annotation_from_state(
                    nxt, tutor_action=tr.action, solved=solved, confused=solved
                )
            else:
                yield TurnAnnotation(
                    answers=(False,) * N_TURN_ANSWERS,
                    mistake_votes=(False,) * N_MISTAKE_VOTES,
                    refocus_attempt=tr.action == HighLevelAction.REFOCUS,
                    math_density=0.0,
                    reasoning=0.0,
                    tutor_action=tr.action,
                    solved=tr.reward == 1,
                    confused=False,
                )

    @staticmethod
    def _annotation_from_state(
        state: LatentState,
        tutor_action: Optional[HighLevelAction],
        solved: bool,
        confused: bool,
    ) -> TurnAnnotation:
        mistake = bool(state[IDX_MISTAKE])
        return TurnAnnotation(
            answers=tuple(bool(state[i]) for i in range(N_TURN_ANSWERS)),
            mistake_votes=(mistake,) * N_MISTAKE_VOTES,
            refocus_attempt=bool(state[IDX_REFOCUS_ATTEMPTED]),
            math_density=state[IDX_MATH_DENSITY],
            reasoning=state[IDX_REASONING],
            tutor_action=tutor_action,
            solved=solved,
            confused=confused,
        )


class RecordsProvider(AnnotationProvider):
    """Feeds pre-extracted annotation records (e.g. parsed from JSON)."""

    name = "records"

    def __init__(self, records: Sequence[TurnAnnotation]):
        self._records = list(records)

    def annotations(self) -> Iterable[TurnAnnotation]:
        return iter(self._records)


PROMPT_ASSETS = {
    "turn_questions": "turn_questions.txt",
    "dialogue_generation": "dialogue_generation.txt",
    "dialogue_policy": "dialogue_policy.txt",
    "action_classification": "action_classification.txt",
    "solution_check": "solution_check.txt",
    "score_rating": "score_rating.txt",
}


def load_prompt(name: str) -> str:
    """Return one of the bundled prompt templates by short name."""
    if name not in PROMPT_ASSETS:
        raise ValidationError(f"unknown prompt asset {name!r}; have {sorted(PROMPT_ASSETS)}")
    path = resources.files("tutor_rl").joinpath("data/prompts").joinpath(PROMPT_ASSETS[name])
    return path.read_text(encoding="utf-8")


class TextTurnProvider(AnnotationProvider):
    """Placeholder for an LLM-backed annotator over raw dialogue text.

    Holds the prompt templates and the turn schema, but never runs a
    model: calling `annotations` raises, by design.
    """

    name = "text"

    def __init__(self, turns: Sequence[str]):
        self.turns = list(turns)
        self.question_prompt = load_prompt("turn_questions")

    def annotations(self) -> Iterable[TurnAnnotation]:
        raise NotImplementedError(
            "text annotation requires an external language model; "
            "use EpisodeIdentityProvider or RecordsProvider instead"
        )

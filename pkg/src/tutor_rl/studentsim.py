"""Seeded synthetic student for end-to-end pipeline verification.

The simulator plays the student side of a tutoring dialogue directly in
latent space.  Hidden state is tiny: is the student blocked on a
mistake, how many diagnostic questions have been asked, is the student
confident, and is the visible off-topic flag set.  Each tutor action
nudges these hidden variables:

* instruct   clears a mistake block and boosts this turn's solve chance
* encourage  sets the confidence flag (a persistent solve bonus)
* refocus    clears the off-topic flag with some probability
* ask_question  increments the probe count if the question lands, which
  grows less likely as the dialogue ages; once `k_probe` questions have
  landed the student's solve chance gains a lasting bonus

A turn resolves as: tutor action, then the student's attempt (mistake
or solve draw while engaged), then possible distraction onset.  A solve
draw can be nullified by expressed confusion, in which case the episode
continues with reward 0.  Running out of turns costs -1.

All randomness flows through per-episode streams derived from named
seeds, so identical seeds reproduce identical episodes bit for bit.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, fields, replace
from importlib import resources
from typing import Callable, Optional, Sequence

from .core import (
    DEFAULT_MAX_TURNS,
    IDX_BACKGROUND_ASSESSED,
    IDX_OFF_TOPIC,
    IDX_DESCRIBES_STUCK,
    IDX_TUTOR_Q_COUNT,
    IDX_UNCERTAIN,
    Dataset,
    Episode,
    HighLevelAction,
    LatentState,
    Transition,
    stable_seed,
)
from .errors import SimulatorError, ValidationError

_PROB_FIELDS = (
    "base_solve_prob",
    "mistake_prob",
    "distraction_prob",
    "refocus_effect",
    "refocus_floor",
    "question_info_gain",
    "encourage_effect",
    "instruct_effect",
    "confusion_prob",
    "probe_decay",
)


@dataclass(frozen=True)
class ProblemSpec:
    """Parameters of one synthetic problem.

    All `_prob`/`_effect`/`_floor`/`_gain` fields are probabilities or
    probability bonuses in [0, 1]; `k_probe` is the number of diagnostic
    questions needed before the information bonus applies.

    Distraction entrenches: while the student has been off-topic for at
    most `refocus_window` consecutive turns a refocus succeeds with
    probability `refocus_effect`, afterwards only with `refocus_floor`.

    Receptivity to diagnostic questions fades as the dialogue settles
    into a rut: a question always lands during the first `probe_onset`
    turns, then its chance of landing shrinks by a factor of
    `probe_decay` each turn.  Questions that do not land are deflected
    and never count toward `k_probe`.
    """

    problem_id: str
    base_solve_prob: float
    mistake_prob: float
    distraction_prob: float
    refocus_effect: float
    question_info_gain: float
    encourage_effect: float
    instruct_effect: float
    confusion_prob: float
    k_probe: int
    refocus_window: int = 2
    refocus_floor: float = 0.05
    probe_onset: int = 1
    probe_decay: float = 0.8

    def __post_init__(self) -> None:
        if not self.problem_id:
            raise ValidationError("problem_id must be non-empty")
        for name in _PROB_FIELDS:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= float(v) <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v!r}")
            object.__setattr__(self, name, float(v))
        if not isinstance(self.k_probe, int) or self.k_probe < 1:
            raise ValidationError(f"k_probe must be a positive int, got {self.k_probe!r}")
        if not isinstance(self.refocus_window, int) or self.refocus_window < 1:
            raise ValidationError(
                f"refocus_window must be a positive int, got {self.refocus_window!r}"
            )
        if not isinstance(self.probe_onset, int) or self.probe_onset < 1:
            raise ValidationError(
                f"probe_onset must be a positive int, got {self.probe_onset!r}"
            )

    def receptivity(self, turn: int) -> float:
        """Probability that a diagnostic question lands at `turn`."""
        if turn <= self.probe_onset:
            return 1.0
        return self.probe_decay ** (turn - self.probe_onset)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class SimulatorState:
    """Latent state plus the hidden variables behind it.

    States are immutable; `step` returns a fresh state carrying the
    advanced rng stream, so replaying a prefix is side-effect free.
    """

    latent: LatentState
    blocked_on_mistake: bool
    probe_count: int
    confident: bool
    off_topic_turns: int  # consecutive turns spent off-topic so far
    rng_state: tuple


@dataclass(frozen=True)
class StepResult:
    next: Optional[SimulatorState]
    reward: int
    terminal: bool


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


def _emit_latent(
    *,
    action: Optional[HighLevelAction],
    off: bool,
    blocked: bool,
    confident: bool,
    probe_count: int,
    k_probe: int,
    nullified_solve: bool,
    mistake: bool,
    student_question: bool,
    wrote_equation: bool,
    refocus_attempted: bool,
    tutor_q_count: int,
    student_q_count: int,
    turn: int,
) -> LatentState:
    on = not off
    instructed = action == HighLevelAction.INSTRUCT
    asked = action == HighLevelAction.ASK_QUESTION
    vals = (
        int(on),                                        # math content
        int(nullified_solve),                           # solved (but episode continues)
        int(student_question and blocked and on),       # re-explain request
        int(instructed and on),                         # repeats tutor
        int(off),
        int(off),                                       # unrelated utterance
        int(student_question),
        int(blocked and on),                            # describes stuck point
        int(probe_count >= k_probe),                    # background assessed
        int(blocked and not confident),                 # frustration
        int(not confident),
        int(confident),
        int(off and turn >= 12),                        # break request
        int(on),                                        # on problem
        int(asked and on),                              # background talk
        int(confident and on and not blocked),          # related concepts
        int(wrote_equation),
        int(asked),                                     # tutor question flag
        int(mistake),
        int(refocus_attempted),
        tutor_q_count,
        student_q_count,
        turn,
        0.0 if off else 0.7 + 0.3 * int(wrote_equation),
        0.0 if off else 0.4 + 0.4 * int(not blocked) + 0.2 * int(wrote_equation),
    )
    return LatentState(vals)


def reset(problem: ProblemSpec, seed: int) -> SimulatorState:
    """Start an episode: the student's opening request for help.

    The opening may already contain a mistake or start off-topic,
    drawn from the problem's mistake and distraction probabilities.
    """
    rng = random.Random(seed)
    off = rng.random() < problem.distraction_prob
    blocked = rng.random() < problem.mistake_prob
    latent = _emit_latent(
        action=None,
        off=off,
        blocked=blocked,
        confident=False,
        probe_count=0,
        k_probe=problem.k_probe,
        nullified_solve=False,
        mistake=blocked,
        student_question=False,
        wrote_equation=False,
        refocus_attempted=False,
        tutor_q_count=0,
        student_q_count=0,
        turn=1,
    )
    return SimulatorState(
        latent=latent,
        blocked_on_mistake=blocked,
        probe_count=0,
        confident=False,
        off_topic_turns=int(off),
        rng_state=rng.getstate(),
    )


def step(
    state: Optional[SimulatorState],
    action: HighLevelAction,
    problem: ProblemSpec,
    max_turns: int = DEFAULT_MAX_TURNS,
) -> StepResult:
    """Advance one tutor turn.  Returns next state (None when terminal)."""
    if state is None:
        raise SimulatorError("cannot step a finished episode")
    action = HighLevelAction(action)
    turn = state.latent.turn
    if turn > max_turns:
        raise SimulatorError(f"turn {turn} exceeds the budget of {max_turns}")

    rng = random.Random()
    rng.setstate(state.rng_state)

    off_at_start = bool(state.latent[IDX_OFF_TOPIC])
    off = off_at_start
    blocked = state.blocked_on_mistake
    confident = state.confident
    probe = state.probe_count

    # Tutor action effects.  An entrenched distraction (off-topic for
    # more than refocus_window turns) is much harder to break.
    if action == HighLevelAction.INSTRUCT:
        blocked = False
    elif action == HighLevelAction.ENCOURAGE:
        confident = True
    elif action == HighLevelAction.REFOCUS:
        p_clear = (
            problem.refocus_effect
            if state.off_topic_turns <= problem.refocus_window
            else problem.refocus_floor
        )
        if off and rng.random() < p_clear:
            off = False
    elif action == HighLevelAction.ASK_QUESTION:
        if rng.random() < problem.receptivity(turn):
            probe += 1

    # Student attempt: while engaged the response carries either a fresh
    # mistake or a solve chance.
    mistake = False
    nullified = False
    reward = 0
    terminal = False
    if not off and not blocked:
        if rng.random() < problem.mistake_prob:
            mistake = True
            blocked = True
        else:
            eff = _clamp01(
                problem.base_solve_prob
                + problem.instruct_effect * (action == HighLevelAction.INSTRUCT)
                + problem.encourage_effect * confident
                + problem.question_info_gain * (probe >= problem.k_probe)
            )
            if rng.random() < eff:
                # Confusion can only nullify a solve while turns remain;
                # on the final turn a solve stands.
                if turn < max_turns and rng.random() < problem.confusion_prob:
                    nullified = True
                else:
                    reward = 1
                    terminal = True

    if not terminal and turn >= max_turns:
        reward = -1
        terminal = True

    if terminal:
        return StepResult(next=None, reward=reward, terminal=True)

    # Distraction onset happens at the tail of the turn and only hits
    # students who began the turn on topic.
    if not off_at_start and rng.random() < problem.distraction_prob:
        off = True
    off_turns = (state.off_topic_turns + 1) if (off_at_start and off) else int(off)

    # An assessed student engages more visibly: more spontaneous
    # questions and written work than one grinding along unprobed.
    probed = probe >= problem.k_probe
    if off:
        p_q, p_eq = 0.05, 0.0
    elif probed:
        p_q, p_eq = 0.5, (0.55 if not blocked else 0.15)
    elif blocked:
        p_q, p_eq = 0.15, 0.05
    else:
        p_q, p_eq = 0.08, 0.15
    student_question = rng.random() < p_q
    wrote_equation = rng.random() < p_eq

    asked = action == HighLevelAction.ASK_QUESTION
    latent = _emit_latent(
        action=action,
        off=off,
        blocked=blocked,
        confident=confident,
        probe_count=probe,
        k_probe=problem.k_probe,
        nullified_solve=nullified,
        mistake=mistake,
        student_question=student_question,
        wrote_equation=wrote_equation,
        refocus_attempted=bool(state.latent[19]) or action == HighLevelAction.REFOCUS,
        tutor_q_count=state.latent[IDX_TUTOR_Q_COUNT] + int(asked),
        student_q_count=state.latent[21] + int(student_question),
        turn=turn + 1,
    )
    nxt = SimulatorState(
        latent=latent,
        blocked_on_mistake=blocked,
        probe_count=probe,
        confident=confident,
        off_topic_turns=off_turns,
        rng_state=rng.getstate(),
    )
    return StepResult(next=nxt, reward=0, terminal=False)


# Baseline dialogue policy: an instruction-heavy prompt-style tutor that
# only rarely thinks to probe the student's background.
BASELINE_WEIGHTS = {
    HighLevelAction.INSTRUCT: 0.67,
    HighLevelAction.ENCOURAGE: 0.20,
    HighLevelAction.REFOCUS: 0.05,
    HighLevelAction.ASK_QUESTION: 0.08,
}
OFF_TOPIC_REFOCUS_WEIGHT = 0.5


def baseline_action_weights(state: LatentState) -> dict:
    """Action distribution of the baseline tutor at `state`."""
    weights = dict(BASELINE_WEIGHTS)
    if state[IDX_OFF_TOPIC]:
        rest = 1.0 - OFF_TOPIC_REFOCUS_WEIGHT
        norm = 1.0 - weights[HighLevelAction.REFOCUS]
        weights = {
            a: (OFF_TOPIC_REFOCUS_WEIGHT if a == HighLevelAction.REFOCUS
                else weights[a] * rest / norm)
            for a in HighLevelAction
        }
    return weights


def baseline_policy(state: LatentState, rng: random.Random) -> HighLevelAction:
    """Sample the baseline tutor's next move."""
    weights = baseline_action_weights(state)
    r = rng.random()
    acc = 0.0
    for a in HighLevelAction:
        acc += weights[a]
        if r < acc:
            return a
    return HighLevelAction.ASK_QUESTION  # guards against float round-off


def scripted_expert(state: LatentState) -> HighLevelAction:
    """Hand-coded near-optimal tutor used as a reachability reference.

    Probes until the background-assessed flag confirms the questions
    actually landed, so deflected questions are retried.
    """
    if state[IDX_OFF_TOPIC]:
        return HighLevelAction.REFOCUS
    if state[IDX_DESCRIBES_STUCK]:
        return HighLevelAction.INSTRUCT
    if not state[IDX_BACKGROUND_ASSESSED]:
        return HighLevelAction.ASK_QUESTION
    if state[IDX_UNCERTAIN]:
        return HighLevelAction.ENCOURAGE
    return HighLevelAction.INSTRUCT


class BaselinePolicy:
    """Policy wrapper over `baseline_policy`; needs a per-episode rng."""

    kind = "baseline"

    def act(self, state: LatentState, rng: Optional[random.Random] = None) -> HighLevelAction:
        if rng is None:
            raise ValidationError("the baseline policy is stochastic and needs an rng")
        return baseline_policy(state, rng)


class ExpertPolicy:
    """Deterministic scripted expert."""

    kind = "expert"

    def act(self, state: LatentState, rng: Optional[random.Random] = None) -> HighLevelAction:
        return scripted_expert(state)


def rollout(
    problem: ProblemSpec,
    policy,
    seed: int,
    max_turns: int = DEFAULT_MAX_TURNS,
    provenance: str = "original",
) -> Episode:
    """Play one full episode.  The env stream is seeded with `seed`
    directly; the policy gets an independent stream derived from it."""
    sim = reset(problem, seed)
    policy_rng = random.Random(stable_seed(seed, "policy"))
    transitions = []
    while True:
        action = policy.act(sim.latent, policy_rng)
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
    return Episode(
        transitions=tuple(transitions),
        success=transitions[-1].reward == 1,
        problem_id=problem.problem_id,
        provenance=provenance,
        seed=seed,
    )


def replay_to_turn(
    problem: ProblemSpec,
    episode: Episode,
    turn_index: int,
    max_turns: int = DEFAULT_MAX_TURNS,
) -> SimulatorState:
    """Rebuild the hidden simulator state just before `turn_index`
    (1-based) by replaying the episode's recorded actions under its seed.

    Raises SimulatorError if the replayed latents stop matching the
    recorded ones, which indicates the episode belongs to a different
    problem configuration.
    """
    if not 1 <= turn_index <= len(episode.transitions):
        raise ValidationError(
            f"turn_index {turn_index} outside episode of length {len(episode.transitions)}"
        )
    sim = reset(problem, episode.seed)
    for i in range(turn_index - 1):
        recorded = episode.transitions[i]
        if sim.latent != recorded.state:
            raise SimulatorError(
                f"replay diverged at turn {i + 1}; episode does not match this problem"
            )
        result = step(sim, recorded.action, problem, max_turns)
        if result.terminal:
            raise SimulatorError(f"replay terminated early at turn {i + 1}")
        sim = result.next
    if sim.latent != episode.transitions[turn_index - 1].state:
        raise SimulatorError(
            f"replay diverged at turn {turn_index}; episode does not match this problem"
        )
    return sim


def generation_fingerprint(
    problem: ProblemSpec, n_episodes: int, seed: int, max_turns: int
) -> str:
    from .persist import fingerprint_of

    return fingerprint_of(
        {
            "kind": "generate",
            "problem": problem.to_dict(),
            "n_episodes": n_episodes,
            "seed": seed,
            "max_turns": max_turns,
        }
    )


def generate_dataset(
    problem: ProblemSpec,
    policy,
    n_episodes: int,
    seed: int,
    max_turns: int = DEFAULT_MAX_TURNS,
) -> Dataset:
    """Roll `n_episodes` episodes with per-episode derived seeds."""
    if n_episodes < 1:
        raise ValidationError("n_episodes must be positive")
    episodes = []
    for i in range(n_episodes):
        ep_seed = stable_seed(seed, "episode", i)
        episodes.append(rollout(problem, policy, ep_seed, max_turns, "original"))
    return Dataset(
        episodes=tuple(episodes),
        config_fingerprint=generation_fingerprint(problem, n_episodes, seed, max_turns),
    )


def load_problems(path: Optional[str] = None) -> dict:
    """Problem specs keyed by id, from a TOML file or the packaged set."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10
        import tomli as tomllib

    if path is None:
        text = (
            resources.files("tutor_rl")
            .joinpath("data/reference_problems.toml")
            .read_text(encoding="utf-8")
        )
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    raw = tomllib.loads(text)
    problems = {}
    for pid, params in raw.get("problems", {}).items():
        problems[pid] = ProblemSpec(problem_id=pid, **params)
    if not problems:
        raise ValidationError("no problems found in configuration")
    return problems


REFERENCE_PROBLEM_ID = "train_distance_reference"


def reference_problem() -> ProblemSpec:
    return load_problems()[REFERENCE_PROBLEM_ID]


def variant_problems() -> list:
    """The held-out generalization set: every packaged problem except
    the reference one."""
    probs = load_problems()
    return [p for pid, p in sorted(probs.items()) if pid != REFERENCE_PROBLEM_ID]

"""Data-model tests: state validation, canonicalisation, episode
structure, discounted values, and dataset statistics."""

import math

import numpy as np
import pytest

from conftest import make_episode, make_state
from tutor_rl import (
    Dataset,
    Episode,
    HighLevelAction,
    LatentState,
    Transition,
    ValidationError,
    canonical_pair,
    dataset_stats,
    episode_value,
    flatten,
    sample_latent_states,
    scaled_features,
    stable_seed,
)
from tutor_rl.core import (
    CANONICAL_COUNT_CAP,
    IDX_MATH_CONTENT,
    IDX_SOLVED,
    IDX_TURN,
    N_FEATURES,
)


# ------------------------------------------------------------ LatentState


def test_state_accepts_valid_vector():
    s = make_state(turn=3, flags=(IDX_MATH_CONTENT,), tq=2, sq=1,
                   density=0.7, reasoning=0.4)
    assert len(s) == N_FEATURES
    assert s[IDX_MATH_CONTENT] == 1
    assert s.turn == 3
    assert s[23] == 0.7


def test_state_normalises_bools_to_ints():
    vals = [False] * 20 + [0, 0, 1, 0.0, 0.0]
    vals[IDX_SOLVED] = True
    s = LatentState(tuple(vals))
    assert s[IDX_SOLVED] == 1
    assert isinstance(s[IDX_SOLVED], int)
    assert s == make_state(turn=1, flags=(IDX_SOLVED,))


def test_state_rejects_wrong_length():
    with pytest.raises(ValidationError):
        LatentState(tuple([0] * 24))
    with pytest.raises(ValidationError):
        LatentState(tuple([0] * 26))


def test_state_rejects_nonbinary_flag():
    vals = [0] * N_FEATURES
    vals[IDX_TURN] = 1
    vals[IDX_MATH_CONTENT] = 2
    with pytest.raises(ValidationError):
        LatentState(tuple(vals))


def test_state_rejects_bad_counts_and_turn():
    with pytest.raises(ValidationError):
        make_state(turn=1, tq=-1)
    with pytest.raises(ValidationError):
        make_state(turn=2, sq=3)  # counter ahead of the turn index
    vals = [0] * N_FEATURES
    vals[IDX_TURN] = 0
    with pytest.raises(ValidationError):
        LatentState(tuple(vals))


def test_state_rejects_bad_scores():
    with pytest.raises(ValidationError):
        make_state(density=1.2)
    with pytest.raises(ValidationError):
        make_state(reasoning=-0.1)
    vals = [0] * N_FEATURES
    vals[IDX_TURN] = 1
    vals[23] = float("nan")
    with pytest.raises(ValidationError):
        LatentState(tuple(vals))


def test_state_rejects_fractional_integer_slots():
    vals = [0] * N_FEATURES
    vals[IDX_TURN] = 1
    vals[20] = 0.5
    with pytest.raises(ValidationError):
        LatentState(tuple(vals))


def test_state_is_hashable_and_frozen():
    a = make_state(turn=2, tq=1)
    b = make_state(turn=2, tq=1)
    assert a == b and hash(a) == hash(b)
    with pytest.raises(Exception):
        a.values = tuple([0] * N_FEATURES)


# -------------------------------------------------------- canonicalisation


def test_canonical_caps_counters():
    turn = 20
    lo = make_state(turn=turn, tq=CANONICAL_COUNT_CAP)
    hi = make_state(turn=turn, tq=15)
    assert hi.canonical() == lo.canonical()
    assert hi.canonical()[20] == CANONICAL_COUNT_CAP
    # below the cap the exact counter survives
    assert make_state(turn=turn, tq=4).canonical()[20] == 4


def test_canonical_rounds_scores_to_two_decimals():
    a = make_state(density=0.123, reasoning=0.675)
    assert a.canonical()[23] == 0.12
    assert a.canonical()[24] == round(0.675, 2)
    b = make_state(density=0.1201)
    assert a.canonical()[23] == b.canonical()[23]


def test_canonical_passes_flags_and_turn_through():
    s = make_state(turn=17, flags=(3, 7, 19), tq=2, sq=0)
    c = s.canonical()
    assert c[:20] == s.values[:20]
    assert c[22] == 17


def test_canonical_pair_distinguishes_actions():
    s = make_state()
    assert canonical_pair(s, 0) != canonical_pair(s, 3)
    assert canonical_pair(s, 1) == (s.canonical(), 1)


def test_scaled_features_normalises_counters_and_turn():
    s = make_state(turn=10, flags=(IDX_MATH_CONTENT,), tq=4, sq=2,
                   density=0.5, reasoning=1.0)
    f = scaled_features(s)
    assert f.shape == (N_FEATURES,)
    assert f[IDX_MATH_CONTENT] == 1.0
    assert f[20] == pytest.approx(4 / 20)
    assert f[21] == pytest.approx(2 / 20)
    assert f[IDX_TURN] == pytest.approx(10 / 20)
    assert f[23] == 0.5 and f[24] == 1.0
    assert float(f.max()) <= 1.0 and float(f.min()) >= 0.0


def test_as_array_matches_values():
    s = make_state(turn=5, tq=3, density=0.25)
    assert np.array_equal(s.as_array(), np.asarray(s.values, dtype=float))


# ------------------------------------------------------------- actions


def test_action_labels_round_trip():
    assert [a.label for a in HighLevelAction] == [
        "instruct", "encourage", "refocus", "ask_question",
    ]
    for a in HighLevelAction:
        assert HighLevelAction.from_label(a.label) is a
    assert HighLevelAction.from_label("ASK_QUESTION") is HighLevelAction.ASK_QUESTION


def test_action_values_are_stable():
    assert HighLevelAction.INSTRUCT == 0
    assert HighLevelAction.ENCOURAGE == 1
    assert HighLevelAction.REFOCUS == 2
    assert HighLevelAction.ASK_QUESTION == 3


def test_unknown_action_label_rejected():
    with pytest.raises(ValidationError):
        HighLevelAction.from_label("ponder")


# ----------------------------------------------------------- transitions


def test_transition_requires_terminal_next_state_agreement():
    s = make_state()
    with pytest.raises(ValidationError):
        Transition(s, HighLevelAction.INSTRUCT, 0, None, terminal=False)
    with pytest.raises(ValidationError):
        Transition(s, HighLevelAction.INSTRUCT, 1, make_state(turn=2), terminal=True)


def test_transition_rejects_out_of_range_reward():
    s = make_state()
    with pytest.raises(ValidationError):
        Transition(s, HighLevelAction.INSTRUCT, 2, None, terminal=True)


def test_transition_coerces_int_action():
    t = Transition(make_state(), 3, 0, make_state(turn=2), terminal=False)
    assert t.action is HighLevelAction.ASK_QUESTION


# -------------------------------------------------------------- episodes


def test_episode_happy_path():
    ep = make_episode(3, final_reward=1)
    assert len(ep) == 3
    assert ep.success
    assert ep.transitions[-1].terminal


def test_episode_rejects_broken_chain():
    s1, s2, s3 = (make_state(turn=i) for i in (1, 2, 3))
    good = Transition(s1, 0, 0, s2, False)
    # second transition starts from s3, not the advertised s2
    bad = Transition(s3, 0, 1, None, True)
    with pytest.raises(ValidationError):
        Episode((good, bad), True, "toy", "original", 0)


def test_episode_rejects_mid_episode_reward_or_terminal():
    s1, s2 = make_state(turn=1), make_state(turn=2)
    with pytest.raises(ValidationError):
        Episode(
            (Transition(s1, 0, 1, None, True), Transition(s2, 0, 1, None, True)),
            True, "toy", "original", 0,
        )


def test_episode_rejects_zero_final_reward():
    s = make_state()
    with pytest.raises(ValidationError):
        Episode((Transition(s, 0, 0, None, True),), False, "toy", "original", 0)


def test_episode_rejects_success_flag_mismatch():
    s = make_state()
    t = Transition(s, 0, 1, None, True)
    with pytest.raises(ValidationError):
        Episode((t,), False, "toy", "original", 0)


def test_episode_rejects_unknown_provenance():
    with pytest.raises(ValidationError):
        make_episode(1, 1, provenance="imagined")


def test_episode_rejects_empty():
    with pytest.raises(ValidationError):
        Episode((), False, "toy", "original", 0)


def test_dataset_rejects_duplicate_seeds():
    eps = (make_episode(1, 1, seed=7), make_episode(2, -1, seed=7))
    with pytest.raises(ValidationError):
        Dataset(eps, "fp")
    ok = Dataset((make_episode(1, 1, seed=7), make_episode(2, -1, seed=8)), "fp")
    assert len(ok) == 2


# -------------------------------------------------------- episode_value


def test_episode_value_discounts_from_first_turn():
    assert episode_value(make_episode(1, 1), 0.9) == pytest.approx(0.9, abs=1e-12)
    assert episode_value(make_episode(3, 1), 0.9) == pytest.approx(0.729, abs=1e-12)
    assert episode_value(make_episode(20, -1), 0.9) == pytest.approx(
        -(0.9 ** 20), abs=1e-12
    )


def test_episode_value_gamma_one_counts_raw_reward():
    assert episode_value(make_episode(12, 1), 1.0) == 1.0
    assert episode_value(make_episode(5, -1), 1.0) == -1.0


def test_episode_value_prefers_earlier_success():
    values = [episode_value(make_episode(n, 1), 0.9) for n in range(1, 21)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert all(v > 0 for v in values)


def test_episode_value_failure_hurts_less_when_later():
    values = [episode_value(make_episode(n, -1), 0.9) for n in range(1, 21)]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert all(v < 0 for v in values)


# ---------------------------------------------------------------- flatten


def test_flatten_preserves_order_and_tags():
    d = Dataset(
        (
            make_episode(2, 1, seed=0),
            make_episode(3, -1, seed=1, provenance="exploratory"),
        ),
        "fp",
    )
    rows = flatten(d)
    assert len(rows) == 5
    assert [r.episode_index for r in rows] == [0, 0, 1, 1, 1]
    assert [r.turn_index for r in rows] == [1, 2, 1, 2, 3]
    assert [r.provenance for r in rows] == ["original"] * 2 + ["exploratory"] * 3
    # delegation onto the wrapped transition
    first = rows[0]
    assert first.state == first.transition.state
    assert first.action == first.transition.action
    assert first.reward == 0 and not first.terminal
    assert rows[-1].terminal and rows[-1].next_state is None


# ----------------------------------------------------------- dataset_stats


def test_stats_success_rate_over_hundred_episodes():
    eps = [make_episode(2, 1 if i < 75 else -1, seed=i) for i in range(100)]
    stats = dataset_stats(Dataset(tuple(eps), "fp"))
    assert stats.n_episodes == 100
    assert stats.success_rate_pct == pytest.approx(75.0)


def test_stats_diversity_counts_distinct_canonical_pairs():
    # Two 5-turn episodes; the second repeats exactly one (state, action)
    # pair of the first, so 9 of the 10 transitions are distinct.
    states = [make_state(turn=i) for i in range(1, 6)]
    actions_a = [HighLevelAction.INSTRUCT] * 5
    actions_b = [HighLevelAction.INSTRUCT] + [HighLevelAction.ENCOURAGE] * 4

    def build(actions, seed):
        ts = []
        for i in range(5):
            last = i == 4
            ts.append(Transition(states[i], actions[i], 1 if last else 0,
                                 None if last else states[i + 1], last))
        return Episode(tuple(ts), True, "toy", "original", seed)

    d = Dataset((build(actions_a, 0), build(actions_b, 1)), "fp")
    stats = dataset_stats(d)
    assert stats.n_turns == 10
    assert stats.diversity_pct == pytest.approx(90.0)


def test_stats_diversity_respects_canonical_collapse():
    # States differing only above the counter cap collapse onto one key.
    s_a = make_state(turn=20, tq=12)
    s_b = make_state(turn=20, tq=15)
    ts = (
        Transition(s_a, 0, 0, s_b, False),
        Transition(s_b, 0, 1, None, True),
    )
    d = Dataset((Episode(ts, True, "toy", "original", 0),), "fp")
    assert dataset_stats(d).diversity_pct == pytest.approx(50.0)


def test_stats_reject_empty_dataset():
    with pytest.raises(ValidationError):
        dataset_stats(Dataset((), "fp"))


# -------------------------------------------------------------- stable_seed


def test_stable_seed_depends_on_all_parts():
    assert stable_seed(1, "a") == stable_seed(1, "a")
    assert stable_seed(1, "a") != stable_seed(1, "b")
    assert stable_seed(1, "a") != stable_seed(2, "a")
    assert stable_seed("a", 1) != stable_seed(1, "a")
    assert stable_seed(1, "a", 0) != stable_seed(1, "a")


def test_stable_seed_is_pinned():
    # Frozen value so accidental algorithm changes are caught: every
    # stored artefact's seed lineage depends on this function.
    assert stable_seed("probe", 0) == 1167008714489682682


def test_stable_seed_range():
    for parts in [(0,), ("x", "y"), (123, "z", 4)]:
        v = stable_seed(*parts)
        assert 0 <= v < 2 ** 63


# ---------------------------------------------------- sample_latent_states


def test_sample_latent_states_valid_and_deterministic():
    a = sample_latent_states(50, seed=3)
    b = sample_latent_states(50, seed=3)
    assert a == b
    assert len(a) == 50
    assert all(isinstance(s, LatentState) for s in a)
    assert sample_latent_states(50, seed=4) != a


def test_sample_latent_states_respects_slot_ranges():
    for s in sample_latent_states(200, seed=11):
        assert 1 <= s.turn <= 20
        assert 0 <= s[20] <= min(s.turn, CANONICAL_COUNT_CAP)
        assert 0 <= s[21] <= min(s.turn, CANONICAL_COUNT_CAP)
        assert 0.0 <= s[23] <= 1.0 and 0.0 <= s[24] <= 1.0
        # sampled scores are already at canonical precision
        assert s[23] == round(s[23], 2)


def test_sample_latent_states_honours_max_turns():
    assert all(s.turn <= 5 for s in sample_latent_states(100, seed=0, max_turns=5))

"""Policy evaluation on the synthetic student.

Each arm is rolled out on the same derived seed sequence so arms face
identical student draws.  Success rates come with Wilson score 95%
intervals; turn counts are averaged over successful episodes only and
reported as absent (not NaN) when nothing succeeded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_GAMMA,
    DEFAULT_MAX_TURNS,
    N_ACTIONS,
    episode_value,
    stable_seed,
)
from .errors import ValidationError
from .studentsim import ProblemSpec, rollout

Z_95 = 1.959963984540054  # two-sided 95% normal quantile


def wilson_interval(successes: int, n: int, z: float = Z_95) -> tuple:
    """Wilson score interval for a binomial proportion, as fractions."""
    if n <= 0:
        raise ValidationError("wilson_interval needs n > 0")
    if not 0 <= successes <= n:
        raise ValidationError("successes must lie in [0, n]")
    phat = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (phat + z2 / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z2 / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


@dataclass(frozen=True)
class EvalReport:
    policy_tag: str
    problem_id: str
    n_episodes: int
    n_success: int
    success_rate_pct: float
    ci95: tuple  # (lo, hi) as fractions in [0, 1]
    mean_episode_value: float
    mean_turns_to_success: Optional[float]
    action_marginals: tuple  # one share per action, sums to 1
    seed: int
    gamma: float

    def to_dict(self) -> dict:
        return {
            "policy_tag": self.policy_tag,
            "problem_id": self.problem_id,
            "n_episodes": self.n_episodes,
            "n_success": self.n_success,
            "success_rate_pct": self.success_rate_pct,
            "ci95_lo": self.ci95[0],
            "ci95_hi": self.ci95[1],
            "mean_episode_value": self.mean_episode_value,
            "mean_turns_to_success": self.mean_turns_to_success,
            "action_marginals": list(self.action_marginals),
            "seed": self.seed,
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            policy_tag=d["policy_tag"],
            problem_id=d["problem_id"],
            n_episodes=d["n_episodes"],
            n_success=d["n_success"],
            success_rate_pct=d["success_rate_pct"],
            ci95=(d["ci95_lo"], d["ci95_hi"]),
            mean_episode_value=d["mean_episode_value"],
            mean_turns_to_success=d["mean_turns_to_success"],
            action_marginals=tuple(d["action_marginals"]),
            seed=d["seed"],
            gamma=d["gamma"],
        )


def evaluate_policy(
    policy,
    problem: ProblemSpec,
    n_episodes: int = 300,
    seed: int = 0,
    max_turns: int = DEFAULT_MAX_TURNS,
    gamma: float = DEFAULT_GAMMA,
    tag: Optional[str] = None,
) -> EvalReport:
    """Roll a policy for `n_episodes` fresh seeded episodes."""
    if n_episodes < 1:
        raise ValidationError("n_episodes must be positive")
    episodes = [
        rollout(problem, policy, stable_seed(seed, "eval", i), max_turns)
        for i in range(n_episodes)
    ]
    n_success = sum(1 for e in episodes if e.success)
    values = [episode_value(e, gamma) for e in episodes]
    success_turns = [len(e) for e in episodes if e.success]
    counts = np.zeros(N_ACTIONS)
    for e in episodes:
        for t in e.transitions:
            counts[int(t.action)] += 1
    marginals = counts / counts.sum()
    return EvalReport(
        policy_tag=tag or getattr(policy, "kind", type(policy).__name__),
        problem_id=problem.problem_id,
        n_episodes=n_episodes,
        n_success=n_success,
        success_rate_pct=100.0 * n_success / n_episodes,
        ci95=wilson_interval(n_success, n_episodes),
        mean_episode_value=float(np.mean(values)),
        mean_turns_to_success=float(np.mean(success_turns)) if success_turns else None,
        action_marginals=tuple(float(x) for x in marginals),
        seed=seed,
        gamma=gamma,
    )


def intervals_overlap(a: tuple, b: tuple) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


@dataclass(frozen=True)
class ComparisonTable:
    """Eval reports for several arms on one problem, ranked by success."""

    rows: tuple  # EvalReports sorted by descending success rate
    ci_overlap: dict  # (tag_lo, tag_hi) alphabetical -> bool

    def row(self, tag: str) -> EvalReport:
        for r in self.rows:
            if r.policy_tag == tag:
                return r
        raise ValidationError(f"no arm tagged {tag!r}")

    def overlap(self, tag_a: str, tag_b: str) -> bool:
        key = tuple(sorted((tag_a, tag_b)))
        if key not in self.ci_overlap:
            raise ValidationError(f"no pair {key} in comparison")
        return self.ci_overlap[key]


def compare_policies(reports: Sequence[EvalReport]) -> ComparisonTable:
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to compare")
    tags = [r.policy_tag for r in reports]
    if len(set(tags)) != len(tags):
        raise ValidationError("duplicate policy tags in comparison")
    problems = {r.problem_id for r in reports}
    if len(problems) != 1:
        raise ValidationError(f"arms evaluated on different problems: {sorted(problems)}")
    ns = {r.n_episodes for r in reports}
    if len(ns) != 1:
        raise ValidationError("arms evaluated with different episode counts")
    rows = tuple(sorted(reports, key=lambda r: (-r.success_rate_pct, r.policy_tag)))
    overlap = {}
    for i, a in enumerate(rows):
        for b in rows[i + 1 :]:
            key = tuple(sorted((a.policy_tag, b.policy_tag)))
            overlap[key] = intervals_overlap(a.ci95, b.ci95)
    return ComparisonTable(rows=rows, ci_overlap=overlap)


@dataclass(frozen=True)
class GeneralizationResult:
    """Per-problem reports plus mean +/- population std per arm."""

    per_problem: dict  # problem_id -> {tag -> EvalReport}
    aggregate: dict  # tag -> {"mean_success_pct", "std_success_pct"}


def generalization_suite(
    policies: Dict[str, object],
    problems: Sequence[ProblemSpec],
    n_episodes: int = 300,
    seed: int = 0,
    max_turns: int = DEFAULT_MAX_TURNS,
    gamma: float = DEFAULT_GAMMA,
    expected_problems: Optional[int] = None,
) -> GeneralizationResult:
    """Evaluate every arm on every problem variant."""
    problems = list(problems)
    if expected_problems is not None and len(problems) != expected_problems:
        raise ValidationError(
            f"expected {expected_problems} problem variants, got {len(problems)}"
        )
    if not problems:
        raise ValidationError("no problem variants given")
    if not policies:
        raise ValidationError("no policies given")
    ids = [p.problem_id for p in problems]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate problem ids in variant set")

    per_problem: dict = {}
    for prob in problems:
        per_problem[prob.problem_id] = {
            tag: evaluate_policy(
                pol, prob, n_episodes, seed, max_turns, gamma, tag=tag
            )
            for tag, pol in policies.items()
        }
    aggregate = {}
    for tag in policies:
        rates = np.asarray(
            [per_problem[pid][tag].success_rate_pct for pid in per_problem],
            dtype=np.float64,
        )
        aggregate[tag] = {
            "mean_success_pct": float(rates.mean()),
            "std_success_pct": float(rates.std()),  # population std
        }
    return GeneralizationResult(per_problem=per_problem, aggregate=aggregate)

#!/usr/bin/env python3
"""Probe the built-in tutors on the packaged problems.

Reports baseline and scripted-expert success with Wilson intervals.
The reference constants were chosen with this tool so that the baseline
lands in the intended mid-range regime with the expert far above it;
rerun it after any change to the problem set to confirm the gap.
"""

import argparse
import sys

from tutor_rl import (
    BaselinePolicy,
    ExpertPolicy,
    evaluate_policy,
    load_problems,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--problems-file", help="custom problem TOML (default: packaged)")
    ap.add_argument("--problem", action="append",
                    help="restrict to this id (repeatable; default: all)")
    args = ap.parse_args()

    problems = load_problems(args.problems_file)
    ids = args.problem or sorted(problems)
    unknown = [pid for pid in ids if pid not in problems]
    if unknown:
        ap.error(f"unknown problem id(s): {unknown}")

    print(f"{'problem':<28} {'arm':<9} {'success':>8} {'ci95':>18} {'turns':>6}")
    for pid in ids:
        spec = problems[pid]
        arms = [("baseline", BaselinePolicy()), ("expert", ExpertPolicy())]
        rows = {}
        for tag, pol in arms:
            rep = evaluate_policy(pol, spec, args.episodes, args.seed, tag=tag)
            rows[tag] = rep
            lo, hi = rep.ci95
            turns = f"{rep.mean_turns_to_success:.1f}" if rep.mean_turns_to_success else "-"
            print(
                f"{pid:<28} {tag:<9} {rep.success_rate_pct:>7.1f}% "
                f"[{100 * lo:>6.1f}, {100 * hi:>6.1f}] {turns:>6}"
            )
        gap = rows["expert"].success_rate_pct - rows["baseline"].success_rate_pct
        print(f"{'':<28} gap {gap:+.1f} pp")
    return 0


if __name__ == "__main__":
    sys.exit(main())

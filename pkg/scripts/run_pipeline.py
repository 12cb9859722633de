#!/usr/bin/env python3
"""End-to-end reference experiment.

Rolls the original log D under the baseline tutor, trains table-BC and
network-FQI on it, expands D into D+ with optimism-guided exploratory
rollouts, retrains on D+, trains CQL on both logs, and evaluates every
arm on shared episode seeds.  The FQI network doubles as the optimism
scorer for the expansion; adding its greedy arms gives the full
seven-tutor comparison.
"""

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from tutor_rl import (
    BaselinePolicy,
    collect_exploratory,
    compare_policies,
    cql_train,
    dataset_stats,
    evaluate_policy,
    fit_bc_table,
    flatten,
    generalization_suite,
    generate_dataset,
    greedy_policy,
    load_problems,
    load_run_config,
    neural_fqi_train,
    run_config_from_dict,
    save_dataset,
    save_policy,
    save_qfunction,
    score_candidates,
    stable_seed,
    variant_problems,
)

DEFAULT_MASTER_SEED = 20240817


class Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        print(f"[stage] {self.name} ...", flush=True)
        return self

    def __exit__(self, *exc):
        dt = time.perf_counter() - self.t0
        print(f"[stage] {self.name} done in {dt:.1f}s", flush=True)
        return False


def print_comparison(reports) -> None:
    table = compare_policies(reports)
    print(f"\nproblem {table.rows[0].problem_id}, {table.rows[0].n_episodes} episodes per arm")
    print(f"{'arm':<12} {'success':>8} {'ci95':>18} {'value':>8} {'turns':>6}")
    for r in table.rows:
        lo, hi = r.ci95
        turns = f"{r.mean_turns_to_success:.1f}" if r.mean_turns_to_success else "-"
        print(
            f"{r.policy_tag:<12} {r.success_rate_pct:>7.1f}% "
            f"[{100 * lo:>6.1f}, {100 * hi:>6.1f}] {r.mean_episode_value:>8.3f} {turns:>6}"
        )
    sep = sorted(k for k, v in table.ci_overlap.items() if not v)
    if sep:
        print("non-overlapping CI pairs: " + ", ".join(f"{a}|{b}" for a, b in sep))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", required=True, help="artifact directory")
    ap.add_argument("--config", help="run config TOML/JSON (default: built-in values)")
    ap.add_argument("--master-seed", type=int, help="override the config master seed")
    ap.add_argument("--episodes", type=int, help="size of the original log D")
    ap.add_argument("--eval-episodes", type=int)
    ap.add_argument("--cql-steps", type=int, help="training steps for CQL and the FQI scorer")
    ap.add_argument("--top-k", type=int, help="interventions to expand")
    ap.add_argument("--with-fqi-arms", action="store_true",
                    help="also evaluate greedy-FQI on D and D+")
    ap.add_argument("--generalization", action="store_true",
                    help="aggregate three arms across the packaged problem variants")
    args = ap.parse_args()

    if args.config:
        cfg = load_run_config(args.config)
    else:
        cfg = run_config_from_dict({"master_seed": args.master_seed or DEFAULT_MASTER_SEED})
    if args.master_seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.master_seed)
    if args.episodes is not None:
        cfg = dataclasses.replace(cfg, n_train_episodes=args.episodes)
    if args.eval_episodes is not None:
        cfg = dataclasses.replace(cfg, eval_episodes=args.eval_episodes)
    if args.top_k is not None:
        cfg = dataclasses.replace(cfg, augment_top_k=args.top_k)
    if args.cql_steps is not None:
        cfg = dataclasses.replace(cfg, cql=dataclasses.replace(cfg.cql, train_steps=args.cql_steps))

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ms = cfg.master_seed
    problem = load_problems(cfg.problems_path)[cfg.problem_id]
    t_start = time.perf_counter()

    with Stage(f"generate D ({cfg.n_train_episodes} episodes)"):
        d_orig = generate_dataset(
            problem, BaselinePolicy(), cfg.n_train_episodes,
            stable_seed(ms, "generate"), cfg.max_turns,
        )
        save_dataset(d_orig, str(outdir / "original.jsonl"), force=True)
    stats_d = dataset_stats(d_orig)
    print(f"  D: success {stats_d.success_rate_pct:.2f}%, diversity {stats_d.diversity_pct:.2f}%")

    with Stage("fit BC(D)"):
        bc_d = fit_bc_table(d_orig)
        save_policy(bc_d, str(outdir / "bc_D.json"), force=True)

    with Stage(f"fit FQI(D) ({cfg.cql.train_steps} steps)"):
        fqi_d = neural_fqi_train(
            flatten(d_orig),
            dataclasses.replace(cfg.cql, seed=stable_seed(ms, "fqi")),
            dataset_fingerprint=d_orig.config_fingerprint,
        )
        save_qfunction(fqi_d, str(outdir / "fqi_D.json"), force=True)

    with Stage(f"augment (top {cfg.augment_top_k} x {cfg.augment_rollouts})"):
        candidates = score_candidates(flatten(d_orig), fqi_d, bc_d)
        aug = collect_exploratory(
            d_orig, candidates, problem, stable_seed(ms, "exploration"),
            n_top=cfg.augment_top_k, rollouts_per=cfg.augment_rollouts,
            max_turns=cfg.max_turns,
        )
        save_dataset(aug.combined, str(outdir / "augmented.jsonl"), force=True)
        save_dataset(aug.exploratory, str(outdir / "exploratory.jsonl"), force=True)
    d_plus = aug.combined
    stats_dp = dataset_stats(d_plus)
    print(
        f"  D+: success {stats_dp.success_rate_pct:.2f}%, diversity {stats_dp.diversity_pct:.2f}% "
        f"({len(aug.exploratory)} new episodes, {aug.skipped} skipped)"
    )

    with Stage("fit BC(D+)"):
        bc_dp = fit_bc_table(d_plus)
        save_policy(bc_dp, str(outdir / "bc_Dplus.json"), force=True)

    with Stage(f"train CQL(D) ({cfg.cql.train_steps} steps)"):
        cql_d = cql_train(flatten(d_orig), cfg.cql, d_orig.config_fingerprint)
        save_qfunction(cql_d, str(outdir / "cql_D.json"), force=True)

    with Stage(f"train CQL(D+) ({cfg.cql.train_steps} steps)"):
        cql_dp = cql_train(
            flatten(d_plus),
            dataclasses.replace(cfg.cql, seed=stable_seed(ms, "cql_plus")),
            d_plus.config_fingerprint,
        )
        save_qfunction(cql_dp, str(outdir / "cql_Dplus.json"), force=True)

    arms = {
        "baseline": BaselinePolicy(),
        "bc_D": bc_d,
        "bc_Dplus": bc_dp,
        "cql_D": greedy_policy(cql_d),
        "cql_Dplus": greedy_policy(cql_dp),
    }
    if args.with_fqi_arms:
        arms["fqi_D"] = greedy_policy(fqi_d)
        with Stage(f"fit FQI(D+) ({cfg.cql.train_steps} steps)"):
            fqi_dp = neural_fqi_train(
                flatten(d_plus),
                dataclasses.replace(cfg.cql, seed=stable_seed(ms, "fqi_plus")),
                dataset_fingerprint=d_plus.config_fingerprint,
            )
            save_qfunction(fqi_dp, str(outdir / "fqi_Dplus.json"), force=True)
        arms["fqi_Dplus"] = greedy_policy(fqi_dp)

    with Stage(f"evaluate {len(arms)} arms ({cfg.eval_episodes} episodes each)"):
        reports = {
            tag: evaluate_policy(
                pol, problem, cfg.eval_episodes, stable_seed(ms, "eval"),
                cfg.max_turns, cfg.gamma, tag=tag,
            )
            for tag, pol in arms.items()
        }
        for tag, rep in reports.items():
            with open(outdir / f"report_{tag}.json", "w", encoding="utf-8") as fh:
                json.dump(rep.to_dict(), fh, indent=2, sort_keys=True)

    print_comparison(list(reports.values()))
    print(
        f"\ndataset shift: success {stats_d.success_rate_pct:.2f} -> {stats_dp.success_rate_pct:.2f}, "
        f"diversity {stats_d.diversity_pct:.2f} -> {stats_dp.diversity_pct:.2f}"
    )

    summary = {
        "config": cfg.to_dict(),
        "stats_D": dataclasses.asdict(stats_d),
        "stats_Dplus": dataclasses.asdict(stats_dp),
        "skipped_candidates": aug.skipped,
        "reports": {tag: rep.to_dict() for tag, rep in reports.items()},
    }

    if args.generalization:
        with Stage("generalization suite"):
            gen_arms = {
                "baseline": BaselinePolicy(),
                "bc_Dplus": bc_dp,
                "cql_Dplus": greedy_policy(cql_dp),
            }
            gen = generalization_suite(
                gen_arms, variant_problems(), cfg.eval_episodes,
                stable_seed(ms, "generalize"), cfg.max_turns, cfg.gamma,
            )
        print("\ngeneralization across problem variants (mean +/- std of success %):")
        for tag, agg in gen.aggregate.items():
            print(f"  {tag:<12} {agg['mean_success_pct']:.2f} +/- {agg['std_success_pct']:.2f}")
        summary["generalization"] = {
            "aggregate": gen.aggregate,
            "per_problem": {
                pid: {tag: rep.to_dict() for tag, rep in row.items()}
                for pid, row in gen.per_problem.items()
            },
        }

    with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"\nartifacts in {outdir}; total {time.perf_counter() - t_start:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())

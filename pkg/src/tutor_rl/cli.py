"""Command-line front end.

Verbs: generate, annotate, train, augment, evaluate, report, stats.
Exit codes: 0 success, 1 usage error, 2 validation/config error,
3 runtime failure (simulator divergence, training blow-up, IO).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from typing import Optional

from .annotate import EpisodeIdentityProvider, RecordsProvider, TurnAnnotation, annotate_episode
from .augment import collect_exploratory, score_candidates
from .config import RunConfig, load_run_config
from .core import (
    DEFAULT_GAMMA,
    DEFAULT_MAX_TURNS,
    Dataset,
    HighLevelAction,
    dataset_stats,
    flatten,
    stable_seed,
)
from .errors import AnnotationError, TutorRLError, ValidationError
from .evaluate import EvalReport, compare_policies, evaluate_policy
from .persist import (
    dataset_digest,
    fingerprint_of,
    load_dataset,
    load_policy,
    load_qfunction,
    save_dataset,
    save_policy,
    save_qfunction,
)
from .studentsim import (
    REFERENCE_PROBLEM_ID,
    BaselinePolicy,
    ExpertPolicy,
    generate_dataset,
    load_problems,
)

log = logging.getLogger("tutor_rl.cli")

_ALGOS = ("bc_table", "bc_classifier", "fqi", "fqi_tabular", "cql", "neural_fqi")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _maybe_config(args) -> Optional[RunConfig]:
    path = getattr(args, "config", None)
    return load_run_config(path) if path else None


def _resolve_seed(args, cfg: Optional[RunConfig], purpose: str) -> int:
    if args.seed is not None:
        return args.seed
    if cfg is not None:
        return stable_seed(cfg.master_seed, purpose)
    raise ValidationError(f"{purpose} needs --seed or --config")


def _resolve_problem(args, cfg: Optional[RunConfig]):
    problems_file = getattr(args, "problems_file", None)
    if problems_file is None and cfg is not None:
        problems_file = cfg.problems_path
    problems = load_problems(problems_file)
    pid = getattr(args, "problem", None)
    if pid is None:
        pid = cfg.problem_id if cfg is not None else REFERENCE_PROBLEM_ID
    if pid not in problems:
        raise ValidationError(f"unknown problem {pid!r}; have {sorted(problems)}")
    return problems[pid]


def _load_model(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        kind = json.load(fh).get("kind")
    if kind in ("bc_table", "bc_classifier"):
        return load_policy(path)
    if kind in ("q_tabular", "q_tree_ensemble", "q_neural"):
        return load_qfunction(path)
    raise ValidationError(f"{path} holds no known model kind (got {kind!r})")


# ---------------------------------------------------------------- verbs


def _cmd_generate(args) -> int:
    cfg = _maybe_config(args)
    problem = _resolve_problem(args, cfg)
    n = args.episodes if args.episodes is not None else (
        cfg.n_train_episodes if cfg else 3000
    )
    max_turns = args.max_turns if args.max_turns is not None else (
        cfg.max_turns if cfg else DEFAULT_MAX_TURNS
    )
    seed = _resolve_seed(args, cfg, "generate")
    policy = BaselinePolicy() if args.policy == "baseline" else ExpertPolicy()
    dataset = generate_dataset(problem, policy, n, seed, max_turns)
    save_dataset(dataset, args.out, force=args.force)
    s = dataset_stats(dataset)
    print(
        f"wrote {s.n_episodes} episodes ({s.n_turns} turns) to {args.out}; "
        f"success {s.success_rate_pct:.1f}%, diversity {s.diversity_pct:.1f}%"
    )
    return 0


def _annotation_from_obj(obj: dict) -> TurnAnnotation:
    try:
        act = obj.get("tutor_action")
        if act is not None:
            act = (
                HighLevelAction.from_label(act)
                if isinstance(act, str)
                else HighLevelAction(act)
            )
        return TurnAnnotation(
            answers=tuple(bool(x) for x in obj["answers"]),
            mistake_votes=tuple(bool(x) for x in obj["mistake_votes"]),
            refocus_attempt=bool(obj.get("refocus_attempt", False)),
            math_density=float(obj.get("math_density", 0.0)),
            reasoning=float(obj.get("reasoning", 0.0)),
            tutor_action=act,
            solved=bool(obj.get("solved", False)),
            confused=bool(obj.get("confused", False)),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed annotation record: {exc}") from exc


def _cmd_annotate(args) -> int:
    max_turns = args.max_turns if args.max_turns is not None else DEFAULT_MAX_TURNS
    if args.records is not None:
        raw_bytes = open(args.records, "rb").read()
        try:
            doc = json.loads(raw_bytes)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON in {args.records}: {exc}") from exc
        if not isinstance(doc, dict) or "episodes" not in doc:
            raise ValidationError("records file must be an object with an 'episodes' list")
        problem_id = doc.get("problem_id", REFERENCE_PROBLEM_ID)
        max_turns = doc.get("max_turns", max_turns)
        episodes = []
        for i, rec in enumerate(doc["episodes"]):
            anns = [_annotation_from_obj(o) for o in rec["turns"]]
            episodes.append(
                annotate_episode(
                    RecordsProvider(anns),
                    problem_id=rec.get("problem_id", problem_id),
                    seed=rec.get("seed", i),
                    provenance=rec.get("provenance", "original"),
                    max_turns=max_turns,
                )
            )
        fp = fingerprint_of(
            {"kind": "annotate_records", "sha256": hashlib.sha256(raw_bytes).hexdigest()}
        )
        out = Dataset(episodes=tuple(episodes), config_fingerprint=fp)
    else:
        src = load_dataset(args.data)
        episodes = []
        for ep in src.episodes:
            rebuilt = annotate_episode(
                EpisodeIdentityProvider(ep),
                problem_id=ep.problem_id,
                seed=ep.seed,
                provenance=ep.provenance,
                max_turns=max_turns,
            )
            if rebuilt != ep:
                raise AnnotationError(
                    f"re-annotation of episode seed={ep.seed} does not reproduce it"
                )
            episodes.append(rebuilt)
        out = Dataset(episodes=tuple(episodes), config_fingerprint=src.config_fingerprint)
    save_dataset(out, args.out, force=args.force)
    print(f"annotated {len(out)} episodes -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    import dataclasses

    from .offline_rl import CqlConfig, FqiConfig, cql_train, fitted_q_iteration, neural_fqi_train
    from .policies import BcClassifierConfig, fit_bc_classifier, fit_bc_table

    cfg = _maybe_config(args)
    dataset = load_dataset(args.data)
    fp = dataset.config_fingerprint
    tagged = flatten(dataset)

    def _seeded(base_cfg, purpose):
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        elif cfg is None:
            overrides["seed"] = stable_seed(0, purpose)
        if args.gamma is not None:
            overrides["gamma"] = args.gamma
        return dataclasses.replace(base_cfg, **overrides) if overrides else base_cfg

    algo = args.algo
    if algo == "bc_table":
        model = fit_bc_table(dataset)
        save_policy(model, args.out, force=args.force)
    elif algo == "bc_classifier":
        base = cfg.bc if cfg else BcClassifierConfig(seed=args.seed or 0)
        if args.seed is not None:
            base = dataclasses.replace(base, seed=args.seed)
        model = fit_bc_classifier(dataset, base)
        save_policy(model, args.out, force=args.force)
    elif algo in ("fqi", "fqi_tabular"):
        base = _seeded(cfg.fqi if cfg else FqiConfig(), "fqi")
        if args.iterations is not None:
            base = dataclasses.replace(base, iterations=args.iterations)
        backend = "tabular" if algo == "fqi_tabular" else "tree_ensemble"
        model = fitted_q_iteration(tagged, base, backend=backend, dataset_fingerprint=fp)
        save_qfunction(model, args.out, force=args.force)
    else:  # cql / neural_fqi
        base = _seeded(cfg.cql if cfg else CqlConfig(), "cql")
        if args.train_steps is not None:
            base = dataclasses.replace(base, train_steps=args.train_steps)
        if args.alpha is not None:
            base = dataclasses.replace(base, alpha=args.alpha)
        train_fn = cql_train if algo == "cql" else neural_fqi_train
        model = train_fn(tagged, base, dataset_fingerprint=fp)
        save_qfunction(model, args.out, force=args.force)
    print(f"trained {algo} on {len(tagged)} transitions -> {args.out}")
    return 0


def _cmd_augment(args) -> int:
    cfg = _maybe_config(args)
    dataset = load_dataset(args.data)
    pids = {ep.problem_id for ep in dataset.episodes}
    if getattr(args, "problem", None) is None:
        if len(pids) != 1:
            raise ValidationError(
                f"dataset mixes problems {sorted(pids)}; pass --problem explicitly"
            )
        args.problem = next(iter(pids))
    problem = _resolve_problem(args, cfg)
    seed = _resolve_seed(args, cfg, "exploration")
    q = load_qfunction(args.q)
    bc = load_policy(args.bc)
    top_k = args.top_k if args.top_k is not None else (cfg.augment_top_k if cfg else 500)
    if top_k == 0:
        log.warning("top-k is 0: no interventions, output will equal the input dataset")
    rollouts = args.rollouts if args.rollouts is not None else (
        cfg.augment_rollouts if cfg else 5
    )
    max_turns = args.max_turns if args.max_turns is not None else (
        cfg.max_turns if cfg else DEFAULT_MAX_TURNS
    )
    candidates = score_candidates(flatten(dataset), q, bc)
    result = collect_exploratory(
        dataset,
        candidates,
        problem,
        seed,
        n_top=top_k,
        rollouts_per=rollouts,
        max_turns=max_turns,
        exclude_zero_val=args.exclude_zero_val,
    )
    save_dataset(result.combined, args.out, force=args.force)
    if args.exploratory_out:
        save_dataset(result.exploratory, args.exploratory_out, force=args.force)
    s = dataset_stats(result.combined)
    print(
        f"augmented {len(dataset)} -> {s.n_episodes} episodes "
        f"({len(result.exploratory)} exploratory, {result.skipped} candidates skipped); "
        f"success {s.success_rate_pct:.1f}%, diversity {s.diversity_pct:.1f}%"
    )
    return 0


# CSV columns, one row per arm (pinned for external plotting):
# policy_tag, problem_id, n_episodes, n_success, success_rate_pct, ci95_lo,
# ci95_hi, mean_episode_value, mean_turns_to_success,
# marginal_instruct, marginal_encourage, marginal_refocus,
# marginal_ask_question, seed, gamma
def _write_csv(reports, path: str) -> None:
    import csv

    cols = [
        "policy_tag", "problem_id", "n_episodes", "n_success",
        "success_rate_pct", "ci95_lo", "ci95_hi", "mean_episode_value",
        "mean_turns_to_success",
    ] + [f"marginal_{a.label}" for a in HighLevelAction] + ["seed", "gamma"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in reports:
            d = r.to_dict()
            row = [d[c] for c in cols[:9]]
            row += list(r.action_marginals)
            row += [d["seed"], d["gamma"]]
            w.writerow(row)


def _cmd_evaluate(args) -> int:
    from .policies import greedy_policy

    cfg = _maybe_config(args)
    problem = _resolve_problem(args, cfg)
    if args.arm == "baseline":
        policy, default_tag = BaselinePolicy(), "baseline"
    elif args.arm == "expert":
        policy, default_tag = ExpertPolicy(), "expert"
    else:
        model = _load_model(args.model)
        if hasattr(model, "batch_values"):  # a Q function
            policy, default_tag = greedy_policy(model), f"greedy_{model.backend}"
        else:
            policy, default_tag = model, model.kind
    n = args.episodes if args.episodes is not None else (cfg.eval_episodes if cfg else 300)
    seed = _resolve_seed(args, cfg, "eval")
    max_turns = args.max_turns if args.max_turns is not None else (
        cfg.max_turns if cfg else DEFAULT_MAX_TURNS
    )
    gamma = args.gamma if args.gamma is not None else (cfg.gamma if cfg else DEFAULT_GAMMA)
    report = evaluate_policy(
        policy, problem, n, seed, max_turns, gamma, tag=args.tag or default_tag
    )
    if args.csv:
        _write_csv([report], args.csv)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        lo, hi = report.ci95
        print(
            f"{report.policy_tag}: {report.success_rate_pct:.1f}% success "
            f"[{100 * lo:.1f}, {100 * hi:.1f}] on {report.problem_id} -> {args.out}"
        )
    else:
        print(text)
    return 0


def _cmd_report(args) -> int:
    reports = []
    for path in args.reports:
        with open(path, "r", encoding="utf-8") as fh:
            reports.append(EvalReport.from_dict(json.load(fh)))
    if args.csv:
        _write_csv(reports, args.csv)
    if len(reports) == 1:
        r = reports[0]
        lo, hi = r.ci95
        print(f"{r.policy_tag} on {r.problem_id} (n={r.n_episodes}, seed={r.seed})")
        print(f"  success {r.success_rate_pct:.1f}%  CI95 [{100 * lo:.1f}, {100 * hi:.1f}]")
        print(f"  mean value {r.mean_episode_value:.3f}")
        return 0
    table = compare_policies(reports)
    first = table.rows[0]
    print(f"problem {first.problem_id}, {first.n_episodes} episodes per arm")
    header = f"{'arm':<18} {'success':>8} {'ci95':>16} {'value':>8} {'turns':>6}"
    print(header)
    for r in table.rows:
        lo, hi = r.ci95
        turns = f"{r.mean_turns_to_success:.1f}" if r.mean_turns_to_success else "-"
        print(
            f"{r.policy_tag:<18} {r.success_rate_pct:>7.1f}% "
            f"[{100 * lo:>5.1f}, {100 * hi:>5.1f}] {r.mean_episode_value:>8.3f} {turns:>6}"
        )
    separated = sorted(k for k, v in table.ci_overlap.items() if not v)
    if separated:
        print("non-overlapping CI pairs: " + ", ".join(f"{a}|{b}" for a, b in separated))
    else:
        print("all confidence intervals overlap")
    return 0


def _cmd_stats(args) -> int:
    dataset = load_dataset(args.data)
    s = dataset_stats(dataset)
    payload = {
        "n_episodes": s.n_episodes,
        "n_turns": s.n_turns,
        "success_rate_pct": s.success_rate_pct,
        "diversity_pct": s.diversity_pct,
        "config_fingerprint": dataset.config_fingerprint,
        "content_digest": dataset_digest(dataset),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tutor-rl",
        description="Offline RL tutoring pipeline on a synthetic student.",
    )
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp, seed_help="seed (default: derived from config)"):
        sp.add_argument("--config", help="run configuration TOML/JSON")
        sp.add_argument("--seed", type=int, help=seed_help)
        sp.add_argument("--force", action="store_true", help="overwrite outputs")

    g = sub.add_parser("generate", help="roll logged episodes on the synthetic student")
    common(g)
    g.add_argument("--problem", help="problem id (default: reference problem)")
    g.add_argument("--problems-file", help="custom problem TOML")
    g.add_argument("--episodes", type=int, help="episode count")
    g.add_argument("--max-turns", type=int, help="turn budget per episode")
    g.add_argument("--policy", choices=("baseline", "expert"), default="baseline")
    g.add_argument("--out", required=True, help="output dataset (.jsonl)")
    g.set_defaults(func=_cmd_generate)

    a = sub.add_parser("annotate", help="rebuild episodes through the annotation fold")
    a.add_argument("--data", help="episode dataset to re-annotate")
    a.add_argument("--records", help="JSON file of per-turn annotation records")
    a.add_argument("--max-turns", type=int)
    a.add_argument("--out", required=True)
    a.add_argument("--force", action="store_true")
    a.set_defaults(func=_cmd_annotate)

    t = sub.add_parser("train", help="fit a policy or Q function on a dataset")
    common(t)
    t.add_argument("--algo", required=True, choices=_ALGOS)
    t.add_argument("--data", required=True, help="training dataset (.jsonl)")
    t.add_argument("--gamma", type=float)
    t.add_argument("--iterations", type=int, help="FQI sweeps")
    t.add_argument("--train-steps", type=int, help="gradient steps (cql/neural_fqi)")
    t.add_argument("--alpha", type=float, help="conservative penalty weight")
    t.add_argument("--out", required=True, help="model container (.json)")
    t.set_defaults(func=_cmd_train)

    u = sub.add_parser("augment", help="add optimism-guided exploratory episodes")
    common(u)
    u.add_argument("--data", required=True, help="source dataset (.jsonl)")
    u.add_argument("--q", required=True, help="value model container")
    u.add_argument("--bc", required=True, help="cloned-policy container")
    u.add_argument("--problem", help="problem id (default: from dataset)")
    u.add_argument("--problems-file")
    u.add_argument("--top-k", type=int, help="candidate states to expand")
    u.add_argument("--rollouts", type=int, help="rollouts per candidate")
    u.add_argument("--max-turns", type=int)
    u.add_argument("--exclude-zero-val", action="store_true",
                   help="drop candidates where the clone already plays greedily")
    u.add_argument("--out", required=True, help="combined dataset (.jsonl)")
    u.add_argument("--exploratory-out", help="also write only the new episodes")
    u.set_defaults(func=_cmd_augment)

    e = sub.add_parser("evaluate", help="roll a policy and report success with CI")
    common(e)
    grp = e.add_mutually_exclusive_group(required=True)
    grp.add_argument("--model", help="trained model container")
    grp.add_argument("--arm", choices=("baseline", "expert"), help="built-in tutor")
    e.add_argument("--problem", help="problem id (default: reference problem)")
    e.add_argument("--problems-file")
    e.add_argument("--episodes", type=int)
    e.add_argument("--max-turns", type=int)
    e.add_argument("--gamma", type=float)
    e.add_argument("--tag", help="arm name used in reports")
    e.add_argument("--out", help="write the report JSON here")
    e.add_argument("--csv", help="also write a one-row CSV")
    e.set_defaults(func=_cmd_evaluate)

    r = sub.add_parser("report", help="rank evaluation reports side by side")
    r.add_argument("reports", nargs="+", help="report JSON files")
    r.add_argument("--csv", help="write one CSV row per arm")
    r.set_defaults(func=_cmd_report)

    s = sub.add_parser("stats", help="dataset size, success rate and diversity")
    s.add_argument("--data", required=True)
    s.set_defaults(func=_cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    _setup_logging(args.verbose if hasattr(args, "verbose") else False)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except TutorRLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

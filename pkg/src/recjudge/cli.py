"""Command-line entry point: ``recjudge <subcommand> ...``.

Every subcommand prints one JSON object on stdout summarising what it did
and where it wrote.  Failures print one JSON object on stderr and exit with
a code from :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import configparser
import glob
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .analysis import ExperimentSpec, ranking_agreement, run_experiment
from .corpus import (
    GradeMap,
    SplitSpec,
    derive_qrels_from_test,
    filter_min_interactions,
    load_catalog,
    load_interactions,
    read_qrels,
    read_run,
    split,
    write_qrels,
    write_run,
)
from .corpus.splitting import STRATEGIES, implicit_grade_map
from .errors import BackendError, RecJudgeError
from .judge import (
    BackendConfig,
    ProfileSpec,
    VerdictCache,
    average_labels,
    judge_items,
    load_backend_config,
    make_backend,
)
from .metrics import PairFilter, agreement_triple, compatibility, judged_at_k
from .pooling import Pool, build_pool
from .simlab import WorldSpec, generate_world, popularity_recommender, quality_ladder, run_recommender

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_PARTIAL, EXIT_BACKEND = 0, 1, 2, 3, 4
EXIT_CODES = {
    "ok": EXIT_OK,
    "usage": EXIT_USAGE,
    "validation": EXIT_VALIDATION,
    "partial_judge_failure": EXIT_PARTIAL,
    "backend_failure": EXIT_BACKEND,
}

_log = logging.getLogger("recjudge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True, default=str))


def _fail(kind: str, code: int, message: str) -> int:
    print(json.dumps({"error": kind, "exit_code": code, "message": message}, sort_keys=True), file=sys.stderr)
    return code


def _expand(patterns) -> list[Path]:
    files = []
    for pattern in patterns:
        matched = sorted(glob.glob(pattern))
        if not matched:
            raise FileNotFoundError(f"no files match {pattern}")
        files.extend(Path(m) for m in matched)
    return files


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{p} does not exist")
    return p


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _effective_seed(args) -> int:
    _log.info("effective seed: %d", args.seed)
    print(f"effective seed: {args.seed}", file=sys.stderr)
    return args.seed


def _parse_grade_map(text: str) -> GradeMap:
    if text == "implicit":
        return implicit_grade_map()
    try:
        thresholds = [(float(a), int(b)) for a, b in (part.split(":") for part in text.split(","))]
    except ValueError as exc:
        raise UsageError(f"--grade-map expects 'rating:grade,...' or 'implicit', got {text!r}") from exc
    return GradeMap(thresholds)


def _parse_budgets(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if part == "all":
            out.append(None)
        elif part.isdigit() and int(part) > 0:
            out.append(int(part))
        else:
            raise UsageError(f"--budgets expects positive integers or 'all', got {part!r}")
    return out


# -- subcommands ------------------------------------------------------------


def cmd_split(args) -> int:
    log = load_interactions(_require(args.interactions), args.format)
    if args.min_interactions:
        log = filter_min_interactions(log, args.min_interactions)
    seed = _effective_seed(args)
    spec = SplitSpec(args.strategy, args.train_fraction, args.cutoff, seed)
    train, test = split(log, spec)
    qrels = derive_qrels_from_test(test, _parse_grade_map(args.grade_map))
    out = _out(args)
    paths = {"train": out / "train.csv", "test": out / "test.csv", "qrels": out / "test.qrels"}
    train.to_csv(paths["train"])
    test.to_csv(paths["test"])
    write_qrels(qrels, paths["qrels"])
    _emit({"command": "split", "seed": seed, "train_rows": len(train), "test_rows": len(test),
           "judgments": len(qrels), "load_report": log.report, "outputs": paths})
    return EXIT_OK


def cmd_pool(args) -> int:
    runs = [read_run(f) for f in _expand(args.runs)]
    pool = build_pool(runs, args.depth)
    out = _out(args)
    path = out / args.output
    pool.write(path)
    _emit({"command": "pool", "depth": args.depth, "systems": pool.contributing_systems,
           "users": len(pool.users()), "pairs": len(pool), "outputs": {"pool": path}})
    return EXIT_OK


def _read_pairs(path) -> list:
    """Pairs from a pool file (two columns) or a qrels file (four columns)."""
    with _require(path).open(encoding="utf-8") as fh:
        first = next((line.split() for line in fh if line.strip()), [])
    if len(first) == 4:
        return [key for key, _ in read_qrels(path).pairs()]
    return Pool.read(path).pairs()


def _backend_config(args, cfg: configparser.ConfigParser) -> BackendConfig:
    if args.config and cfg.has_section(args.backend_section):
        base = load_backend_config(args.config, args.backend_section)
    else:
        base = BackendConfig(kind="synthetic_oracle")
    kinds = {"http": "http_chat", "synthetic": "synthetic_oracle", "replay": "replay_cache"}
    if args.backend:
        base.kind = kinds[args.backend]
    if args.noise is not None:
        base.noise_level = args.noise
    if args.item_bias is not None:
        base.item_bias = args.item_bias
    if args.truth:
        base.truth = read_qrels(_require(args.truth))
    if args.cache:
        base.cache_path = args.cache
    base.seed = args.seed
    base.__post_init__()  # re-validate after overrides
    return base


def cmd_judge(args, cfg) -> int:
    pairs = _read_pairs(args.pairs)
    history = load_interactions(_require(args.interactions))
    catalog = load_catalog(_require(args.catalog))
    seed = _effective_seed(args)
    fields = tuple(f.strip() for f in args.fields.split(",")) if args.fields else ProfileSpec().fields
    spec = ProfileSpec(history_size=args.history_size, selection=args.selection, seed=seed, fields=fields)
    config = _backend_config(args, cfg)
    backend = make_backend(config, replay_identity=args.replay_identity)
    cache = VerdictCache(config.cache_path)
    run = judge_items(
        pairs, backend, history, catalog, spec=spec, rubric=args.rubric, repetitions=args.repetitions,
        aggregation=args.aggregation, cache=cache, max_in_flight=args.max_in_flight,
    )
    out = _out(args)
    paths = {"qrels": out / "judge.qrels", "verdicts": out / "verdicts.jsonl"}
    for rep, q in enumerate(run.qrels):
        paths[f"qrels_rep{rep}"] = out / f"judge.rep{rep}.qrels"
        write_qrels(q, paths[f"qrels_rep{rep}"])
    write_qrels(average_labels(run.qrels), paths["qrels"])
    run.write_verdicts(paths["verdicts"])
    if run.failures:
        paths["failures"] = out / "failures.json"
        run.write_failures(paths["failures"])
    _emit({"command": "judge", "seed": seed, "backend": backend.identity, "requested": run.requested,
           "backend_calls": run.backend_calls, "failures": len(run.failures),
           "failure_rate": run.failure_rate, "outputs": paths})
    if run.failures:
        if len(run.failures) == run.requested:
            return _fail("backend_failure", EXIT_BACKEND, run.failures[0]["error"])
        return _fail("partial_judge_failure", EXIT_PARTIAL,
                     f"{len(run.failures)} of {run.requested} judge requests failed; see {paths['failures']}")
    return EXIT_OK


def _score_run(task):
    run_path, qrels_path, max_grade, metric, k, p, depth = task
    run, qrels = read_run(run_path), read_qrels(qrels_path, max_grade)
    if metric == "compatibility":
        return run.system_tag, compatibility(run, qrels, p=p, depth=depth)
    return run.system_tag, judged_at_k(run, qrels, k)


def cmd_eval(args) -> int:
    metric, k = args.metric, args.k
    if metric.startswith("judged@"):
        suffix = metric.split("@", 1)[1]
        if not suffix.isdigit() or int(suffix) < 1:
            raise UsageError(f"bad metric {metric!r}")
        metric, k = "judged", int(suffix)
    elif metric == "judged":
        pass
    elif metric != "compatibility":
        raise UsageError(f"unknown metric {args.metric!r}; expected compatibility or judged@K")
    _require(args.qrels)
    tasks = [(str(f), args.qrels, args.max_grade, metric, k, args.p, args.depth) for f in _expand(args.run)]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_score_run, tasks))
    else:
        results = [_score_run(t) for t in tasks]
    out = _out(args)
    summary, outputs = {}, {}
    for tag, result in results:
        stem = f"{tag}.{result.metric_name.replace('@', '_at_')}"
        result.to_csv(out / f"{stem}.csv")
        result.to_json(out / f"{stem}.json")
        outputs[tag] = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json"}
        summary[tag] = result.aggregate
    _emit({"command": "eval", "metric": results[0][1].metric_name, "aggregate": summary, "outputs": outputs})
    return EXIT_OK


def cmd_agree(args) -> int:
    human = read_qrels(_require(args.human))
    judged = read_qrels(_require(args.judge), args.max_grade)
    if args.pair_filter == "min_grade_gap" and args.gap is None:
        raise UsageError("--pair-filter min_grade_gap needs --gap")
    pf = PairFilter(args.pair_filter, args.gap if args.gap is not None else 1)
    triple = agreement_triple(human, judged, pf, macro=args.macro)
    out = _out(args)
    path = out / "agreement.json"
    body = {"agreement": triple.agreement, "tie": triple.tie, "disagreement": triple.disagreement,
            "pair_count": triple.pair_count, "pair_filter": args.pair_filter, "gap": args.gap, "macro": args.macro}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit({"command": "agree", **body, "outputs": {"agreement": path}})
    return EXIT_OK


def cmd_rank_agree(args) -> int:
    runs = [read_run(f) for f in _expand(args.runs)]
    human = read_qrels(_require(args.human))
    judged = read_qrels(_require(args.judge), args.max_grade)
    seed = _effective_seed(args)
    report, _ = ranking_agreement(runs, human, judged, args.metric, _parse_budgets(args.budgets), seed, args.k, args.p)
    paths = report.write(_out(args))
    _emit({"command": "rank-agree", "seed": seed, "rows": report.table.to_dict(orient="records"), "outputs": paths})
    return EXIT_OK


def cmd_simulate(args) -> int:
    seed = _effective_seed(args)
    fields = {}
    if args.world_spec:
        fields = json.loads(_require(args.world_spec).read_text(encoding="utf-8"))
    fields["seed"] = seed
    world = generate_world(WorldSpec.from_dict(fields))
    out = _out(args)
    paths = world.write(out, include_truth=not args.no_truth)
    if args.train_fraction < 1.0:
        train, test = split(world.interactions, SplitSpec("per_user_time_ordered", args.train_fraction, seed=seed))
        paths["train"], paths["test"] = out / "train.csv", out / "test.csv"
        train.to_csv(paths["train"])
        test.to_csv(paths["test"])
    else:
        train = world.interactions
    recommenders = quality_ladder(args.ladder, seed=seed, low=args.quality_low, high=args.quality_high)
    if args.popularity:
        recommenders.append(popularity_recommender())
    run_dir = out / "runs"
    run_dir.mkdir(exist_ok=True)
    for rec in recommenders:
        path = run_dir / f"{rec.tag}.run"
        write_run(run_recommender(rec, world, train, args.k), path)
        paths[f"run:{rec.tag}"] = path
    _emit({"command": "simulate", "seed": seed, "users": world.spec.n_users, "items": world.spec.n_items,
           "systems": [r.tag for r in recommenders], "outputs": paths})
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    spec = ExperimentSpec.load(_require(args.experiment))
    backend = None
    if spec.kind in ("metadata_ablation", "history_size"):
        config = _backend_config(args, cfg)
        if config.kind == "synthetic_oracle" and config.truth is None:
            config.truth = read_qrels(spec.inputs["qrels_human"])
        backend = make_backend(config)
    report = run_experiment(spec, backend)
    paths = report.write(_out(args))
    _emit({"command": "report", "name": report.name, "kind": spec.kind, "seeds": spec.seeds, "outputs": paths})
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _common(cfg_defaults: dict) -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI config file with [global] and backend sections")
    common.add_argument("--seed", type=int, default=cfg_defaults.get("seed", 0))
    common.add_argument("--out", default=cfg_defaults.get("out", "."), help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=cfg_defaults.get("verbose", 0))
    common.add_argument("--backend-section", default=cfg_defaults.get("backend_section", "backend"))
    common.add_argument("--jobs", type=int, default=cfg_defaults.get("jobs", os.cpu_count() or 1))
    common.add_argument("--max-in-flight", type=int, default=cfg_defaults.get("max_in_flight", 4))
    return common


def _judge_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["http", "synthetic", "replay"])
    p.add_argument("--noise", type=float, help="synthetic oracle noise level")
    p.add_argument("--item-bias", type=float, help="synthetic oracle per-item bias level")
    p.add_argument("--truth", help="qrels the synthetic oracle copies")
    p.add_argument("--cache", help="verdict cache file (JSON lines)")


def build_parser(cfg_defaults: dict | None = None) -> argparse.ArgumentParser:
    common = _common(cfg_defaults or {})
    # shared options live on each subcommand, so they follow the subcommand name
    parser = _Parser(prog="recjudge", description="Offline recommender evaluation with graded judgments.")
    parser.add_argument("--version", action="version", version=f"recjudge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("split", parents=[common], help="split interactions and derive test qrels")
    p.add_argument("--interactions", required=True)
    p.add_argument("--format", choices=["csv_movielens", "tsv"], default="csv_movielens")
    p.add_argument("--strategy", choices=list(STRATEGIES), default="per_user_time_ordered")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--cutoff", type=int, help="timestamp cutoff for global_time")
    p.add_argument("--grade-map", default="implicit", help="'implicit' or 'min_rating:grade,...'")
    p.add_argument("--min-interactions", type=int, default=0)

    p = sub.add_parser("pool", parents=[common], help="build a judgment pool from runs")
    p.add_argument("--runs", nargs="+", required=True, help="run files or glob patterns")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--output", default="pool.txt")

    p = sub.add_parser("judge", parents=[common], help="label (user, item) pairs with a judge backend")
    p.add_argument("--pairs", required=True, help="pool file or qrels file")
    p.add_argument("--interactions", required=True, help="history used for user profiles")
    p.add_argument("--catalog", required=True)
    p.add_argument("--history-size", type=int, default=1000)
    p.add_argument("--selection", choices=["random_sample", "most_recent"], default="random_sample")
    p.add_argument("--fields", help="comma-separated metadata fields (title is required)")
    p.add_argument("--rubric", choices=["none", "criteria"], default="none")
    p.add_argument("--aggregation", choices=["cot_overall", "sum_aggregation"], default="cot_overall")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--replay-identity", help="backend identity recorded in a replayed cache")
    _judge_backend_flags(p)

    p = sub.add_parser("eval", parents=[common], help="score runs against qrels")
    p.add_argument("--run", nargs="+", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metric", default="compatibility", help="compatibility or judged@K")
    p.add_argument("--p", type=float, default=0.95)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--depth", type=int)
    p.add_argument("--max-grade", type=int, default=7)

    p = sub.add_parser("agree", parents=[common], help="pairwise agreement between two qrels")
    p.add_argument("--human", required=True)
    p.add_argument("--judge", required=True)
    p.add_argument("--pair-filter", choices=["relevant_vs_nonrelevant", "min_grade_gap"],
                   default="relevant_vs_nonrelevant")
    p.add_argument("--gap", type=int)
    p.add_argument("--macro", action="store_true")
    p.add_argument("--max-grade", type=int, default=7)

    p = sub.add_parser("rank-agree", parents=[common], help="system-ranking agreement under label budgets")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--human", required=True)
    p.add_argument("--judge", required=True)
    p.add_argument("--budgets", default="10,50,100,all")
    p.add_argument("--metric", choices=["compatibility", "judged"], default="compatibility")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--p", type=float, default=0.95)
    p.add_argument("--max-grade", type=int, default=7)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic world and a recommender ladder")
    p.add_argument("--world-spec", help="JSON file of world parameters")
    p.add_argument("--ladder", type=int, default=10)
    p.add_argument("--quality-low", type=float, default=0.0)
    p.add_argument("--quality-high", type=float, default=1.0)
    p.add_argument("--popularity", action="store_true", help="also emit a popularity recommender")
    p.add_argument("--train-fraction", type=float, default=1.0)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--no-truth", action="store_true")

    p = sub.add_parser("report", parents=[common], help="run a serialized experiment")
    p.add_argument("--experiment", required=True)
    _judge_backend_flags(p)
    return parser


def _config_defaults(argv) -> tuple[dict, configparser.ConfigParser]:
    """Read ``[global]`` defaults from ``--config`` before full parsing."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    cfg = configparser.ConfigParser(interpolation=None)
    if not known.config:
        return {}, cfg
    if not cfg.read(_require(known.config), encoding="utf-8"):
        raise FileNotFoundError(known.config)
    defaults = {}
    if cfg.has_section("global"):
        g = cfg["global"]
        for key, conv in (("seed", int), ("verbose", int), ("jobs", int), ("max_in_flight", int),
                          ("out", str), ("backend_section", str)):
            if key in g:
                defaults[key] = conv(g[key])
    return defaults, cfg


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        defaults, cfg = _config_defaults(argv)
        args = build_parser(defaults).parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1 or args.max_in_flight < 1:
            raise UsageError("--jobs and --max-in-flight must be >= 1")
        handlers = {
            "split": cmd_split, "pool": cmd_pool, "eval": cmd_eval, "agree": cmd_agree,
            "rank-agree": cmd_rank_agree, "simulate": cmd_simulate,
        }
        if args.command == "judge":
            return cmd_judge(args, cfg)
        if args.command == "report":
            return cmd_report(args, cfg)
        return handlers[args.command](args)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, str(exc))
    except FileNotFoundError as exc:
        return _fail("missing_input", EXIT_USAGE, str(exc))
    except BackendError as exc:
        return _fail("backend_failure", EXIT_BACKEND, str(exc))
    except (RecJudgeError, ValueError) as exc:
        return _fail("validation", EXIT_VALIDATION, str(exc))


if __name__ == "__main__":
    sys.exit(main())

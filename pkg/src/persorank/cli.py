"""Command-line pipeline driver.

Subcommands cover the full flow: gen, parse, stats, partition, index,
extract, train, score, blend, eval, analyze. Settings come from an optional
key = value config file; flags override file values. Every artifact is
written atomically and accompanied by a JSON run manifest recording the
effective parameters, inputs, outputs, and wall time.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import gzip
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, blend as blend_mod, cache, contexts, evaluate, features
from .config import ConfigError, PipelineConfig, load_config
from .logs import DataError, LogParseError, label_sessions, parse_log, sessionize
from .partition import (
    ROLES,
    order_sessions,
    read_targets,
    select_targets,
    session_ranks,
    write_targets,
)
from .ranker import ModelKind, RankModel, TrainSettings, score_table, train
from .synth import GenConfig, generate_lines


class UsageError(Exception):
    pass


def _atomic_file(write_fn, out: Path) -> None:
    """Run a path-taking writer against a temp file, then rename into place."""
    tmp = Path(str(out) + ".tmp")
    try:
        write_fn(tmp)
        os.replace(tmp, out)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _open_log(path: Path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt")
    return open(path)


def _require(path: str | Path) -> Path:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing input file: {path}")
    return path


def _write_manifest(command: str, params: dict, inputs: list, outputs: list,
                    started: float, primary_output: str | Path) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "params": params,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "started_utc": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    path = Path(str(primary_output) + ".manifest.json")
    with cache.atomic_write(path) as fh:
        json.dump(manifest, fh, indent=1)


def _gen_config(cfg: PipelineConfig) -> GenConfig:
    return GenConfig(
        n_users=cfg.n_users,
        n_days=cfg.n_days,
        queries_per_user_per_day=cfg.queries_per_user_per_day,
        n_queries=cfg.n_queries,
        n_terms=cfg.n_terms,
        n_documents=cfg.n_documents,
        n_domains=cfg.n_domains,
        preference_strength=cfg.preference_strength,
        repeat_query_prob=cfg.repeat_query_prob,
        rng_seed=cfg.synth_seed,
    )


def _cmd_gen(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    gencfg = _gen_config(cfg)
    lines, stats = generate_lines(gencfg)
    text = "\n".join(lines) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
        return 0
    out = Path(args.out or cfg.log_path)
    if str(out).endswith(".gz"):
        with cache.atomic_write(out, "wb") as fh:
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(text.encode())
    else:
        with cache.atomic_write(out) as fh:
            fh.write(text)
    counts_path = Path(str(out) + ".counts.json")
    with cache.atomic_write(counts_path) as fh:
        json.dump(stats.as_dict(), fh, indent=1, sort_keys=True)
    _write_manifest("gen", {"generator": gencfg.__dict__}, [], [out, counts_path],
                    started, out)
    print(f"wrote {out} ({stats.total_records} records) and {counts_path}")
    return 0


def _cmd_parse(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    log_path = _require(args.log or cfg.log_path)
    out = Path(args.out or cfg.cache_path)
    with _open_log(log_path) as fh:
        records = parse_log(fh)
    sessions = sessionize(records)
    label_sessions(sessions)
    cache.save_sessions(sessions, out)
    _write_manifest("parse", {}, [log_path], [out], started, out)
    n_imps = sum(len(s.impressions) for s in sessions)
    print(f"wrote {out}: {len(sessions)} sessions, {n_imps} impressions")
    return 0


def _cmd_stats(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    cache_path = _require(args.cache or cfg.cache_path)
    out = Path(args.out or Path(cfg.reports_dir) / "stats.csv")
    sessions = cache.load_sessions(cache_path)
    train_days = args.train_days if args.train_days is not None else cfg.train_days

    from .logs import Grade

    queries, documents, users = set(), set(), set()
    n_train_sessions = n_test_sessions = n_train_clicks = 0
    n_impressions = n_clicks = 0
    grade_counts = {
        "training": {g.value: 0 for g in Grade},
        "test": {g.value: 0 for g in Grade},
    }
    for session in sessions:
        users.add(session.user_id)
        period = "training" if session.day <= train_days else "test"
        if period == "training":
            n_train_sessions += 1
        else:
            n_test_sessions += 1
        for imp in session.impressions:
            queries.add(imp.query_id)
            documents.update(imp.documents)
            n_impressions += 1
            n_clicks += len(imp.clicks)
            if period == "training":
                n_train_clicks += len(imp.clicks)
            if imp.labels:
                for g in imp.labels:
                    grade_counts[period][g.value] += 1

    rows = [
        ("corpus", "unique_queries", len(queries)),
        ("corpus", "unique_documents", len(documents)),
        ("corpus", "unique_users", len(users)),
        ("corpus", "training_sessions", n_train_sessions),
        ("corpus", "test_sessions", n_test_sessions),
        ("corpus", "training_clicks", n_train_clicks),
        ("corpus", "total_records", len(sessions) + n_impressions + n_clicks),
    ]
    for period in ("training", "test"):
        for grade, count in grade_counts[period].items():
            rows.append((f"relevance_{period}", grade, count))

    inputs = [cache_path]
    if args.targets:
        targets_path = _require(args.targets)
        inputs.append(targets_path)
        targets = read_targets(targets_path)
        lookup = {
            (s.user_id, s.session_id, imp.serp_id): imp
            for s in sessions
            for imp in s.impressions
        }
        for role in ("train", "validation"):
            counts = {g.value: 0 for g in Grade}
            for ref in targets.by_role(role):
                imp = lookup.get((ref.user_id, ref.session_id, ref.serp_id))
                if imp is None or imp.labels is None:
                    raise DataError(f"target not found or unlabeled: {ref}")
                for g in imp.labels:
                    counts[g.value] += 1
            for grade, count in counts.items():
                rows.append((f"relevance_{role}_targets", grade, count))

    with cache.atomic_write(out) as fh:
        fh.write("section,metric,value\n")
        for section, metric, value in rows:
            fh.write(f"{section},{metric},{value}\n")
    _write_manifest("stats", {"train_days": train_days}, inputs, [out], started, out)
    print(f"wrote {out}")
    return 0


def _cmd_partition(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    cache_path = _require(args.cache or cfg.cache_path)
    out = Path(args.out or cfg.targets_path)
    seed = args.seed if args.seed is not None else cfg.partition_seed
    train_days = args.train_days if args.train_days is not None else cfg.train_days
    sessions = cache.load_sessions(cache_path)
    targets, report = select_targets(sessions, train_days=train_days, seed=seed)
    _atomic_file(lambda p: write_targets(targets, p), out)
    _write_manifest(
        "partition",
        {"seed": seed, "train_days": train_days, "report": report.__dict__},
        [cache_path], [out], started, out,
    )
    print(
        f"wrote {out}: train={len(targets.train)} "
        f"validation={len(targets.validation)} test={len(targets.test)} "
        f"(users={report.n_users}, no-train={report.users_without_train}, "
        f"no-validation={report.users_without_validation}, "
        f"no-test={report.users_without_test})"
    )
    return 0


def _cmd_index(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    cache_path = _require(args.cache or cfg.cache_path)
    seed = args.seed if args.seed is not None else cfg.partition_seed
    train_days = args.train_days if args.train_days is not None else cfg.train_days
    sessions = cache.load_sessions(cache_path)
    ordered = order_sessions(sessions, seed)
    query_index, user_history = contexts.build(ordered, train_days)
    if args.lookup is not None:
        occurrences = contexts.lookup(query_index, args.lookup)
        print(f"query {args.lookup}: {len(occurrences)} occurrences")
        for occ in occurrences:
            print(
                f"  user={occ.user_id} day={occ.day} session={occ.session_id} "
                f"t={occ.time_passed} docs={list(occ.documents)} "
                f"gains={list(occ.gains)}"
            )
        return 0
    out = Path(args.out or Path(cfg.features_dir) / "context.index")
    cache.save_index(query_index, user_history, session_ranks(ordered), out)
    _write_manifest("index", {"seed": seed, "train_days": train_days},
                    [cache_path], [out], started, out)
    print(f"wrote {out}: {len(query_index)} unique queries")
    return 0


def _cmd_extract(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    cache_path = _require(args.cache or cfg.cache_path)
    targets_path = _require(args.targets or cfg.targets_path)
    out_dir = Path(args.out_dir or cfg.features_dir)
    seed = args.seed if args.seed is not None else cfg.partition_seed
    train_days = args.train_days if args.train_days is not None else cfg.train_days
    threads = args.threads if args.threads is not None else cfg.threads
    if threads < 1:
        raise UsageError("--threads must be >= 1")

    sessions = cache.load_sessions(cache_path)
    targets = read_targets(targets_path)
    extracted = features.extract_targets(
        sessions, targets, train_days=train_days, seed=seed, threads=threads
    )
    outputs = []
    for role in ROLES:
        path = out_dir / f"features_{role}.csv"
        rows = extracted[role]
        _atomic_file(lambda p, rows=rows: features.write_features(rows, p), path)
        outputs.append(path)
    _write_manifest(
        "extract",
        {"seed": seed, "train_days": train_days, "threads": threads},
        [cache_path, targets_path], outputs, started, outputs[0],
    )
    print(
        "wrote "
        + ", ".join(f"{p} ({len(extracted[r]) // 10} targets)"
                    for p, r in zip(outputs, ROLES))
    )
    return 0


def _cmd_train(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    train_path = _require(args.train_features
                          or Path(cfg.features_dir) / "features_train.csv")
    val_path = _require(args.val_features
                        or Path(cfg.features_dir) / "features_validation.csv")
    kind = ModelKind(args.kind)
    out = Path(args.out or Path(cfg.models_dir) / f"model_{kind.value}.json")
    settings = TrainSettings(
        hidden=args.hidden if args.hidden is not None else cfg.hidden_units,
        learning_rate=args.lr if args.lr is not None else cfg.learning_rate,
        epochs=args.epochs if args.epochs is not None else cfg.epochs,
        batch_queries=args.batch if args.batch is not None else cfg.batch_queries,
        patience=args.patience if args.patience is not None else cfg.patience,
        cutoff=cfg.ndcg_cutoff,
    )
    seed = args.seed if args.seed is not None else cfg.train_seed
    train_table = features.read_features(train_path)
    val_table = features.read_features(val_path)
    model = train(kind, train_table, val_table, settings, seed=seed)
    model.save(out)
    _write_manifest(
        "train",
        {"kind": kind.value, "seed": seed, "settings": settings.__dict__},
        [train_path, val_path], [out], started, out,
    )
    best = model.metadata.get("best_validation_ndcg")
    print(f"wrote {out}" + (f" (validation NDCG@10 {best:.5f})" if best else ""))
    return 0


def _cmd_score(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    model_path = _require(args.model)
    features_path = _require(args.features)
    out = Path(args.out or Path(cfg.reports_dir) / "scores.csv")
    model = RankModel.load(model_path)
    table = features.read_features(features_path)
    scores = score_table(model, table)
    _atomic_file(lambda p: evaluate.write_scores(table, scores, p), out)
    _write_manifest("score", {"model": str(model_path)},
                    [model_path, features_path], [out], started, out)
    print(f"wrote {out} ({table.n_targets} targets)")
    return 0


def _cmd_blend(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    score_paths = [_require(p) for p in args.scores]
    out = Path(args.out or Path(cfg.reports_dir) / "blended_scores.csv")
    loaded = [evaluate.read_scores(p) for p in score_paths]
    first = loaded[0]
    keys = [(t.user_id, t.session_id, t.serp_id) for t in first]
    for path, other in zip(score_paths[1:], loaded[1:]):
        if [(t.user_id, t.session_id, t.serp_id) for t in other] != keys:
            raise DataError(f"score files disagree on targets: {path}")
        for a, b in zip(first, other):
            if list(a.doc_ids) != list(b.doc_ids):
                raise DataError(f"score files disagree on documents: {path}")
    member_scores = []
    for other in loaded:
        flat, gains, base = evaluate.scored_targets_arrays(other)
        member_scores.append(flat)
    _, gains, base = evaluate.scored_targets_arrays(first)
    names = [Path(p).name for p in score_paths]

    if args.apply:
        model = blend_mod.BlendModel.load(_require(args.apply))
        blended = model.apply(member_scores)
    elif args.method == "average":
        blended, model = blend_mod.blend_average(member_scores, names)
    else:
        split_seed = (
            args.split_seed if args.split_seed is not None else cfg.blend_split_seed
        )
        blended, model = blend_mod.blend_learned(
            member_scores, gains, base,
            split_seed=split_seed, names=names, cutoff=cfg.ndcg_cutoff,
        )
    n_docs_per_target = len(first[0].doc_ids)
    blended = blended.reshape(len(first), n_docs_per_target)

    table = _scores_as_table(first)
    _atomic_file(lambda p: evaluate.write_scores(table, blended, p), out)
    outputs = [out]
    if not args.apply:
        model_out = Path(args.model_out
                         or Path(cfg.models_dir) / f"blend_{model.method}.json")
        model.save(model_out)
        outputs.append(model_out)
    _write_manifest(
        "blend",
        {"method": (f"apply:{args.apply}" if args.apply else args.method),
         "members": names},
        score_paths, outputs, started, out,
    )
    extra = ""
    if not args.apply and model.method == "learned":
        extra = f" (holdout NDCG@10 {model.metadata['holdout_mean_ndcg']:.5f})"
    print(f"wrote {', '.join(str(p) for p in outputs)}{extra}")
    return 0


def _scores_as_table(targets):
    """Minimal FeatureTable stand-in so write_scores can reuse the layout."""
    import types

    n = len(targets)
    n_docs = len(targets[0].doc_ids)
    table = types.SimpleNamespace()
    table.n_targets = n
    table.user_ids = np.asarray([t.user_id for t in targets])
    table.query_ids = np.asarray([t.query_id for t in targets])
    table.session_ids = np.asarray([t.session_id for t in targets])
    table.serp_ids = np.asarray([t.serp_id for t in targets])
    table.doc_ids = np.asarray([t.doc_ids for t in targets])
    table.base_ranks = np.asarray([t.base_ranks for t in targets])
    table.gains = np.asarray([t.gains for t in targets])
    table.x = np.zeros((n, n_docs, 0))
    return table


def _cmd_eval(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    scores_path = _require(args.scores)
    out_dir = Path(args.out_dir or cfg.reports_dir)
    targets = evaluate.read_scores(scores_path)
    report = evaluate.evaluate_run(
        targets, cutoff=cfg.ndcg_cutoff, split_seed=args.split_seed
    )
    report_path = out_dir / "report.csv"
    summary_path = out_dir / "summary.csv"
    _atomic_file(lambda p: evaluate.write_report(report, p), report_path)
    _atomic_file(lambda p: evaluate.write_summary(report, p), summary_path)
    _write_manifest(
        "eval", {"split_seed": args.split_seed},
        [scores_path], [report_path, summary_path], started, report_path,
    )
    print(
        f"wrote {report_path}, {summary_path}: mean NDCG@{cfg.ndcg_cutoff} "
        f"{report.mean_ndcg:.5f} (base {report.mean_base_ndcg:.5f}, "
        f"mean tau {report.mean_tau:.5f})"
    )
    return 0


def _cmd_analyze(args, cfg: PipelineConfig) -> int:
    started = time.perf_counter()
    report_path = _require(args.report)
    out_dir = Path(args.out_dir or cfg.reports_dir)
    taus, deltas = [], []
    with open(report_path, newline="") as fh:
        for row in csv.DictReader(fh):
            taus.append(float(row["tau"]))
            deltas.append(float(row["delta_ndcg"]))
    tau_path = out_dir / "tau_hist.csv"
    delta_path = out_dir / "delta_ndcg_hist.csv"
    _atomic_file(
        lambda p: evaluate.write_histogram(evaluate.histogram(taus, -1.0, 1.0, 20), p),
        tau_path,
    )
    _atomic_file(
        lambda p: evaluate.write_histogram(
            evaluate.histogram(deltas, -1.0, 1.0, 40), p
        ),
        delta_path,
    )
    _write_manifest("analyze", {}, [report_path], [tau_path, delta_path],
                    started, tau_path)
    print(f"wrote {tau_path}, {delta_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="persorank",
        description="Personalized search re-ranking pipeline.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("-c", "--config", help="key = value config file")
        p.add_argument(
            "-O", "--set", dest="overrides", action="append", default=[],
            metavar="KEY=VALUE", help="override a config value",
        )
        return p

    p = add("gen", _cmd_gen, "generate a synthetic click log")
    p.add_argument("--out", help="log file to write (.gz for gzip, - for stdout)")

    p = add("parse", _cmd_parse, "parse and label a log into a session cache")
    p.add_argument("--log", help="input log file (TSV, optionally .gz)")
    p.add_argument("--out", help="session cache to write")

    p = add("stats", _cmd_stats, "corpus and relevance distribution report")
    p.add_argument("--cache", help="session cache")
    p.add_argument("--targets", help="optional targets CSV for per-role stats")
    p.add_argument("--train-days", type=int, dest="train_days")
    p.add_argument("--out", help="stats CSV to write")

    p = add("partition", _cmd_partition, "select per-user target queries")
    p.add_argument("--cache", help="session cache")
    p.add_argument("--out", help="targets CSV to write")
    p.add_argument("--seed", type=int, help="tie-break seed")
    p.add_argument("--train-days", type=int, dest="train_days")

    p = add("index", _cmd_index, "build (or inspect) the context indexes")
    p.add_argument("--cache", help="session cache")
    p.add_argument("--out", help="index cache to write")
    p.add_argument("--seed", type=int, help="session order seed")
    p.add_argument("--train-days", type=int, dest="train_days")
    p.add_argument("--lookup", type=int, metavar="QUERY_ID",
                   help="print a query's occurrences instead of writing a cache")

    p = add("extract", _cmd_extract, "extract features for all targets")
    p.add_argument("--cache", help="session cache")
    p.add_argument("--targets", help="targets CSV")
    p.add_argument("--out-dir", dest="out_dir", help="directory for feature files")
    p.add_argument("--seed", type=int, help="session order seed")
    p.add_argument("--train-days", type=int, dest="train_days")
    p.add_argument("--threads", type=int, help="worker process cap")

    p = add("train", _cmd_train, "train a scoring model")
    p.add_argument("--kind", required=True,
                   choices=[k.value for k in ModelKind])
    p.add_argument("--train-features", dest="train_features")
    p.add_argument("--val-features", dest="val_features")
    p.add_argument("--out", help="model JSON to write")
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int, help="queries per mini-batch")
    p.add_argument("--patience", type=int)

    p = add("score", _cmd_score, "score a feature file with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="scores CSV to write")

    p = add("blend", _cmd_blend, "aggregate several score files")
    p.add_argument("--scores", nargs="+", required=True,
                   help="member score files (aligned targets)")
    p.add_argument("--method", choices=["average", "learned"], default="average")
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--apply", help="apply an existing blend model file")
    p.add_argument("--out", help="blended scores CSV to write")
    p.add_argument("--model-out", dest="model_out", help="blend model JSON")

    p = add("eval", _cmd_eval, "evaluate a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--split-seed", dest="split_seed", type=int,
                   help="emulate a hidden half/half leaderboard split")

    p = add("analyze", _cmd_analyze, "histogram the per-query report")
    p.add_argument("--report", required=True)
    p.add_argument("--out-dir", dest="out_dir")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        cfg = load_config(args.config, args.overrides)
        return args.handler(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, LogParseError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

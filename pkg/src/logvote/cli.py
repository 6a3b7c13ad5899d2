"""Command-line front end: parse, prepare, train, detect, evaluate, report.

Every command reads the same run config (``--config``) and works inside one
output directory (``--out``), so the stages chain without extra flags.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import random
import re
import sys
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

from . import core
from .cache import PredictionCache
from .config import RunConfig, derive_seed, load_config
from .core import Label, LabeledDataset, LabeledSequence, LogSequence, label_from_int
from .dataset import (
    InjectionSpec,
    compute_data_efficiency,
    deduplicate,
    inject_sequence_changes,
    inject_template_changes,
    partition_sliding_window,
    sample_training_subset,
    truncate_sessions,
)
from .ensemble import EnsemblePipeline, MlClassifier, write_detections, read_detections
from .evaluation import confusion, mann_whitney_u, precision_recall_f1
from .llm import (
    HttpBackend,
    KnowledgeBase,
    LlmClassifier,
    MockBackend,
    contains_rule,
    export_finetune_dataset,
    fixture_rule,
    items_from_prompt,
    write_finetune_jsonl,
)
from .models import Vectorizer, load_model, save_model, train_dt, train_knn, train_slfn
from .parser import DrainParser, PassthroughParser, TemplateStore

log = logging.getLogger("logvote")


class InputError(ValueError):
    pass


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- parse ---------------------------------------------------------------------------

def cmd_parse(cfg: RunConfig, out: Path) -> dict:
    files = [("train", f) for f in cfg.input.train_files] + [("test", f) for f in cfg.input.test_files]
    if not files:
        raise InputError("no input log files configured")
    pattern = re.compile(cfg.input.log_format) if cfg.input.log_format else None
    parser = PassthroughParser() if cfg.passthrough else DrainParser(cfg.parser_config())
    out.mkdir(parents=True, exist_ok=True)
    n_messages = 0
    with open(out / "parsed.tsv", "w", encoding="utf-8", newline="\n") as stream:
        for role, name in files:
            path = cfg.resolve(name)
            if not path.exists():
                raise FileNotFoundError(f"log file not found: {name}")
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.rstrip("\n")
                    if not line.strip():
                        continue
                    session = ""
                    content = line
                    if pattern is not None:
                        m = pattern.match(line)
                        if m is None:
                            raise InputError(f"{name}:{lineno}: line does not match log_format")
                        content = m.group("content")
                        session = m.groupdict().get("session") or ""
                    tid, _ = parser.parse(content)
                    stream.write(f"{role}\t{Path(name).name}\t{session}\t{tid}\n")
                    n_messages += 1
    parser.store.save(out / "templates.tsv")
    summary = {"messages": n_messages, "templates": len(parser.store), "passthrough": cfg.passthrough}
    log.info("parsed %d messages into %d templates", n_messages, len(parser.store))
    return summary


# -- prepare -------------------------------------------------------------------------

def _read_labels(path: Path) -> dict[str, Label]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                key, value = line.split("\t")
                labels[key] = label_from_int(int(value))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return labels


def _partition(cfg: RunConfig, rows: list[tuple[str, str, str, int]], labels: dict[str, Label]):
    by_role: dict[str, list[LabeledSequence]] = {"train": [], "test": []}
    if cfg.partition.mode == "session":
        groups: dict[tuple[str, str], list[int]] = {}
        for role, _source, session, tid in rows:
            if not session:
                raise InputError("session partitioning needs a session group in log_format")
            groups.setdefault((role, session), []).append(tid)
        for (role, session), ids in groups.items():
            if session not in labels:
                raise InputError(f"no label for session {session!r}")
            seq = LogSequence(tuple(ids), core.SessionOrigin(session))
            by_role[role].append(LabeledSequence(seq, labels[session]))
    elif cfg.partition.mode == "window":
        streams: dict[tuple[str, str], list[int]] = {}
        for role, source, _session, tid in rows:
            streams.setdefault((role, source), []).append(tid)
        for (role, source), ids in streams.items():
            for seq in partition_sliding_window(ids, cfg.partition.window, cfg.partition.step):
                key = f"{source}@{seq.origin.start_index}"
                if key not in labels:
                    raise InputError(f"no label for window {key!r}")
                by_role[role].append(LabeledSequence(seq, labels[key]))
    else:
        raise InputError(f"unknown partition mode {cfg.partition.mode!r}")
    if cfg.partition.max_len:
        for role, items in by_role.items():
            cut = truncate_sessions([i.sequence for i in items], cfg.partition.max_len)
            by_role[role] = [LabeledSequence(s, i.label) for s, i in zip(cut, items)]
    return by_role["train"], by_role["test"]


def cmd_prepare(cfg: RunConfig, out: Path) -> dict:
    parsed = out / "parsed.tsv"
    if not parsed.exists():
        raise FileNotFoundError(f"{parsed} missing; run parse first")
    if cfg.input.labels is None:
        raise InputError("no labels file configured")
    rows = []
    with open(parsed, encoding="utf-8") as fh:
        for line in fh:
            role, source, session, tid = line.rstrip("\n").split("\t")
            rows.append((role, source, session, int(tid)))
    labels = _read_labels(cfg.resolve(cfg.input.labels))
    store = TemplateStore.load(out / "templates.tsv")
    train, test = _partition(cfg, rows, labels)

    if not cfg.input.test_files:
        rng = random.Random(derive_seed(cfg.seed, "split"))
        order = list(range(len(train)))
        rng.shuffle(order)
        cut = round(cfg.input.train_fraction * len(order))
        train, test = [train[i] for i in sorted(order[:cut])], [train[i] for i in sorted(order[cut:])]

    stats: dict = {"seed": cfg.seed, "train_sequences": len(train), "test_sequences_raw": len(test)}
    if cfg.dedup:
        test, ratio = deduplicate(test, train)
    else:
        ratio = deduplicate(test, train)[1]
    stats["duplication_ratio"] = ratio
    stats["test_sequences"] = len(test)

    dataset = LabeledDataset("run", train, test, dict(store.templates))
    if cfg.injection is not None and cfg.injection.ratio > 0:
        inj = cfg.injection
        safe = None
        if inj.safe_templates:
            with open(cfg.resolve(inj.safe_templates), encoding="utf-8") as fh:
                safe = frozenset(int(x) for x in fh.read().split())
        spec = InjectionSpec(inj.ratio, inj.level, derive_seed(cfg.seed, "injection"), safe, inj.shuffle_span)
        if inj.level == "sequence":
            dataset, report = inject_sequence_changes(dataset, spec)
        else:
            edited, report = inject_template_changes(store, spec, inj.word_pool)
            edited.save(out / "templates_test.tsv")
        stats["injection"] = {k: v for k, v in report.items() if k not in ("edited_indices", "edited_ids")}
        _dump_json(out / "injection.json", report)
    dataset.freeze()

    strategy = cfg.sampling.build()
    subset = list(dataset.train) if strategy is None else sample_training_subset(
        dataset.train, strategy, derive_seed(cfg.seed, "sampling")
    )
    eff = compute_data_efficiency(subset, dataset.train)
    stats["efficiency"] = {"d_count": eff.d_count, "u_count": eff.u_count, "u_pct": eff.u_pct, "delta_u_pct": eff.delta_u_pct}

    core.write_sequences(out / "train_full.tsv", dataset.train)
    core.write_sequences(out / "train.tsv", subset)
    core.write_sequences(out / "test.tsv", dataset.test)
    _dump_json(out / "stats.json", stats)
    log.info("prepared %d training (%d sampled) and %d test sequences", len(dataset.train), len(subset), len(dataset.test))
    return stats


# -- train -----------------------------------------------------------------------------

def cmd_train(cfg: RunConfig, out: Path) -> dict:
    train = core.read_sequences(out / "train.tsv")
    if not train:
        raise InputError("training subset is empty")
    store = TemplateStore.load(out / "templates.tsv")
    ens = cfg.ensemble_config()
    vec = Vectorizer(len(store))
    X = vec.transform([t.sequence for t in train])
    y = [int(t.label) for t in train]
    mdir = out / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    m = cfg.models
    trained = []
    if ens.use_knn:
        save_model(train_knn(X, y, m.knn_k), mdir / "knn.json")
        trained.append("knn")
    if ens.use_dt:
        save_model(train_dt(X, y, m.dt_max_depth, m.dt_min_samples_split), mdir / "dt.json")
        trained.append("dt")
    if ens.use_slfn:
        model = train_slfn(X, y, m.slfn_epochs, m.slfn_lr, derive_seed(cfg.seed, "slfn") % 2**32, m.slfn_hidden)
        save_model(model, mdir / "slfn.json")
        trained.append("slfn")
    _dump_json(mdir / "meta.json", {"vocab_size": vec.vocab_size, "seed": cfg.seed, "models": trained})
    if ens.use_llm:
        kb = KnowledgeBase.load(cfg.resolve(cfg.kb)) if cfg.kb else None
        records = export_finetune_dataset(train, store, kb, ens.rag_enabled, cfg.detect.render_ids)
        write_finetune_jsonl(records, out / "finetune.jsonl")
    log.info("trained %s on %d sequences", ", ".join(trained) or "no ML models", len(train))
    return {"models": trained, "train_sequences": len(train)}


# -- detect ----------------------------------------------------------------------------

def build_backend(cfg: RunConfig):
    b = cfg.backend
    if b.kind == "http":
        if not b.endpoint or not b.model:
            raise InputError("http backend needs endpoint and model")
        return HttpBackend(b.endpoint, b.model, b.token_env, b.timeout, b.max_tokens)
    if b.kind != "mock":
        raise InputError(f"unknown backend kind {b.kind!r}")
    if b.rule == "constant":
        return MockBackend(rule=lambda _prompt, reply=b.reply: reply)
    if b.rule == "contains":
        return MockBackend(rule=contains_rule(b.patterns))
    if b.rule == "keyword":
        words = set(b.patterns)

        def keyword(prompt: str) -> str:
            hit = any(words & set(item.split()) for item in items_from_prompt(prompt))
            return "anomalous" if hit else "normal"

        return MockBackend(rule=keyword)
    if b.rule == "fixture":
        with open(cfg.resolve(b.fixture), encoding="utf-8") as fh:
            table = dict(line.rstrip("\n").split("\t", 1) for line in fh if line.strip())
        return MockBackend(rule=fixture_rule(table, b.reply))
    raise InputError(f"unknown mock rule {b.rule!r}")


def cmd_detect(cfg: RunConfig, out: Path, cache_path: Optional[str] = None) -> dict:
    test = core.read_sequences(out / "test.tsv")
    store_file = out / "templates_test.tsv"
    store = TemplateStore.load(store_file if store_file.exists() else out / "templates.tsv")
    ens = cfg.ensemble_config()
    meta = json.loads((out / "models" / "meta.json").read_text(encoding="utf-8"))
    vec = Vectorizer(meta["vocab_size"])
    models = {}
    for name in ("knn", "dt", "slfn"):
        if name in ens.enabled_models:
            models[name] = MlClassifier(load_model(out / "models" / f"{name}.json"), vec)
    backend = None
    if ens.use_llm:
        backend = build_backend(cfg)
        kb = KnowledgeBase.load(cfg.resolve(cfg.kb)) if cfg.kb else None
        models["llm"] = LlmClassifier(
            backend, store, kb, ens.rag_enabled, cfg.retry_policy(), cfg.detect.max_in_flight, cfg.detect.render_ids
        )
    snapshot = cache_path or cfg.detect.cache_snapshot
    cache = PredictionCache.load(cfg.resolve(snapshot) if cache_path is None else snapshot) if snapshot else PredictionCache()
    preloaded = len(cache)

    pipeline = EnsemblePipeline(ens, models, cache)
    result = pipeline.detect_batch([t.sequence for t in test], cfg.detect.max_workers, cfg.detect.strict)
    for index, exc in result.errors:
        log.error("sequence %d failed: %s", index, exc)
    if result.errors:
        raise RuntimeError(f"{len(result.errors)} sequences failed detection")

    write_detections(out / "detections.tsv", result.records)
    cache.save(out / "cache.tsv")
    summary = {
        "sequences": len(test),
        "computed": result.computed,
        "cache_hits": result.cache_hits,
        "cache_preloaded": preloaded,
        "cache_entries": len(cache),
        "cache_memory_bytes": cache.memory_usage_bytes(),
        "model_invocations": pipeline.invocations,
        "backend_calls": len(backend.calls) if isinstance(backend, MockBackend) else None,
    }
    _dump_json(out / "detect_summary.json", summary)
    _dump_json(
        out / "timing.json",
        {
            "count": result.timing.count,
            "total_seconds": result.timing.total,
            "mean_seconds": result.timing.mean,
            "max_seconds": result.timing.max,
            "cache_seconds": result.cache_seconds,
        },
    )
    log.info("detected %d sequences (%d computed, %d cache hits)", len(test), result.computed, result.cache_hits)
    return summary


# -- evaluate / report --------------------------------------------------------------------

def cmd_evaluate(cfg: RunConfig, out: Path) -> dict:
    truth = [t.label for t in core.read_sequences(out / "test.tsv")]
    preds = [r.final for r in read_detections(out / "detections.tsv")]
    if len(preds) != len(truth):
        raise InputError(f"{len(preds)} detections for {len(truth)} test sequences")
    c = confusion(preds, truth)
    p, r, f1 = precision_recall_f1(c)
    metrics: dict = {
        "seed": cfg.seed,
        "precision": p,
        "recall": r,
        "f1": f1,
        "confusion": {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn},
        "zero_denominator_convention": "metric reported as 0",
    }
    for name, key in (("stats.json", "data"), ("detect_summary.json", "detection")):
        path = out / name
        if path.exists():
            metrics[key] = json.loads(path.read_text(encoding="utf-8"))
    _dump_json(out / "metrics.json", metrics)
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["precision", "recall", "f1", "tp", "fp", "fn", "tn"])
        w.writerow([f"{p:.6f}", f"{r:.6f}", f"{f1:.6f}", c.tp, c.fp, c.fn, c.tn])
    log.info("P=%.3f R=%.3f F1=%.3f", p, r, f1)
    return metrics


def cmd_report(groups: dict[str, list[Path]], out: Path, metric: str = "f1") -> list[dict]:
    """Per-method means plus a pairwise Mann-Whitney matrix over run directories."""
    samples: dict[str, list[float]] = {}
    for name, dirs in groups.items():
        values = []
        for d in dirs:
            path = Path(d) / "metrics.json"
            if not path.exists():
                raise FileNotFoundError(f"{path} missing; run evaluate first")
            values.append(float(json.loads(path.read_text(encoding="utf-8"))[metric]))
        samples[name] = values
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "runs", f"mean_{metric}"])
        for name, values in samples.items():
            w.writerow([name, len(values), f"{sum(values) / len(values):.6f}"])
        w.writerow([])
        w.writerow(["method_a", "method_b", "u_statistic", "p_value", "significant"])
        for a, b in combinations(samples, 2):
            res = mann_whitney_u(samples[a], samples[b])
            rows.append({"a": a, "b": b, "u": res.u_statistic, "p": res.p_value, "significant": res.significant})
            w.writerow([a, b, f"{res.u_statistic:g}", f"{res.p_value:.6f}", int(res.significant)])
    return rows


# -- entry point ---------------------------------------------------------------------------

def _parse_groups(specs: Sequence[str]) -> dict[str, list[Path]]:
    groups = {}
    for spec in specs:
        if "=" not in spec:
            raise InputError(f"--group expects NAME=DIR[,DIR...], got {spec!r}")
        name, dirs = spec.split("=", 1)
        groups[name] = [Path(d) for d in dirs.split(",") if d]
    return groups


def build_arg_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config (YAML or JSON)")
    common.add_argument("--seed", type=int, help="root seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="logvote", description="Ensemble log anomaly detection on unstable logs.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("parse", parents=[common], help="mine templates and write the parsed id stream")
    p.add_argument("--passthrough", action="store_true", help="one template per single-token message")
    sub.add_parser("prepare", parents=[common], help="partition, de-duplicate, inject and sample")
    sub.add_parser("train", parents=[common], help="fit ML base models and export the fine-tuning set")
    d = sub.add_parser("detect", parents=[common], help="run the cached ensemble over the test set")
    d.add_argument("--cache", help="cache snapshot to preload")
    sub.add_parser("evaluate", parents=[common], help="score detections against ground truth")
    r = sub.add_parser("report", parents=[common], help="compare runs with Mann-Whitney U tests")
    r.add_argument("--group", action="append", default=[], help="NAME=DIR[,DIR...]")
    r.add_argument("--metric", default="f1")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_arg_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        out = Path(cfg.out)
        if args.command == "parse":
            if args.passthrough:
                cfg.passthrough = True
            cfg.validate()
            cmd_parse(cfg, out)
        elif args.command == "prepare":
            cfg.validate()
            cmd_prepare(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "detect":
            cmd_detect(cfg, out, args.cache)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out)
        elif args.command == "report":
            rows = cmd_report(_parse_groups(args.group), out, args.metric)
            for row in rows:
                log.info("%s vs %s: U=%g p=%.4f%s", row["a"], row["b"], row["u"], row["p"], " *" if row["significant"] else "")
    except Exception as exc:  # every failure becomes a diagnostic plus nonzero exit
        log.debug("traceback", exc_info=True)
        print(f"logvote {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

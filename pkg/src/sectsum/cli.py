"""Command-line surface: ingest, label, train, summarize, evaluate, bench.

Every subcommand resolves one RunConfig (config file, then flag overrides),
embeds its model hash in whatever artifact it writes, and refuses input
artifacts carrying a different hash.  Exit codes: 0 success, 1 contract or
validation failure, 2 I/O or usage problems.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .bench import doubling_ratios, run_bench, write_bench_tsv
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, check_artifact_hash, model_hash, resolve_config
from .corpus import (
    CorpusError,
    load_corpus,
    read_labels,
    write_corpus,
    write_labels,
)
from .extractor import SelectionConfig, select_sentences
from .model import Model
from .rouge import default_budget, oracle_labels, rouge_l, rouge_n
from .corpus import tokenize
from .training import TrainConfig, TrainingError, train, write_metrics_csv

log = logging.getLogger(__name__)

_OVERRIDE_KEYS = (
    "seed",
    "window",
    "global_ratio",
    "budget_ratio",
    "reinforced",
    "layers",
    "heads",
    "d_model",
    "epochs",
    "warmup_steps",
    "lr_scale",
    "accumulation_steps",
    "clip_norm",
    "candidates_k",
    "holdout_ratio",
    "max_sentences",
    "global_policy",
    "combine",
    "encoder_seed",
)


def _shared_flags() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=Path, default=None, help="flat key=value config file")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--window", type=int, default=None, help="local attention half-width w")
    shared.add_argument("--global-ratio", dest="global_ratio", type=float, default=None,
                        help="percent of sentences attending globally")
    shared.add_argument("--budget-ratio", dest="budget_ratio", type=float, default=None,
                        help="summary budget as a fraction of document size")
    shared.add_argument("--trigram-threshold", dest="trigram_threshold", default=None,
                        help="blocking threshold (integer) or 'none'")
    shared.add_argument("--reinforced", dest="reinforced", action="store_const", const=True,
                        default=None, help="train with reward-weighted loss")
    shared.add_argument("--layers", type=int, default=None)
    shared.add_argument("--heads", type=int, default=None)
    shared.add_argument("--d-model", dest="d_model", type=int, default=None)
    return shared


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_flags()
    parser = argparse.ArgumentParser(
        prog="sectsum",
        description="Section-aware extractive summarization for long documents",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[shared], help="validate and normalize a corpus")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--lenient", action="store_true", help="skip bad lines instead of failing")

    p = sub.add_parser("label", parents=[shared], help="greedy oracle labels from references")
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("train", parents=[shared], help="train a scoring model")
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--labels", required=True, type=Path)
    p.add_argument("--checkpoint-out", required=True, type=Path)
    p.add_argument("--metrics-out", type=Path, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int, default=None)
    p.add_argument("--lr-scale", dest="lr_scale", type=float, default=None)
    p.add_argument("--accumulation-steps", dest="accumulation_steps", type=int, default=None)
    p.add_argument("--clip-norm", dest="clip_norm", type=float, default=None)
    p.add_argument("--candidates-k", dest="candidates_k", type=int, default=None)
    p.add_argument("--holdout-ratio", dest="holdout_ratio", type=float, default=None)

    p = sub.add_parser("summarize", parents=[shared], help="select sentences with a checkpoint")
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("evaluate", parents=[shared], help="score summaries against references")
    p.add_argument("--summaries", required=True, type=Path)
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("bench", parents=[shared], help="sparse vs dense scaling benchmark")
    p.add_argument("--n-list", dest="n_list", default="100,200,400,800",
                   help="comma-separated document lengths")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", required=True, type=Path)

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for key in _OVERRIDE_KEYS:
        if hasattr(args, key) and getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    raw_trigram = getattr(args, "trigram_threshold", None)
    if raw_trigram is not None:
        overrides["trigram_threshold"] = None if str(raw_trigram).lower() == "none" else int(raw_trigram)
    return resolve_config(args.config, overrides)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = _config_from_args(args)
    report = load_corpus(args.input, max_sentences=cfg.max_sentences)
    check_artifact_hash((report.header or {}).get("config_hash"), cfg, "input corpus")
    for problem in report.problems:
        print(f"ingest: {problem}", file=sys.stderr)
    write_corpus(
        report.documents,
        args.out,
        header={"config_hash": model_hash(cfg), "max_sentences": cfg.max_sentences},
    )
    print(
        f"ingest: docs={len(report.documents)} sections={report.n_sections} "
        f"sentences={report.n_sentences} truncated={report.truncated} "
        f"bad_lines={len(report.problems)}"
    )
    if not report.documents:
        print("ingest: no valid documents", file=sys.stderr)
        return 1
    if report.problems and not args.lenient:
        return 1
    return 0


def _load_corpus_strict(path: Path, cfg: RunConfig, what: str):
    report = load_corpus(path, max_sentences=cfg.max_sentences)
    if report.problems:
        for problem in report.problems:
            print(f"{what}: {problem}", file=sys.stderr)
        raise CorpusError(f"{what}: {len(report.problems)} malformed lines in {path}")
    check_artifact_hash((report.header or {}).get("config_hash"), cfg, what)
    if not report.documents:
        raise CorpusError(f"{what}: no documents in {path}")
    return report.documents


def cmd_label(args) -> int:
    cfg = _config_from_args(args)
    docs = _load_corpus_strict(args.corpus, cfg, "corpus")
    rows = []
    for i, doc in enumerate(docs, start=1):
        labels = oracle_labels(doc, default_budget(doc.n_sentences, cfg.budget_ratio))
        rows.append((doc.id, labels.tolist()))
        if i % 25 == 0 or i == len(docs):
            log.info("labeled %d/%d documents", i, len(docs))
    write_labels(
        rows, args.out, header={"config_hash": model_hash(cfg), "budget_ratio": cfg.budget_ratio}
    )
    print(f"label: wrote {len(rows)} label rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .corpus import LabeledDocument  # local import keeps module top tidy

    cfg = _config_from_args(args)
    docs = _load_corpus_strict(args.corpus, cfg, "corpus")
    labels_map, labels_header = read_labels(args.labels)
    check_artifact_hash((labels_header or {}).get("config_hash"), cfg, "labels file")
    dataset = []
    missing = []
    for doc in docs:
        vec = labels_map.get(doc.id)
        if vec is None:
            missing.append(doc.id)
        elif len(vec) != doc.n_sentences:
            raise CorpusError(
                f"doc {doc.id}: {len(vec)} labels for {doc.n_sentences} sentences"
            )
        else:
            dataset.append(LabeledDocument(doc, tuple(vec)))
    if missing:
        raise CorpusError(f"labels missing for {len(missing)} docs (first: {missing[:3]})")

    model = Model(cfg)
    result = train(model, dataset, TrainConfig.from_run_config(cfg))
    save_checkpoint(model.parameters(), args.checkpoint_out, seed=cfg.seed, config_hash=model.hash)
    metrics_path = args.metrics_out or Path(str(args.checkpoint_out) + ".metrics.csv")
    write_metrics_csv(result.metrics, metrics_path, model.hash)
    final = [r for r in result.metrics if r["split"] == "holdout"]
    tail = final[-1] if final else result.metrics[-1]
    print(
        f"train: {len(dataset)} docs ({len(result.holdout_ids)} held out), "
        f"{result.updates} updates ({result.flush_updates} partial flushes), "
        f"final {tail['split']} loss {tail['loss']:.4f}"
    )
    print(f"train: checkpoint {args.checkpoint_out}, metrics {metrics_path}")
    return 0


def cmd_summarize(args) -> int:
    cfg = _config_from_args(args)
    arrays, _header = load_checkpoint(args.checkpoint, expected_hash=model_hash(cfg))
    model = Model(cfg)
    model.load_state(arrays)
    docs = _load_corpus_strict(args.corpus, cfg, "corpus")
    sel = SelectionConfig(budget_ratio=cfg.budget_ratio, trigram_threshold=cfg.trigram_threshold)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"artifact": "summaries", "config_hash": model.hash}) + "\n")
        with ad.no_grad():
            for doc in sorted(docs, key=lambda d: d.id):
                scores = model.forward(doc)
                picked = select_sentences(doc, scores, sel)
                record = {
                    "id": doc.id,
                    "selected": picked,
                    "sentences": [doc.sentences[i].text for i in picked],
                    "scores": [round(float(scores.values[i]), 6) for i in picked],
                }
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    print(f"summarize: wrote {len(docs)} summaries to {args.out}")
    return 0


def _read_summaries(path: Path) -> tuple[dict[str, dict], dict | None]:
    records: dict[str, dict] = {}
    header = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if line_no == 1 and isinstance(obj, dict) and "artifact" in obj:
                header = obj
                continue
            if not isinstance(obj, dict) or "id" not in obj or "sentences" not in obj:
                raise CorpusError(f"summaries line {line_no}: expected {{id, sentences, ...}}")
            records[str(obj["id"])] = obj
    return records, header


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    summaries, header = _read_summaries(args.summaries)
    check_artifact_hash((header or {}).get("config_hash"), cfg, "summaries file")
    docs = {d.id: d for d in _load_corpus_strict(args.corpus, cfg, "corpus")}
    missing = sorted(set(summaries) - set(docs))
    if missing:
        raise CorpusError(f"evaluate: {len(missing)} summary ids not in corpus (first: {missing[:3]})")

    rows = []
    for doc_id in sorted(summaries):
        ref = tokenize(docs[doc_id].reference_summary)
        cand = tokenize(" ".join(summaries[doc_id]["sentences"]))
        rows.append(
            (
                doc_id,
                rouge_n(cand, ref, 1).recall,
                rouge_n(cand, ref, 2).recall,
                rouge_l(cand, ref).recall,
            )
        )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={model_hash(cfg)}\n")
        fh.write("id\trouge1_recall\trouge2_recall\trougeL_recall\n")
        for doc_id, r1, r2, rl in rows:
            fh.write(f"{doc_id}\t{r1:.6f}\t{r2:.6f}\t{rl:.6f}\n")
    means = np.mean([[r1, r2, rl] for _, r1, r2, rl in rows], axis=0) if rows else np.zeros(3)
    print(
        f"evaluate: {len(rows)} docs, mean rouge1_recall={means[0]:.4f} "
        f"rouge2_recall={means[1]:.4f} rougeL_recall={means[2]:.4f}"
    )
    return 0


def cmd_bench(args) -> int:
    cfg = _config_from_args(args)
    try:
        n_list = [int(tok) for tok in str(args.n_list).replace(" ", "").split(",") if tok]
    except ValueError:
        raise ConfigError(f"--n-list must be comma-separated integers, got {args.n_list!r}") from None
    if not n_list:
        raise ConfigError("--n-list is empty")
    points = run_bench(
        n_list,
        cfg.window,
        cfg.global_ratio,
        repeats=args.repeats,
        d_model=cfg.d_model,
        heads=cfg.heads,
        global_policy=cfg.global_policy,
        seed=cfg.seed,
    )
    write_bench_tsv(points, args.out, model_hash(cfg))
    for p in points:
        print(
            f"bench: n={p.n} sparse={p.sparse_ms:.2f}ms dense={p.dense_ms:.2f}ms "
            f"sparse_peak={p.sparse_peak_bytes} dense_peak={p.dense_peak_bytes}"
        )
    for label_, attr in (("sparse time", "sparse_ms"), ("dense time", "dense_ms"),
                         ("sparse peak", "sparse_peak_bytes")):
        for n_prev, n_curr, ratio in doubling_ratios(points, attr):
            print(f"bench: {label_} ratio {n_prev}->{n_curr}: {ratio:.2f}x")
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "label": cmd_label,
    "train": cmd_train,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"sectsum {args.command}: {e}", file=sys.stderr)
        return 2
    except (ConfigError, CorpusError, CheckpointError, TrainingError, ValueError) as e:
        print(f"sectsum {args.command}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"sectsum {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

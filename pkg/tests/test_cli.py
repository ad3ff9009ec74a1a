"""The six subcommands end to end: exit codes, printed lines, artifact formats."""

from __future__ import annotations

import json

import numpy as np
import pytest

from helpers import doc_from_sections, write_corpus_jsonl
from sectsum.cli import _config_from_args, build_parser, main
from sectsum.corpus import read_labels


TINY_CFG = """\
d_model = 8
layers = 1
heads = 2
window = 2
global_ratio = 0
max_sentences = 12
s_max = 3
len_buckets = 6
ffn_dim = 8
epochs = 2
warmup_steps = 5
accumulation_steps = 4
holdout_ratio = 0
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return path


def _docs(n_docs: int = 3, n_sents: int = 6):
    words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"]
    docs = []
    for d in range(n_docs):
        sents = [
            f"{words[(d + i) % 8]} {words[(d + i + 1) % 8]} {words[(d + i + 3) % 8]}"
            for i in range(n_sents)
        ]
        half = n_sents // 2
        docs.append(
            doc_from_sections(
                f"doc{d}",
                [sents[:half], sents[half:]],
                reference=sents[d % n_sents],
            )
        )
    return docs


# ---------------------------------------------------------------------------
# exit codes and argument handling
# ---------------------------------------------------------------------------


def test_ingest_valid_corpus_exits_zero(tmp_path, capsys):
    src, out = tmp_path / "raw.jsonl", tmp_path / "corpus.jsonl"
    write_corpus_jsonl(src, _docs(3))
    assert main(["ingest", "--input", str(src), "--out", str(out)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line == "ingest: docs=3 sections=6 sentences=18 truncated=0 bad_lines=0"
    header = json.loads(out.read_text().splitlines()[0])
    assert header["artifact"] == "corpus"
    assert len(header["config_hash"]) == 64


def test_ingest_bad_line_fails_unless_lenient(tmp_path, capsys):
    src, out = tmp_path / "raw.jsonl", tmp_path / "corpus.jsonl"
    write_corpus_jsonl(src, _docs(3))
    lines = src.read_text().splitlines()
    lines[1] = "{not json"
    src.write_text("\n".join(lines) + "\n")

    assert main(["ingest", "--input", str(src), "--out", str(out)]) == 1
    captured = capsys.readouterr()
    assert "line 2" in captured.err
    assert "docs=2" in captured.out and "bad_lines=1" in captured.out

    assert main(["ingest", "--input", str(src), "--out", str(out), "--lenient"]) == 0
    assert "docs=2" in capsys.readouterr().out


def test_missing_input_file_exits_two(tmp_path, capsys):
    rc = main(["ingest", "--input", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "ingest" in capsys.readouterr().err


def test_unknown_subcommand_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["transmogrify"])
    assert exc.value.code == 2


def test_ingest_refuses_corpus_with_foreign_hash(tmp_path, capsys):
    src = tmp_path / "tagged.jsonl"
    body = "\n".join(
        json.dumps(json.loads(line))
        for line in [
            json.dumps({"artifact": "corpus", "config_hash": "0" * 64}),
        ]
    )
    raw = tmp_path / "docs.jsonl"
    write_corpus_jsonl(raw, _docs(1))
    src.write_text(body + "\n" + raw.read_text())
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "o.jsonl")]) == 1
    assert "different configuration" in capsys.readouterr().err


def test_trigram_threshold_flag_special_cases_none():
    parser = build_parser()
    ns = parser.parse_args(["label", "--corpus", "c", "--out", "o", "--trigram-threshold", "none"])
    assert _config_from_args(ns).trigram_threshold is None
    ns = parser.parse_args(["label", "--corpus", "c", "--out", "o", "--trigram-threshold", "3"])
    assert _config_from_args(ns).trigram_threshold == 3
    ns = parser.parse_args(["label", "--corpus", "c", "--out", "o"])
    assert _config_from_args(ns).trigram_threshold is None  # default, not the string


def test_shared_overrides_reach_the_config():
    ns = build_parser().parse_args(
        ["ingest", "--input", "i", "--out", "o", "--d-model", "16", "--heads", "4",
         "--seed", "9", "--global-ratio", "12.5", "--budget-ratio", "0.4"]
    )
    cfg = _config_from_args(ns)
    assert (cfg.d_model, cfg.heads, cfg.seed) == (16, 4, 9)
    assert (cfg.global_ratio, cfg.budget_ratio) == (12.5, 0.4)


# ---------------------------------------------------------------------------
# label
# ---------------------------------------------------------------------------


def test_label_marks_reference_sentences(tmp_path, capsys, cfg_file):
    corpus = tmp_path / "corpus.jsonl"
    doc = doc_from_sections(
        "d0",
        [["alpha beta gamma", "delta epsilon zeta"], ["eta theta alpha", "beta gamma delta"]],
        reference="delta epsilon zeta",
    )
    write_corpus_jsonl(corpus, [doc])
    out = tmp_path / "labels.jsonl"
    rc = main(["label", "--config", str(cfg_file), "--corpus", str(corpus),
               "--out", str(out), "--budget-ratio", "0.25"])
    assert rc == 0
    assert "label: wrote 1 label rows" in capsys.readouterr().out
    labels, header = read_labels(out)
    assert header["budget_ratio"] == 0.25
    assert len(header["config_hash"]) == 64
    assert labels["d0"] == [0, 1, 0, 0]


def test_label_empty_reference_yields_zero_labels(tmp_path, caplog, cfg_file):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus_jsonl(
        corpus, [doc_from_sections("d0", [["alpha beta gamma", "delta epsilon zeta"]])]
    )
    out = tmp_path / "labels.jsonl"
    assert main(["label", "--config", str(cfg_file), "--corpus", str(corpus), "--out", str(out)]) == 0
    labels, _ = read_labels(out)
    assert labels["d0"] == [0, 0]
    assert any("empty reference" in r.message for r in caplog.records)


# ---------------------------------------------------------------------------
# train -> summarize -> evaluate pipeline
# ---------------------------------------------------------------------------


@pytest.fixture
def pipeline(tmp_path, cfg_file):
    """Ingested corpus + oracle labels, ready for training."""
    raw = tmp_path / "raw.jsonl"
    write_corpus_jsonl(raw, _docs(6, 6))
    corpus = tmp_path / "corpus.jsonl"
    assert main(["ingest", "--config", str(cfg_file), "--input", str(raw), "--out", str(corpus)]) == 0
    labels = tmp_path / "labels.jsonl"
    assert main(["label", "--config", str(cfg_file), "--corpus", str(corpus), "--out", str(labels)]) == 0
    return {"corpus": corpus, "labels": labels, "cfg": cfg_file, "dir": tmp_path}


def test_train_writes_checkpoint_and_metrics(pipeline, capsys):
    ckpt = pipeline["dir"] / "model.ckpt"
    rc = main(["train", "--config", str(pipeline["cfg"]), "--corpus", str(pipeline["corpus"]),
               "--labels", str(pipeline["labels"]), "--checkpoint-out", str(ckpt)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "train: 6 docs (0 held out)" in out
    # 6 docs / accumulation 4 -> 1 full + 1 flush per epoch, 2 epochs
    assert "4 updates (2 partial flushes)" in out
    assert ckpt.exists()
    metrics = ckpt.parent / (ckpt.name + ".metrics.csv")
    assert metrics.exists()
    lines = metrics.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "epoch,split,loss,rouge1_recall,rouge2_recall,rougeL_recall,lr"
    assert len(lines) == 2 + 2  # one train row per epoch, holdout_ratio 0


def test_train_rejects_labels_with_wrong_hash(pipeline, tmp_path, capsys):
    bad = tmp_path / "bad_labels.jsonl"
    lines = pipeline["labels"].read_text().splitlines()
    header = json.loads(lines[0])
    header["config_hash"] = "f" * 64
    bad.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    rc = main(["train", "--config", str(pipeline["cfg"]), "--corpus", str(pipeline["corpus"]),
               "--labels", str(bad), "--checkpoint-out", str(tmp_path / "m.ckpt")])
    assert rc == 1
    assert "different configuration" in capsys.readouterr().err


def test_summarize_output_format_and_budget(pipeline, tmp_path, capsys):
    ckpt = pipeline["dir"] / "model.ckpt"
    assert main(["train", "--config", str(pipeline["cfg"]), "--corpus", str(pipeline["corpus"]),
                 "--labels", str(pipeline["labels"]), "--checkpoint-out", str(ckpt)]) == 0
    out = tmp_path / "summaries.jsonl"
    rc = main(["summarize", "--config", str(pipeline["cfg"]), "--corpus", str(pipeline["corpus"]),
               "--checkpoint", str(ckpt), "--out", str(out), "--budget-ratio", "0.34"])
    assert rc == 0
    assert "summarize: wrote 6 summaries" in capsys.readouterr().out

    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert lines[0]["artifact"] == "summaries" and "config_hash" in lines[0]
    records = lines[1:]
    assert [r["id"] for r in records] == sorted(r["id"] for r in records)
    for rec in records:
        assert set(rec) == {"id", "selected", "sentences", "scores"}
        assert rec["selected"] == sorted(rec["selected"])
        assert len(rec["selected"]) == 3  # ceil(0.34 * 6) with no trigram blocking
        assert len(rec["sentences"]) == len(rec["selected"]) == len(rec["scores"])
        assert all(0.0 < s < 1.0 for s in rec["scores"])


def test_summarize_refuses_checkpoint_from_other_config(pipeline, tmp_path, capsys):
    ckpt = pipeline["dir"] / "model.ckpt"
    assert main(["train", "--config", str(pipeline["cfg"]), "--corpus", str(pipeline["corpus"]),
                 "--labels", str(pipeline["labels"]), "--checkpoint-out", str(ckpt)]) == 0
    rc = main(["summarize", "--config", str(pipeline["cfg"]), "--corpus", str(pipeline["corpus"]),
               "--checkpoint", str(ckpt), "--out", str(tmp_path / "s.jsonl"), "--seed", "99"])
    assert rc == 1
    assert "config hash mismatch" in capsys.readouterr().err


def test_evaluate_perfect_summaries_score_one(tmp_path, capsys, cfg_file):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus_jsonl(
        corpus,
        [doc_from_sections("d0", [["alpha beta gamma", "delta epsilon zeta"]],
                           reference="alpha beta gamma")],
    )
    summaries = tmp_path / "summaries.jsonl"
    summaries.write_text(
        json.dumps({"artifact": "summaries"}) + "\n"
        + json.dumps({"id": "d0", "selected": [0], "sentences": ["alpha beta gamma"],
                      "scores": [0.9]}) + "\n"
    )
    out = tmp_path / "scores.tsv"
    rc = main(["evaluate", "--config", str(cfg_file), "--summaries", str(summaries),
               "--corpus", str(corpus), "--out", str(out)])
    assert rc == 0
    assert "mean rouge1_recall=1.0000" in capsys.readouterr().out
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "id\trouge1_recall\trouge2_recall\trougeL_recall"
    assert lines[2] == "d0\t1.000000\t1.000000\t1.000000"


def test_evaluate_rejects_summary_for_unknown_document(tmp_path, capsys, cfg_file):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus_jsonl(corpus, [doc_from_sections("d0", [["alpha beta"]], reference="alpha")])
    summaries = tmp_path / "summaries.jsonl"
    summaries.write_text(json.dumps({"id": "ghost", "sentences": ["alpha"]}) + "\n")
    rc = main(["evaluate", "--config", str(cfg_file), "--summaries", str(summaries),
               "--corpus", str(corpus), "--out", str(tmp_path / "o.tsv")])
    assert rc == 1
    assert "not in corpus" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def test_bench_prints_points_and_doubling_ratios(tmp_path, capsys):
    out = tmp_path / "bench.tsv"
    rc = main(["bench", "--n-list", "8,16", "--repeats", "1", "--window", "4",
               "--d-model", "8", "--heads", "2", "--out", str(out)])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "bench: n=8 sparse=" in printed and "bench: n=16 sparse=" in printed
    assert "sparse time ratio 8->16:" in printed
    assert "dense time ratio 8->16:" in printed
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "n\tsparse_ms\tdense_ms\tsparse_peak_bytes\tdense_peak_bytes"
    assert len(lines) == 4


def test_bench_rejects_malformed_n_list(tmp_path, capsys):
    rc = main(["bench", "--n-list", "10,zap", "--out", str(tmp_path / "b.tsv")])
    assert rc == 1
    assert "comma-separated integers" in capsys.readouterr().err

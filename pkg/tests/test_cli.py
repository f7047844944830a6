import json
import random
import subprocess
import sys

import pytest

from conftest import FIXTURES, GPT2_MERGES, GPT2_VOCAB
from pajama_forge.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, run
from pajama_forge.corpus_io import CorpusManifest
from pajama_forge.normalize import normalize_for_dedup
from synth import make_vocab, random_words, write_corpus


@pytest.fixture
def corpus(tmp_path):
    rng = random.Random(11)
    vocab = make_vocab(rng, 400)
    docs = []
    for i in range(120):
        source = ["C4", "Commoncrawl", "GitHub"][i % 3]
        words = random_words(rng, vocab, rng.randint(2, 80))
        docs.append((source, " ".join(words)))
    for i in range(0, 30, 3):
        docs.append(("Commoncrawl", docs[i + 30][1]))
    return write_corpus(tmp_path / "in", docs, shards=4)


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def tok():
    return ["--vocab", str(GPT2_VOCAB), "--merges", str(GPT2_MERGES)]


def test_pipeline_equals_stages(corpus, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["pipeline", "--manifest", str(corpus), "--out", str(a), *tok()]) == EXIT_OK
    assert run(["filter", "--manifest", str(corpus), "--out", str(b)]) == EXIT_OK
    assert run(["dedup", "--manifest", str(b / "filtered/manifest.json"), "--out", str(b)]) == EXIT_OK
    assert run(["stats", "--manifest", str(b / "dedup/manifest.json"), "--out", str(b), *tok()]) == EXIT_OK
    ta, tb = tree(a), tree(b)
    assert ta == tb
    assert {"filter_report.csv", "dedup_report.csv", "clusters.csv", "token_counts.json"} <= set(ta)
    assert any(k.startswith("kl_") for k in ta)


def test_dedup_removes_planted_copies(corpus, tmp_path):
    out = tmp_path / "o"
    assert run(["dedup", "--manifest", str(corpus), "--out", str(out), "--ngram", "5"]) == EXIT_OK
    distinct = {normalize_for_dedup(d.text) for d in CorpusManifest.load(corpus).iter_documents()}
    kept = list(CorpusManifest.load(out / "dedup/manifest.json").iter_documents())
    assert len(kept) == len(distinct) <= 120


def test_rrgs_output(capsys):
    assert run(["rrgs", "--scores", str(FIXTURES / "mmlu_dc1.csv")]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert [line.split("=")[0] for line in lines] == ["pos", "neg", "all"]
    assert all(len(line.split("=")[1].split(".")[1]) == 6 for line in lines)


def test_rrgs_all_baseline(tmp_path, capsys):
    p = tmp_path / "s.csv"
    p.write_text("a,25\nb,25\n")
    assert run(["rrgs", "--scores", str(p)]) == EXIT_OK
    assert capsys.readouterr().out == "pos=nan\nneg=nan\nall=1.000000\n"


def test_mix_plan_sums_to_budget(tmp_path, capsys):
    inv = tmp_path / "inv.json"
    sources = ["Commoncrawl", "C4", "GitHub", "Books", "ArXiv", "Wikipedia", "StackExchange"]
    inv.write_text(json.dumps({s: 10**12 for s in sources}))
    assert run(["mix", "--config", "DC-6", "--inventory", str(inv)]) == EXIT_OK
    plan = json.loads(capsys.readouterr().out)
    assert sum(s["target_tokens"] for s in plan["sources"]) == 330 * 10**9


def test_mix_with_manifest_writes_order(corpus, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"name": "t", "budget_tokens": 5000, "proportions": {"C4": 0.5, "GitHub": 0.5}}))
    out = tmp_path / "mix"
    assert run(["mix", "--config", str(cfg), "--manifest", str(corpus), *tok(), "--out", str(out)]) == EXIT_OK
    assert (out / "plan.json").exists() and (out / "order.bin").stat().st_size % 8 == 0


def test_schedule_csv(tmp_path, capsys):
    assert run(["schedule", "--steps", "6"]) == EXIT_OK
    assert capsys.readouterr().out == "step,weight_decay\n0,0.0\n1,0.0\n2,0.5\n3,0.5\n4,0.1\n5,0.1\n"
    out = tmp_path / "s.csv"
    assert run(["schedule", "--steps", "300", "--out", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 301


def test_schedule_with_losses(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"total_steps": 40, "plateau": {"window": 5, "min_phase_steps": 10}}))
    losses = tmp_path / "l.csv"
    losses.write_text("step,loss\n" + "".join(f"{i},1.0\n" for i in range(40)))
    assert run(["schedule", "--config", str(cfg), "--losses", str(losses)]) == EXIT_OK
    rows = capsys.readouterr().out.splitlines()[1:]
    assert rows[8] == "8,0.0" and rows[9] == "9,0.5"


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["filter"],
        ["schedule"],
        ["schedule", "--steps", "-3"],
        ["dedup", "--manifest", "m.json", "--out", "o", "--perms", "100"],
        ["dedup", "--manifest", "m.json", "--out", "o", "--passes", "0"],
        ["mix", "--config", "DC-9", "--inventory", "x.json"],
        ["mix", "--config", "DC-1"],
    ],
)
def test_usage_errors(argv, capsys):
    assert run(argv) == EXIT_USAGE


def test_data_errors(tmp_path):
    bad = tmp_path / "s.csv"
    bad.write_text("a,200\n")
    assert run(["rrgs", "--scores", str(bad)]) == EXIT_DATA
    assert run(["filter", "--manifest", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    shard = tmp_path / "bad.jsonl"
    shard.write_text('{"text": "x", "source": "C4"}\nnot json\n')
    man = tmp_path / "m.json"
    man.write_text(json.dumps({"shards": ["bad.jsonl"]}))
    assert run(["filter", "--manifest", str(man), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_console_entry_point(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("a,100\n")
    res = subprocess.run(
        [sys.executable, "-m", "pajama_forge", "rrgs", "--scores", str(p)], capture_output=True, text=True, check=False
    )
    assert res.returncode == 0 and res.stdout == "pos=0.250000\nneg=nan\nall=0.250000\n"

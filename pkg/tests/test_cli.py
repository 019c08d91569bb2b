import json
import os

import pytest

from nnasr.cli import main, read_hyps
from nnasr.corpus import load_manifest


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    d = root / "demo"
    assert main(["synth", "--demo", str(d), "--n-utts", "24", "--seed", "2"]) == 0
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_writes_demo_world(demo):
    for name in ("l2.json", "l1.json", "lexicon.txt", "grammar.fsg", "planted_rules.json", "g2p_dict.txt",
                 "pipeline.conf", "corpus/manifest.json"):
        assert (demo / name).exists()
    assert len(load_manifest(demo / "corpus" / "manifest.json")) == 24


def test_synth_from_files(demo, tmp_path):
    assert run("synth", "--l2", demo / "l2.json", "--l1", demo / "l1.json", "--lexicon", demo / "lexicon.txt",
               "--grammar", demo / "grammar.fsg", "--rules", demo / "planted_rules.json", "--n-utts", 5,
               "--speakers", 1, "--out", tmp_path / "c") == 1  # grapheme rules need a g2p model
    assert run("synth", "--l2", demo / "l2.json", "--l1", demo / "l1.json", "--lexicon", demo / "lexicon.txt",
               "--grammar", demo / "grammar.fsg", "--n-utts", 5, "--speakers", 1, "--out", tmp_path / "c") == 0
    assert len(load_manifest(tmp_path / "c" / "manifest.json")) == 5


def test_decode_and_score(demo, tmp_path):
    hyp = tmp_path / "base.hyp"
    assert run("decode", "--models", demo / "l2.json", "--lexicon", demo / "lexicon.txt", "--grammar",
               demo / "grammar.fsg", "--corpus", demo / "corpus" / "manifest.json", "--out", hyp) == 0
    hyps = read_hyps(hyp)
    assert len(hyps) == 24 and all(len(w) == 3 for w in hyps.values())
    report = tmp_path / "report.tsv"
    assert run("score", "--ref", demo / "corpus" / "manifest.json", "--hyp", hyp, "--name", "base",
               "--out", report) == 0
    assert report.read_text().startswith("system\tWER\tSER\nbase\t")


def test_rules_adapt_decode_chain(demo, tmp_path):
    rules = tmp_path / "rules.txt"
    assert run("rules", "--l2", demo / "l2.json", "--l1", demo / "l1.json", "--lexicon", demo / "lexicon.txt",
               "--corpus", demo / "corpus" / "manifest.json", "--min-count", 3, "--out", rules) == 0
    assert "aI -> " in rules.read_text()
    adapted = tmp_path / "adapted.json"
    assert run("adapt", "--l2", demo / "l2.json", "--l1", demo / "l1.json", "--rules", rules, "--out", adapted) == 0
    assert "merged" in json.loads(adapted.read_text())
    assert run("decode", "--models", adapted, "--lexicon", demo / "lexicon.txt", "--grammar", demo / "grammar.fsg",
               "--loop", "--corpus", demo / "corpus" / "manifest.json", "--speaker", "spk1",
               "--out", tmp_path / "a.hyp") == 0
    assert len(read_hyps(tmp_path / "a.hyp")) == 6


def test_align_phonerec_labels(demo, tmp_path):
    assert run("align", "--models", demo / "l2.json", "--lexicon", demo / "lexicon.txt", "--corpus",
               demo / "corpus" / "manifest.json", "--out", tmp_path / "ali") == 0
    assert run("phonerec", "--models", demo / "l1.json", "--corpus", demo / "corpus" / "manifest.json",
               "--penalty", -2, "--out", tmp_path / "rec") == 0
    assert len(os.listdir(tmp_path / "ali")) == 24 and len(os.listdir(tmp_path / "rec")) == 24


def test_g2p_train_and_align(demo, tmp_path, capsys):
    assert run("g2p-train", "--dictionary", demo / "g2p_dict.txt", "--iters", 3, "--out", tmp_path / "g.json") == 0
    capsys.readouterr()
    assert run("g2p-align", "--model", tmp_path / "g.json", "--lexicon", demo / "lexicon.txt") == 0
    out = capsys.readouterr().out
    assert "bit\tb:b aI:i t:t" in out


def test_train_am_and_mllr(demo, tmp_path):
    assert run("train-am", "--corpus", demo / "corpus" / "manifest.json", "--states", 2, "--iters", 2,
               "--log", tmp_path / "ll.tsv", "--out", tmp_path / "am.json") == 0
    assert len((tmp_path / "ll.tsv").read_text().splitlines()) == 3
    assert run("mllr", "estimate", "--models", demo / "l2.json", "--corpus", demo / "corpus" / "manifest.json",
               "--speaker", "spk0", "--out", tmp_path / "t.json") == 0
    assert run("mllr", "apply", "--models", demo / "l2.json", "--transform", tmp_path / "t.json",
               "--out", tmp_path / "l2a.json") == 0


def test_exit_codes(demo, tmp_path):
    assert run("decode", "--models", tmp_path / "missing.json", "--lexicon", demo / "lexicon.txt",
               "--grammar", demo / "grammar.fsg", "--corpus", demo / "corpus" / "manifest.json") == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("X\t\n")
    assert run("decode", "--models", demo / "l2.json", "--lexicon", bad, "--grammar", demo / "grammar.fsg",
               "--corpus", demo / "corpus" / "manifest.json") != 0
    assert run("adapt", "--l2", demo / "l2.json", "--l1", demo / "l1.json", "--rules", bad,
               "--out", tmp_path / "x.json") == 2
    rules = tmp_path / "rules.txt"
    rules.write_text("aI -> a e\t1.0\t10\n")
    assert run("adapt", "--l2", demo / "l2.json", "--l1", demo / "l1.json", "--rules", rules, "--beta", 2,
               "--out", tmp_path / "x.json") == 1
    assert main(["nonsense"]) == 1

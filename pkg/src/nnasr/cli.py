"""Command-line entry point: one subcommand per processing stage plus ``pipeline``.

Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric/estimation failure.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import corpus as corpus_mod
from .adapt import compile_adapted_set
from .confuse import associate, count_associations, format_rules, parse_rules, rules_from_counts
from .decode import GrammarDecoder, PhoneRecognizer, align_words
from .errors import FormatError, NnasrError, UsageError
from .g2p import G2PModel, align_g2p, format_alignment, occurrence_clusters, train_g2p
from .labels import format_labels
from .mllr import MllrTransform, apply_mllr, estimate_mllr
from .modelio import atomic_write, load_model_set, read_features, save_model_set
from .score import corpus_score, format_details, format_report
from .train import GmmHmmTrainer

log = logging.getLogger("nnasr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _utterances(args):
    """(id, frames, words) from ``--corpus`` or a single ``--features`` file."""
    if getattr(args, "corpus", None):
        c = corpus_mod.load_manifest(args.corpus)
        if getattr(args, "speaker", None):
            return [(u.id, u.features, u.words) for u in c if u.speaker == args.speaker]
        return [(u.id, u.features, u.words) for u in c]
    if getattr(args, "features", None):
        name = os.path.splitext(os.path.basename(args.features))[0]
        return [(name, read_features(args.features), list(getattr(args, "words", None) or []))]
    raise UsageError("give --corpus or --features")


def _emit(text, path):
    if path:
        atomic_write(path, text)
    else:
        sys.stdout.write(text)


def _write_labels(results, out_dir):
    if out_dir is None and len(results) == 1:
        sys.stdout.write(format_labels(results[0][1].phones, results[0][1].log_score))
        return
    if out_dir is None:
        raise UsageError("several utterances need --out DIR")
    os.makedirs(out_dir, exist_ok=True)
    for uid, res in results:
        atomic_write(os.path.join(out_dir, f"{uid}.lab"), format_labels(res.phones, res.log_score))


def _hyp_lines(hyps):
    return "".join(f"{uid}\t{' '.join(words)}\n" for uid, words in hyps)


def read_hyps(path):
    """``id<TAB>words`` lines, or a corpus manifest (its reference words)."""
    path = os.fspath(path)
    if path.endswith(".json"):
        return {u.id: u.words for u in corpus_mod.load_manifest(path)}
    out = {}
    for lineno, raw in enumerate(corpus_mod.read_text(path).splitlines(), 1):
        if not raw.strip():
            continue
        uid, _, words = raw.partition("\t")
        if not uid.strip():
            raise FormatError(f"{path}: line {lineno}: missing utterance id")
        out[uid.strip()] = words.split()
    return out


# ---------------------------------------------------------------------------
# subcommands

def setup_synth(p):
    p.add_argument("--demo", metavar="DIR", help="write the built-in demo world (models, lexicon, corpus, config)")
    p.add_argument("--l2", help="L2 model set")
    p.add_argument("--l1", help="L1 model set")
    p.add_argument("--lexicon")
    p.add_argument("--grammar")
    p.add_argument("--rules", help="planted rules (JSON)")
    p.add_argument("--g2p", help="g2p model for grapheme-conditional rules")
    p.add_argument("--n-utts", type=int, default=240)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--speaker-shift", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output corpus directory")


def cmd_synth(args):
    if args.demo:
        from .demo import write_demo
        conf = write_demo(args.demo, args.n_utts, args.speakers, args.seed, args.speaker_shift)
        print(conf)
        return
    for name in ("l2", "l1", "lexicon", "grammar", "out"):
        if not getattr(args, name):
            raise UsageError(f"synth needs --{name} (or --demo DIR)")
    rules = []
    if args.rules:
        with open(args.rules, encoding="utf-8") as fh:
            rules = corpus_mod.planted_rules_from_json(json.load(fh))
    g2p = G2PModel.load(args.g2p) if args.g2p else None
    c = corpus_mod.synth_corpus(load_model_set(args.l2), load_model_set(args.l1),
                                corpus_mod.load_lexicon(args.lexicon), corpus_mod.load_grammar(args.grammar),
                                rules, n_utts=args.n_utts, seed=args.seed, out_dir=args.out,
                                n_speakers=args.speakers, speaker_shift=args.speaker_shift, g2p=g2p)
    print(f"{len(c)} utterances written to {args.out}")


def setup_train_am(p):
    p.add_argument("--corpus", required=True, help="manifest with labelled utterances")
    p.add_argument("--lang", choices=["L2", "L1"], default="L2")
    p.add_argument("--inventory", nargs="*", help="phone ids (default: every labelled phone)")
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--components", type=int, default=1, help="Gaussians per state")
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--update", default="mvwt", help="any of m (means), v (variances), w (weights), t (transitions)")
    p.add_argument("--log", help="per-iteration log-likelihood TSV")
    p.add_argument("--out", required=True)


def cmd_train_am(args):
    from .model import PhoneSymbol
    c = corpus_mod.load_manifest(args.corpus)
    labels = [u.segments if u.segments is not None else u.phones for u in c]
    inventory = args.inventory or sorted({s.phone if hasattr(s, "phone") else s for lab in labels for s in lab})
    trainer = GmmHmmTrainer([PhoneSymbol(p, args.lang) for p in inventory], args.states, args.components,
                            args.iters, args.update).fit([u.features for u in c], labels)
    for w in trainer.warnings_:
        log.warning(w)
    save_model_set(trainer.model_set_, args.out)
    table = "iteration\tlog_likelihood\n" + "".join(f"{it}\t{ll!r}\n"
                                                      for it, ll in enumerate(trainer.log_likelihood_))
    _emit(table, args.log)


def setup_align(p):
    p.add_argument("--models", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--corpus")
    p.add_argument("--features")
    p.add_argument("--words", nargs="*")
    p.add_argument("--beam", type=float)
    p.add_argument("--out", help="label directory")


def cmd_align(args):
    ms, lex = load_model_set(args.models), corpus_mod.load_lexicon(args.lexicon)
    results = []
    for uid, frames, words in _utterances(args):
        if not words:
            raise UsageError(f"utterance {uid}: no words to align to")
        results.append((uid, align_words(frames, words, lex, ms, beam=args.beam)))
    _write_labels(results, args.out)


def setup_phonerec(p):
    p.add_argument("--models", required=True)
    p.add_argument("--corpus")
    p.add_argument("--features")
    p.add_argument("--penalty", type=float, default=0.0, help="log-domain phone insertion penalty")
    p.add_argument("--beam", type=float)
    p.add_argument("--out", help="label directory")


def cmd_phonerec(args):
    rec = PhoneRecognizer(load_model_set(args.models), args.penalty, args.beam).fit()
    _write_labels([(uid, rec.decode(frames)) for uid, frames, _ in _utterances(args)], args.out)


def setup_decode(p):
    p.add_argument("--models", required=True, help="plain or adapted model set")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--grammar", required=True)
    p.add_argument("--loop", action="store_true", help="decode with a free loop over the grammar's words")
    p.add_argument("--loop-penalty", type=float, default=0.0)
    p.add_argument("--word-penalty", type=float, default=0.0)
    p.add_argument("--beam", type=float)
    p.add_argument("--corpus")
    p.add_argument("--speaker")
    p.add_argument("--features")
    p.add_argument("--out", help="hypothesis file (default stdout)")


def cmd_decode(args):
    grammar = corpus_mod.load_grammar(args.grammar)
    if args.loop:
        grammar = corpus_mod.build_word_loop(grammar.words, args.loop_penalty)
    dec = GrammarDecoder(load_model_set(args.models), grammar, corpus_mod.load_lexicon(args.lexicon),
                         args.word_penalty, args.beam).fit()
    _emit(_hyp_lines((uid, dec.decode(frames).words) for uid, frames, _ in _utterances(args)), args.out)


def setup_rules(p):
    p.add_argument("--l2", required=True)
    p.add_argument("--l1", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--exclude-speaker", action="append", default=[], help="held-out speaker(s)")
    p.add_argument("--g2p", help="g2p model: key rules by grapheme cluster")
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--min-rel-freq", type=float, default=0.1)
    p.add_argument("--no-renormalize", action="store_true")
    p.add_argument("--keep-deletions", action="store_true")
    p.add_argument("--phone-penalty", type=float, default=0.0)
    p.add_argument("--beam", type=float)
    p.add_argument("--out", help="rules file (default stdout)")


def cmd_rules(args):
    l2, l1 = load_model_set(args.l2), load_model_set(args.l1)
    lex = corpus_mod.load_lexicon(args.lexicon)
    c = corpus_mod.load_manifest(args.corpus)
    g2p = G2PModel.load(args.g2p) if args.g2p else None
    rec = PhoneRecognizer(l1, args.phone_penalty, args.beam).fit()
    words_of = {u.id: u.words for u in c}
    pairs, clusters = [], []
    for u in c:
        if u.speaker in args.exclude_speaker:
            continue
        ali = align_words(u.features, u.words, lex, l2, beam=args.beam)
        got = associate(ali.phones, rec.decode(u.features).phones, u.id)
        pairs.extend(got)
        if g2p is not None:
            clusters.extend(occurrence_clusters(got, words_of, lex, g2p))
    counts = count_associations(pairs, clusters if g2p is not None else None, args.keep_deletions)
    rules = rules_from_counts(counts, args.min_count, args.top_k, args.min_rel_freq, not args.no_renormalize)
    _emit(format_rules(rules), args.out)


def setup_g2p_train(p):
    p.add_argument("--dictionary", required=True, help="pronunciation dictionary (lexicon format)")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--stay", type=float, default=0.3)
    p.add_argument("--skip", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def cmd_g2p_train(args):
    lex = corpus_mod.load_lexicon(args.dictionary)
    skipped = []
    model, history = train_g2p([(w, p) for w in lex for p in lex[w]], args.iters, args.stay, args.skip,
                               args.seed, skipped=skipped)
    for w in skipped:
        log.warning(w)
    model.save(args.out)
    sys.stdout.write("iteration\tlog_likelihood\n" + "".join(f"{it}\t{ll!r}\n" for it, ll in enumerate(history)))


def setup_g2p_align(p):
    p.add_argument("--model", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", help="alignment dump (default stdout)")


def cmd_g2p_align(args):
    model, lex = G2PModel.load(args.model), corpus_mod.load_lexicon(args.lexicon)
    lines = [format_alignment(w, align_g2p(model, w, p)) for w in lex for p in lex[w]]
    _emit("".join(lines), args.out)


def setup_adapt(p):
    p.add_argument("--l2", required=True)
    p.add_argument("--l1", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--beta", type=float, default=0.5, help="native branch weight, in (0, 1]")
    p.add_argument("--g2p")
    p.add_argument("--lexicon")
    p.add_argument("--out", required=True)


def cmd_adapt(args):
    rules = parse_rules(corpus_mod.read_text(args.rules))
    g2p = G2PModel.load(args.g2p) if args.g2p else None
    lex = corpus_mod.load_lexicon(args.lexicon) if args.lexicon else None
    adapted = compile_adapted_set(load_model_set(args.l2), load_model_set(args.l1), rules, args.beta, g2p, lex)
    save_model_set(adapted, args.out)


def setup_mllr(p):
    sub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    e = sub.add_parser("estimate", help="supervised global mean transform")
    e.add_argument("--models", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--speaker", help="restrict to one speaker's utterances")
    e.add_argument("--labels", choices=["canonical", "realised"], default="canonical",
                   help="phone transcription: canonical L2 phones or the realised (planted) labels")
    e.add_argument("--out", required=True)
    a = sub.add_parser("apply")
    a.add_argument("--models", required=True)
    a.add_argument("--transform", required=True)
    a.add_argument("--out", required=True)


def cmd_mllr(args):
    ms = load_model_set(args.models)
    if args.action == "apply":
        save_model_set(apply_mllr(ms, MllrTransform.load(args.transform)), args.out)
        return
    c = corpus_mod.load_manifest(args.corpus)
    utts = [u for u in c if args.speaker is None or u.speaker == args.speaker]
    if not utts:
        raise UsageError(f"no utterances for speaker {args.speaker}")
    labels = [u.phones if args.labels == "canonical" else u.segments.phones for u in utts]
    estimate_mllr(ms, list(zip([u.features for u in utts], labels))).save(args.out)


def setup_score(p):
    p.add_argument("--ref", required=True, help="reference file (id<TAB>words) or corpus manifest")
    p.add_argument("--hyp", required=True, nargs="+", help="hypothesis file(s); one report row each")
    p.add_argument("--name", nargs="*", help="system names (default: file names)")
    p.add_argument("--details", help="per-utterance detail file (first hypothesis)")
    p.add_argument("--out", help="report TSV (default stdout)")


def cmd_score(args):
    refs = read_hyps(args.ref)
    names = args.name or [os.path.splitext(os.path.basename(h))[0] for h in args.hyp]
    if len(names) != len(args.hyp):
        raise UsageError("give one --name per hypothesis file")
    reports = [(n, corpus_score(refs, read_hyps(h))) for n, h in zip(names, args.hyp)]
    if args.details:
        atomic_write(args.details, format_details(reports[0][1]))
    _emit(format_report(reports), args.out)


def setup_pipeline(p):
    from .pipeline import PipelineConfig
    p.add_argument("--config", help="key = value file; flags below override it")
    for f in dataclasses.fields(PipelineConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar="VALUE")


def cmd_pipeline(args):
    from .pipeline import load_config, make_config, run_pipeline
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    cfg = load_config(args.config, overrides) if args.config else make_config(overrides)
    result = run_pipeline(cfg)
    sys.stdout.write(corpus_mod.read_text(os.path.join(result.out_dir, "results.tsv")))


COMMANDS = {
    "synth": (setup_synth, cmd_synth, "generate a synthetic non-native corpus"),
    "train-am": (setup_train_am, cmd_train_am, "flat start + Baum-Welch acoustic model training"),
    "align": (setup_align, cmd_align, "forced alignment to reference words"),
    "phonerec": (setup_phonerec, cmd_phonerec, "phone-loop recognition"),
    "decode": (setup_decode, cmd_decode, "grammar-constrained word decoding"),
    "rules": (setup_rules, cmd_rules, "extract confusion rules"),
    "g2p-train": (setup_g2p_train, cmd_g2p_train, "train the grapheme/phoneme aligner"),
    "g2p-align": (setup_g2p_align, cmd_g2p_align, "align lexicon entries to spellings"),
    "adapt": (setup_adapt, cmd_adapt, "build merged (adapted) phone models"),
    "mllr": (setup_mllr, cmd_mllr, "estimate or apply a global MLLR transform"),
    "score": (setup_score, cmd_score, "word and sentence error rates"),
    "pipeline": (setup_pipeline, cmd_pipeline, "leave-one-speaker-out experiment"),
}


def build_parser():
    parser = _Parser(prog="nnasr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (setup, run, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        setup(p)
        p.set_defaults(run=run)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.run(args)
    except NnasrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FormatError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

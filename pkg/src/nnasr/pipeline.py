"""Leave-one-speaker-out experiment: extract confusion rules, adapt, decode, score.

For every held-out speaker the rules come only from the other speakers'
utterances. Each fold decodes the held-out speaker with the baseline L2
models, the confusion-adapted models and (optionally) the grapheme-constrained
adapted models, each with and without a supervised MLLR transform, under the
strict task grammar and a free word loop.
"""

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .adapt import AdaptedModelSet, compile_adapted_set
from .confuse import associate, count_associations, format_rules, parse_rules, rules_from_counts
from .corpus import build_word_loop, load_grammar, load_lexicon, load_manifest, read_text
from .decode import GrammarDecoder, PhoneRecognizer, align_words
from .errors import FormatError, NnasrError, UsageError
from .g2p import G2PModel, occurrence_clusters, train_g2p
from .labels import Segment
from .mllr import apply_mllr, estimate_mllr
from .model import ModelSet
from .modelio import atomic_write, dumps, load_model_set
from .score import corpus_score, format_report, relative_reduction
from .validation import check_beta, check_log_weight

log = logging.getLogger(__name__)

PATH_KEYS = ("l2_models", "l1_models", "lexicon", "grammar", "corpus", "rules", "g2p", "g2p_dictionary")
GRAMMAR_MODES = ("strict", "loop")


@dataclass
class PipelineConfig:
    l2_models: str = ""
    l1_models: str = ""
    lexicon: str = ""
    grammar: str = ""
    corpus: str = ""
    out_dir: str = "run"
    rules: Optional[str] = None  # pre-supplied rules replace per-fold extraction
    g2p: Optional[str] = None
    g2p_dictionary: Optional[str] = None  # trains the g2p model when no model file is given
    beta: float = 0.5
    min_count: int = 10
    top_k: int = 3
    min_rel_freq: float = 0.1
    renormalize: bool = True
    keep_deletions: bool = False
    word_penalty: float = 0.0
    loop_penalty: float = 0.0
    phone_penalty: float = 0.0
    beam: Optional[float] = None
    seed: int = 0
    g2p_iters: int = 10
    grammars: tuple = GRAMMAR_MODES
    graphemes: bool = True
    mllr: bool = True
    jobs: int = 1

    def validate(self):
        for key in ("l2_models", "l1_models", "lexicon", "grammar", "corpus"):
            if not getattr(self, key):
                raise UsageError(f"config is missing {key}")
        for key in PATH_KEYS:
            path = getattr(self, key)
            if path and not os.path.exists(path):
                raise UsageError(f"{key}: no such file {path}")
        check_beta(self.beta)
        for key in ("word_penalty", "loop_penalty", "phone_penalty"):
            check_log_weight(getattr(self, key), key)
        if self.min_count < 1 or self.top_k < 1 or not (0 <= self.min_rel_freq <= 1):
            raise UsageError("min_count and top_k must be >= 1 and min_rel_freq in [0, 1]")
        if self.beam is not None and not self.beam > 0:
            raise UsageError("beam must be positive")
        bad = [g for g in self.grammars if g not in GRAMMAR_MODES]
        if bad or not self.grammars:
            raise UsageError(f"grammars must be a non-empty subset of {', '.join(GRAMMAR_MODES)}")
        if self.jobs < 1:
            raise UsageError("jobs must be >= 1")
        return self

    def params(self):
        """Result-affecting settings (not ``out_dir`` or ``jobs``)."""
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()
                if k not in ("out_dir", "jobs")}


def _convert(name, kind, text):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {text!r}")
    if kind is tuple:
        return tuple(t for t in text.replace(",", " ").split())
    if text.lower() in ("", "none") and name in ("beam", "rules", "g2p", "g2p_dictionary"):
        return None
    try:
        if kind is int:
            return int(text)
        if kind is float or name == "beam":
            return float(text)
    except ValueError:
        raise UsageError(f"{name}: cannot parse {text!r}") from None
    return text


_KINDS = {"min_count": int, "top_k": int, "seed": int, "g2p_iters": int, "jobs": int,
          "beta": float, "min_rel_freq": float, "word_penalty": float, "loop_penalty": float,
          "phone_penalty": float, "beam": float, "renormalize": bool, "keep_deletions": bool,
          "graphemes": bool, "mllr": bool, "grammars": tuple}


def parse_config(text):
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def make_config(values, base_dir=None):
    """Build a config from string (or typed) values; relative paths resolve against ``base_dir``."""
    names = {f.name for f in dataclasses.fields(PipelineConfig)}
    kwargs = {}
    for key, value in values.items():
        if key not in names:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _convert(key, _KINDS.get(key, str), value)
        if base_dir and isinstance(value, str) and (key in PATH_KEYS or key == "out_dir") and value \
                and not os.path.isabs(value):
            value = os.path.join(base_dir, value)
        kwargs[key] = value
    return PipelineConfig(**kwargs)


def load_config(path, overrides=None):
    values = parse_config(read_text(path))
    cfg = make_config(values, base_dir=os.path.dirname(os.path.abspath(path)))
    if overrides:
        over = make_config(overrides)
        cfg = dataclasses.replace(cfg, **{k: getattr(over, k) for k in overrides})
    return cfg


# ---------------------------------------------------------------------------
# stage helpers (top level so worker processes can run them)

def _staged(stage, uid, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except NnasrError as exc:
        raise type(exc)(f"stage {stage}, utterance {uid}: {exc}") from exc


_CTX = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def _analyse(item):
    """L2 forced alignment and L1 phone recognition of one utterance."""
    uid, frames, words = item
    ali = _staged("align", uid, align_words, frames, words, _CTX["lexicon"], _CTX["l2"], beam=_CTX["beam"])
    rec = _staged("phonerec", uid, _CTX["recognizer"].decode, frames)
    return uid, list(ali.phones), list(rec.phones)


def _map(fn, items, jobs, ctx):
    if jobs <= 1:
        _init_worker(ctx)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(ctx,)) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def mllr_pieces(frames, result, model_set):
    """Split an aligned utterance into (frames, phone chain) pieces, one per segment.

    Segments decoded through an alternative branch of a merged model contribute
    their L1 chain, so MLLR statistics follow what was actually spoken.
    """
    pieces = []
    for seg, branch in zip(result.phones, result.branches):
        chain = [seg.phone]
        if isinstance(model_set, AdaptedModelSet) and branch:
            word = result.words[seg.word_index]
            chain = [h.id for h in model_set.unit_for(seg.phone, word, seg.variant, seg.position)[branch][1]]
        pieces.append((frames[seg.start:seg.end], chain))
    return pieces


class _Fold:
    def __init__(self, cfg, l2, l1, lexicon, grammars, g2p, speaker, test, rules, g_rules):
        self.cfg, self.l2, self.l1, self.lexicon = cfg, l2, l1, lexicon
        self.grammars, self.g2p, self.speaker = grammars, g2p, speaker
        self.test, self.rules, self.g_rules = test, rules, g_rules

    def build(self, system, l2, l1):
        if system == "baseline":
            return l2
        if system == "confusion":
            return compile_adapted_set(l2, l1, self.rules, self.cfg.beta)
        return compile_adapted_set(l2, l1, self.g_rules, self.cfg.beta, self.g2p, self.lexicon)

    def transform(self, system, model_set):
        """Supervised MLLR on the held-out speaker, estimated through ``model_set``'s own alignment."""
        pieces = []
        for uid, frames, words in self.test:
            res = _staged("mllr-align", uid, align_words, frames, words, self.lexicon, model_set, beam=self.cfg.beam)
            pieces.extend(mllr_pieces(frames, res, model_set))
        joint = ModelSet(list(self.l2) + list(self.l1), dim=self.l2.dim)
        try:
            return estimate_mllr(joint, pieces)
        except NnasrError as exc:
            raise type(exc)(f"stage mllr, speaker {self.speaker}, system {system}: {exc}") from exc

    def run(self, systems):
        hyps, transforms = {}, {}
        for system in systems:
            base, with_mllr = system.replace("+mllr", ""), system.endswith("+mllr")
            model_set = self.build(base, self.l2, self.l1)
            if with_mllr:
                t = self.transform(base, model_set)
                transforms[system] = t
                model_set = self.build(base, apply_mllr(self.l2, t), apply_mllr(self.l1, t))
            for mode in self.cfg.grammars:
                dec = GrammarDecoder(model_set, self.grammars[mode], self.lexicon, self.cfg.word_penalty,
                                     self.cfg.beam).fit()
                hyps[(mode, system)] = {uid: _staged(f"decode {mode} {system}", uid, dec.decode, frames).words
                                        for uid, frames, _ in self.test}
        return hyps, transforms


def _run_fold(fold):
    return fold.speaker, fold.run(_CTX["systems"])


def system_names(cfg):
    base = ["baseline", "confusion"] + (["confusion+graphemes"] if cfg.graphemes else [])
    return base + ([b + "+mllr" for b in base] if cfg.mllr else [])


@dataclass
class PipelineResult:
    reports: dict  # (mode, system) -> pooled ScoreReport
    fold_reports: dict  # (speaker, mode, system) -> ScoreReport
    folds: list
    out_dir: str
    artifacts: list = field(default_factory=list)

    def wer(self, mode, system, speaker=None):
        rep = self.reports[(mode, system)] if speaker is None else self.fold_reports[(speaker, mode, system)]
        return rep.wer


class _Writer:
    """Atomic artifact writes, each recorded with its producing stage and parameters."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.entries = []

    def write(self, rel, text, stage, **params):
        path = os.path.join(self.out_dir, rel)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        atomic_write(path, text)
        self.entries.append((rel, stage, params))
        return path

    def manifest(self):
        lines = ["path\tstage\tparameters"]
        lines.extend(f"{rel}\t{stage}\t{json.dumps(params, sort_keys=True)}"
                     for rel, stage, params in sorted(self.entries, key=lambda e: e[0]))
        return "\n".join(lines) + "\n"


def _hyp_text(hyps):
    return "".join(f"{uid}\t{' '.join(words)}\n" for uid, words in sorted(hyps.items()))


def run_pipeline(cfg):
    cfg.validate()
    out = _Writer(cfg.out_dir)
    os.makedirs(cfg.out_dir, exist_ok=True)
    l2, l1 = load_model_set(cfg.l2_models), load_model_set(cfg.l1_models)
    if isinstance(l2, AdaptedModelSet) or isinstance(l1, AdaptedModelSet):
        raise UsageError("pipeline inputs must be plain model sets")
    if l2.dim != l1.dim:
        raise UsageError(f"L2 dimension {l2.dim} differs from L1 dimension {l1.dim}")
    lexicon = load_lexicon(cfg.lexicon)
    lexicon.check_phones(l2)
    strict = load_grammar(cfg.grammar)
    grammars = {"strict": strict, "loop": build_word_loop(strict.words, cfg.loop_penalty)}
    corpus = load_manifest(cfg.corpus)
    speakers = corpus.speaker_ids()
    if len(speakers) < 2:
        raise UsageError("leave-one-out needs at least two speakers")
    audit = [f"speakers\t{' '.join(speakers)}"]

    fixed_rules = parse_rules(read_text(cfg.rules)) if cfg.rules else None
    need_g2p = cfg.graphemes or (fixed_rules is not None and any(r.grapheme for r in fixed_rules))
    g2p = None
    if need_g2p:
        if cfg.g2p:
            g2p = G2PModel.load(cfg.g2p)
        else:
            source = load_lexicon(cfg.g2p_dictionary) if cfg.g2p_dictionary else lexicon
            pairs = [(w, p) for w in source for p in source[w]]
            skipped = []
            g2p, history = train_g2p(pairs, cfg.g2p_iters, seed=cfg.seed, skipped=skipped)
            out.write("g2p.json", dumps(g2p.to_dict()), "g2p-train", iters=cfg.g2p_iters, seed=cfg.seed,
                      dictionary=os.path.basename(cfg.g2p_dictionary or cfg.lexicon))
            audit.append(f"g2p\tlog-likelihood\t{' '.join(repr(h) for h in history)}")

    # stage 1: analysis of every utterance (fold independent)
    items = [(u.id, u.features, u.words) for u in corpus]
    ctx = {"lexicon": lexicon, "l2": l2, "beam": cfg.beam,
           "recognizer": PhoneRecognizer(l1, cfg.phone_penalty, cfg.beam).fit()}
    analysis = {uid: (ali, rec) for uid, ali, rec in _map(_analyse, items, cfg.jobs, ctx)}
    words_of = {u.id: u.words for u in corpus}
    pairs_of, clusters_of = {}, {}
    for u in corpus:
        ali, rec = analysis[u.id]
        pairs_of[u.id] = associate(ali, rec, u.id)
        if g2p is not None:
            clusters_of[u.id] = occurrence_clusters(pairs_of[u.id], words_of, lexicon, g2p)
    out.write("analysis.json", dumps({uid: {"l2_alignment": [_seg_row(s) for s in a],
                                            "l1_recognition": [_seg_row(s) for s in r]}
                                      for uid, (a, r) in sorted(analysis.items())}),
              "align+phonerec", phone_penalty=cfg.phone_penalty, beam=cfg.beam)

    # stage 2: per-fold rules from the other speakers only
    folds = []
    for spk in speakers:
        train_ids = [u.id for u in corpus if u.speaker != spk]
        test = [(u.id, u.features, u.words) for u in corpus if u.speaker == spk]
        train_pairs = [p for uid in train_ids for p in pairs_of[uid]]
        if fixed_rules is not None:
            rules = g_rules = fixed_rules
        else:
            counts = count_associations(train_pairs, keep_deletions=cfg.keep_deletions)
            rules = rules_from_counts(counts, cfg.min_count, cfg.top_k, cfg.min_rel_freq, cfg.renormalize)
            g_rules = []
            if cfg.graphemes:
                clusters = [c for uid in train_ids for c in clusters_of[uid]]
                g_counts = count_associations(train_pairs, clusters, keep_deletions=cfg.keep_deletions)
                g_rules = rules_from_counts(g_counts, cfg.min_count, cfg.top_k, cfg.min_rel_freq,
                                            cfg.renormalize)
        train_speakers = sorted({u.speaker for u in corpus if u.speaker != spk})
        if spk in train_speakers or any(uid in {t[0] for t in test} for uid in train_ids):
            raise UsageError(f"fold {spk}: held-out data leaked into rule extraction")
        params = dict(held_out=spk, train_speakers=train_speakers, min_count=cfg.min_count, top_k=cfg.top_k,
                      min_rel_freq=cfg.min_rel_freq, renormalize=cfg.renormalize,
                      keep_deletions=cfg.keep_deletions, supplied=fixed_rules is not None)
        out.write(f"folds/{spk}/rules.txt", format_rules(rules), "rules", **params)
        if cfg.graphemes:
            out.write(f"folds/{spk}/rules_graphemes.txt", format_rules(g_rules), "rules-graphemes", **params)
        audit.append(f"fold\t{spk}\ttrain_speakers={','.join(train_speakers)}\ttrain_utterances={len(train_ids)}"
                     f"\ttest_utterances={len(test)}\trules={len(rules)}\tgrapheme_rules={len(g_rules)}")
        folds.append(_Fold(cfg, l2, l1, lexicon, grammars, g2p, spk, test, rules, g_rules))

    # stage 3: adapt, decode and score each fold
    systems = system_names(cfg)
    results = dict(_map(_run_fold, folds, min(cfg.jobs, len(folds)), {"systems": systems}))
    refs = {u.id: u.words for u in corpus}
    fold_reports, pooled_hyps = {}, {}
    for spk in speakers:
        hyps, transforms = results[spk]
        for system, t in sorted(transforms.items()):
            out.write(f"folds/{spk}/mllr_{system.replace('+mllr', '')}.json", dumps(t.to_dict()), "mllr",
                      held_out=spk, system=system)
        for mode in cfg.grammars:
            for system in systems:
                h = hyps[(mode, system)]
                out.write(f"folds/{spk}/{mode}/{system}.hyp", _hyp_text(h), "decode", held_out=spk, grammar=mode,
                          system=system, beta=cfg.beta, word_penalty=cfg.word_penalty, beam=cfg.beam)
                fold_reports[(spk, mode, system)] = corpus_score({uid: refs[uid] for uid in h}, h)
                pooled_hyps.setdefault((mode, system), {}).update(h)
    reports = {k: corpus_score({uid: refs[uid] for uid in h}, h) for k, h in pooled_hyps.items()}

    rows = [(f"{mode}/{system}", reports[(mode, system)]) for mode in cfg.grammars for system in systems]
    out.write("results.tsv", format_report(rows), "score")
    lines = ["fold\tgrammar\tsystem\tWER\tSER"]
    for spk in speakers:
        for mode in cfg.grammars:
            for system in systems:
                r = fold_reports[(spk, mode, system)]
                lines.append(f"{spk}\t{mode}\t{system}\t{r.wer:.2f}\t{r.ser:.2f}")
    out.write("folds.tsv", "\n".join(lines) + "\n", "score")
    lines = ["grammar\tsystem\tWER_reduction\tSER_reduction"]
    for mode in cfg.grammars:
        b = reports[(mode, "baseline")]
        for system in systems[1:]:
            r = reports[(mode, system)]
            lines.append(f"{mode}\t{system}\t{relative_reduction(b.wer, r.wer):.2f}\t"
                         f"{relative_reduction(b.ser, r.ser):.2f}")
    out.write("reductions.tsv", "\n".join(lines) + "\n", "score")
    out.write("config.json", dumps(cfg.params()), "pipeline")
    out.write("audit.log", "\n".join(audit) + "\n", "pipeline")
    atomic_write(os.path.join(cfg.out_dir, "MANIFEST"), out.manifest())
    return PipelineResult(reports, fold_reports, speakers, cfg.out_dir, [e[0] for e in out.entries])


def _seg_row(seg: Segment):
    return [seg.start, seg.end, seg.phone]

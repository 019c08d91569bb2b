"""Word/sentence error rates from Levenshtein word alignment."""

from dataclasses import dataclass, field

from .errors import UsageError

SUB, DEL, INS, OK = "S", "D", "I", "="


def edit_align(ref, hyp):
    """Unit-cost alignment of two word sequences.

    Returns ``(S, D, I, alignment)`` where alignment is a list of
    ``(op, ref_word, hyp_word)``. Among equal-cost alignments the backtrace
    prefers match/substitution, then deletion, then insertion.
    """
    ref = [w.strip() for w in ref]
    hyp = [w.strip() for w in hyp]
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]), d[i - 1][j] + 1, d[i][j - 1] + 1)
    s = dl = ins = 0
    ali = []
    i, j = n, m
    while i or j:
        if i and j and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            same = ref[i - 1] == hyp[j - 1]
            s += not same
            ali.append((OK if same else SUB, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            dl += 1
            ali.append((DEL, ref[i - 1], None))
            i -= 1
        else:
            ins += 1
            ali.append((INS, None, hyp[j - 1]))
            j -= 1
    ali.reverse()
    return s, dl, ins, ali


@dataclass
class UtteranceScore:
    id: str
    substitutions: int
    deletions: int
    insertions: int
    ref_length: int

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions

    @property
    def correct(self):
        return self.errors == 0


@dataclass
class ScoreReport:
    utterances: list = field(default_factory=list)

    @property
    def ref_words(self):
        return sum(u.ref_length for u in self.utterances)

    @property
    def errors(self):
        return sum(u.errors for u in self.utterances)

    @property
    def wer(self):
        return 100.0 * self.errors / self.ref_words if self.ref_words else 0.0

    @property
    def ser(self):
        n = len(self.utterances)
        return 100.0 * sum(not u.correct for u in self.utterances) / n if n else 0.0


def corpus_score(refs, hyps):
    """Score hypotheses against references; both map utterance id -> word list."""
    refs, hyps = dict(refs), dict(hyps)
    missing = sorted(set(refs) ^ set(hyps))
    if missing:
        raise UsageError(f"utterance ids do not match between references and hypotheses: {', '.join(missing)}")
    report = ScoreReport()
    for uid in sorted(refs):
        s, d, i, _ = edit_align(refs[uid], hyps[uid])
        report.utterances.append(UtteranceScore(uid, s, d, i, len(refs[uid])))
    return report


def relative_reduction(baseline, adapted):
    """Relative error reduction in percent, e.g. 40.0 -> 26.0 gives 35.0."""
    if baseline == 0:
        return 0.0
    return 100.0 * (baseline - adapted) / baseline


def format_report(rows):
    """``rows``: iterable of (system name, ScoreReport)."""
    lines = ["system\tWER\tSER"]
    lines.extend(f"{name}\t{rep.wer:.2f}\t{rep.ser:.2f}" for name, rep in rows)
    return "\n".join(lines) + "\n"


def format_details(report):
    lines = ["id\tS\tD\tI\tN\tcorrect"]
    lines.extend(f"{u.id}\t{u.substitutions}\t{u.deletions}\t{u.insertions}\t{u.ref_length}\t{int(u.correct)}"
                 for u in report.utterances)
    return "\n".join(lines) + "\n"

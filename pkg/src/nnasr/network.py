"""Decoding graphs and the log-domain Viterbi engine behind every decoder.

A graph is built from emitting nodes (one per HMM state occurrence) and
non-emitting junction nodes (phone entries/exits, grammar states, loop
points). Before decoding, every epsilon path between emitting nodes is folded
into a direct arc, remembering whether it crossed a phone-unit or word
boundary; the per-frame recursion then only touches emitting states and is
fully vectorised over arcs.
"""

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AlignmentInfeasibleError, UsageError
from .labels import Segment, Transcription

EPS, UNIT_IN, WORD_IN, START, FINAL = "eps", "unit", "word", "start", "final"


@dataclass(frozen=True)
class StateInfo:
    phone: str  # label of the phone unit (the L2 phone for merged units)
    model: str  # phone whose model owns the state
    state: int
    word: Optional[str] = None
    position: Optional[int] = None
    variant: Optional[int] = None
    branch: int = 0
    tag: Optional[int] = None  # caller-supplied occurrence index


class GraphBuilder:
    def __init__(self):
        self.kinds = []
        self.gmm = []
        self.info = []
        self.arcs = []
        self.start = self.add_node(START)
        self.final = self.add_node(FINAL)

    def add_node(self, kind=EPS):
        self.kinds.append(kind)
        self.gmm.append(None)
        self.info.append(None)
        return len(self.kinds) - 1

    def add_emitting(self, gmm, info):
        self.kinds.append(None)
        self.gmm.append(gmm)
        self.info.append(info)
        return len(self.kinds) - 1

    def add_arc(self, src, dst, logw=0.0):
        if logw == -np.inf:
            return
        self.arcs.append((src, dst, float(logw)))

    def add_phone(self, hmm, src, dst, logw, info):
        """Wire one PhoneHmm between junctions ``src`` and ``dst``."""
        lt = hmm.log_trans
        n = hmm.n_states
        ids = [self.add_emitting(st, StateInfo(model=hmm.id, state=i, **info)) for i, st in enumerate(hmm.states)]
        for j in range(n):
            self.add_arc(src, ids[j], logw + lt[0, j + 1])
        for i in range(n):
            for j in range(i, n):
                self.add_arc(ids[i], ids[j], lt[i + 1, j + 1])
            self.add_arc(ids[i], dst, lt[i + 1, n + 1])

    def add_unit(self, branches, src, dst, info, logw=0.0):
        """Wire a phone unit: parallel branches, each a chain of phone models.

        ``branches`` is ``[(log_weight, [PhoneHmm, ...]), ...]`` as returned by
        ``unit_for`` on a model set.
        """
        entry = self.add_node(UNIT_IN)
        self.add_arc(src, entry, logw)
        for b, (bw, chain) in enumerate(branches):
            prev, w = entry, bw
            for k, hmm in enumerate(chain):
                nxt = dst if k == len(chain) - 1 else self.add_node(EPS)
                self.add_phone(hmm, prev, nxt, w, dict(info, branch=b))
                prev, w = nxt, 0.0

    def compile(self):
        return Network.from_builder(self)


class Network:
    """Epsilon-free graph over emitting states, ready for Viterbi decoding."""

    @classmethod
    def from_builder(cls, g):
        n = len(g.kinds)
        emitting = [i for i in range(n) if g.kinds[i] is None]
        if not emitting:
            raise UsageError("decoding graph has no emitting states")
        index = {node: k for k, node in enumerate(emitting)}
        out = [[] for _ in range(n)]
        for s, d, w in g.arcs:
            out[s].append((d, w))
        order = _topo_order_epsilon(g.kinds, out)
        rank = {node: r for r, node in enumerate(order)}

        arcs = {}  # (src, dst, new_unit, new_word) -> weight; first maximum kept
        init = {}
        final = {}

        def emit(table, key, w):
            if key not in table or w > table[key]:
                table[key] = w

        for s in [g.start] + emitting:
            best = {}  # junction -> {(new_unit, new_word): weight}
            heap = []

            def reach(d, flags, w):
                kind = g.kinds[d]
                if kind is None:
                    if s == g.start:
                        emit(init, index[d], w)
                    else:
                        emit(arcs, (index[s], index[d]) + flags, w)
                elif kind == FINAL:
                    if s != g.start:
                        emit(final, index[s], w)
                else:
                    flags = (flags[0] or kind == UNIT_IN, flags[1] or kind == WORD_IN)
                    if d not in best:
                        best[d] = {}
                        heapq.heappush(heap, (rank[d], d))
                    emit(best[d], flags, w)

            for d, w in out[s]:
                reach(d, (False, False), w)
            # DAG: popping by topological rank sees every incoming path first
            while heap:
                _, node = heapq.heappop(heap)
                for flags, w0 in best[node].items():
                    for d, w in out[node]:
                        reach(d, flags, w0 + w)

        return cls(g, emitting, arcs, init, final)

    def __init__(self, g, emitting, arcs, init, final):
        self.n_states = len(emitting)
        gmms, gmm_index, state_gmm = [], {}, []
        for node in emitting:
            gmm = g.gmm[node]
            if id(gmm) not in gmm_index:
                gmm_index[id(gmm)] = len(gmms)
                gmms.append(gmm)
            state_gmm.append(gmm_index[id(gmm)])
        self.gmms = gmms
        self.state_gmm = np.array(state_gmm, dtype=np.intp)
        self.info = [g.info[node] for node in emitting]
        self.dim = gmms[0].dim

        keys = sorted(arcs, key=lambda k: (k[1], k[0], k[2], k[3]))
        self.arc_src = np.array([k[0] for k in keys], dtype=np.intp)
        self.arc_dst = np.array([k[1] for k in keys], dtype=np.intp)
        self.arc_w = np.array([arcs[k] for k in keys], dtype=np.float64)
        self.arc_new_unit = np.array([k[2] for k in keys], dtype=bool)
        self.arc_new_word = np.array([k[3] for k in keys], dtype=bool)
        if keys:
            starts = np.flatnonzero(np.r_[True, self.arc_dst[1:] != self.arc_dst[:-1]])
        else:
            starts = np.zeros(0, dtype=np.intp)
        self._group_starts = starts
        self._group_dst = self.arc_dst[starts] if keys else starts
        self._group_of_arc = np.repeat(np.arange(starts.size), np.diff(np.r_[starts, len(keys)]))

        self.init_w = np.full(self.n_states, -np.inf)
        for d, w in init.items():
            self.init_w[d] = w
        fsrc = sorted(final)
        self.final_src = np.array(fsrc, dtype=np.intp)
        self.final_w = np.array([final[s] for s in fsrc], dtype=np.float64)

    def emissions(self, frames):
        per_gmm = np.stack([g.log_likelihood(frames) for g in self.gmms], axis=1)
        return per_gmm[:, self.state_gmm]

    def viterbi(self, frames, beam=None):
        """Best complete path. Returns (log score, state per frame, arc index per frame).

        Ties are broken toward the smaller predecessor state index. ``beam``
        (optional) prunes states scoring more than ``beam`` below the frame best.
        """
        T = frames.shape[0]
        em = self.emissions(frames)
        S = self.n_states
        back = np.full((T, S), -1, dtype=np.intp)
        delta = self.init_w + em[0]
        n_arcs = self.arc_src.size
        arange = np.arange(n_arcs)
        for t in range(1, T):
            if beam is not None:
                delta = np.where(delta < delta.max() - beam, -np.inf, delta)
            new = np.full(S, -np.inf)
            if n_arcs:
                cand = delta[self.arc_src] + self.arc_w
                gmax = np.maximum.reduceat(cand, self._group_starts)
                hit = cand == gmax[self._group_of_arc]
                first = np.minimum.reduceat(np.where(hit, arange, n_arcs), self._group_starts)
                new[self._group_dst] = gmax
                back[t, self._group_dst] = first
            delta = new + em[t]
        if self.final_src.size == 0:
            raise AlignmentInfeasibleError("decoding graph has no final arcs")
        cand = delta[self.final_src] + self.final_w
        k = int(np.argmax(cand))
        score = float(cand[k])
        if not np.isfinite(score):
            raise AlignmentInfeasibleError(f"no complete path through the decoding graph in {T} frames")
        states = np.empty(T, dtype=np.intp)
        arcs = np.full(T, -1, dtype=np.intp)
        s = int(self.final_src[k])
        for t in range(T - 1, -1, -1):
            states[t] = s
            if t:
                a = int(back[t, s])
                arcs[t] = a
                s = int(self.arc_src[a])
        return score, states, arcs

    def segments(self, states, arcs):
        """Turn a Viterbi path into phone segments and the word sequence."""
        segs, words = [], []
        cur_start, word_index = 0, -1
        T = len(states)

        def close(end, s):
            inf = self.info[s]
            segs.append(Segment(inf.phone, cur_start, end, word_index if inf.word is not None else None,
                                inf.position, inf.variant))

        for t in range(T):
            s = int(states[t])
            new_unit = t == 0 or bool(self.arc_new_unit[arcs[t]])
            new_word = (t == 0 and self.info[s].word is not None) or (t > 0 and bool(self.arc_new_word[arcs[t]]))
            if t > 0 and new_unit:
                close(t, int(states[t - 1]))
                cur_start = t
            if new_word:
                word_index += 1
                words.append(self.info[s].word)
        close(T, int(states[-1]))
        return Transcription(segs), words


def _topo_order_epsilon(kinds, out):
    """Topological order of junction nodes; epsilon cycles are rejected."""
    junction = [i for i, k in enumerate(kinds) if k is not None]
    indeg = {i: 0 for i in junction}
    for i in junction:
        for d, _ in out[i]:
            if kinds[d] is not None:
                indeg[d] += 1
    ready = [i for i in junction if indeg[i] == 0]
    order = []
    while ready:
        i = ready.pop()
        order.append(i)
        for d, _ in out[i]:
            if kinds[d] is not None:
                indeg[d] -= 1
                if indeg[d] == 0:
                    ready.append(d)
    if len(order) != len(junction):
        raise UsageError("decoding graph contains a cycle of non-emitting arcs (epsilon loop)")
    return order

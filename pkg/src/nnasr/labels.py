"""Time-stamped phone labels shared by alignment, recognition and synthesis."""

from dataclasses import dataclass
from typing import Optional

from .errors import FormatError


@dataclass(frozen=True)
class Segment:
    """A phone occupying frames ``[start, end)``.

    ``word_index``, ``position`` and ``variant`` trace the segment back to a
    lexicon phone occurrence when the producing decoder knows it.
    """

    phone: str
    start: int
    end: int
    word_index: Optional[int] = None
    position: Optional[int] = None
    variant: Optional[int] = None

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise FormatError(f"segment {self.phone!r}: need 0 <= start < end, got [{self.start}, {self.end})")

    @property
    def length(self):
        return self.end - self.start

    def overlap(self, other):
        return max(0, min(self.end, other.end) - max(self.start, other.start))


class Transcription:
    """Time-ordered, non-overlapping sequence of segments."""

    def __init__(self, segments=()):
        segments = tuple(segments)
        for prev, cur in zip(segments, segments[1:]):
            if cur.start <= prev.start:
                raise FormatError(f"segment starts must strictly increase (frame {cur.start} after {prev.start})")
            if cur.start < prev.end:
                raise FormatError(f"segments overlap: [{prev.start},{prev.end}) and [{cur.start},{cur.end})")
        self.segments = segments

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    def __eq__(self, other):
        return isinstance(other, Transcription) and self.segments == other.segments

    def __repr__(self):
        return f"Transcription({list(self.segments)!r})"

    @property
    def phones(self):
        return [s.phone for s in self.segments]

    @property
    def boundaries(self):
        return [(s.start, s.end) for s in self.segments]

    def is_contiguous(self, n_frames=None):
        """True when the segments tile ``[0, n_frames)`` without gaps."""
        if not self.segments:
            return n_frames in (None, 0)
        if self.segments[0].start != 0:
            return False
        if any(a.end != b.start for a, b in zip(self.segments, self.segments[1:])):
            return False
        return n_frames is None or self.segments[-1].end == n_frames


def format_labels(transcription, score=None):
    lines = [f"{s.start} {s.end} {s.phone}" for s in transcription]
    if score is not None:
        lines.append(f"score {score!r}")
    return "\n".join(lines) + "\n"


def parse_labels(text):
    """Parse a ``start end phone`` label file; an optional ``score`` trailer is ignored."""
    segments = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("score "):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected 'start end phone', got {raw!r}")
        try:
            start, end = int(parts[0]), int(parts[1])
        except ValueError:
            raise FormatError(f"line {lineno}: frame indices must be integers") from None
        try:
            segments.append(Segment(parts[2], start, end))
        except FormatError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    try:
        return Transcription(segments)
    except FormatError as exc:
        raise FormatError(f"label file: {exc}") from None

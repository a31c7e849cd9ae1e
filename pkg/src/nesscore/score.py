"""Score containers for four-voice chip music.

Three representations of the same material, ordered by information content:

* expressive score -- per-frame (note, velocity, timbre) for each voice
* separated score  -- note-only 4xT matrix, one monophonic row per voice
* blended score    -- 88xT binary piano roll, union of the melodic voices

Plus the 24 Hz downsampling step, validation, the NESSCORE text format and
the composer-disjoint corpus split.
"""

import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

SAMPLE_RATE = 44100
DEFAULT_RATE_HZ = 24.0

VOICES = ("P1", "P2", "TR", "NO")

PULSE_NOTE_MIN, PULSE_NOTE_MAX = 32, 108
TRIANGLE_NOTE_MIN, TRIANGLE_NOTE_MAX = 21, 108
NOISE_NOTE_MAX = 16
VELOCITY_MAX = 15
PULSE_TIMBRE_MAX = 3
NOISE_TIMBRE_MAX = 1

# Blended grid covers the 88 piano keys, bottom row = MIDI 21.
BLENDED_NOTE_MIN = 21
BLENDED_ROWS = 88


class MalformedHeader(ValueError):
    """NESSCORE text header is missing or inconsistent."""


class BadFieldValue(ValueError):
    """A NESSCORE body line has the wrong shape or an out-of-range value."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ExpressiveFrame(NamedTuple):
    """One timestep of the expressive representation (all fields integers).

    ``note == 0`` is the canonical off state: velocity and timbre are then 0
    as well.  Noise "notes" 1..16 index period, higher = noisier/brighter.
    """

    p1_note: int = 0
    p1_vel: int = 0
    p1_timbre: int = 0
    p2_note: int = 0
    p2_vel: int = 0
    p2_timbre: int = 0
    tr_note: int = 0
    no_note: int = 0
    no_vel: int = 0
    no_timbre: int = 0


SILENCE = ExpressiveFrame()

# Column indices of each voice's fields in the flat frame tuple.
VOICE_FIELDS = {"P1": (0, 1, 2), "P2": (3, 4, 5), "TR": (6,), "NO": (7, 8, 9)}


@dataclass
class ExpressiveScore:
    """A sequence of expressive frames at a fixed frame rate."""

    rate_hz: float = DEFAULT_RATE_HZ
    frames: list[ExpressiveFrame] = field(default_factory=list)
    provenance: str | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.frames)

    def to_array(self) -> np.ndarray:
        """Frames as a (T, 10) int16 array in frame-field order."""
        if not self.frames:
            return np.zeros((0, 10), dtype=np.int16)
        return np.asarray(self.frames, dtype=np.int16)


@dataclass(eq=False)
class SeparatedScore:
    """Note-only matrix, shape (4, T); voice order P1, P2, TR, NO."""

    rate_hz: float
    notes: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, SeparatedScore):
            return NotImplemented
        return self.rate_hz == other.rate_hz and np.array_equal(self.notes, other.notes)


@dataclass(eq=False)
class BlendedScore:
    """Binary piano-roll grid, shape (88, T); row 0 = MIDI 21."""

    rate_hz: float
    grid: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, BlendedScore):
            return NotImplemented
        return self.rate_hz == other.rate_hz and np.array_equal(self.grid, other.grid)


class Diagnostic(NamedTuple):
    frame_index: int
    voice: str
    message: str


# ---------------------------------------------------------------------------
# frame/sample arithmetic shared by downsampling, synthesis and MIDI export

def frame_sample_index(k: int, rate_hz: float) -> int:
    """Audio sample index at which frame k is sampled: floor(k*44100/rate)."""
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    if float(rate_hz).is_integer():
        return (k * SAMPLE_RATE) // int(rate_hz)
    return int(k * SAMPLE_RATE / rate_hz)


def frame_count(total_samples: int, rate_hz: float) -> int:
    """Number of frames covering total_samples: ceil(total*rate/44100)."""
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    if float(rate_hz).is_integer():
        return -((-total_samples * int(rate_hz)) // SAMPLE_RATE)
    return math.ceil(total_samples * rate_hz / SAMPLE_RATE)


def score_total_samples(n_frames: int, rate_hz: float) -> int:
    """Stream length whose extraction yields exactly n_frames frames.

    floor(T*44100/rate) is the largest total with ceil(total*rate/44100) == T.
    """
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    if float(rate_hz).is_integer():
        return (n_frames * SAMPLE_RATE) // int(rate_hz)
    return int(n_frames * SAMPLE_RATE / rate_hz)


# ---------------------------------------------------------------------------
# representation conversions

def downsample(timeline, rate_hz: float = DEFAULT_RATE_HZ) -> ExpressiveScore:
    """Point-sample a 44.1 kHz frame timeline down to rate_hz.

    Frame k takes the timeline state at sample floor(k*44100/rate_hz); no
    aggregation or filtering.  Trailing partial frames are kept (ceiling).
    """
    n = frame_count(timeline.total_samples, rate_hz)
    frames = [timeline.frame_at(frame_sample_index(k, rate_hz)) for k in range(n)]
    return ExpressiveScore(rate_hz=float(rate_hz), frames=frames)


def to_separated(score: ExpressiveScore) -> SeparatedScore:
    """Project an expressive score to notes only (dynamics/timbre dropped)."""
    arr = score.to_array()
    notes = arr[:, [0, 3, 6, 7]].T.copy() if len(arr) else np.zeros((4, 0), np.int16)
    return SeparatedScore(rate_hz=score.rate_hz, notes=notes)


def to_blended(score: SeparatedScore) -> BlendedScore:
    """Union the melodic voices (P1, P2, TR) onto the 88-key binary grid.

    The noise voice is discarded; voices playing the same note collapse to a
    single cell, so a column never has more than three ones.
    """
    n_t = score.notes.shape[1]
    grid = np.zeros((BLENDED_ROWS, n_t), dtype=np.uint8)
    for v in range(3):
        row = score.notes[v]
        on = np.nonzero(row > 0)[0]
        grid[row[on] - BLENDED_NOTE_MIN, on] = 1
    return BlendedScore(rate_hz=score.rate_hz, grid=grid)


# ---------------------------------------------------------------------------
# validation

def _check_melodic(out, i, voice, note, vel, timbre, note_min, timbre_max):
    if not (note == 0 or note_min <= note <= 108):
        out.append(Diagnostic(i, voice, f"note {note} outside {{0}} u [{note_min},108]"))
    if not 0 <= vel <= VELOCITY_MAX:
        out.append(Diagnostic(i, voice, f"velocity {vel} outside [0,{VELOCITY_MAX}]"))
    if not 0 <= timbre <= timbre_max:
        out.append(Diagnostic(i, voice, f"timbre {timbre} outside [0,{timbre_max}]"))
    if note == 0 and (vel != 0 or timbre != 0):
        out.append(Diagnostic(i, voice, "off state must be (0, 0, 0)"))
    if note != 0 and vel == 0:
        out.append(Diagnostic(i, voice, "sounding note with velocity 0"))


def validate(score: ExpressiveScore) -> list[Diagnostic]:
    """Return one diagnostic per invariant violation (empty list if valid)."""
    out: list[Diagnostic] = []
    for i, f in enumerate(score.frames):
        _check_melodic(out, i, "P1", f.p1_note, f.p1_vel, f.p1_timbre,
                       PULSE_NOTE_MIN, PULSE_TIMBRE_MAX)
        _check_melodic(out, i, "P2", f.p2_note, f.p2_vel, f.p2_timbre,
                       PULSE_NOTE_MIN, PULSE_TIMBRE_MAX)
        if not (f.tr_note == 0 or TRIANGLE_NOTE_MIN <= f.tr_note <= TRIANGLE_NOTE_MAX):
            out.append(Diagnostic(i, "TR",
                       f"note {f.tr_note} outside {{0}} u [{TRIANGLE_NOTE_MIN},108]"))
        if not 0 <= f.no_note <= NOISE_NOTE_MAX:
            out.append(Diagnostic(i, "NO", f"note {f.no_note} outside [0,{NOISE_NOTE_MAX}]"))
        if not 0 <= f.no_vel <= VELOCITY_MAX:
            out.append(Diagnostic(i, "NO", f"velocity {f.no_vel} outside [0,{VELOCITY_MAX}]"))
        if not 0 <= f.no_timbre <= NOISE_TIMBRE_MAX:
            out.append(Diagnostic(i, "NO", f"timbre {f.no_timbre} outside [0,{NOISE_TIMBRE_MAX}]"))
        if f.no_note == 0 and (f.no_vel != 0 or f.no_timbre != 0):
            out.append(Diagnostic(i, "NO", "off state must be (0, 0, 0)"))
        if f.no_note != 0 and f.no_vel == 0:
            out.append(Diagnostic(i, "NO", "sounding note with velocity 0"))
    return out


def voice_state_space(voice: str) -> set[tuple]:
    """Enumerate the distinct per-frame states a voice can take.

    Sizes: pulse 1 + 77*15*4 = 4621, triangle 1 + 88 = 89,
    noise 1 + 16*15*2 = 481.
    """
    if voice in ("P1", "P2"):
        states = {(0, 0, 0)}
        for n in range(PULSE_NOTE_MIN, PULSE_NOTE_MAX + 1):
            for v in range(1, VELOCITY_MAX + 1):
                for t in range(PULSE_TIMBRE_MAX + 1):
                    states.add((n, v, t))
        return states
    if voice == "TR":
        return {(0,)} | {(n,) for n in range(TRIANGLE_NOTE_MIN, TRIANGLE_NOTE_MAX + 1)}
    if voice == "NO":
        states = {(0, 0, 0)}
        for n in range(1, NOISE_NOTE_MAX + 1):
            for v in range(1, VELOCITY_MAX + 1):
                for m in range(NOISE_TIMBRE_MAX + 1):
                    states.add((n, v, m))
        return states
    raise ValueError(f"unknown voice {voice!r}")


# ---------------------------------------------------------------------------
# NESSCORE text format
#
# line 1: "NESSCORE 1 <rate_hz> <T>"
# then T lines of 10 space-separated decimal integers:
# p1.note p1.vel p1.timbre p2.note p2.vel p2.timbre tr.note no.note no.vel no.timbre

_FIELD_BOUNDS = (
    ("p1.note", 0, 108), ("p1.vel", 0, 15), ("p1.timbre", 0, 3),
    ("p2.note", 0, 108), ("p2.vel", 0, 15), ("p2.timbre", 0, 3),
    ("tr.note", 0, 108), ("no.note", 0, 16), ("no.vel", 0, 15), ("no.timbre", 0, 1),
)


def _format_rate(rate_hz: float) -> str:
    return str(int(rate_hz)) if float(rate_hz).is_integer() else repr(float(rate_hz))


def write_score_text(score: ExpressiveScore) -> bytes:
    lines = [f"NESSCORE 1 {_format_rate(score.rate_hz)} {len(score.frames)}"]
    lines.extend(" ".join(str(v) for v in f) for f in score.frames)
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_score_text(data: bytes) -> ExpressiveScore:
    text = data.decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedHeader("empty file")
    head = lines[0].split(" ")
    if len(head) != 4 or head[0] != "NESSCORE":
        raise MalformedHeader(f"bad header line {lines[0]!r}")
    if head[1] != "1":
        raise MalformedHeader(f"unsupported version {head[1]!r}")
    try:
        rate_hz = float(head[2])
        n_frames = int(head[3])
    except ValueError as exc:
        raise MalformedHeader(f"bad header field: {exc}") from None
    if rate_hz <= 0 or n_frames < 0:
        raise MalformedHeader(f"rate {rate_hz} / frame count {n_frames} out of range")
    if len(lines) - 1 != n_frames:
        raise MalformedHeader(f"expected {n_frames} frame lines, found {len(lines) - 1}")
    frames = []
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(" ")
        if len(parts) != 10:
            raise BadFieldValue(i, f"expected 10 fields, found {len(parts)}")
        values = []
        for (name, lo, hi), part in zip(_FIELD_BOUNDS, parts):
            try:
                v = int(part)
            except ValueError:
                raise BadFieldValue(i, f"{name}: {part!r} is not an integer") from None
            if not lo <= v <= hi:
                raise BadFieldValue(i, f"{name}: {v} outside [{lo},{hi}]")
            values.append(v)
        frames.append(ExpressiveFrame(*values))
    return ExpressiveScore(rate_hz=rate_hz, frames=frames)


# ---------------------------------------------------------------------------
# corpus split

@dataclass(frozen=True)
class CorpusEntry:
    """One song in a corpus manifest."""

    song_id: str
    game_id: str
    composer_ids: frozenset[str]
    score_ref: str | None = None


SPLIT_NAMES = ("train", "valid", "test")


def split_corpus(entries: Sequence[CorpusEntry], ratios: tuple = (8, 1, 1),
                 seed: int = 0) -> dict[str, list[CorpusEntry]]:
    """Assign entries to train/valid/test so no composer spans subsets.

    Connected components of the game-composer graph are the split units;
    they are shuffled by seed and each is assigned to the subset with the
    lowest fill fraction (song count / target), ties in train/valid/test
    order.  Deterministic given the seed.
    """
    if len(ratios) != len(SPLIT_NAMES) or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")

    parent: dict = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        parent.setdefault(a, a)
        parent.setdefault(b, b)
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for e in entries:
        if not e.composer_ids:
            raise ValueError(f"entry {e.song_id!r} has no composers")
        gkey = ("game", e.game_id)
        parent.setdefault(gkey, gkey)
        for c in e.composer_ids:
            union(gkey, ("composer", c))

    by_root: dict = {}
    for e in entries:
        by_root.setdefault(find(("game", e.game_id)), []).append(e)

    components = sorted(by_root.values(), key=lambda comp: min(e.song_id for e in comp))
    random.Random(seed).shuffle(components)

    total = len(entries)
    ratio_sum = sum(ratios)
    targets = [total * r / ratio_sum for r in ratios]
    counts = [0, 0, 0]
    out: dict[str, list[CorpusEntry]] = {name: [] for name in SPLIT_NAMES}
    for comp in components:
        i = min(range(3), key=lambda s: counts[s] / targets[s])
        out[SPLIT_NAMES[i]].extend(comp)
        counts[i] += len(comp)
    return out

"""Binary play/articulate note grids and training batches.

A :class:`NoteStateMatrix` holds one (p, a) pair per (note row, time step):
p=1 while the note sounds, a=1 on the step where it is (re)struck.  The
encoding never contains p=0, a=1.  Quantization assumes 4/4 meter with a
fixed number of steps per measure; grids are padded to whole measures so
step 0 of any measure-aligned window is a downbeat.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .midi_io import MidiDocument, NoteEvent

CACHE_MAGIC = b"NSM1"
DEFAULT_LOW_NOTE = 21  # A0; 88 piano keys up to C8
DEFAULT_N_NOTES = 88
DEFAULT_STEPS_PER_MEASURE = 16


class EmptyDocument(Exception):
    """No quantizable notes in the document."""


class NoEligibleSource(Exception):
    """Every corpus matrix is shorter than the requested window."""


class InvariantViolation(Exception):
    """A cell with a=1, p=0 was encountered."""


@dataclass
class NoteStateMatrix:
    low_note: int
    cells: np.ndarray  # (n_notes, n_steps, 2) uint8, [..., 0]=play [..., 1]=articulate
    n_dropped_notes: int = field(default=0, compare=False)

    @property
    def n_notes(self) -> int:
        return self.cells.shape[0]

    @property
    def n_steps(self) -> int:
        return self.cells.shape[1]

    def __eq__(self, other):
        if not isinstance(other, NoteStateMatrix):
            return NotImplemented
        return self.low_note == other.low_note and np.array_equal(self.cells, other.cells)

    def validate(self):
        bad = (self.cells[..., 1] == 1) & (self.cells[..., 0] == 0)
        if bad.any():
            note, step = np.argwhere(bad)[0]
            raise InvariantViolation(f"articulated but unplayed cell at note {note}, step {step}")


@dataclass
class NoteStateBatch:
    low_note: int
    cells: np.ndarray  # (batch, n_notes, n_steps, 2) uint8

    @property
    def batch_size(self) -> int:
        return self.cells.shape[0]

    @property
    def n_notes(self) -> int:
        return self.cells.shape[1]

    @property
    def n_steps(self) -> int:
        return self.cells.shape[2]


def quantize(
    doc: MidiDocument,
    steps_per_measure: int = DEFAULT_STEPS_PER_MEASURE,
    low_note: int = DEFAULT_LOW_NOTE,
    n_notes: int = DEFAULT_N_NOTES,
) -> NoteStateMatrix:
    """Snap tick-timed notes onto the step grid.

    Step duration is ticks_per_quarter*4/steps_per_measure ticks (4/4
    assumed).  Onsets snap by floor, offsets by ceil, so a note shorter
    than one step still occupies it.  Overlapping same-pitch notes merge,
    re-articulating at each onset.  Out-of-range pitches are dropped and
    counted on the returned matrix.
    """
    if doc.ticks_per_quarter <= 0:
        raise ValueError("document ticks_per_quarter must be positive")
    if steps_per_measure % 4 != 0:
        raise ValueError("steps_per_measure must be divisible by 4")

    ticks_per_measure = doc.ticks_per_quarter * 4
    in_range = [ev for ev in doc.notes if low_note <= ev.pitch < low_note + n_notes]
    dropped = len(doc.notes) - len(in_range)
    if not in_range:
        raise EmptyDocument(
            "no quantizable notes" if not doc.notes else "all notes outside the pitch range"
        )

    # exact integer snapping: step = tick * steps_per_measure / ticks_per_measure
    def floor_step(tick: int) -> int:
        return tick * steps_per_measure // ticks_per_measure

    def ceil_step(tick: int) -> int:
        return -((-tick * steps_per_measure) // ticks_per_measure)

    last = max(ceil_step(ev.offset_tick) for ev in in_range)
    n_steps = -(-last // steps_per_measure) * steps_per_measure  # pad to whole measures
    cells = np.zeros((n_notes, n_steps, 2), dtype=np.uint8)
    for ev in in_range:
        row = ev.pitch - low_note
        on = floor_step(ev.onset_tick)
        off = ceil_step(ev.offset_tick)
        cells[row, on:off, 0] = 1
        cells[row, on, 1] = 1
    return NoteStateMatrix(low_note=low_note, cells=cells, n_dropped_notes=dropped)


def sample_batch(
    matrices: list[NoteStateMatrix],
    batch_size: int,
    seq_len: int,
    rng: np.random.Generator,
    steps_per_measure: int = DEFAULT_STEPS_PER_MEASURE,
) -> NoteStateBatch:
    """Draw windows uniformly over all measure-aligned (matrix, start) pairs."""
    if not matrices:
        raise NoEligibleSource("empty corpus")
    low_note = matrices[0].low_note
    n_notes = matrices[0].n_notes
    for m in matrices:
        if m.low_note != low_note or m.n_notes != n_notes:
            raise ValueError("corpus matrices disagree on (low_note, n_notes)")

    slots = [
        (i, start)
        for i, m in enumerate(matrices)
        for start in range(0, m.n_steps - seq_len + 1, steps_per_measure)
    ]
    if not slots:
        raise NoEligibleSource(f"no matrix has {seq_len} or more steps")

    picks = rng.integers(0, len(slots), size=batch_size)
    cells = np.empty((batch_size, n_notes, seq_len, 2), dtype=np.uint8)
    for b, pick in enumerate(picks):
        i, start = slots[pick]
        cells[b] = matrices[i].cells[:, start : start + seq_len, :]
    return NoteStateBatch(low_note=low_note, cells=cells)


def to_events(m: NoteStateMatrix, ticks_per_step: int) -> list[NoteEvent]:
    """Turn p-runs back into notes, splitting at every interior articulation."""
    if ticks_per_step <= 0:
        raise ValueError("ticks_per_step must be positive")
    m.validate()
    events = []
    play = m.cells[..., 0]
    artic = m.cells[..., 1]
    n_steps = m.n_steps
    for row in range(m.n_notes):
        p = play[row]
        a = artic[row]
        step = 0
        while step < n_steps:
            if not p[step]:
                step += 1
                continue
            start = step
            step += 1
            while step < n_steps and p[step] and not a[step]:
                step += 1
            events.append(
                NoteEvent(
                    pitch=m.low_note + row,
                    onset_tick=start * ticks_per_step,
                    offset_tick=step * ticks_per_step,
                )
            )
    events.sort()
    return events


def save_matrix(m: NoteStateMatrix, path: str | Path):
    """Flat binary cache: magic NSM1, low_note/N/T as little-endian i32,
    then row-major (p, a) bits packed MSB-first."""
    bits = m.cells.reshape(-1)
    packed = np.packbits(bits)
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<iii", m.low_note, m.n_notes, m.n_steps))
        fh.write(packed.tobytes())


def load_matrix(path: str | Path) -> NoteStateMatrix:
    data = Path(path).read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a note-grid cache file")
    low_note, n_notes, n_steps = struct.unpack("<iii", data[4:16])
    n_bits = n_notes * n_steps * 2
    packed = np.frombuffer(data[16:], dtype=np.uint8)
    if packed.size * 8 < n_bits:
        raise ValueError(f"{path}: truncated cache file")
    bits = np.unpackbits(packed, count=n_bits)
    cells = bits.reshape(n_notes, n_steps, 2)
    return NoteStateMatrix(low_note=low_note, cells=cells)


def load_corpus(path: str | Path) -> list[NoteStateMatrix]:
    """Load one .nsm file or every *.nsm in a directory (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.nsm"))
        if not files:
            raise FileNotFoundError(f"no *.nsm files in {path}")
        return [load_matrix(f) for f in files]
    return [load_matrix(path)]

"""Standard MIDI File reader/writer.

Implements the SMF 1.0 chunk layout directly: big-endian chunk lengths,
variable-length delta times, running status, meta and SysEx events.  The
reader accepts formats 0 and 1 and resolves note-on/note-off pairs into
:class:`NoteEvent` records with absolute tick timing; the writer emits a
single-track format-0 file.  Channel 10 (index 9, percussion) is dropped on
read; the model is pitched-note only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

HDR_MAGIC = b"MThd"
TRK_MAGIC = b"MTrk"
DEFAULT_TEMPO = 500_000  # microseconds per quarter note = 120 BPM
WRITE_VELOCITY = 80
PERCUSSION_CHANNEL = 9
VLQ_MAX = (1 << 28) - 1


class MidiError(Exception):
    """Base class for malformed-input errors raised by the codec."""


class MalformedHeader(MidiError):
    """Missing/invalid MThd chunk, unsupported format, or bad division."""


class TruncatedChunk(MidiError):
    """Chunk or event data ends before its declared extent."""


class UnmatchedNoteOn(MidiError):
    """A note-on was never closed by a note-off on its track/channel."""

    def __init__(self, pitch: int, tick: int, track: int):
        super().__init__(f"note-on pitch {pitch} at tick {tick} on track {track} never closed")
        self.pitch = pitch
        self.tick = tick
        self.track = track


@dataclass(frozen=True, order=True)
class NoteEvent:
    """One sounding note: [onset_tick, offset_tick) at a MIDI pitch."""

    pitch: int
    onset_tick: int
    offset_tick: int
    track: int = 0

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if self.offset_tick <= self.onset_tick:
            raise ValueError(f"offset {self.offset_tick} not after onset {self.onset_tick}")


@dataclass(frozen=True)
class TrackEvent:
    """Raw timed event kept for inspection; tick is absolute."""

    tick: int
    kind: str  # note_on | note_off | tempo | end_of_track
    data: tuple = ()


@dataclass
class MidiDocument:
    format: int
    ticks_per_quarter: int
    tracks: list[list[TrackEvent]] = field(default_factory=list)
    notes: list[NoteEvent] = field(default_factory=list)
    tempo_us_per_quarter: int = DEFAULT_TEMPO
    n_percussion_dropped: int = field(default=0, compare=False)


def encode_vlq(value: int) -> bytes:
    """Variable-length quantity: 7 bits per byte, high bit marks continuation."""
    if not 0 <= value <= VLQ_MAX:
        raise ValueError(f"VLQ value {value} outside 0..2^28-1")
    out = bytearray([value & 0x7F])
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    out.reverse()
    return bytes(out)


class _Reader:
    """Bounds-checked byte cursor over one chunk."""

    __slots__ = ("data", "pos", "end")

    def __init__(self, data: bytes, pos: int, end: int):
        self.data = data
        self.pos = pos
        self.end = end

    def left(self) -> int:
        return self.end - self.pos

    def u8(self) -> int:
        if self.pos >= self.end:
            raise TruncatedChunk("event data runs past chunk end")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def peek(self) -> int:
        if self.pos >= self.end:
            raise TruncatedChunk("event data runs past chunk end")
        return self.data[self.pos]

    def skip(self, n: int):
        if self.pos + n > self.end:
            raise TruncatedChunk("event data runs past chunk end")
        self.pos += n

    def vlq(self) -> int:
        value = 0
        for _ in range(4):
            b = self.u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise TruncatedChunk("variable-length quantity longer than 4 bytes")


def decode_vlq(data: bytes) -> tuple[int, int]:
    """Decode one VLQ from the start of *data*; returns (value, bytes used)."""
    r = _Reader(data, 0, len(data))
    value = r.vlq()
    return value, r.pos


def _data_byte(r: _Reader) -> int:
    b = r.u8()
    if b & 0x80:
        raise TruncatedChunk(f"expected data byte, got status 0x{b:02X}")
    return b


def _parse_track(data: bytes, start: int, end: int, track_index: int):
    """One MTrk chunk -> (raw events, note events, first tempo or None, dropped count)."""
    r = _Reader(data, start, end)
    raw: list[TrackEvent] = []
    notes: list[NoteEvent] = []
    # FIFO of open onsets per (channel, pitch): overlapping same-pitch notes
    # close in onset order.
    open_notes: dict[tuple[int, int], list[int]] = {}
    tempo = None
    tick = 0
    status = None
    dropped = 0

    while r.left() > 0:
        tick += r.vlq()
        b = r.peek()
        if b >= 0x80:
            status = b
            r.skip(1)
        elif status is None:
            raise TruncatedChunk("event data before any status byte")

        if status == 0xFF:
            meta = r.u8()
            length = r.vlq()
            if meta == 0x2F:
                r.skip(length)
                raw.append(TrackEvent(tick, "end_of_track"))
                break
            if meta == 0x51:
                if length != 3:
                    raise TruncatedChunk("tempo meta event not 3 bytes")
                t = (r.u8() << 16) | (r.u8() << 8) | r.u8()
                raw.append(TrackEvent(tick, "tempo", (t,)))
                if tempo is None:
                    tempo = t
            else:
                r.skip(length)
        elif status in (0xF0, 0xF7):
            r.skip(r.vlq())  # SysEx skipped by length, never interpreted
        else:
            kind = status & 0xF0
            channel = status & 0x0F
            if kind in (0xC0, 0xD0):
                _data_byte(r)
                continue
            d1 = _data_byte(r)
            d2 = _data_byte(r)
            if kind not in (0x80, 0x90):
                continue
            if channel == PERCUSSION_CHANNEL:
                if kind == 0x90 and d2 > 0:
                    dropped += 1
                continue
            is_on = kind == 0x90 and d2 > 0
            if is_on:
                raw.append(TrackEvent(tick, "note_on", (channel, d1, d2)))
                open_notes.setdefault((channel, d1), []).append(tick)
            else:
                raw.append(TrackEvent(tick, "note_off", (channel, d1)))
                queue = open_notes.get((channel, d1))
                if queue:
                    onset = queue.pop(0)
                    if tick > onset:
                        notes.append(NoteEvent(d1, onset, tick, track_index))
                    # zero-length notes (off at the on tick) are dropped

    for (channel, pitch), queue in open_notes.items():
        if queue:
            raise UnmatchedNoteOn(pitch, queue[0], track_index)
    return raw, notes, tempo, dropped


def parse_midi(data: bytes) -> MidiDocument:
    """Decode an SMF byte string into a :class:`MidiDocument`.

    Running status is resolved, delta times are accumulated to absolute
    ticks, and note-on with velocity 0 is treated as note-off.  Unknown
    chunk types are skipped; SysEx payloads are skipped by length.
    """
    if len(data) < 14 or data[:4] != HDR_MAGIC:
        raise MalformedHeader("missing MThd header chunk")
    hlen, fmt, ntrks, division = struct.unpack(">IHHH", data[4:14])
    if hlen != 6:
        raise MalformedHeader(f"MThd length {hlen}, expected 6")
    if fmt not in (0, 1):
        raise MalformedHeader(f"SMF format {fmt} unsupported (only 0 and 1)")
    if division & 0x8000:
        raise MalformedHeader("SMPTE time division unsupported")
    if division == 0:
        raise MalformedHeader("ticks per quarter note must be positive")

    doc = MidiDocument(format=fmt, ticks_per_quarter=division)
    pos = 8 + hlen
    track_index = 0
    tempo_found = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise TruncatedChunk("trailing bytes too short for a chunk header")
        magic = data[pos : pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4 : pos + 8])
        if pos + 8 + length > len(data):
            raise TruncatedChunk(f"chunk {magic!r} declares {length} bytes past end of data")
        if magic == TRK_MAGIC:
            raw, notes, tempo, dropped = _parse_track(data, pos + 8, pos + 8 + length, track_index)
            doc.tracks.append(raw)
            doc.notes.extend(notes)
            doc.n_percussion_dropped += dropped
            if tempo is not None and not tempo_found:
                doc.tempo_us_per_quarter = tempo  # later tempo changes are ignored
                tempo_found = True
            track_index += 1
        # unknown chunk types are skipped, per the SMF alien-chunk rule
        pos += 8 + length
    if track_index < ntrks:
        raise TruncatedChunk(f"header declares {ntrks} tracks, found {track_index}")
    doc.notes.sort()
    return doc


def write_midi(
    events: list[NoteEvent],
    ticks_per_quarter: int,
    tempo_us_per_quarter: int = DEFAULT_TEMPO,
) -> bytes:
    """Emit a format-0 SMF with one tempo meta-event and fixed velocity 80.

    Note-offs sort before note-ons at the same tick so back-to-back events of
    one pitch re-pair correctly on read.
    """
    if ticks_per_quarter <= 0 or ticks_per_quarter > 0x7FFF:
        raise ValueError("ticks_per_quarter must be in 1..32767")

    timeline: list[tuple[int, int, bytes]] = []
    for ev in events:
        timeline.append((ev.onset_tick, 1, bytes([0x90, ev.pitch, WRITE_VELOCITY])))
        timeline.append((ev.offset_tick, 0, bytes([0x80, ev.pitch, 0])))
    timeline.sort(key=lambda item: (item[0], item[1], item[2]))

    body = bytearray()
    body += encode_vlq(0) + bytes([0xFF, 0x51, 0x03]) + struct.pack(">I", tempo_us_per_quarter)[1:]
    last = 0
    for tick, _, msg in timeline:
        body += encode_vlq(tick - last) + msg
        last = tick
    body += encode_vlq(0) + bytes([0xFF, 0x2F, 0x00])

    out = bytearray()
    out += HDR_MAGIC + struct.pack(">IHHH", 6, 0, 1, ticks_per_quarter)
    out += TRK_MAGIC + struct.pack(">I", len(body)) + body
    return bytes(out)

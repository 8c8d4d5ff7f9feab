"""Per-cell feature expansion feeding the time-axis stack.

Every (note, step) cell becomes one vector of five concatenated groups:

  1. scaled MIDI note number, 1 value
  2. pitch-class one-hot, 12 values
  3. (p, a) window over the surrounding notes at this step, 2*(2w+1) values
  4. played-note count per pitch class at this step, 12 values
  5. position within the measure as binary digits, LSB first

The expansion at (n, t) depends only on column t, so it is pure and
order-free across batch, notes, and steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .note_state import DEFAULT_STEPS_PER_MEASURE, NoteStateBatch

N_PITCH_CLASSES = 12


@dataclass(frozen=True)
class KernelConfig:
    window_half_width: int = 12
    steps_per_measure: int = DEFAULT_STEPS_PER_MEASURE

    def __post_init__(self):
        if self.window_half_width < 1:
            raise ValueError("window_half_width must be >= 1")
        s = self.steps_per_measure
        if s < 1 or s & (s - 1):
            raise ValueError("steps_per_measure must be a power of two")

    @property
    def beat_bits(self) -> int:
        return self.steps_per_measure.bit_length() - 1

    @property
    def window_len(self) -> int:
        return 2 * (2 * self.window_half_width + 1)

    @property
    def feature_len(self) -> int:
        return 1 + N_PITCH_CLASSES + self.window_len + N_PITCH_CLASSES + self.beat_bits

    # segment slices, in layout order
    @property
    def note_number_slice(self) -> slice:
        return slice(0, 1)

    @property
    def pitch_class_slice(self) -> slice:
        return slice(1, 1 + N_PITCH_CLASSES)

    @property
    def window_slice(self) -> slice:
        start = 1 + N_PITCH_CLASSES
        return slice(start, start + self.window_len)

    @property
    def class_count_slice(self) -> slice:
        start = 1 + N_PITCH_CLASSES + self.window_len
        return slice(start, start + N_PITCH_CLASSES)

    @property
    def beat_slice(self) -> slice:
        return slice(self.feature_len - self.beat_bits, self.feature_len)


def expand(
    batch: NoteStateBatch,
    cfg: KernelConfig,
    dtype=np.float32,
    step_offset: int = 0,
) -> np.ndarray:
    """Expand a batch into (B, N, T, feature_len).

    *step_offset* shifts the beat-position group; generation passes the
    absolute step index so measures keep counting across sampled steps.
    """
    cells = batch.cells
    n_batch, n_notes, n_steps, _ = cells.shape
    w = cfg.window_half_width
    out = np.zeros((n_batch, n_notes, n_steps, cfg.feature_len), dtype=dtype)

    midi_numbers = batch.low_note + np.arange(n_notes)
    out[:, :, :, 0] = (midi_numbers / 127.0).astype(dtype)[None, :, None]

    pitch_class = midi_numbers % N_PITCH_CLASSES
    class_onehot = np.zeros((n_notes, N_PITCH_CLASSES), dtype=dtype)
    class_onehot[np.arange(n_notes), pitch_class] = 1
    out[:, :, :, cfg.pitch_class_slice] = class_onehot[None, :, None, :]

    # window: zero-pad the note axis, slide a 2w+1 view, order low->high
    # with p before a inside each slot
    padded = np.zeros((n_batch, n_notes + 2 * w, n_steps, 2), dtype=dtype)
    padded[:, w : w + n_notes] = cells
    windows = sliding_window_view(padded, 2 * w + 1, axis=1)  # (B, N, T, 2, 2w+1)
    out[:, :, :, cfg.window_slice] = windows.transpose(0, 1, 2, 4, 3).reshape(
        n_batch, n_notes, n_steps, cfg.window_len
    )

    play = cells[..., 0].astype(dtype)  # (B, N, T)
    counts = np.einsum("bnt,nc->btc", play, class_onehot)  # exact: small integer sums
    out[:, :, :, cfg.class_count_slice] = counts[:, None, :, :]

    beat = (step_offset + np.arange(n_steps)) % cfg.steps_per_measure
    bits = (beat[:, None] >> np.arange(cfg.beat_bits)[None, :]) & 1  # LSB first
    out[:, :, :, cfg.beat_slice] = bits.astype(dtype)[None, None, :, :]
    return out

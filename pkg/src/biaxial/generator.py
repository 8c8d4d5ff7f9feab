"""Autoregressive composition.

The time-axis stack advances one step at a time over the previously
generated (or primed) column; the note-axis stack then runs from the lowest
note upward, drawing each (play, articulate) pair from its Bernoulli
probabilities and feeding the drawn pair into the next note's input.  A
play sample of 0 forces the articulation sample to 0, so the generated grid
never contains the unplayed-but-articulated state.

The time-axis update goes through the same stack_step used by training
forwards; no math is duplicated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lstm_core
from .input_kernel import expand
from .midi_io import write_midi
from .note_state import NoteStateBatch, NoteStateMatrix, to_events
from .trainer import Checkpoint


class InvalidPrimer(Exception):
    """Primer note range does not match the model."""


@dataclass
class GenerationConfig:
    n_steps: int
    seed: int = 0
    primer: NoteStateMatrix | None = None
    temperature: float = 1.0

    def __post_init__(self):
        if self.n_steps <= 0:
            raise ValueError("n_steps must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class SampleTrace:
    matrix: NoteStateMatrix
    probabilities: np.ndarray  # (n_notes, n_steps, 2) sampling probabilities
    steps_per_measure: int


def generate(ckpt: Checkpoint, cfg: GenerationConfig) -> SampleTrace:
    """Sample cfg.n_steps new columns, deterministic in (checkpoint, seed)."""
    mdl = ckpt.model_config
    params = ckpt.params
    n_notes = mdl.n_notes
    dtype = params.out_W.dtype
    rng = np.random.default_rng(cfg.seed)

    if cfg.primer is not None and (
        cfg.primer.low_note != mdl.low_note or cfg.primer.n_notes != n_notes
    ):
        raise InvalidPrimer(
            f"primer range ({cfg.primer.low_note}, {cfg.primer.n_notes}) does not match "
            f"model ({mdl.low_note}, {n_notes})"
        )

    time_wt = lstm_core.transpose_weights(params.time_layers)
    note_wt = lstm_core.transpose_weights(params.note_layers)
    time_states = lstm_core.zero_states(params.time_layers, n_notes, dtype)

    def advance(column: np.ndarray, offset: int):
        """Feed one (N, 2) column through the time axis; returns (N, h_time)."""
        nonlocal time_states
        wrapped = NoteStateBatch(low_note=mdl.low_note, cells=column[None, :, None, :])
        feats = expand(wrapped, mdl.kernel, dtype=dtype, step_offset=offset)[0, :, 0, :]
        y, time_states, _ = lstm_core.stack_step(
            feats, time_states, params.time_layers, weight_t=time_wt
        )
        return y

    spm = mdl.kernel.steps_per_measure
    if cfg.primer is not None:
        for t in range(cfg.primer.n_steps):
            conditioning = advance(cfg.primer.cells[:, t, :], t)
        first_offset = cfg.primer.n_steps
    else:
        # cold start: one silent column placed just before a downbeat
        rest = np.zeros((n_notes, 2), dtype=np.uint8)
        conditioning = advance(rest, spm - 1)
        first_offset = spm

    inv_temp = 1.0 / cfg.temperature
    columns = np.zeros((n_notes, cfg.n_steps, 2), dtype=np.uint8)
    probs = np.zeros((n_notes, cfg.n_steps, 2), dtype=np.float32)
    for k in range(cfg.n_steps):
        note_states = lstm_core.zero_states(params.note_layers, 1, dtype)
        prev = np.zeros((1, 2), dtype=dtype)
        for n in range(n_notes):
            x = np.concatenate([conditioning[n : n + 1], prev], axis=1)
            top, note_states, _ = lstm_core.stack_step(
                x, note_states, params.note_layers, weight_t=note_wt
            )
            logits = top[0] @ params.out_W.T + params.out_b
            p_play = float(lstm_core.sigmoid(logits[0] * inv_temp))
            p_artic = float(lstm_core.sigmoid(logits[1] * inv_temp))
            play = rng.random() < p_play
            artic = bool(play and rng.random() < p_artic)
            probs[n, k] = (p_play, p_artic)
            columns[n, k] = (play, artic)
            prev = np.array([[play, artic]], dtype=dtype)
        if k + 1 < cfg.n_steps:
            conditioning = advance(columns[:, k, :], first_offset + k)

    matrix = NoteStateMatrix(low_note=mdl.low_note, cells=columns)
    return SampleTrace(matrix=matrix, probabilities=probs, steps_per_measure=spm)


def emit_midi(
    trace: SampleTrace,
    ticks_per_step: int,
    path: str | Path,
    tempo_us_per_quarter: int = 500_000,
) -> bytes:
    """Write the trace as a format-0 SMF; returns the bytes written."""
    events = to_events(trace.matrix, ticks_per_step)
    ticks_per_quarter = ticks_per_step * trace.steps_per_measure // 4
    data = write_midi(events, ticks_per_quarter, tempo_us_per_quarter)
    Path(path).write_bytes(data)
    return data


def write_probabilities(trace: SampleTrace, path: str | Path):
    """Audit side file: one line per cell with the sampling probabilities."""
    with open(path, "w") as fh:
        fh.write("step,note,play_prob,artic_prob,play,artic\n")
        n_notes, n_steps, _ = trace.probabilities.shape
        for t in range(n_steps):
            for n in range(n_notes):
                pp, pa = trace.probabilities[n, t]
                p, a = trace.matrix.cells[n, t]
                fh.write(f"{t},{n},{pp:.6f},{pa:.6f},{p},{a}\n")

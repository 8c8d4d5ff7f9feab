import numpy as np
import pytest

from biaxial.input_kernel import KernelConfig
from biaxial.midi_io import NoteEvent, write_midi
from biaxial.model import ModelConfig, init_model_params
from biaxial.note_state import NoteStateMatrix
from biaxial.trainer import Checkpoint, OptimizerConfig, init_optimizer_state


def excerpt_events(ticks_per_step=120):
    """Synthetic 8-measure excerpt: two chord strikes per measure plus an
    eighth-note melody; averages 4 played notes per step."""
    chords = [
        (48, 52, 55), (45, 48, 52), (41, 45, 48), (43, 47, 50),
        (48, 52, 55), (45, 48, 52), (41, 45, 48), (43, 47, 50),
    ]
    melody = [72, 74, 76, 72, 76, 72, 74, 71, 72, 69, 71, 67, 69, 71, 72, 74]
    events = []
    for measure, chord in enumerate(chords):
        base = measure * 16
        for half in (0, 8):
            for pitch in chord:
                events.append(
                    NoteEvent(pitch, (base + half) * ticks_per_step,
                              (base + half + 8) * ticks_per_step)
                )
        for k in range(8):
            pitch = melody[(measure * 8 + k) % len(melody)]
            on = (base + 2 * k) * ticks_per_step
            events.append(NoteEvent(pitch, on, on + 2 * ticks_per_step))
    return events


def excerpt_midi_bytes():
    return write_midi(excerpt_events(), 480)


@pytest.fixture(scope="session")
def excerpt_matrix():
    from biaxial.midi_io import parse_midi
    from biaxial.note_state import quantize

    return quantize(parse_midi(excerpt_midi_bytes()))


def random_events(rng, max_events=40, max_gap=200, max_dur=400):
    """Random note lists without same-pitch overlap (the writer's single
    channel cannot represent nested same-pitch notes unambiguously)."""
    events = []
    last_off = {}
    for _ in range(int(rng.integers(0, max_events + 1))):
        pitch = int(rng.integers(0, 128))
        onset = last_off.get(pitch, 0) + int(rng.integers(0, max_gap))
        offset = onset + int(rng.integers(1, max_dur))
        events.append(NoteEvent(pitch, onset, offset))
        last_off[pitch] = offset
    return sorted(events)


def random_canonical_matrix(rng, n_notes=30, n_measures=2, steps_per_measure=16, low_note=40):
    """Random grid in quantizer-image form: every play-run starts articulated,
    interior re-articulations allowed, and the last measure is non-empty."""
    n_steps = n_measures * steps_per_measure
    play = (rng.random((n_notes, n_steps)) < 0.15).astype(np.uint8)
    play[int(rng.integers(0, n_notes)), n_steps - 1] = 1  # keep the final measure occupied
    prev = np.zeros_like(play)
    prev[:, 1:] = play[:, :-1]
    run_start = play & (1 - prev)
    rearticulate = play & (rng.random(play.shape) < 0.2)
    artic = (run_start | rearticulate).astype(np.uint8)
    return NoteStateMatrix(low_note=low_note, cells=np.stack([play, artic], axis=-1))


def small_config(**overrides) -> ModelConfig:
    base = dict(
        time_layer_sizes=(6,),
        note_layer_sizes=(4,),
        kernel=KernelConfig(window_half_width=3, steps_per_measure=4),
        keep_prob=1.0,
        low_note=60,
        n_notes=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


def make_checkpoint(cfg: ModelConfig | None = None, seed=0, randomize_output=False) -> Checkpoint:
    cfg = cfg or small_config()
    rng = np.random.default_rng(seed)
    params = init_model_params(cfg, rng)
    if randomize_output:
        params.out_W[...] = rng.standard_normal(params.out_W.shape).astype(params.out_W.dtype)
        params.out_b[...] = rng.standard_normal(params.out_b.shape).astype(params.out_b.dtype)
    opt_cfg = OptimizerConfig()
    return Checkpoint(
        model_config=cfg,
        optimizer_config=opt_cfg,
        params=params,
        opt_state=init_optimizer_state(params, opt_cfg),
        iteration=0,
        rng_state=rng.bit_generator.state,
    )

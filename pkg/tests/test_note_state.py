import numpy as np
import pytest

from biaxial.midi_io import MidiDocument, NoteEvent
from biaxial.note_state import (
    EmptyDocument,
    InvariantViolation,
    NoEligibleSource,
    NoteStateMatrix,
    load_corpus,
    load_matrix,
    quantize,
    sample_batch,
    save_matrix,
    to_events,
)

from conftest import random_canonical_matrix


def doc_from(events, ticks_per_quarter=480):
    return MidiDocument(format=0, ticks_per_quarter=ticks_per_quarter, notes=list(events))


def test_quarter_note():
    m = quantize(doc_from([NoteEvent(60, 0, 480)]))
    row = m.cells[60 - 21]
    assert row[:, 0].tolist() == [1, 1, 1, 1] + [0] * 12
    assert row[:, 1].tolist() == [1] + [0] * 15
    assert m.cells.sum() == 5
    assert m.n_steps == 16  # padded to a whole measure


def test_empty_document():
    with pytest.raises(EmptyDocument):
        quantize(doc_from([]))


def test_all_notes_out_of_range():
    with pytest.raises(EmptyDocument):
        quantize(doc_from([NoteEvent(5, 0, 480)]))


def test_consecutive_eighths_rearticulate():
    m = quantize(doc_from([NoteEvent(60, 0, 240), NoteEvent(60, 240, 480)]))
    row = m.cells[39]
    assert row[:4, 0].tolist() == [1, 1, 1, 1]
    assert row[:4, 1].tolist() == [1, 0, 1, 0]


def test_short_note_preserved():
    m = quantize(doc_from([NoteEvent(60, 110, 115)]))
    assert m.cells[39, 0].tolist() == [1, 1]


def test_out_of_range_counted():
    m = quantize(doc_from([NoteEvent(10, 0, 480), NoteEvent(60, 0, 480)]))
    assert m.n_dropped_notes == 1


def test_same_pitch_overlap_merges():
    m = quantize(doc_from([NoteEvent(60, 0, 480), NoteEvent(60, 240, 960)]))
    row = m.cells[39]
    assert row[:8, 0].tolist() == [1] * 8
    assert row[:8, 1].tolist() == [1, 0, 1, 0, 0, 0, 0, 0]


def test_fractional_tick_grid_is_exact():
    # 100 ticks/quarter, 16 steps/measure -> 25 ticks per step
    m = quantize(doc_from([NoteEvent(60, 0, 100)], ticks_per_quarter=100))
    assert m.cells[39, :, 0].tolist() == [1, 1, 1, 1] + [0] * 12


def test_invalid_steps_per_measure():
    with pytest.raises(ValueError):
        quantize(doc_from([NoteEvent(60, 0, 480)]), steps_per_measure=10)


def test_invariant_a_le_p_always():
    rng = np.random.default_rng(7)
    for _ in range(50):
        events = []
        for _ in range(int(rng.integers(1, 20))):
            onset = int(rng.integers(0, 2000))
            events.append(
                NoteEvent(int(rng.integers(21, 109)), onset, onset + int(rng.integers(1, 500)))
            )
        m = quantize(doc_from(events))
        assert not ((m.cells[..., 1] == 1) & (m.cells[..., 0] == 0)).any()


def test_sample_batch_single_window():
    m = random_canonical_matrix(np.random.default_rng(0), n_measures=1)
    batch = sample_batch([m], 1, m.n_steps, np.random.default_rng(1))
    assert np.array_equal(batch.cells[0], m.cells)


def test_sample_batch_too_short():
    m = random_canonical_matrix(np.random.default_rng(0), n_measures=1)
    with pytest.raises(NoEligibleSource):
        sample_batch([m], 2, m.n_steps + 16, np.random.default_rng(1))


def test_sample_batch_deterministic():
    rng = np.random.default_rng(3)
    mats = [random_canonical_matrix(rng, n_measures=4) for _ in range(3)]
    a = sample_batch(mats, 4, 32, np.random.default_rng(42))
    b = sample_batch(mats, 4, 32, np.random.default_rng(42))
    assert np.array_equal(a.cells, b.cells)


def test_sample_batch_windows_are_measure_aligned_slices():
    rng = np.random.default_rng(5)
    m = random_canonical_matrix(rng, n_measures=4)
    batch = sample_batch([m], 16, 16, np.random.default_rng(0))
    starts = [0, 16, 32, 48]
    for row in batch.cells:
        assert any(np.array_equal(row, m.cells[:, s : s + 16]) for s in starts)


def test_sample_batch_range_mismatch():
    a = random_canonical_matrix(np.random.default_rng(0), low_note=40)
    b = random_canonical_matrix(np.random.default_rng(1), low_note=41)
    with pytest.raises(ValueError):
        sample_batch([a, b], 1, 16, np.random.default_rng(2))


def test_to_events_inverse_of_quantize_example():
    cells = np.zeros((88, 16, 2), dtype=np.uint8)
    cells[39, 0:4, 0] = 1
    cells[39, 0, 1] = 1
    events = to_events(NoteStateMatrix(21, cells), 120)
    assert events == [NoteEvent(60, 0, 480)]


def test_to_events_empty():
    assert to_events(NoteStateMatrix(21, np.zeros((88, 8, 2), np.uint8)), 120) == []


def test_to_events_rearticulation_split():
    cells = np.zeros((88, 16, 2), dtype=np.uint8)
    cells[39, 0:4, 0] = 1
    cells[39, 0, 1] = 1
    cells[39, 2, 1] = 1
    events = to_events(NoteStateMatrix(21, cells), 120)
    assert events == [NoteEvent(60, 0, 240), NoteEvent(60, 240, 480)]


def test_to_events_run_without_onset():
    cells = np.zeros((4, 8, 2), dtype=np.uint8)
    cells[1, 2:5, 0] = 1  # sustained with no articulation anywhere
    events = to_events(NoteStateMatrix(60, cells), 10)
    assert events == [NoteEvent(61, 20, 50)]


def test_to_events_invariant_violation():
    cells = np.zeros((4, 4, 2), dtype=np.uint8)
    cells[0, 0, 1] = 1  # articulated but not played
    with pytest.raises(InvariantViolation):
        to_events(NoteStateMatrix(60, cells), 10)


def test_quantize_idempotent_after_event_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(100):
        m1 = random_canonical_matrix(rng)
        events = to_events(m1, 120)
        m2 = quantize(doc_from(events), steps_per_measure=16,
                      low_note=m1.low_note, n_notes=m1.n_notes)
        assert m2 == m1


def test_cache_round_trip(tmp_path):
    m = random_canonical_matrix(np.random.default_rng(2))
    path = tmp_path / "m.nsm"
    save_matrix(m, path)
    assert load_matrix(path) == m


def test_cache_bad_magic(tmp_path):
    path = tmp_path / "bad.nsm"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_matrix(path)


def test_cache_truncated(tmp_path):
    m = random_canonical_matrix(np.random.default_rng(2))
    path = tmp_path / "m.nsm"
    save_matrix(m, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_matrix(path)


def test_load_corpus_directory_sorted(tmp_path):
    rng = np.random.default_rng(4)
    mats = {name: random_canonical_matrix(rng) for name in ("b", "a", "c")}
    for name, m in mats.items():
        save_matrix(m, tmp_path / f"{name}.nsm")
    loaded = load_corpus(tmp_path)
    assert loaded == [mats["a"], mats["b"], mats["c"]]


def test_load_corpus_empty_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path)

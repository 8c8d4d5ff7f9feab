"""Bi-axial LSTM model of polyphonic music.

Pipeline: MIDI files -> binary play/articulate note grids -> per-note feature
expansion -> time-axis LSTM stack -> note-axis LSTM stack with lower-note
conditioning -> Bernoulli play/articulate outputs.  Training maximizes the
masked log-likelihood of the next time step; generation samples one step at a
time and feeds the samples back.

Submodules are imported lazily so the CLI can pin BLAS thread counts before
numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "midi_io",
    "note_state",
    "input_kernel",
    "lstm_core",
    "model",
    "trainer",
    "checkpoint",
    "generator",
    "gradcheck",
    "config",
    "report",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f"{__name__}.{name}")
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

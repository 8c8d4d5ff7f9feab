"""The bi-axial model graph and its loss.

Stage 1 runs an LSTM stack along time, independently for every note with
one tied parameter set, so notes and batch elements collapse into one
effective batch.  Stage 2 runs an LSTM stack along the note axis, from the
lowest note upward, once per (batch element, target step); its input at
note n concatenates the last time-axis layer's activations for note n with
the known (p, a) pair of note n-1 at the target step (teacher forcing).
A final affine map produces two pre-sigmoid scores per cell; score index t
predicts the labels of source step t+1.

The loss is sigmoid cross-entropy in softplus form; the articulation
channel is multiplied by the play label, so unplayed cells contribute
neither loss nor gradient through that channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lstm_core
from .input_kernel import KernelConfig
from .note_state import NoteStateBatch


@dataclass(frozen=True)
class ModelConfig:
    time_layer_sizes: tuple[int, ...] = (64, 64)
    note_layer_sizes: tuple[int, ...] = (32, 16)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    keep_prob: float = 0.75
    low_note: int = 21
    n_notes: int = 88

    def __post_init__(self):
        if not self.time_layer_sizes or not self.note_layer_sizes:
            raise ValueError("layer size lists must be non-empty")
        if any(s < 1 for s in self.time_layer_sizes + self.note_layer_sizes):
            raise ValueError("all layer sizes must be >= 1")
        if not 0 < self.keep_prob <= 1:
            raise ValueError("keep_prob must be in (0, 1]")

    @property
    def note_input_size(self) -> int:
        # last time-axis layer activations plus the (p, a) pair of the note below
        return self.time_layer_sizes[-1] + 2

    def to_dict(self) -> dict:
        return {
            "time_layer_sizes": list(self.time_layer_sizes),
            "note_layer_sizes": list(self.note_layer_sizes),
            "window_half_width": self.kernel.window_half_width,
            "steps_per_measure": self.kernel.steps_per_measure,
            "keep_prob": self.keep_prob,
            "low_note": self.low_note,
            "n_notes": self.n_notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            time_layer_sizes=tuple(d["time_layer_sizes"]),
            note_layer_sizes=tuple(d["note_layer_sizes"]),
            kernel=KernelConfig(
                window_half_width=d["window_half_width"],
                steps_per_measure=d["steps_per_measure"],
            ),
            keep_prob=d["keep_prob"],
            low_note=d["low_note"],
            n_notes=d["n_notes"],
        )


@dataclass
class ModelParams:
    time_layers: list[lstm_core.LstmLayerParams]
    note_layers: list[lstm_core.LstmLayerParams]
    out_W: np.ndarray  # (2, h_note_last)
    out_b: np.ndarray  # (2,)

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        """Named parameter blocks in a fixed, checkpoint-stable order."""
        out = []
        for i, layer in enumerate(self.time_layers):
            out += [(f"time.{i}.W", layer.W), (f"time.{i}.U", layer.U), (f"time.{i}.b", layer.b)]
        for i, layer in enumerate(self.note_layers):
            out += [(f"note.{i}.W", layer.W), (f"note.{i}.U", layer.U), (f"note.{i}.b", layer.b)]
        out += [("out.W", self.out_W), ("out.b", self.out_b)]
        return out


def init_model_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    """LSTM weights uniform +-1/sqrt(fan_in); the final affine map starts at
    zero, so a fresh model emits exactly zero logits everywhere."""
    time_layers = lstm_core.init_lstm_params(
        cfg.kernel.feature_len, list(cfg.time_layer_sizes), rng, dtype
    )
    note_layers = lstm_core.init_lstm_params(
        cfg.note_input_size, list(cfg.note_layer_sizes), rng, dtype
    )
    return ModelParams(
        time_layers=time_layers,
        note_layers=note_layers,
        out_W=np.zeros((2, cfg.note_layer_sizes[-1]), dtype=dtype),
        out_b=np.zeros(2, dtype=dtype),
    )


def make_training_masks(
    cfg: ModelConfig,
    rng: np.random.Generator,
    batch_size: int,
    n_steps: int,
    dtype=np.float32,
):
    """Per-iteration dropout masks: constant along each stack's recurrent
    axis, so time masks vary over (batch, note) and note masks over
    (batch, target step)."""
    time_masks = lstm_core.make_dropout_masks(
        rng, batch_size * cfg.n_notes, list(cfg.time_layer_sizes), cfg.keep_prob, dtype
    )
    note_masks = lstm_core.make_dropout_masks(
        rng, batch_size * (n_steps - 1), list(cfg.note_layer_sizes), cfg.keep_prob, dtype
    )
    return time_masks, note_masks


@dataclass
class TimeAxisCache:
    stack: lstm_core.StackCache
    shape: tuple[int, int, int]  # (B, N, T)


def time_axis_forward(
    features: np.ndarray,
    params: ModelParams,
    masks: list[np.ndarray] | None = None,
):
    """(B, N, T, F) -> (B, N, T, h_time).

    Recurrence runs along t only; every note and batch element shares the
    same weights, so the output commutes with any permutation of the note
    axis of the input.
    """
    n_batch, n_notes, n_steps, n_feat = features.shape
    xs = np.ascontiguousarray(features.transpose(2, 0, 1, 3)).reshape(
        n_steps, n_batch * n_notes, n_feat
    )
    ys, _, stack_cache = lstm_core.stack_forward(xs, params.time_layers, masks=masks)
    h_top = params.time_layers[-1].hidden_size
    time_out = np.ascontiguousarray(
        ys.reshape(n_steps, n_batch, n_notes, h_top).transpose(1, 2, 0, 3)
    )
    return time_out, TimeAxisCache(stack=stack_cache, shape=(n_batch, n_notes, n_steps))


@dataclass
class NoteAxisCache:
    stack: lstm_core.StackCache
    top: np.ndarray  # (N, B*(T-1), h_note_last) masked top outputs
    shape: tuple[int, int, int]  # (B, N, T)


def note_axis_forward_train(
    time_out: np.ndarray,
    batch: NoteStateBatch,
    params: ModelParams,
    masks: list[np.ndarray] | None = None,
):
    """Teacher-forced note-axis pass over all target steps at once.

    Output logits have shape (B, N, T-1, 2); index t along the step axis
    predicts the labels at source step t+1.
    """
    n_batch, n_notes, n_steps, h_time = time_out.shape
    dtype = time_out.dtype
    labels = batch.cells.astype(dtype)

    # conditioning at note n = labels of note n-1 at the target step; zeros at n=0
    cond = np.zeros((n_batch, n_notes, n_steps - 1, 2), dtype=dtype)
    cond[:, 1:] = labels[:, :-1, 1:, :]

    n_eff = n_batch * (n_steps - 1)
    xs = np.empty((n_notes, n_eff, h_time + 2), dtype=dtype)
    xs[:, :, :h_time] = (
        np.ascontiguousarray(time_out[:, :, : n_steps - 1].transpose(1, 0, 2, 3))
        .reshape(n_notes, n_eff, h_time)
    )
    xs[:, :, h_time:] = np.ascontiguousarray(cond.transpose(1, 0, 2, 3)).reshape(
        n_notes, n_eff, 2
    )

    ys, _, stack_cache = lstm_core.stack_forward(xs, params.note_layers, masks=masks)
    h_note = params.note_layers[-1].hidden_size
    logits_flat = ys.reshape(n_notes * n_eff, h_note) @ params.out_W.T + params.out_b
    logits = np.ascontiguousarray(
        logits_flat.reshape(n_notes, n_batch, n_steps - 1, 2).transpose(1, 0, 2, 3)
    )
    return logits, NoteAxisCache(stack=stack_cache, top=ys, shape=(n_batch, n_notes, n_steps))


def _cross_entropy_terms(logits: np.ndarray, batch: NoteStateBatch):
    """Per-cell softplus-form CE for both channels; articulation masked by
    the play label.  Returns (ce_play, ce_artic) of shape (B, N, T-1)."""
    targets = batch.cells[:, :, 1:, :].astype(logits.dtype)
    lp = logits[..., 0]
    la = logits[..., 1]
    yp = targets[..., 0]
    ya = targets[..., 1]
    ce_play = np.maximum(lp, 0) - lp * yp + np.log1p(np.exp(-np.abs(lp)))
    ce_artic = (np.maximum(la, 0) - la * ya + np.log1p(np.exp(-np.abs(la)))) * yp
    return ce_play, ce_artic


def loss(logits: np.ndarray, batch: NoteStateBatch) -> tuple[float, float]:
    """Returns (loss, per_step_ll).

    loss: mean CE over batch, notes, steps, and both channels (masked
    articulation cells contribute zero).  per_step_ll: negative CE summed
    over notes and channels, averaged over steps and batch.
    """
    ce_play, ce_artic = _cross_entropy_terms(logits, batch)
    n_batch, n_notes, n_pred = ce_play.shape
    total = ce_play.sum(dtype=np.float64) + ce_artic.sum(dtype=np.float64)
    loss_val = total / (n_batch * n_notes * n_pred * 2)
    per_step_ll = -total / (n_batch * n_pred)
    return float(loss_val), float(per_step_ll)


def per_window_channel_ll(logits: np.ndarray, batch: NoteStateBatch):
    """Per-batch-element (play, articulation) per-step log-likelihood parts,
    each of shape (B,); their sum is the full per-step log-likelihood."""
    ce_play, ce_artic = _cross_entropy_terms(logits, batch)
    n_pred = ce_play.shape[2]
    play = -ce_play.sum(axis=(1, 2), dtype=np.float64) / n_pred
    artic = -ce_artic.sum(axis=(1, 2), dtype=np.float64) / n_pred
    return play, artic


def loss_backward(logits: np.ndarray, batch: NoteStateBatch) -> np.ndarray:
    """Gradient of loss() w.r.t. the logits."""
    targets = batch.cells[:, :, 1:, :].astype(logits.dtype)
    n_batch, n_notes, n_pred, _ = targets.shape
    sig = lstm_core.sigmoid(logits)
    d = np.empty_like(logits)
    d[..., 0] = sig[..., 0] - targets[..., 0]
    d[..., 1] = (sig[..., 1] - targets[..., 1]) * targets[..., 0]
    d /= n_batch * n_notes * n_pred * 2
    return d


def backward(
    d_logits: np.ndarray,
    time_cache: TimeAxisCache,
    note_cache: NoteAxisCache,
    params: ModelParams,
) -> dict[str, np.ndarray]:
    """Exact gradients for every parameter block, keyed like blocks()."""
    n_batch, n_notes, n_steps = note_cache.shape
    n_eff = n_batch * (n_steps - 1)
    h_note = params.note_layers[-1].hidden_size
    h_time = params.time_layers[-1].hidden_size

    d_logits_nm = np.ascontiguousarray(d_logits.transpose(1, 0, 2, 3)).reshape(
        n_notes * n_eff, 2
    )
    top_flat = note_cache.top.reshape(n_notes * n_eff, h_note)
    grads = {
        "out.W": d_logits_nm.T @ top_flat,
        "out.b": d_logits_nm.sum(axis=0),
    }
    d_top = (d_logits_nm @ params.out_W).reshape(n_notes, n_eff, h_note)

    note_grads, d_xs_note = lstm_core.stack_backward(d_top, note_cache.stack, params.note_layers)
    for i, (dW, dU, db) in enumerate(note_grads):
        grads[f"note.{i}.W"] = dW
        grads[f"note.{i}.U"] = dU
        grads[f"note.{i}.b"] = db

    # conditioning labels are constants; only the time-axis slice flows back
    d_time_slice = d_xs_note[:, :, :h_time].reshape(n_notes, n_batch, n_steps - 1, h_time)
    d_time_out = np.zeros((n_steps, n_batch * n_notes, h_time), dtype=d_logits.dtype)
    d_time_out[: n_steps - 1] = (
        np.ascontiguousarray(d_time_slice.transpose(2, 1, 0, 3))
        .reshape(n_steps - 1, n_batch * n_notes, h_time)
    )

    time_grads, _ = lstm_core.stack_backward(d_time_out, time_cache.stack, params.time_layers)
    for i, (dW, dU, db) in enumerate(time_grads):
        grads[f"time.{i}.W"] = dW
        grads[f"time.{i}.U"] = dU
        grads[f"time.{i}.b"] = db
    return grads

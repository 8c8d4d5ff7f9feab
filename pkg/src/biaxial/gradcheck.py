"""Finite-difference verification of the analytic gradients.

Central differences in double precision against two scalar objectives: a
fixed random projection of a standalone LSTM stack's outputs (with a fixed
dropout mask, covering the mask backward), and the real training loss of a
tiny end-to-end model.  Relative error uses max(|analytic|, |numeric|, 1e-6)
as the denominator, so a wrong gradient of typical magnitude cannot hide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lstm_core, model as model_mod
from .input_kernel import KernelConfig, expand
from .model import ModelConfig
from .note_state import NoteStateBatch

TOLERANCE = 1e-4
EPSILON = 1e-5


@dataclass
class BlockReport:
    name: str
    max_rel_err: float
    size: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def _fd_block(arr: np.ndarray, analytic: np.ndarray, eval_loss, eps: float) -> float:
    worst = 0.0
    flat = arr.reshape(-1)
    aflat = analytic.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        up = eval_loss()
        flat[idx] = orig - eps
        down = eval_loss()
        flat[idx] = orig
        numeric = (up - down) / (2 * eps)
        worst = max(worst, _rel_err(float(aflat[idx]), numeric))
    return worst


def random_batch(
    rng: np.random.Generator, n_batch: int, n_notes: int, n_steps: int, low_note: int = 60
) -> NoteStateBatch:
    """Random valid labels: a=1 only where p=1."""
    play = (rng.random((n_batch, n_notes, n_steps)) < 0.4).astype(np.uint8)
    artic = play * (rng.random((n_batch, n_notes, n_steps)) < 0.5).astype(np.uint8)
    return NoteStateBatch(low_note=low_note, cells=np.stack([play, artic], axis=-1))


def check_stack(
    seed: int = 0,
    input_size: int = 4,
    layer_sizes: tuple[int, ...] = (3, 2),
    n_steps: int = 4,
    batch: int = 2,
    keep_prob: float = 0.75,
    eps: float = EPSILON,
    corrupt: bool = False,
) -> list[BlockReport]:
    """FD check of stack_backward, dropout mask included."""
    rng = np.random.default_rng(seed)
    layers = lstm_core.init_lstm_params(input_size, list(layer_sizes), rng, dtype=np.float64)
    xs = rng.standard_normal((n_steps, batch, input_size))
    masks = lstm_core.make_dropout_masks(rng, batch, list(layer_sizes), keep_prob, np.float64)
    proj = rng.standard_normal((n_steps, batch, layer_sizes[-1]))

    def eval_loss() -> float:
        ys, _, _ = lstm_core.stack_forward(xs, layers, masks=masks)
        return float(np.sum(ys * proj))

    ys, _, cache = lstm_core.stack_forward(xs, layers, masks=masks)
    grads, _ = lstm_core.stack_backward(proj.copy(), cache, layers)
    if corrupt:
        grads[0][0][0, 0] = grads[0][0][0, 0] * 1.01 + 1.0  # test hook: wrong backward

    reports = []
    for i, layer in enumerate(layers):
        for attr, grad in zip(("W", "U", "b"), grads[i]):
            arr = getattr(layer, attr)
            reports.append(BlockReport(f"stack.{i}.{attr}", _fd_block(arr, grad, eval_loss, eps), arr.size))
    return reports


def check_model(
    seed: int = 0,
    n_notes: int = 6,
    n_steps: int = 5,
    batch: int = 2,
    time_sizes: tuple[int, ...] = (4,),
    note_sizes: tuple[int, ...] = (3,),
    window_half_width: int = 3,
    eps: float = EPSILON,
    corrupt: bool = False,
) -> list[BlockReport]:
    """FD check of the full training graph on a tiny model."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        time_layer_sizes=tuple(time_sizes),
        note_layer_sizes=tuple(note_sizes),
        kernel=KernelConfig(window_half_width=window_half_width, steps_per_measure=4),
        keep_prob=1.0,
        low_note=60,
        n_notes=n_notes,
    )
    params = model_mod.init_model_params(cfg, rng, dtype=np.float64)
    # zero-initialized output layer would null most FD signals; randomize it
    params.out_W[...] = rng.standard_normal(params.out_W.shape)
    params.out_b[...] = rng.standard_normal(params.out_b.shape)
    data = random_batch(rng, batch, n_notes, n_steps)
    features = expand(data, cfg.kernel, dtype=np.float64)  # independent of params

    def eval_loss() -> float:
        time_out, _ = model_mod.time_axis_forward(features, params)
        logits, _ = model_mod.note_axis_forward_train(time_out, data, params)
        return model_mod.loss(logits, data)[0]
    time_out, time_cache = model_mod.time_axis_forward(features, params)
    logits, note_cache = model_mod.note_axis_forward_train(time_out, data, params)
    d_logits = model_mod.loss_backward(logits, data)
    grads = model_mod.backward(d_logits, time_cache, note_cache, params)
    if corrupt:
        grads["time.0.W"][0, 0] = grads["time.0.W"][0, 0] * 1.01 + 1.0

    return [
        BlockReport(name, _fd_block(arr, grads[name], eval_loss, eps), arr.size)
        for name, arr in params.blocks()
    ]


def run_report(
    seed: int = 0,
    n_notes: int = 6,
    n_steps: int = 5,
    batch: int = 2,
    time_sizes: tuple[int, ...] = (4,),
    note_sizes: tuple[int, ...] = (3,),
    window_half_width: int = 3,
    eps: float = EPSILON,
    corrupt: bool = False,
) -> tuple[list[BlockReport], bool]:
    reports = check_stack(seed=seed, eps=eps, corrupt=corrupt)
    reports += check_model(
        seed=seed,
        n_notes=n_notes,
        n_steps=n_steps,
        batch=batch,
        time_sizes=time_sizes,
        note_sizes=note_sizes,
        window_half_width=window_half_width,
        eps=eps,
        corrupt=corrupt,
    )
    return reports, all(r.passed for r in reports)

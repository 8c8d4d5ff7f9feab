"""Optimization loop, evaluation, and checkpoint state.

Training repeats: sample measure-aligned windows, expand features, run both
axes, take the masked cross-entropy loss, backpropagate, and apply one
optimizer step.  Everything is single-threaded and driven by one RNG, so a
fixed seed reproduces the metric log bit-for-bit (the wall-clock column is
whatever *clock* reports; inject a constant for byte-stable logs).
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .input_kernel import expand
from .model import ModelConfig, ModelParams
from .note_state import NoEligibleSource, NoteStateBatch, NoteStateMatrix, sample_batch


class NonFiniteGradient(Exception):
    def __init__(self, block: str, iteration: int):
        super().__init__(f"non-finite gradient in block {block} at iteration {iteration}")
        self.block = block
        self.iteration = iteration


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "adadelta"
    learning_rate: float = 1.0
    rho: float = 0.95
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.method not in ("adadelta", "sgd"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if not 0 < self.rho < 1:
            raise ValueError("rho must be in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.learning_rate < 0:
            # 0 is allowed: a dry-run mode that logs losses without updating
            raise ValueError("learning_rate must be non-negative")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "learning_rate": self.learning_rate,
            "rho": self.rho,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return cls(**d)


def init_optimizer_state(params: ModelParams, cfg: OptimizerConfig) -> dict:
    """Per parameter block: running E[g^2] and E[dx^2], both starting at 0."""
    if cfg.method != "adadelta":
        return {}
    return {
        name: (np.zeros_like(arr), np.zeros_like(arr)) for name, arr in params.blocks()
    }


def adadelta_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: dict,
    cfg: OptimizerConfig,
    iteration: int = 0,
):
    """One in-place update following the accumulator recurrences:
    E[g2] <- rho E[g2] + (1-rho) g2, dx = -(sqrt(E[dx2]+eps)/sqrt(E[g2]+eps)) g,
    E[dx2] <- rho E[dx2] + (1-rho) dx2, x <- x + lr dx.
    """
    for name, _ in params.blocks():
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradient(name, iteration)
    rho = cfg.rho
    eps = cfg.epsilon
    for name, arr in params.blocks():
        g = grads[name]
        if cfg.method == "sgd":
            arr -= cfg.learning_rate * g
            continue
        eg2, edx2 = state[name]
        eg2 *= rho
        eg2 += (1.0 - rho) * g * g
        dx = -(np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps)) * g
        edx2 *= rho
        edx2 += (1.0 - rho) * dx * dx
        arr += cfg.learning_rate * dx


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Global-norm clip; returns the pre-clip norm.  No-op if max_norm <= 0."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class Checkpoint:
    model_config: ModelConfig
    optimizer_config: OptimizerConfig
    params: ModelParams
    opt_state: dict
    iteration: int
    rng_state: dict


@dataclass(frozen=True)
class TrainSchedule:
    iterations: int
    batch_size: int = 4
    seq_len: int = 128
    log_every: int = 1
    checkpoint_every: int = 0
    seed: int = 0


@dataclass
class MetricRecord:
    iteration: int
    loss: float
    per_step_ll: float
    seconds: float

    def as_line(self) -> str:
        return f"{self.iteration},{self.loss:.6f},{self.per_step_ll:.6f},{self.seconds:.3f}"


def train_step(
    batch: NoteStateBatch,
    params: ModelParams,
    cfg: ModelConfig,
    rng: np.random.Generator,
    train_mode: bool = True,
):
    """Forward + backward over one batch.  Returns (loss, per_step_ll, grads)."""
    time_masks = note_masks = None
    if train_mode and cfg.keep_prob < 1:
        time_masks, note_masks = model_mod.make_training_masks(
            cfg, rng, batch.batch_size, batch.n_steps
        )
    features = expand(batch, cfg.kernel)
    time_out, time_cache = model_mod.time_axis_forward(features, params, time_masks)
    logits, note_cache = model_mod.note_axis_forward_train(time_out, batch, params, note_masks)
    loss_val, per_step_ll = model_mod.loss(logits, batch)
    d_logits = model_mod.loss_backward(logits, batch)
    grads = model_mod.backward(d_logits, time_cache, note_cache, params)
    return loss_val, per_step_ll, grads


def train(
    corpus: list[NoteStateMatrix],
    model_cfg: ModelConfig,
    opt_cfg: OptimizerConfig,
    schedule: TrainSchedule,
    *,
    resume: Checkpoint | None = None,
    grad_clip_norm: float = 0.0,
    clock=time.perf_counter,
    on_record=None,
    on_checkpoint=None,
) -> tuple[Checkpoint, list[MetricRecord]]:
    """Run the optimization loop; returns the final checkpoint and records.

    With a fixed seed and single-threaded execution the metric values,
    parameters, and RNG state are reproducible run to run; resuming from a
    checkpoint continues the identical trajectory.
    """
    if resume is not None:
        params = resume.params
        opt_state = resume.opt_state
        start = resume.iteration
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
    else:
        rng = np.random.default_rng(schedule.seed)
        params = model_mod.init_model_params(model_cfg, rng)
        opt_state = init_optimizer_state(params, opt_cfg)
        start = 0

    records: list[MetricRecord] = []
    t0 = clock()
    for it in range(start, start + schedule.iterations):
        batch = sample_batch(
            corpus,
            schedule.batch_size,
            schedule.seq_len,
            rng,
            steps_per_measure=model_cfg.kernel.steps_per_measure,
        )
        loss_val, per_step_ll, grads = train_step(batch, params, model_cfg, rng)
        if grad_clip_norm > 0:
            clip_gradients(grads, grad_clip_norm)
        adadelta_step(params, grads, opt_state, opt_cfg, iteration=it)

        if schedule.log_every > 0 and (it + 1) % schedule.log_every == 0:
            rec = MetricRecord(it + 1, loss_val, per_step_ll, clock() - t0)
            records.append(rec)
            if on_record is not None:
                on_record(rec)
        if schedule.checkpoint_every > 0 and (it + 1) % schedule.checkpoint_every == 0:
            if on_checkpoint is not None:
                on_checkpoint(
                    Checkpoint(
                        model_cfg, opt_cfg, params, opt_state, it + 1, rng.bit_generator.state
                    )
                )

    final = Checkpoint(
        model_cfg, opt_cfg, params, opt_state, start + schedule.iterations,
        rng.bit_generator.state,
    )
    return final, records


@dataclass
class EvalResult:
    window_lls: list[float]
    mean_ll: float
    best_ll: float
    median_ll: float
    play_ll: float
    artic_ll: float
    n_windows: int = field(init=False)

    def __post_init__(self):
        self.n_windows = len(self.window_lls)


def evaluate(
    corpus: list[NoteStateMatrix],
    ckpt: Checkpoint,
    seq_len: int,
    rescale_to: int | None = None,
    batch_windows: int = 8,
) -> EvalResult:
    """Per-step log-likelihood over all full measure-aligned windows.

    Dropout is disabled (no masks, no scaling); parameters are read only.
    *rescale_to* multiplies every value by rescale_to/n_notes to compare
    models with different note ranges.
    """
    cfg = ckpt.model_config
    spm = cfg.kernel.steps_per_measure
    stride = seq_len if seq_len % spm == 0 else (seq_len // spm + 1) * spm

    windows = []
    for m in corpus:
        if m.low_note != cfg.low_note or m.n_notes != cfg.n_notes:
            raise ValueError(
                f"corpus note range ({m.low_note}, {m.n_notes}) does not match "
                f"model ({cfg.low_note}, {cfg.n_notes})"
            )
        for startpos in range(0, m.n_steps - seq_len + 1, stride):
            windows.append(m.cells[:, startpos : startpos + seq_len, :])
    if not windows:
        raise NoEligibleSource(f"no matrix has {seq_len} or more steps")

    scale = 1.0 if rescale_to is None else rescale_to / cfg.n_notes
    lls: list[float] = []
    play_parts: list[float] = []
    artic_parts: list[float] = []
    for i in range(0, len(windows), batch_windows):
        chunk = np.stack(windows[i : i + batch_windows])
        batch = NoteStateBatch(low_note=cfg.low_note, cells=chunk)
        features = expand(batch, cfg.kernel)
        time_out, _ = model_mod.time_axis_forward(features, ckpt.params)
        logits, _ = model_mod.note_axis_forward_train(time_out, batch, ckpt.params)
        play, artic = model_mod.per_window_channel_ll(logits, batch)
        play_parts.extend(float(v) * scale for v in play)
        artic_parts.extend(float(v) * scale for v in artic)
        lls.extend(float(p + a) * scale for p, a in zip(play, artic))

    return EvalResult(
        window_lls=lls,
        mean_ll=statistics.fmean(lls),
        best_ll=max(lls),
        median_ll=statistics.median(lls),
        play_ll=statistics.fmean(play_parts),
        artic_ll=statistics.fmean(artic_parts),
    )

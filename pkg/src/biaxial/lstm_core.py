"""LSTM forward/backward math shared by the time and note axes.

Weights follow the (input i, forget f, cell candidate g, output o) gate
order in one stacked 4h block.  Dropout masks are sampled once per forward
pass and reused at every step; the recurrent connection consumes the raw
hidden state, masking applies to what each layer passes upward.

Forward matmuls go through a jitted kernel whose per-row accumulation
order is independent of row position, so batched forwards commute with
batch-row permutation bit-for-bit (BLAS GEMM does not guarantee this).
Backward is pure BLAS; gradients only face finite-difference tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@numba.njit(cache=True)
def _rowmm(a, b, out):
    m, depth = a.shape
    n = b.shape[1]
    for i in range(m):
        acc = np.zeros(n, dtype=a.dtype)
        for k in range(depth):
            s = a[i, k]
            for j in range(n):
                acc[j] += s * b[k, j]
        out[i] = acc


def stable_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b with row-permutation-stable rounding; operands must share dtype."""
    out = np.empty((a.shape[0], b.shape[1]), dtype=a.dtype)
    _rowmm(np.ascontiguousarray(a), np.ascontiguousarray(b), out)
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for any finite input
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmLayerParams:
    W: np.ndarray  # (4h, in) input weights
    U: np.ndarray  # (4h, h) recurrent weights
    b: np.ndarray  # (4h,) biases

    @property
    def hidden_size(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[1]


@dataclass
class LstmState:
    h: np.ndarray  # (B, h)
    c: np.ndarray  # (B, h)


def init_lstm_params(
    input_size: int,
    layer_sizes: list[int],
    rng: np.random.Generator,
    dtype=np.float32,
) -> list[LstmLayerParams]:
    """Uniform +-1/sqrt(fan_in) weights; forget bias 1, other biases 0."""
    layers = []
    fan = input_size
    for h in layer_sizes:
        wb = 1.0 / np.sqrt(fan)
        ub = 1.0 / np.sqrt(h)
        W = rng.uniform(-wb, wb, size=(4 * h, fan)).astype(dtype)
        U = rng.uniform(-ub, ub, size=(4 * h, h)).astype(dtype)
        b = np.zeros(4 * h, dtype=dtype)
        b[h : 2 * h] = 1.0
        layers.append(LstmLayerParams(W=W, U=U, b=b))
        fan = h
    return layers


def zero_states(layers: list[LstmLayerParams], batch: int, dtype=np.float32) -> list[LstmState]:
    return [
        LstmState(
            h=np.zeros((batch, layer.hidden_size), dtype=dtype),
            c=np.zeros((batch, layer.hidden_size), dtype=dtype),
        )
        for layer in layers
    ]


def make_dropout_masks(
    rng: np.random.Generator,
    n_rows: int,
    layer_sizes: list[int],
    keep_prob: float,
    dtype=np.float32,
) -> list[np.ndarray] | None:
    """Scaled keep masks, entries in {0, 1/keep_prob}; None when keep_prob=1."""
    if not 0 < keep_prob <= 1:
        raise ValueError("keep_prob must be in (0, 1]")
    if keep_prob == 1:
        return None
    return [
        (rng.random((n_rows, h)) < keep_prob).astype(dtype) * dtype(1.0 / keep_prob)
        for h in layer_sizes
    ]


def transpose_weights(layers: list[LstmLayerParams]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous (W^T, U^T) copies for the forward kernel; recompute after
    any parameter update."""
    return [
        (np.ascontiguousarray(layer.W.T), np.ascontiguousarray(layer.U.T)) for layer in layers
    ]


def cell_forward(x: np.ndarray, state: LstmState, params: LstmLayerParams, weight_t=None):
    """One LSTM cell step.  Returns (h, new state, cache for backward)."""
    if weight_t is None:
        wt, ut = np.ascontiguousarray(params.W.T), np.ascontiguousarray(params.U.T)
    else:
        wt, ut = weight_t
    h = params.hidden_size
    pre = stable_matmul(x, wt)
    pre += stable_matmul(state.h, ut)
    pre += params.b
    gates = np.empty_like(pre)
    gates[:, : 2 * h] = sigmoid(pre[:, : 2 * h])  # i, f
    gates[:, 2 * h : 3 * h] = np.tanh(pre[:, 2 * h : 3 * h])  # g
    gates[:, 3 * h :] = sigmoid(pre[:, 3 * h :])  # o
    i = gates[:, :h]
    f = gates[:, h : 2 * h]
    g = gates[:, 2 * h : 3 * h]
    o = gates[:, 3 * h :]
    c = f * state.c + i * g
    tanh_c = np.tanh(c)
    h_out = o * tanh_c
    cache = (x, gates, c, tanh_c, h_out)
    return h_out, LstmState(h=h_out, c=c), cache


def stack_step(
    x: np.ndarray,
    states: list[LstmState],
    layers: list[LstmLayerParams],
    masks: list[np.ndarray] | None = None,
    weight_t=None,
    collect: bool = False,
):
    """Advance every layer one step.  Returns (top output, new states, caches)."""
    if weight_t is None:
        weight_t = transpose_weights(layers)
    new_states = []
    caches = [] if collect else None
    inp = x
    for idx, (layer, state) in enumerate(zip(layers, states)):
        h, new_state, cache = cell_forward(inp, state, layer, weight_t[idx])
        if collect:
            caches.append(cache)
        new_states.append(new_state)
        inp = h * masks[idx] if masks is not None else h
    return inp, new_states, caches


@dataclass
class StackCache:
    xs: list[np.ndarray]  # per layer: (S, B, in) inputs (post-dropout of layer below)
    gates: list[np.ndarray]  # per layer: (S, B, 4h)
    c: list[np.ndarray]  # per layer: (S, B, h)
    tanh_c: list[np.ndarray]  # per layer: (S, B, h)
    h: list[np.ndarray]  # per layer: (S, B, h) raw outputs
    h0: list[np.ndarray]
    c0: list[np.ndarray]
    masks: list[np.ndarray] | None


def stack_forward(
    xs: np.ndarray,
    layers: list[LstmLayerParams],
    masks: list[np.ndarray] | None = None,
    init_states: list[LstmState] | None = None,
):
    """Run a (S, B, in) sequence through the stack.

    Returns (ys (S, B, h_top), final states, cache).  With masks=None the
    dropout path is the identity.
    """
    n_steps, batch, _ = xs.shape
    dtype = xs.dtype
    states = init_states if init_states is not None else zero_states(layers, batch, dtype)
    weight_t = transpose_weights(layers)

    cache = StackCache(
        xs=[np.empty((n_steps, batch, layer.input_size), dtype=dtype) for layer in layers],
        gates=[np.empty((n_steps, batch, 4 * layer.hidden_size), dtype=dtype) for layer in layers],
        c=[np.empty((n_steps, batch, layer.hidden_size), dtype=dtype) for layer in layers],
        tanh_c=[np.empty((n_steps, batch, layer.hidden_size), dtype=dtype) for layer in layers],
        h=[np.empty((n_steps, batch, layer.hidden_size), dtype=dtype) for layer in layers],
        h0=[state.h for state in states],
        c0=[state.c for state in states],
        masks=masks,
    )
    ys = np.empty((n_steps, batch, layers[-1].hidden_size), dtype=dtype)
    for t in range(n_steps):
        y, states, step_caches = stack_step(
            xs[t], states, layers, masks=masks, weight_t=weight_t, collect=True
        )
        ys[t] = y
        for idx, (x_in, gates, c, tanh_c, h_out) in enumerate(step_caches):
            cache.xs[idx][t] = x_in
            cache.gates[idx][t] = gates
            cache.c[idx][t] = c
            cache.tanh_c[idx][t] = tanh_c
            cache.h[idx][t] = h_out
    return ys, states, cache


def stack_backward(
    d_ys: np.ndarray,
    cache: StackCache,
    layers: list[LstmLayerParams],
):
    """Full BPTT.  Returns (per-layer grads [(dW, dU, db)], d_xs).

    d_ys is the gradient w.r.t. the top layer's masked outputs.
    """
    n_steps, batch, _ = d_ys.shape
    grads = [None] * len(layers)
    d_out = d_ys
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        h = layer.hidden_size
        gates = cache.gates[idx]
        c_all = cache.c[idx]
        tanh_c = cache.tanh_c[idx]
        mask = cache.masks[idx] if cache.masks is not None else None

        d_pre = np.empty_like(gates)
        d_x = np.empty((n_steps, batch, layer.input_size), dtype=d_ys.dtype)
        dh_carry = np.zeros((batch, h), dtype=d_ys.dtype)
        dc_carry = np.zeros((batch, h), dtype=d_ys.dtype)
        for t in range(n_steps - 1, -1, -1):
            dh = d_out[t] * mask + dh_carry if mask is not None else d_out[t] + dh_carry
            i = gates[t, :, :h]
            f = gates[t, :, h : 2 * h]
            g = gates[t, :, 2 * h : 3 * h]
            o = gates[t, :, 3 * h :]
            tc = tanh_c[t]
            c_prev = c_all[t - 1] if t > 0 else cache.c0[idx]

            do = dh * tc
            dc = dc_carry + dh * o * (1.0 - tc * tc)
            d_pre[t, :, :h] = dc * g * i * (1.0 - i)
            d_pre[t, :, h : 2 * h] = dc * c_prev * f * (1.0 - f)
            d_pre[t, :, 2 * h : 3 * h] = dc * i * (1.0 - g * g)
            d_pre[t, :, 3 * h :] = do * o * (1.0 - o)
            dc_carry = dc * f
            dh_carry = d_pre[t] @ layer.U
            d_x[t] = d_pre[t] @ layer.W

        h_prev = np.empty_like(cache.h[idx])
        h_prev[0] = cache.h0[idx]
        h_prev[1:] = cache.h[idx][:-1]
        flat_pre = d_pre.reshape(n_steps * batch, 4 * h)
        dW = flat_pre.T @ cache.xs[idx].reshape(n_steps * batch, layer.input_size)
        dU = flat_pre.T @ h_prev.reshape(n_steps * batch, h)
        db = d_pre.sum(axis=(0, 1))
        grads[idx] = (dW, dU, db)
        d_out = d_x
    return grads, d_out

"""Stacked LSTM controller.

Each layer maps ``concat(input, h_prev)`` through one fused weight matrix
whose rows are ordered [input gate, forget gate, output gate, candidate].
Layer ``l`` reads layer ``l-1``'s hidden output; every layer's hidden vector
is returned so the NTM3 topology can attach write heads to intermediate layers.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .errors import ConfigError

WEIGHT_INIT = 0.08
FORGET_BIAS = 1.0


@dataclass
class ControllerState:
    hidden: list   # per layer, Tensor[d_h]
    cell: list     # per layer, Tensor[d_h]

    @property
    def output(self):
        return self.hidden[-1]

    def snapshot(self):
        """Detached copy of the current values (for restore/replay checks)."""
        return ControllerState([tc.Tensor(h.data.copy()) for h in self.hidden],
                               [tc.Tensor(c.data.copy()) for c in self.cell])


def layer_param_shapes(d_in, d_h):
    return {"W": (4 * d_h, d_in + d_h), "b": (4 * d_h,)}


def init_layer_params(rng, d_in, d_h):
    W = rng.uniform(-WEIGHT_INIT, WEIGHT_INIT, size=(4 * d_h, d_in + d_h))
    b = np.zeros(4 * d_h)
    b[d_h:2 * d_h] = FORGET_BIAS
    return {"W": W, "b": b}


def zero_state(layers, d_h):
    return ControllerState([tc.Tensor(np.zeros(d_h)) for _ in range(layers)],
                           [tc.Tensor(np.zeros(d_h)) for _ in range(layers)])


def lstm_layer(W, b, x, h, c):
    d_h = h.shape[0]
    if W.shape[1] != x.shape[0] + d_h:
        raise ConfigError(
            f"LSTM layer expects input width {W.shape[1] - d_h}, got {x.shape[0]}", key="input_width")
    z = tc.matmul(W, tc.concat([x, h])) + b
    i_g, f_g, o_g, cand = tc.split(z, [d_h] * 4)
    c_new = tc.mul(tc.sigmoid(f_g), c) + tc.mul(tc.sigmoid(i_g), tc.tanh(cand))
    h_new = tc.mul(tc.sigmoid(o_g), tc.tanh(c_new))
    return h_new, c_new


def lstm_step(params, state, x):
    """Advance every layer one timestep.

    ``params`` is a list of {"W", "b"} tensor dicts, one per layer. Returns the
    new state and the list of per-layer outputs (top layer last).
    """
    if len(params) != len(state.hidden):
        raise ConfigError(f"{len(params)} layer params for {len(state.hidden)} layer states",
                          key="layers")
    hidden, cell = [], []
    inp = x
    for p, h, c in zip(params, state.hidden, state.cell):
        h_new, c_new = lstm_layer(p["W"], p["b"], inp, h, c)
        hidden.append(h_new)
        cell.append(c_new)
        inp = h_new
    return ControllerState(hidden, cell), list(hidden)

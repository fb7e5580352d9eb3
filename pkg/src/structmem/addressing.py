"""Read/write heads: interface decoding, the addressing pipeline, erase/add writes and reads."""

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .errors import DimensionError

WEIGHT_INIT = 0.08


def interface_width(mem_width, shift_width, write):
    # key, strength, gate, shift, sharpening [, erase, add]
    width = mem_width + 1 + 1 + shift_width + 1
    return width + 2 * mem_width if write else width


def init_head_params(rng, ctrl_width, mem_width, shift_width, write):
    out = interface_width(mem_width, shift_width, write)
    return {"W": rng.uniform(-WEIGHT_INIT, WEIGHT_INIT, size=(out, ctrl_width)),
            "b": np.zeros(out)}


@dataclass
class HeadOutputs:
    key: tc.Tensor
    strength: tc.Tensor     # beta >= 0
    gate: tc.Tensor         # g in (0, 1)
    shift: tc.Tensor        # on the simplex
    sharpness: tc.Tensor    # gamma >= 1
    erase: tc.Tensor = None
    add: tc.Tensor = None


def decode(W, b, c, mem_width, shift_width, write):
    """Map controller output ``c`` to constrained head parameters."""
    raw = tc.matmul(W, c) + b
    sizes = [mem_width, 1, 1, shift_width, 1]
    if write:
        sizes += [mem_width, mem_width]
    parts = tc.split(raw, sizes)
    out = HeadOutputs(
        key=parts[0],
        strength=tc.softplus(parts[1]),
        gate=tc.sigmoid(parts[2]),
        shift=tc.softmax(parts[3]),
        sharpness=tc.affine(tc.softplus(parts[4]), 1.0, 1.0),
    )
    if write:
        out.erase = tc.sigmoid(parts[5])
        out.add = parts[6]
    return out


def content_weights(key, strength, memory):
    return tc.softmax(tc.scale(tc.cosine_similarity(key, memory), strength))


def interpolate(w_content, w_prev, gate):
    return tc.scale(w_content, gate) + tc.scale(w_prev, tc.affine(gate, -1.0, 1.0))


def address(head, w_prev, memory):
    """content -> interpolate with previous weighting -> shift -> sharpen."""
    if memory.shape[0] != w_prev.shape[0]:
        raise DimensionError(f"address: memory {memory.shape} vs weighting {w_prev.shape}")
    w_c = content_weights(head.key, head.strength, memory)
    w_g = interpolate(w_c, w_prev, head.gate)
    w_s = tc.circular_convolve(w_g, head.shift)
    return tc.sharpen(w_s, head.sharpness)


def write_head_step(memory, w, erase, add):
    """Single-head erase/add: M(i) * (1 - w(i) e) + w(i) a."""
    return tc.erase_add(memory, [w], [erase], [add])


def write_heads(memory, weights, erases, adds):
    """Apply several heads' writes at once (combined erase, then summed adds)."""
    if not weights:
        return memory
    return tc.erase_add(memory, weights, erases, adds)


def read(w, memory):
    if w.shape[0] != memory.shape[0] or memory.data.ndim != 2:
        raise DimensionError(f"read: weighting {w.shape} vs memory {memory.shape}")
    return tc.matmul(w, memory)

"""Wiring of controller, heads and memory blocks for NTM, NTM1, NTM2 and NTM3.

Per timestep every variant runs write -> mix -> read:

* ``ntm``  : heads write the single block; reads address the written block.
* ``ntm1`` : one head writes the controlled block M_c; the hidden block is
  updated as ``M_h = a*M_h + b*M_c``; reads address and read M_h.
* ``ntm2`` : two controlled blocks both driven by the top controller output;
  ``M_2 = a*M~_2 + b*M_1``; reads come from M_2 only.
* ``ntm3`` : one controlled block per controller layer, block k driven by
  layer k; ``M_k = a*M~_k + b*M_{k-1}`` chained down; reads from the deepest.

Write addressing always targets the block's memory from the previous step.
"""

from dataclasses import dataclass, field, fields, asdict
import hashlib
import math

import numpy as np

from . import tensor_core as tc
from . import addressing
from . import controller
from .errors import ConfigError

VARIANTS = ("ntm", "ntm1", "ntm2", "ntm3")
MEMORY_INIT = 0.05
OUTPUT_INIT = 0.08
# initial weightings put this much mass on slot 0 (write/read order prior)
ORDER_PRIOR_MASS = 0.9


@dataclass
class ModelConfig:
    variant: str = "ntm"
    mem_slots: int = 128
    mem_width: int = 20
    read_heads: int = 1
    write_heads: int = 1
    controller_width: int = 100
    layers: int = 0              # 0 -> 1, or 2 for ntm3
    mix_mode: str = "learned"    # learned | fixed
    mix_a: float = 0.5
    mix_b: float = 0.5
    shift_width: int = 3
    share_head_params: bool = False
    input_width: int = 9
    output_width: int = 8
    seed: int = 0

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.layers == 0:
            self.layers = 2 if self.variant == "ntm3" else 1
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}",
                              key="variant")
        for key in ("mem_slots", "mem_width", "read_heads", "write_heads",
                    "controller_width", "layers", "input_width", "output_width"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}", key=key)
        if self.shift_width % 2 == 0 or self.shift_width > self.mem_slots:
            raise ConfigError(f"shift_width must be odd and <= mem_slots, got {self.shift_width}",
                              key="shift_width")
        if self.variant == "ntm1" and self.write_heads != 1:
            raise ConfigError("ntm1 has exactly one write head", key="write_heads")
        if self.variant == "ntm3" and self.layers < 2:
            raise ConfigError("ntm3 needs at least 2 controller layers", key="layers")
        if self.mix_mode not in ("learned", "fixed"):
            raise ConfigError(f"mix_mode must be 'learned' or 'fixed', got {self.mix_mode!r}",
                              key="mix_mode")
        for key in ("mix_a", "mix_b"):
            v = getattr(self, key)
            if not math.isfinite(v):
                raise ConfigError(f"{key} must be finite", key=key)
            if self.mix_mode == "fixed" and not 0.0 <= v <= 1.0:
                raise ConfigError(f"fixed {key} must lie in [0, 1], got {v}", key=key)

    @property
    def controlled_blocks(self):
        return {"ntm": 1, "ntm1": 1, "ntm2": 2, "ntm3": self.layers}[self.variant]

    @property
    def has_mixing(self):
        return self.variant != "ntm"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


def config_hash(d):
    text = ";".join(f"{k}={d[k]!r}" for k in sorted(d))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# parameters

def _write_map_name(cfg, block, head):
    if cfg.share_head_params:
        return f"write.shared.{head}"
    return f"write.{block}.{head}"


def init_params(cfg, seed=None):
    """Deterministic parameter dict (name -> float64 array) for ``cfg``."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    N, M, H = cfg.mem_slots, cfg.mem_width, cfg.controller_width
    params = {}

    d_in = cfg.input_width + cfg.read_heads * M
    for layer in range(cfg.layers):
        lp = controller.init_layer_params(rng, d_in if layer == 0 else H, H)
        params[f"ctrl.{layer}.W"] = lp["W"]
        params[f"ctrl.{layer}.b"] = lp["b"]

    order_bias = np.zeros(N)
    if N > 1:
        order_bias[0] = math.log(ORDER_PRIOR_MASS * (N - 1) / (1.0 - ORDER_PRIOR_MASS))

    for block in range(cfg.controlled_blocks):
        for h in range(cfg.write_heads):
            name = _write_map_name(cfg, block, h)
            if name + ".W" not in params:
                hp = addressing.init_head_params(rng, H, M, cfg.shift_width, write=True)
                params[name + ".W"] = hp["W"]
                params[name + ".b"] = hp["b"]
            params[f"write.{block}.{h}.w0"] = order_bias.copy()
    for h in range(cfg.read_heads):
        hp = addressing.init_head_params(rng, H, M, cfg.shift_width, write=False)
        params[f"read.{h}.W"] = hp["W"]
        params[f"read.{h}.b"] = hp["b"]
        params[f"read.{h}.w0"] = order_bias.copy()
        params[f"read.{h}.r0"] = rng.uniform(-MEMORY_INIT, MEMORY_INIT, size=M)

    for block in range(cfg.controlled_blocks):
        params[f"memory.{block}"] = rng.uniform(-MEMORY_INIT, MEMORY_INIT, size=(N, M))
    if cfg.variant == "ntm1":
        params["memory.hidden"] = rng.uniform(-MEMORY_INIT, MEMORY_INIT, size=(N, M))

    if cfg.has_mixing and cfg.mix_mode == "learned":
        params["mix.a"] = np.array(cfg.mix_a)
        params["mix.b"] = np.array(cfg.mix_b)

    params["out.W"] = rng.uniform(-OUTPUT_INIT, OUTPUT_INIT,
                                  size=(cfg.output_width, H + cfg.read_heads * M))
    params["out.b"] = np.zeros(cfg.output_width)
    return params


def bind(params, tape=None):
    """Wrap arrays as tape leaves (or constants when ``tape`` is None)."""
    if tape is None:
        return {k: tc.Tensor(v) for k, v in params.items()}
    return {k: tape.leaf(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# state

@dataclass
class MemoryState:
    blocks: list                 # Tensor[N x M] per block; ntm1 appends the hidden block
    roles: list                  # "controlled" | "hidden"
    write_weights: list          # per controlled block, list of Tensor[N]
    read_weights: list           # per read head, Tensor[N]

    @property
    def read_block(self):
        return self.blocks[-1]


@dataclass
class ModelState:
    memory: MemoryState
    ctrl: controller.ControllerState
    reads: list = field(default_factory=list)


def initial_state(cfg, P):
    blocks = [P[f"memory.{b}"] for b in range(cfg.controlled_blocks)]
    roles = ["controlled"] * len(blocks)
    if cfg.variant == "ntm1":
        blocks.append(P["memory.hidden"])
        roles.append("hidden")
    write_w = [[tc.softmax(P[f"write.{b}.{h}.w0"]) for h in range(cfg.write_heads)]
               for b in range(cfg.controlled_blocks)]
    read_w = [tc.softmax(P[f"read.{h}.w0"]) for h in range(cfg.read_heads)]
    mem = MemoryState(blocks, roles, write_w, read_w)
    ctrl = controller.zero_state(cfg.layers, cfg.controller_width)
    reads = [P[f"read.{h}.r0"] for h in range(cfg.read_heads)]
    return ModelState(mem, ctrl, reads)


def init_state(cfg, seed=None):
    """Initial memory, head and controller state for a freshly seeded model."""
    return initial_state(cfg, bind(init_params(cfg, seed)))


def mix_coeffs(cfg, P):
    if cfg.mix_mode == "learned":
        return P["mix.a"], P["mix.b"]
    return tc.Tensor(np.array(cfg.mix_a)), tc.Tensor(np.array(cfg.mix_b))


def mix_update(own, upstream, a, b):
    """a * own + b * upstream."""
    return tc.scale(own, a) + tc.scale(upstream, b)


# ---------------------------------------------------------------------------
# per-step transitions

def write_block(cfg, P, block, memory, w_prev, c):
    """All write heads of ``block`` address ``memory`` (pre-step) and write it."""
    ws, es, adds = [], [], []
    for h in range(cfg.write_heads):
        name = _write_map_name(cfg, block, h)
        head = addressing.decode(P[name + ".W"], P[name + ".b"], c,
                                 cfg.mem_width, cfg.shift_width, write=True)
        ws.append(addressing.address(head, w_prev[h], memory))
        es.append(head.erase)
        adds.append(head.add)
    return addressing.write_heads(memory, ws, es, adds), ws


def read_all(cfg, P, memory, w_prev, c):
    ws, reads = [], []
    for h in range(cfg.read_heads):
        head = addressing.decode(P[f"read.{h}.W"], P[f"read.{h}.b"], c,
                                 cfg.mem_width, cfg.shift_width, write=False)
        w = addressing.address(head, w_prev[h], memory)
        ws.append(w)
        reads.append(addressing.read(w, memory))
    return ws, reads


def step_ntm(cfg, P, state, c):
    mem, w_new = write_block(cfg, P, 0, state.blocks[0], state.write_weights[0], c)
    rw, reads = read_all(cfg, P, mem, state.read_weights, c)
    return MemoryState([mem], state.roles, [w_new], rw), reads


def step_ntm1(cfg, P, state, c):
    controlled, hidden = state.blocks
    controlled, w_new = write_block(cfg, P, 0, controlled, state.write_weights[0], c)
    a, b = mix_coeffs(cfg, P)
    hidden = mix_update(hidden, controlled, a, b)
    rw, reads = read_all(cfg, P, hidden, state.read_weights, c)
    return MemoryState([controlled, hidden], state.roles, [w_new], rw), reads


def step_ntm2(cfg, P, state, c):
    return _step_chain(cfg, P, state, [c] * cfg.controlled_blocks, c)


def step_ntm3(cfg, P, state, layer_outputs):
    if len(layer_outputs) != cfg.controlled_blocks:
        raise ConfigError(
            f"ntm3 has {cfg.controlled_blocks} memory blocks but got {len(layer_outputs)} layer outputs",
            key="layers")
    return _step_chain(cfg, P, state, layer_outputs, layer_outputs[-1])


def _step_chain(cfg, P, state, drivers, read_driver):
    a, b = mix_coeffs(cfg, P)
    blocks, weights = [], []
    for k, c_k in enumerate(drivers):
        written, w_new = write_block(cfg, P, k, state.blocks[k], state.write_weights[k], c_k)
        if k > 0:
            written = mix_update(written, blocks[k - 1], a, b)
        blocks.append(written)
        weights.append(w_new)
    rw, reads = read_all(cfg, P, blocks[-1], state.read_weights, read_driver)
    return MemoryState(blocks, state.roles, weights, rw), reads


def step_memory(cfg, P, state, layer_outputs):
    if cfg.variant == "ntm":
        return step_ntm(cfg, P, state, layer_outputs[-1])
    if cfg.variant == "ntm1":
        return step_ntm1(cfg, P, state, layer_outputs[-1])
    if cfg.variant == "ntm2":
        return step_ntm2(cfg, P, state, layer_outputs[-1])
    return step_ntm3(cfg, P, state, layer_outputs)


# ---------------------------------------------------------------------------
# full model

class NTMModel:
    """Parameters plus the unrolled forward pass for one configuration."""

    def __init__(self, config, params=None):
        config.validate()
        self.config = config
        self.params = init_params(config) if params is None else params

    def controller_params(self, P):
        return [{"W": P[f"ctrl.{l}.W"], "b": P[f"ctrl.{l}.b"]} for l in range(self.config.layers)]

    def step(self, P, state, x):
        """One timestep; returns (new state, output probabilities)."""
        cfg = self.config
        ctrl_in = tc.concat([x] + state.reads)
        ctrl_state, outs = controller.lstm_step(self.controller_params(P), state.ctrl, ctrl_in)
        mem, reads = step_memory(cfg, P, state.memory, outs)
        logits = tc.matmul(P["out.W"], tc.concat([outs[-1]] + reads)) + P["out.b"]
        return ModelState(mem, ctrl_state, reads), tc.sigmoid(logits)

    def forward(self, inputs, tape=None, trace=None):
        """Run the whole sequence ``inputs`` (T x input_width).

        Returns (probabilities Tensor[T x output_width], bound params). When
        ``trace`` is a list, each step's ModelState is appended to it.
        """
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.config.input_width:
            raise ConfigError(
                f"inputs of shape {inputs.shape} do not match input_width={self.config.input_width}",
                key="input_width")
        P = bind(self.params, tape)
        state = initial_state(self.config, P)
        if trace is not None:
            trace.append(state)
        outputs = []
        for x in inputs:
            state, y = self.step(P, state, tc.Tensor(x))
            outputs.append(y)
            if trace is not None:
                trace.append(state)
        return tc.stack(outputs), P

    def loss(self, episode, tape=None):
        probs, P = self.forward(episode.inputs, tape)
        return tc.bce_loss(probs, episode.targets, episode.mask), probs, P

import numpy as np
import pytest

from structmem import tensor_core as tc
from structmem.errors import ConfigError
from structmem.gradcheck import generic_params
from structmem.memory_graph import (ModelConfig, NTMModel, bind, init_params, init_state,
                                    initial_state, mix_update, step_ntm, step_ntm1, step_ntm2,
                                    step_ntm3)
from structmem.trainer import compute_gradients
from structmem.tasks import Episode

import reference as ref
from conftest import fd_grad


def cfg(variant, **kw):
    base = dict(variant=variant, mem_slots=8, mem_width=4, controller_width=6,
                input_width=5, output_width=4, seed=3)
    base.update(kw)
    return ModelConfig(**base)


def random_model(config, seed=0):
    model = NTMModel(config)
    generic_params(model, seed)
    return model


def inputs(steps=5, width=5, seed=0):
    return np.random.default_rng(seed).integers(0, 2, size=(steps, width)).astype(float)


def trace(model, xs):
    states = []
    probs, _ = model.forward(xs, trace=states)
    return probs.data, states


# --- config ---------------------------------------------------------------

@pytest.mark.parametrize("kw,key", [
    (dict(variant="ntm5"), "variant"),
    (dict(variant="ntm1", write_heads=2), "write_heads"),
    (dict(variant="ntm3", layers=1), "layers"),
    (dict(variant="ntm2", mix_mode="fixed", mix_a=1.5), "mix_a"),
    (dict(variant="ntm", shift_width=2), "shift_width"),
    (dict(variant="ntm", mem_slots=0), "mem_slots"),
])
def test_config_errors_name_key(kw, key):
    with pytest.raises(ConfigError) as exc:
        ModelConfig(**kw)
    assert exc.value.key == key


def test_default_layers_per_variant():
    assert ModelConfig(variant="ntm").layers == 1
    assert ModelConfig(variant="ntm3").layers == 2
    assert ModelConfig(variant="ntm3", layers=3).layers == 3


def test_memory_roles():
    P = lambda c: initial_state(c, bind(init_params(c))).memory.roles
    assert P(cfg("ntm")) == ["controlled"]
    assert P(cfg("ntm1")) == ["controlled", "hidden"]
    assert P(cfg("ntm2")) == ["controlled", "controlled"]
    assert P(cfg("ntm3", layers=3)) == ["controlled"] * 3


# --- whole-model cross-check vs loop reference ----------------------------

@pytest.mark.parametrize("variant,kw", [
    ("ntm", {}), ("ntm", dict(read_heads=2, write_heads=2)), ("ntm1", {}),
    ("ntm2", {}), ("ntm2", dict(share_head_params=True)), ("ntm3", {}), ("ntm3", dict(layers=3)),
    ("ntm1", dict(mix_mode="fixed", mix_a=0.3, mix_b=0.9)),
])
def test_forward_matches_reference(variant, kw):
    c = cfg(variant, mem_slots=4, mem_width=3, **kw)
    model = random_model(c, seed=11)
    xs = inputs(4)
    rec = []
    expected = ref.forward(c, model.params, xs, record=rec)
    probs, states = trace(model, xs)
    assert np.max(np.abs(probs - expected)) < 1e-12
    for st, r in zip(states[1:], rec):
        blocks = st.memory.blocks
        n_ctrl = len(r["blocks"])
        for got, want in zip(blocks[:n_ctrl], r["blocks"]):
            assert np.max(np.abs(got.data - want)) < 1e-12
        if r["hidden"] is not None:
            assert np.max(np.abs(blocks[-1].data - r["hidden"])) < 1e-12


def test_step_ntm_hand_set_single_step():
    c = cfg("ntm", mem_slots=4, mem_width=3)
    model = random_model(c, seed=5)
    xs = inputs(1)
    rec = []
    ref.forward(c, model.params, xs, record=rec)
    _, states = trace(model, xs)
    assert np.max(np.abs(states[1].memory.blocks[0].data - rec[0]["blocks"][0])) < 1e-12
    assert np.max(np.abs(states[1].reads[0].data - rec[0]["reads"][0])) < 1e-12


def test_zero_erase_add_leaves_memory_unchanged():
    c = cfg("ntm", write_heads=2, read_heads=2)
    model = random_model(c, seed=1)
    M = c.mem_width
    for h in range(2):
        W, b = model.params[f"write.0.{h}.W"], model.params[f"write.0.{h}.b"]
        base = M + 3 + c.shift_width
        W[base:] = 0.0
        b[base:base + M] = -1e3   # sigmoid(-1000) == 0 exactly
        b[base + M:] = 0.0
    _, states = trace(model, inputs(6))
    m0 = model.params["memory.0"]
    for st in states[1:]:
        assert np.array_equal(st.memory.blocks[0].data, m0)


def test_two_heads_weightings_on_simplex():
    c = cfg("ntm", read_heads=2, write_heads=2)
    _, states = trace(random_model(c, 2), inputs(6))
    for st in states[1:]:
        ws = st.memory.write_weights[0] + st.memory.read_weights
        assert len(ws) == 4
        for w in ws:
            assert np.all(w.data >= 0) and abs(w.data.sum() - 1) < 1e-6


# --- reductions -----------------------------------------------------------

def matched_baseline(model, block):
    """NTM parameters copied from a structured model, using its write heads on ``block``."""
    c = model.config
    base_cfg = ModelConfig(**{**c.to_dict(), "variant": "ntm", "layers": 1,
                              "mix_mode": "learned", "share_head_params": False})
    p = model.params
    bp = {k: v.copy() for k, v in p.items()
          if k.startswith(("ctrl.", "read.", "out."))}
    for h in range(c.write_heads):
        src = f"write.shared.{h}" if c.share_head_params else f"write.{block}.{h}"
        bp[f"write.0.{h}.W"] = p[src + ".W"].copy()
        bp[f"write.0.{h}.b"] = p[src + ".b"].copy()
        bp[f"write.0.{h}.w0"] = p[f"write.{block}.{h}.w0"].copy()
    bp["memory.0"] = p[f"memory.{block}"].copy()
    return NTMModel(base_cfg, bp)


def test_ntm1_a0_b1_equals_ntm():
    model = random_model(cfg("ntm1", mix_mode="fixed", mix_a=0.0, mix_b=1.0), 4)
    xs = inputs(5, seed=2)
    base = matched_baseline(model, 0)
    assert np.array_equal(model.forward(xs)[0].data, base.forward(xs)[0].data)


def test_ntm2_a1_b0_equals_ntm():
    model = random_model(cfg("ntm2", mix_mode="fixed", mix_a=1.0, mix_b=0.0), 5)
    xs = inputs(5, seed=3)
    base = matched_baseline(model, 1)
    assert np.array_equal(model.forward(xs)[0].data, base.forward(xs)[0].data)


def test_ntm3_a1_b0_deep_block_is_standalone_ntm_on_layer2():
    c = cfg("ntm3", mix_mode="fixed", mix_a=1.0, mix_b=0.0)
    model = random_model(c, 6)
    _, states = trace(model, inputs(5, seed=4))
    # recompute the deep block as a lone write-only memory driven by layer-2 outputs
    mem = model.params["memory.1"].copy()
    w_prev = ref.softmax(model.params["write.1.0.w0"])
    for st in states[1:]:
        d = ref.decode(model.params["write.1.0.W"], model.params["write.1.0.b"],
                       st.ctrl.hidden[1].data, c.mem_width, c.shift_width, True)
        w_prev = ref.address(d, w_prev, mem)
        mem = ref.write(mem, [(w_prev, d["e"], d["a"])])
        assert np.max(np.abs(st.memory.blocks[1].data - mem)) < 1e-12


def test_ntm1_a1_b0_hidden_memory_frozen():
    model = random_model(cfg("ntm1", mix_mode="fixed", mix_a=1.0, mix_b=0.0), 7)
    _, states = trace(model, inputs(6, seed=5))
    h0 = model.params["memory.hidden"]
    for st in states[1:]:
        assert np.array_equal(st.memory.blocks[1].data, h0)
        for w, r in zip(st.memory.read_weights, st.reads):
            assert np.array_equal(r.data, w.data @ h0)


def test_ntm2_a0_b1_reads_see_only_m1():
    model = random_model(cfg("ntm2", mix_mode="fixed", mix_a=0.0, mix_b=1.0), 8)
    _, states = trace(model, inputs(5, seed=6))
    for st in states[1:]:
        assert np.array_equal(st.memory.blocks[1].data, st.memory.blocks[0].data)


def test_ntm3_equals_ntm2_with_identical_drivers_and_shared_heads():
    c2 = cfg("ntm2", share_head_params=True)
    c3 = cfg("ntm3", share_head_params=True)
    p = init_params(c2, seed=9)
    rng = np.random.default_rng(1)
    P2 = bind(p)
    s2 = initial_state(c2, P2).memory
    s3 = initial_state(c3, P2).memory
    for _ in range(4):
        c = tc.Tensor(rng.uniform(-1, 1, size=c2.controller_width))
        s2, r2 = step_ntm2(c2, P2, s2, c)
        s3, r3 = step_ntm3(c3, P2, s3, [c, c])
        assert np.array_equal(r2[0].data, r3[0].data)


def test_ntm3_layer_count_mismatch():
    c = cfg("ntm3")
    P = bind(init_params(c))
    st = initial_state(c, P).memory
    with pytest.raises(ConfigError):
        step_ntm3(c, P, st, [tc.Tensor(np.zeros(c.controller_width))] * 3)


# --- mixing ---------------------------------------------------------------

def test_mix_linearity_example():
    out = mix_update(tc.Tensor(np.array([[1.0, 0.0]])), tc.Tensor(np.array([[0.0, 1.0]])),
                     tc.Tensor(np.array(0.5)), tc.Tensor(np.array(0.5)))
    assert np.array_equal(out.data, [[0.5, 0.5]])


def test_mix_superposition():
    rng = np.random.default_rng(3)
    a, b = tc.Tensor(np.array(0.37)), tc.Tensor(np.array(0.81))
    X1, Y1, X2, Y2 = (rng.normal(size=(4, 3)) for _ in range(4))
    al, be = 1.7, -0.4
    f = lambda X, Y: mix_update(tc.Tensor(X), tc.Tensor(Y), a, b).data
    lhs = f(al * X1 + be * X2, al * Y1 + be * Y2)
    rhs = al * f(X1, Y1) + be * f(X2, Y2)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_mix_matches_per_entry():
    rng = np.random.default_rng(4)
    own, up = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    out = mix_update(tc.Tensor(own), tc.Tensor(up), tc.Tensor(np.array(0.2)), tc.Tensor(np.array(0.7))).data
    for i in range(3):
        for j in range(2):
            assert abs(out[i, j] - (0.2 * own[i, j] + 0.7 * up[i, j])) < 1e-12


# --- gradient paths -------------------------------------------------------

def tiny_episode(c, seed=0):
    rng = np.random.default_rng(seed)
    xs = rng.integers(0, 2, size=(3, c.input_width)).astype(float)
    ys = rng.integers(0, 2, size=(3, c.output_width)).astype(float)
    return Episode("random", xs, ys, np.ones(3), 3, c.output_width)


def test_l1_head_gradient_nonzero_when_b_nonzero():
    c = cfg("ntm2", mem_slots=4, mem_width=3, mix_mode="fixed", mix_a=0.5, mix_b=0.5)
    model = random_model(c, 12)
    ep = tiny_episode(c)
    _, grads = compute_gradients(model, ep)
    g = grads["write.0.0.W"]
    assert np.max(np.abs(g)) > 1e-6
    num = fd_grad(lambda v: (model.params.__setitem__("write.0.0.W", v), model.loss(ep)[0].item())[1],
                  model.params["write.0.0.W"].copy())
    assert np.max(np.abs(num)) > 1e-6
    assert np.allclose(g, num, atol=1e-8, rtol=1e-4)


def test_l1_head_gradient_zero_when_b_zero():
    c = cfg("ntm2", mem_slots=4, mem_width=3, mix_mode="fixed", mix_a=0.5, mix_b=0.0)
    model = random_model(c, 13)
    _, grads = compute_gradients(model, tiny_episode(c))
    for name in ("write.0.0.W", "write.0.0.b", "write.0.0.w0", "memory.0"):
        assert np.all(grads[name] == 0), name


def test_memory_finite_over_long_run():
    for variant in ("ntm", "ntm1", "ntm2", "ntm3"):
        c = cfg(variant)
        P = bind(init_params(c, seed=1))
        state = initial_state(c, P).memory
        rng = np.random.default_rng(0)
        step = {"ntm": step_ntm, "ntm1": step_ntm1, "ntm2": step_ntm2}.get(variant)
        for _ in range(1000):
            outs = [tc.Tensor(rng.uniform(-1, 1, size=c.controller_width)) for _ in range(c.layers)]
            state, _ = step(c, P, state, outs[-1]) if step else step_ntm3(c, P, state, outs)
        for blk in state.blocks:
            assert np.all(np.isfinite(blk.data))


# --- initial state --------------------------------------------------------

def test_init_state_deterministic():
    c = cfg("ntm2")
    a, b = init_state(c, seed=42), init_state(c, seed=42)
    for x, y in zip(a.memory.blocks, b.memory.blocks):
        assert np.array_equal(x.data, y.data)
    for x, y in zip(a.memory.read_weights, b.memory.read_weights):
        assert np.array_equal(x.data, y.data)


def test_init_state_full_size_shape():
    st = init_state(ModelConfig(variant="ntm1"), seed=0)
    assert all(b.shape == (128, 20) for b in st.memory.blocks)
    assert st.memory.read_weights[0].shape == (128,)


def test_init_slots_distinct():
    st = init_state(ModelConfig(variant="ntm2"), seed=0)
    for blk in st.memory.blocks:
        rows = blk.data
        for i in range(len(rows)):
            for j in range(i + 1, len(rows)):
                assert not np.array_equal(rows[i], rows[j])


def test_init_weightings_favour_first_slot():
    st = init_state(cfg("ntm"), seed=0)
    w = st.memory.write_weights[0][0].data
    assert w[0] == pytest.approx(0.9)
    assert abs(w.sum() - 1) < 1e-12

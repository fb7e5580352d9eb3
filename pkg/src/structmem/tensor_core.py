"""Dense float64 tensors with a define-by-run tape for reverse-mode differentiation.

A :class:`Tape` is an append-only list of recorded operations. Because every
node is appended after its inputs, the list order is already topological and
``backward`` is a single reverse sweep.  Tensors that are not on a tape are
constants: operations on constants only compute values.

Gradient rules are module-level ``_*_vjp`` functions looked up at backward
time, so a test can swap one out to confirm the gradient checker notices.
"""

import numpy as np

from .errors import ContractError, DimensionError, ConfigError

PROB_CLAMP = 1e-7
COSINE_EPS = 1e-8
SHARPEN_FLOOR = 1e-16


class Tensor:
    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape=None, node_id=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def requires_grad(self):
        return self.tape is not None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f", node={self.node_id}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, _wrap(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.shape))

    def __rsub__(self, other):
        if np.isscalar(other):
            return affine(self, -1.0, float(other))
        return sub(_wrap(other, self.shape), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        if isinstance(other, Tensor) and other.size == 1 and self.size != 1:
            return scale(self, other)
        return mul(self, _wrap(other, self.shape))

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x, shape):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), shape))


def constant(x):
    return Tensor(x)


class Tape:
    """Append-only record of operations plus per-node gradient buffers."""

    def __init__(self):
        self.nodes = []  # (parent ids, vjp, shape)
        self.grads = None
        self._swept = False

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value):
        """Register ``value`` as a differentiable input and return its tensor."""
        t = Tensor(value, self, len(self.nodes))
        self.nodes.append(((), None, t.data.shape))
        return t

    def record(self, value, inputs, vjp):
        parents = tuple(t.node_id if t.tape is self else _foreign(t) for t in inputs)
        out = Tensor(value, self, len(self.nodes))
        self.nodes.append((parents, vjp, out.data.shape))
        return out

    def grad(self, t):
        """Gradient of the last backward() loss w.r.t. ``t`` (zeros if unreachable)."""
        if self.grads is None:
            raise ContractError("backward() has not been run on this tape")
        if t.tape is not self:
            raise ContractError("tensor is not on this tape")
        g = self.grads[t.node_id]
        return np.zeros(t.data.shape) if g is None else g

    def reset(self):
        self.grads = None
        self._swept = False


def _foreign(t):
    if t.tape is not None:
        raise ContractError("operands belong to different tapes")
    return None


def _result(value, inputs, vjp):
    for t in inputs:
        if t.tape is not None:
            return t.tape.record(value, inputs, vjp)
    return Tensor(value)


def backward(tape, loss):
    """Reverse sweep from the scalar ``loss``; fills ``tape.grads``."""
    if loss.tape is not tape:
        raise ContractError("loss is not recorded on this tape")
    if loss.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if tape._swept:
        raise ContractError("backward() already ran on this tape; call reset() first")
    tape._swept = True
    grads = [None] * len(tape.nodes)
    grads[loss.node_id] = np.ones(loss.shape)
    nodes = tape.nodes
    for i in range(loss.node_id, -1, -1):
        g = grads[i]
        if g is None:
            continue
        parents, vjp, _ = nodes[i]
        if vjp is None:
            continue
        pgrads = vjp(g)
        for pid, pg in zip(parents, pgrads):
            if pid is None or pg is None:
                continue
            if grads[pid] is None:
                grads[pid] = pg
            else:
                grads[pid] = grads[pid] + pg
    tape.grads = grads
    return grads


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# gradient rules

def _matmul_vjp(a, b, g):
    if a.ndim == 2 and b.ndim == 2:
        return g @ b.T, a.T @ g
    if a.ndim == 2:  # matrix @ vector
        return np.outer(g, b), a.T @ g
    if b.ndim == 2:  # vector @ matrix
        return b @ g, np.outer(a, g)
    return g * b, g * a


def _sigmoid_vjp(y, g):
    return g * y * (1.0 - y)


def _tanh_vjp(y, g):
    return g * (1.0 - y * y)


def _softmax_vjp(y, g):
    return y * (g - np.dot(g, y))


def _pow_vjp(x, gamma, y, g):
    # y = x**gamma; zero where x was floored
    live = x > SHARPEN_FLOOR
    xf = np.where(live, x, 1.0)
    gx = np.where(live, g * gamma * y / xf, 0.0)
    ggamma = np.sum(g * y * np.log(np.maximum(x, SHARPEN_FLOOR)))
    return gx, ggamma


# ---------------------------------------------------------------------------
# arithmetic

def matmul(a, b):
    da, db = a.data, b.data
    inner_a = da.shape[-1]
    inner_b = db.shape[0]
    if da.ndim == 0 or db.ndim == 0 or da.ndim > 2 or db.ndim > 2 or inner_a != inner_b:
        raise DimensionError(f"matmul: cannot multiply shapes {da.shape} and {db.shape}")
    return _result(da @ db, (a, b), lambda g: _matmul_vjp(da, db, g))


def add(a, b):
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same(a, b, "mul")
    da, db = a.data, b.data
    return _result(da * db, (a, b), lambda g: (g * db, g * da))


def scalar_mul(x, c):
    """Multiply by a Python float constant."""
    return _result(x.data * c, (x,), lambda g: (g * c,))


def affine(x, alpha, beta):
    """alpha * x + beta with float constants (used for 1 - g, 1 + softplus)."""
    return _result(alpha * x.data + beta, (x,), lambda g: (alpha * g,))


def scale(x, s):
    """Multiply tensor ``x`` by the single-element tensor ``s``."""
    if s.size != 1:
        raise DimensionError(f"scale: factor must have one element, got {s.shape}")
    dx, ds = x.data, s.data
    sv = ds.reshape(-1)[0]
    return _result(dx * sv, (x, s),
                   lambda g: (g * sv, np.reshape(np.sum(g * dx), ds.shape)))


def sigmoid(x):
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: (_sigmoid_vjp(y, g),))


def tanh(x):
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (_tanh_vjp(y, g),))


def relu(x):
    dx = x.data
    return _result(np.maximum(dx, 0.0), (x,), lambda g: (g * (dx > 0),))


def softplus(x):
    dx = x.data
    y = np.logaddexp(0.0, dx)
    return _result(y, (x,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * dx)),))


def pow_positive(x, gamma):
    """x ** gamma for x > 0; ``gamma`` is a single-element tensor.

    Inputs are floored at 1e-16 before exponentiation.
    """
    dx = np.maximum(x.data, SHARPEN_FLOOR)
    gv = gamma.data.reshape(-1)[0]
    y = dx ** gv
    raw = x.data

    def vjp(g):
        gx, gg = _pow_vjp(raw, gv, y, g)
        return gx, np.reshape(gg, gamma.data.shape)

    return _result(y, (x, gamma), vjp)


def total(x):
    """Sum of all entries, as a 0-d tensor."""
    shape = x.shape
    return _result(np.sum(x.data), (x,), lambda g: (np.full(shape, float(g)),))


def concat(parts):
    """Concatenate 1-D tensors."""
    for p in parts:
        if p.data.ndim != 1:
            raise DimensionError(f"concat: expected 1-D parts, got {p.shape}")
    sizes = [p.size for p in parts]
    bounds = np.cumsum([0] + sizes)
    value = np.concatenate([p.data for p in parts])
    return _result(value, tuple(parts),
                   lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts))))


def slice_(x, start, stop):
    """x[start:stop] along the first axis."""
    n = x.shape[0]
    if not 0 <= start <= stop <= n:
        raise DimensionError(f"slice: [{start}:{stop}] out of range for shape {x.shape}")
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _result(x.data[start:stop], (x,), vjp)


def split(x, sizes):
    """Cut a 1-D tensor into consecutive pieces of the given sizes."""
    if sum(sizes) != x.shape[0]:
        raise DimensionError(f"split: sizes {sizes} do not cover shape {x.shape}")
    out, pos = [], 0
    for s in sizes:
        out.append(slice_(x, pos, pos + s))
        pos += s
    return out


def stack(rows):
    """Stack equal-length 1-D tensors into a matrix."""
    shape0 = rows[0].shape
    for r in rows:
        _check_same(rows[0], r, "stack")
    value = np.stack([r.data for r in rows]) if rows else np.zeros((0,) + shape0)
    return _result(value, tuple(rows), lambda g: tuple(g[i] for i in range(len(rows))))


# ---------------------------------------------------------------------------
# attention kernels

def softmax(x):
    d = x.data
    e = np.exp(d - np.max(d))
    y = e / np.sum(e)
    return _result(y, (x,), lambda g: (_softmax_vjp(y, g),))


def cosine_similarity(u, v):
    """u.v / (|u| |v| + 1e-8).

    ``v`` may be a vector (scalar result) or a matrix, in which case the
    similarity of ``u`` with every row is returned.
    """
    du, dv = u.data, v.data
    if du.ndim != 1 or dv.shape[-1] != du.shape[0] or dv.ndim > 2:
        raise DimensionError(f"cosine_similarity: incompatible shapes {du.shape} and {dv.shape}")
    rows = dv if dv.ndim == 2 else dv[None, :]
    nu = np.sqrt(np.dot(du, du))
    nv = np.sqrt(np.sum(rows * rows, axis=1))
    dots = rows @ du
    den = nu * nv + COSINE_EPS
    sim = dots / den

    def vjp(g):
        g = np.reshape(g, -1)
        coef = g * dots / (den * den)
        uhat = du / nu if nu > 0 else np.zeros_like(du)
        gu = (g / den) @ rows - np.dot(coef, nv) * uhat
        safe_nv = np.where(nv > 0, nv, 1.0)
        gv = (g / den)[:, None] * du[None, :] - (coef * nu / safe_nv)[:, None] * rows
        return gu, (gv if dv.ndim == 2 else gv[0])

    return _result(sim if dv.ndim == 2 else sim[0], (u, v), vjp)


_SHIFT_INDEX = {}


def _shift_index(n, k):
    """(gather, scatter) index matrices for the K circular shifts of an N-vector."""
    key = (n, k)
    if key not in _SHIFT_INDEX:
        if k % 2 == 0 or k > n or k < 1:
            raise ConfigError(f"shift kernel width must be odd and <= {n}, got {k}",
                              key="shift_width")
        offsets = np.arange(-(k // 2), k // 2 + 1)[:, None]
        i = np.arange(n)[None, :]
        _SHIFT_INDEX[key] = ((i - offsets) % n, (i + offsets) % n)
    return _SHIFT_INDEX[key]


def circular_convolve(w, s):
    """out[i] = sum_j w[(i - j) mod N] * s[j + K//2] for shifts j in -K//2..K//2."""
    dw, ds = w.data, s.data
    gather, scatter = _shift_index(dw.shape[0], ds.shape[0])
    rolled = dw[gather]
    out = ds @ rolled

    def vjp(g):
        return ds @ g[scatter], rolled @ g

    return _result(out, (w, s), vjp)


def sharpen(w, gamma):
    """w**gamma / sum(w**gamma), inputs floored at 1e-16."""
    raw = w.data
    gv = gamma.data.reshape(-1)[0]
    u = np.maximum(raw, SHARPEN_FLOOR) ** gv
    total_u = np.sum(u)
    y = u / total_u

    def vjp(g):
        gu = (g - np.dot(g, y)) / total_u
        gx, gg = _pow_vjp(raw, gv, u, gu)
        return gx, np.reshape(gg, gamma.data.shape)

    return _result(y, (w, gamma), vjp)


def erase_add(mem, weights, erases, adds):
    """Multi-head erase-then-add write.

    new = mem * prod_h(1 - w_h e_h^T) + sum_h w_h a_h^T. The combined erase
    makes the result independent of head order.
    """
    dm = mem.data
    n, m = dm.shape
    ws = [x.data for x in weights]
    es = [x.data for x in erases]
    as_ = [x.data for x in adds]
    for w, e, a in zip(ws, es, as_):
        if w.shape != (n,) or e.shape != (m,) or a.shape != (m,):
            raise DimensionError(
                f"erase_add: memory {dm.shape} incompatible with w {w.shape}, e {e.shape}, a {a.shape}")
    keeps = [1.0 - np.outer(w, e) for w, e in zip(ws, es)]
    keep = np.ones_like(dm)
    for k in keeps:
        keep = keep * k
    out = dm * keep
    for w, a in zip(ws, as_):
        out = out + np.outer(w, a)
    heads = len(ws)

    def vjp(g):
        gmem = g * keep
        gw, ge, ga = [], [], []
        for h in range(heads):
            others = np.ones_like(dm)
            for j in range(heads):
                if j != h:
                    others = others * keeps[j]
            gkeep = g * dm * others
            gw.append(-(gkeep @ es[h]) + g @ as_[h])
            ge.append(-(ws[h] @ gkeep))
            ga.append(ws[h] @ g)
        return (gmem, *gw, *ge, *ga)

    return _result(out, (mem, *weights, *erases, *adds), vjp)


def bce_loss(pred, target, mask):
    """Masked binary cross-entropy summed over scored entries.

    ``mask`` may match ``pred`` or be one entry per row (broadcast across
    columns). Predictions are clamped to [1e-7, 1 - 1e-7].
    """
    p, t = pred.data, np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"bce_loss: pred {p.shape} vs target {t.shape}")
    if m.shape != p.shape:
        if p.ndim == 2 and m.shape == (p.shape[0],):
            m = np.broadcast_to(m[:, None], p.shape)
        else:
            raise DimensionError(f"bce_loss: mask {m.shape} incompatible with pred {p.shape}")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -np.sum(m * (t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)))
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)

    def vjp(g):
        gp = m * (-t / pc + (1.0 - t) / (1.0 - pc)) * inside
        return (g * gp,)

    return _result(np.asarray(loss), (pred,), vjp)

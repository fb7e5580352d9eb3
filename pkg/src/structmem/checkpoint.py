"""Checkpoint files: a text manifest followed by one little-endian float64 blob.

Layout::

    structmem-checkpoint 1
    iteration=120
    config.<key>=<value>          (one line per flat config key)
    tensor <name> <shape> <offset> <count>
    ...
    end
    <blob>

``shape`` is comma-separated (``-`` for a 0-d scalar); offsets are in bytes
from the start of the blob.  Optimizer buffers are stored as
``opt.ms/<param>`` and ``opt.mom/<param>`` tensors.
"""

import numpy as np

from .config import coerce
from .errors import ConfigError
from .trainer import RmsPropState, RunState

MAGIC = "structmem-checkpoint 1"
OPT_KEYS = ("lr", "momentum", "decay", "eps")


def _shape_text(shape):
    return ",".join(str(d) for d in shape) if shape else "-"


def _parse_shape(text):
    return () if text == "-" else tuple(int(d) for d in text.split(","))


def save_checkpoint(path, state, config_flat):
    tensors = [(name, arr) for name, arr in state.params.items()]
    tensors += [(f"opt.ms/{k}", v) for k, v in state.opt.mean_square.items()]
    tensors += [(f"opt.mom/{k}", v) for k, v in state.opt.velocity.items()]
    lines = [MAGIC, f"iteration={state.iteration}"]
    lines += [f"opt.{k}={getattr(state.opt, k)!r}" for k in OPT_KEYS]
    lines += [f"config.{k}={v!r}" if isinstance(v, float) else f"config.{k}={v}"
              for k, v in config_flat.items()]
    offset, chunks = 0, []
    for name, arr in tensors:
        data = np.asarray(arr, dtype="<f8")
        lines.append(f"tensor {name} {_shape_text(data.shape)} {offset} {data.size}")
        chunks.append(data.tobytes())
        offset += data.nbytes
    lines.append("end")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode())
        for c in chunks:
            f.write(c)


def read_manifest(path):
    """Return (header dict, tensor entries, blob start byte)."""
    header, entries = {}, []
    with open(path, "rb") as f:
        first = f.readline().decode().rstrip("\n")
        if first != MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        while True:
            line = f.readline()
            if not line:
                raise ConfigError(f"{path}: truncated manifest")
            line = line.decode().rstrip("\n")
            if line == "end":
                return header, entries, f.tell()
            if line.startswith("tensor "):
                _, name, shape, off, count = line.split(" ")
                entries.append((name, _parse_shape(shape), int(off), int(count)))
            else:
                k, v = line.split("=", 1)
                header[k] = v


def load_checkpoint(path):
    """Return (RunState, flat config dict)."""
    header, entries, start = read_manifest(path)
    with open(path, "rb") as f:
        f.seek(start)
        blob = f.read()
    params, ms, mom = {}, {}, {}
    for name, shape, off, count in entries:
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(np.float64)
        arr = arr.reshape(shape)
        if name.startswith("opt.ms/"):
            ms[name[len("opt.ms/"):]] = arr
        elif name.startswith("opt.mom/"):
            mom[name[len("opt.mom/"):]] = arr
        else:
            params[name] = arr
    opt = RmsPropState(*(float(header[f"opt.{k}"]) for k in OPT_KEYS), ms, mom)
    config = {k[len("config."):]: coerce(k[len("config."):], v)
              for k, v in header.items() if k.startswith("config.")}
    return RunState(params, opt, int(header["iteration"])), config

"""Seeded episode generators for the copy and associative-recall tasks.

Delimiters live on their own input channels, after the content bits:
copy uses one (end of input), recall uses two (item start, query bracket).
The loss mask is 1 exactly on the answer steps.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class Episode:
    task: str
    inputs: np.ndarray    # T x (item_width + delimiter channels)
    targets: np.ndarray   # T x item_width
    mask: np.ndarray      # T
    item_count: int
    item_width: int
    query: int = -1       # recall: 0-based index of the queried item

    @property
    def steps(self):
        return self.inputs.shape[0]

    @property
    def scored_bits(self):
        return int(self.mask.sum()) * self.targets.shape[1]

    def fingerprint(self):
        return (self.inputs.astype(np.uint8).tobytes() + b"|"
                + self.targets.astype(np.uint8).tobytes())


def _check_range(lo, hi, key, minimum=1):
    if not (isinstance(lo, (int, np.integer)) and isinstance(hi, (int, np.integer))):
        raise ConfigError(f"{key} bounds must be integers, got {lo!r}..{hi!r}", key=key)
    if lo < minimum or hi < lo:
        raise ConfigError(f"{key} must satisfy {minimum} <= lo <= hi, got {lo}..{hi}", key=key)


def gen_copy(seed, len_range=(1, 20), item_width=8):
    lo, hi = len_range
    _check_range(lo, hi, "copy_len")
    if item_width < 1:
        raise ConfigError("item_width must be >= 1", key="item_width")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(lo, hi + 1))
    bits = rng.integers(0, 2, size=(n, item_width)).astype(np.float64)

    T = 2 * n + 1
    inputs = np.zeros((T, item_width + 1))
    inputs[:n, :item_width] = bits
    inputs[n, item_width] = 1.0
    targets = np.zeros((T, item_width))
    targets[n + 1:] = bits
    mask = np.zeros(T)
    mask[n + 1:] = 1.0
    return Episode("copy", inputs, targets, mask, n, item_width)


def gen_recall(seed, items_range=(2, 6), item_len=3, item_width=6):
    lo, hi = items_range
    _check_range(lo, hi, "recall_items", minimum=2)
    if item_len < 1 or item_width < 1:
        raise ConfigError("item_len and item_width must be >= 1", key="item_len")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(lo, hi + 1))
    items = rng.integers(0, 2, size=(n, item_len, item_width)).astype(np.float64)
    q = int(rng.integers(0, n - 1))

    item_delim, query_delim = item_width, item_width + 1
    T = n * (item_len + 1) + (item_len + 2) + item_len
    inputs = np.zeros((T, item_width + 2))
    t = 0
    for item in items:
        inputs[t, item_delim] = 1.0
        inputs[t + 1:t + 1 + item_len, :item_width] = item
        t += item_len + 1
    inputs[t, query_delim] = 1.0
    inputs[t + 1:t + 1 + item_len, :item_width] = items[q]
    inputs[t + 1 + item_len, query_delim] = 1.0
    t += item_len + 2

    targets = np.zeros((T, item_width))
    targets[t:] = items[q + 1]
    mask = np.zeros(T)
    mask[t:] = 1.0
    return Episode("recall", inputs, targets, mask, n, item_width, query=q)


@dataclass
class TaskConfig:
    task: str = "copy"
    copy_min: int = 1
    copy_max: int = 20
    item_width: int = 8
    recall_min: int = 2
    recall_max: int = 6
    recall_item_len: int = 3
    recall_width: int = 6

    def validate(self):
        if self.task not in ("copy", "recall"):
            raise ConfigError(f"task must be 'copy' or 'recall', got {self.task!r}", key="task")
        if self.task == "copy":
            _check_range(self.copy_min, self.copy_max, "copy_min")
        else:
            _check_range(self.recall_min, self.recall_max, "recall_min", minimum=2)

    @property
    def input_width(self):
        return self.item_width + 1 if self.task == "copy" else self.recall_width + 2

    @property
    def output_width(self):
        return self.item_width if self.task == "copy" else self.recall_width

    def generate(self, seed):
        if self.task == "copy":
            return gen_copy(seed, (self.copy_min, self.copy_max), self.item_width)
        return gen_recall(seed, (self.recall_min, self.recall_max),
                          self.recall_item_len, self.recall_width)


TASK_STREAM = {"copy": 1, "recall": 2}


def episode_seed(run_seed, iteration, task):
    """Seed material for the episode used at ``iteration`` of a run."""
    return [int(run_seed), TASK_STREAM[task], int(iteration)]


# ---------------------------------------------------------------------------
# text dump

def dump_episode(ep, index=0):
    """Plain-text grid: input bits | target bits | mask, one row per step."""
    lines = [f"# episode {index} task={ep.task} items={ep.item_count} steps={ep.steps}"]
    for x, y, m in zip(ep.inputs, ep.targets, ep.mask):
        lines.append("".join(str(int(v)) for v in x) + " | "
                     + "".join(str(int(v)) for v in y) + " | " + str(int(m)))
    return "\n".join(lines)


def parse_dump(text):
    """Inverse of dump_episode over a stream of episodes: yields (header, inputs, targets, mask)."""
    header, rows = None, []
    for line in text.splitlines() + ["# end"]:
        if line.startswith("#"):
            if header is not None:
                arr = [[list(map(int, part.strip())) for part in r.split("|")] for r in rows]
                yield (header,
                       np.array([r[0] for r in arr], dtype=np.float64),
                       np.array([r[1] for r in arr], dtype=np.float64),
                       np.array([r[2][0] for r in arr], dtype=np.float64))
            header, rows = line, []
        elif line.strip():
            rows.append(line)

"""Full-unroll BPTT training with RMSProp, plus run-level metrics."""

import csv
import logging
import math
from dataclasses import dataclass, field, fields, asdict

import numpy as np

from . import tensor_core as tc
from .errors import ConfigError, ContractError, TrainingAborted
from .memory_graph import ModelConfig, NTMModel, config_hash
from .tasks import TaskConfig, episode_seed

log = logging.getLogger(__name__)

CSV_FIELDS = ("iteration", "loss_sum", "loss_per_item", "loss_per_bit", "outlier", "grad_norm")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    momentum: float = 0.9
    decay: float = 0.95
    eps: float = 1e-8
    clip: float = 10.0           # global-norm threshold; <= 0 disables
    max_iters: int = 1000
    sample_every: int = 25
    outlier_threshold: float = 0.5
    converge_threshold: float = 0.02
    converge_window: int = 11

    def validate(self):
        if self.lr < 0:
            raise ConfigError("lr must be >= 0", key="lr")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)", key="momentum")
        if not 0 <= self.decay < 1:
            raise ConfigError("decay must lie in [0, 1)", key="decay")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0", key="max_iters")
        if self.sample_every < 1:
            raise ConfigError("sample_every must be >= 1", key="sample_every")
        if self.converge_window < 1:
            raise ConfigError("converge_window must be >= 1", key="converge_window")


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        self.task.validate()
        self.train.validate()
        # the task fixes the model's I/O widths and the run seed drives init
        self.model.input_width = self.task.input_width
        self.model.output_width = self.task.output_width
        self.model.seed = self.seed
        self.model.validate()

    def flat(self):
        out = {"seed": self.seed}
        for part in (self.model, self.task, self.train):
            for k, v in asdict(part).items():
                if k not in ("seed", "input_width", "output_width"):
                    out[k] = v
        return out

    @classmethod
    def from_flat(cls, d):
        def pick(dc):
            return {f.name: d[f.name] for f in fields(dc) if f.name in d}
        return cls(ModelConfig(**pick(ModelConfig)), TaskConfig(**pick(TaskConfig)),
                   TrainConfig(**pick(TrainConfig)), int(d.get("seed", 0)))

    def hash(self):
        return config_hash(self.flat())


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class RmsPropState:
    lr: float = 1e-4
    momentum: float = 0.9
    decay: float = 0.95
    eps: float = 1e-8
    mean_square: dict = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, lr=1e-4, momentum=0.9, decay=0.95, eps=1e-8):
        return cls(lr, momentum, decay, eps,
                   {k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def rmsprop_step(params, grads, state):
    """In-place RMSProp with momentum on the update.

    ms  <- decay*ms + (1-decay)*g^2
    mom <- momentum*mom - lr*g/sqrt(ms + eps)
    p   <- p + mom
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        ms = state.mean_square[name]
        ms *= state.decay
        ms += (1.0 - state.decay) * g * g
        mom = state.velocity[name]
        mom *= state.momentum
        mom -= state.lr * g / np.sqrt(ms + state.eps)
        params[name] = np.asarray(p + mom)
    return params


def clip_gradients(grads, max_norm):
    """Scale all gradients by one factor so the global L2 norm is <= max_norm.

    Returns (clipped grads, pre-clip norm).
    """
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm <= 0 or norm <= max_norm or not math.isfinite(norm):
        return grads, norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


# ---------------------------------------------------------------------------
# iterations

@dataclass
class TrainRecord:
    iteration: int
    loss_sum: float
    loss_per_item: float
    loss_per_bit: float
    outlier: bool
    grad_norm: float


def compute_gradients(model, episode):
    """Loss value and gradient dict for one episode."""
    tape = tc.Tape()
    loss, _, P = model.loss(episode, tape)
    tc.backward(tape, loss)
    return loss.item(), {k: tape.grad(t) for k, t in P.items()}


def train_iteration(model, episode, opt, train_cfg, iteration=0):
    loss_sum, grads = compute_gradients(model, episode)
    grads, norm = clip_gradients(grads, train_cfg.clip)
    per_bit = loss_sum / episode.scored_bits
    record = TrainRecord(iteration, loss_sum, loss_sum / episode.item_count, per_bit,
                         per_bit > train_cfg.outlier_threshold, norm)
    if not (math.isfinite(loss_sum) and math.isfinite(norm)):
        raise TrainingAborted(
            f"non-finite loss at iteration {iteration} (loss={loss_sum}, grad_norm={norm})", record)
    rmsprop_step(model.params, grads, opt)
    return record


# ---------------------------------------------------------------------------
# metrics

def sampled(records, every):
    return [r for r in records if r.iteration % every == 0]


def convergence_iteration(samples, threshold, window):
    """First sampled iteration whose trailing ``window``-sample median per-bit loss < threshold."""
    losses = [r.loss_per_bit for r in samples]
    for i in range(window - 1, len(samples)):
        if float(np.median(losses[i - window + 1:i + 1])) < threshold:
            return samples[i].iteration
    return None


def outlier_count(samples, converged_at):
    """Outlier samples strictly after convergence; None for a run that never converged."""
    if converged_at is None:
        return None
    return sum(1 for r in samples if r.iteration > converged_at and r.outlier)


def summarize(samples, train_cfg, seed, cfg_hash):
    conv = convergence_iteration(samples, train_cfg.converge_threshold, train_cfg.converge_window)
    return {
        "convergence_iteration": conv,
        "outlier_count": outlier_count(samples, conv),
        "final_loss_per_bit": samples[-1].loss_per_bit if samples else None,
        "seed": seed,
        "config_hash": cfg_hash,
    }


def write_csv(path, samples):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_FIELDS)
        for r in samples:
            w.writerow([r.iteration, repr(r.loss_sum), repr(r.loss_per_item),
                        repr(r.loss_per_bit), int(r.outlier), repr(r.grad_norm)])


def read_csv(path):
    with open(path, newline="") as f:
        return [TrainRecord(int(row["iteration"]), float(row["loss_sum"]),
                            float(row["loss_per_item"]), float(row["loss_per_bit"]),
                            row["outlier"] == "1", float(row["grad_norm"]))
                for row in csv.DictReader(f)]


def write_summary(path, summary):
    with open(path, "w") as f:
        for k, v in summary.items():
            f.write(f"{k}={'none' if v is None else (repr(v) if isinstance(v, float) else v)}\n")


def read_summary(path):
    out = {}
    with open(path) as f:
        for line in f:
            if "=" in line:
                k, v = line.rstrip("\n").split("=", 1)
                out[k] = v
    return out


# ---------------------------------------------------------------------------
# experiments

@dataclass
class RunState:
    params: dict
    opt: RmsPropState
    iteration: int = 0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    samples: list
    state: RunState
    summary: dict


def fresh_state(config):
    model = NTMModel(config.model)
    t = config.train
    return RunState(model.params, RmsPropState.for_params(model.params, t.lr, t.momentum,
                                                          t.decay, t.eps), 0)


def run_experiment(config, state=None, iterations=None, on_record=None):
    """Train from ``state`` (fresh if None) for ``iterations`` (default max_iters - done).

    Episodes are a pure function of (seed, task, iteration), so resuming from a
    checkpoint reproduces an uninterrupted run exactly.
    """
    if state is None:
        state = fresh_state(config)
    model = NTMModel(config.model, state.params)
    t = config.train
    if iterations is None:
        iterations = max(t.max_iters - state.iteration, 0)
    records = []
    for _ in range(iterations):
        it = state.iteration + 1
        episode = config.task.generate(episode_seed(config.seed, it, config.task.task))
        rec = train_iteration(model, episode, state.opt, t, it)
        state.iteration = it
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if it % t.sample_every == 0:
            log.debug("iter %d loss/bit %.4f", it, rec.loss_per_bit)
    state.params = model.params
    samples = sampled(records, t.sample_every)
    summary = summarize(samples, t, config.seed, config.hash())
    return ExperimentResult(config, records, samples, state, summary)

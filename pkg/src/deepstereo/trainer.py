"""RMSProp training loop, checkpointing, and the evaluation harness.

One iteration = one full image pair: forward, summed-L1 loss (normalized
by valid-pixel count for the actual step), backward, RMSProp update.
Sample order is a seeded permutation per epoch, derived statelessly from
(shuffle seed, epoch index) so a run resumed from a checkpoint replays
the exact order of an uninterrupted one.
"""

import json
import struct
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, no_grad, ops
from .disparity import evaluate, l1_loss
from .errors import ConfigurationError, ContractViolation, InputOutputError, NumericFault


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    iterations: int = 300
    shuffle_seed: int = 0
    eval_interval: int = 0  # 0 disables interleaved evaluation

    def validate(self):
        # zero is allowed so a no-op training run can sanity-check plumbing
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.iterations < 1:
            raise ConfigurationError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 <= self.rms_decay < 1.0:
            raise ConfigurationError(f"rms_decay must be in [0, 1), got {self.rms_decay}")


class RMSPropState:
    """Squared-gradient accumulator, one slot per parameter name."""

    def __init__(self, params):
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def rmsprop_step(params, state, config):
    """v <- rho*v + (1-rho)*g^2;  p <- p - lr*g / (sqrt(v) + eps)."""
    for name, p in params.items():
        if p.grad is None:
            raise ContractViolation(f"rmsprop_step: missing gradient for {name!r}")
        v = state.v[name]
        g = p.grad
        v *= config.rms_decay
        v += (1.0 - config.rms_decay) * g * g
        p.data -= config.learning_rate * g / (np.sqrt(v) + config.rms_epsilon)


def epoch_order(shuffle_seed, epoch, count):
    """Permutation of sample indices for one epoch; stateless and seeded."""
    rng = np.random.default_rng(np.random.SeedSequence(shuffle_seed, spawn_key=(epoch,)))
    return rng.permutation(count)


def sample_index(shuffle_seed, iteration, count):
    """Dataset index for a 1-based training iteration."""
    epoch, slot = divmod(iteration - 1, count)
    return int(epoch_order(shuffle_seed, epoch, count)[slot])


@dataclass
class TrainRecord:
    iteration: int
    loss: float  # per-valid-pixel mean (the optimized quantity)
    loss_sum: float  # raw summed residual

    def line(self):
        return f"iter={self.iteration} loss={self.loss!r} loss_sum={self.loss_sum!r}"


def train(model, dataset, config, start_iteration=0, optimizer_state=None,
          log_file=None, eval_dataset=None):
    """Run the loop from ``start_iteration`` (exclusive) to ``config.iterations``.

    Returns (records, optimizer_state). A numeric fault aborts with the
    iteration index and the offending op in the message.
    """
    config.validate()
    if not dataset:
        raise ConfigurationError("train: dataset is empty")
    model.set_training(True)
    params = model.trainable_parameters()
    if optimizer_state is None:
        optimizer_state = RMSPropState(params)
    records = []
    for iteration in range(start_iteration + 1, config.iterations + 1):
        sample = dataset[sample_index(config.shuffle_seed, iteration, len(dataset))]
        for p in params.values():
            p.zero_grad()
        try:
            predicted, _ = model.forward(sample.left, sample.right)
            loss_sum = l1_loss(predicted, sample.gt_disparity, sample.mask)
            valid = int(np.count_nonzero(sample.mask))
            loss_mean = ops.scale(loss_sum, 1.0 / valid)
            backward(loss_mean)
            rmsprop_step(params, optimizer_state, config)
        except NumericFault as fault:
            raise NumericFault(f"iteration {iteration}: {fault}") from fault
        record = TrainRecord(iteration, float(loss_mean.data), float(loss_sum.data))
        records.append(record)
        if log_file is not None:
            log_file.write(record.line() + "\n")
            log_file.flush()
        if (
            config.eval_interval > 0
            and eval_dataset
            and iteration % config.eval_interval == 0
        ):
            report, _ = evaluate_model(model, eval_dataset)
            if log_file is not None:
                log_file.write(f"eval iter={iteration} {report.line()}\n")
                log_file.flush()
            model.set_training(True)
    return records, optimizer_state


@contextmanager
def inference_mode(model):
    """Eval-mode batch norm; untrained models fall back to batch statistics.

    A model that never trained has no running statistics, so eval mode
    would be a configuration error; the fallback normalizes each sample
    with its own statistics without touching any state.
    """
    norms = model.batch_norms()
    if all(bn.state.initialized for bn in norms):
        model.set_training(False)
        try:
            yield
        finally:
            model.set_training(True)
    else:
        saved = [bn.state for bn in norms]
        for bn in norms:
            bn.state = None
        try:
            yield
        finally:
            for bn, state in zip(norms, saved):
                bn.state = state


def evaluate_model(model, dataset):
    """Aggregate metrics pooled over every valid pixel, plus per-sample rows.

    Timing is the mean wall-clock forward time per image.
    """
    if not dataset:
        raise ConfigurationError("evaluate_model: dataset is empty")
    per_sample = []
    errors = []
    elapsed = 0.0
    with inference_mode(model):
        for sample in dataset:
            started = time.perf_counter()
            predicted = model.predict(sample.left, sample.right)
            duration = time.perf_counter() - started
            elapsed += duration
            per_sample.append(evaluate(predicted, sample.gt_disparity, sample.mask, duration))
            errors.append(np.abs(predicted - sample.gt_disparity)[sample.mask])
    pooled = np.concatenate(errors)
    mean_time = elapsed / len(dataset)
    from .disparity import MetricsReport

    aggregate = MetricsReport(
        err_gt_1px=100.0 * float((pooled > 1.0).sum()) / pooled.size,
        err_gt_3px=100.0 * float((pooled > 3.0).sum()) / pooled.size,
        mae=float(pooled.mean()),
        eval_time_s=mean_time,
        valid_pixels=int(pooled.size),
    )
    return aggregate, per_sample


# ---------------------------------------------------------------------------
# checkpoint container: magic, length-prefixed canonical JSON index, raw blocks
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DSCKPT1\n"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    iteration: int
    params: dict  # name -> float32 array
    rms: dict  # name -> float32 array
    stats: dict  # batch-norm running stats, name -> float32 array
    config: dict = field(default_factory=dict)  # run-config echo


def checkpoint_from_model(model, optimizer_state, iteration, config_echo):
    params = {name: p.data.astype(np.float32) for name, p in model.named_parameters().items()}
    rms = {name: v.astype(np.float32) for name, v in optimizer_state.v.items()}
    stats = {name: np.asarray(a, dtype=np.float32) for name, a in model.named_state().items()}
    return Checkpoint(iteration=iteration, params=params, rms=rms, stats=stats, config=config_echo)


def save_checkpoint(path, checkpoint):
    sections = [("param", checkpoint.params), ("rms", checkpoint.rms), ("stat", checkpoint.stats)]
    entries = []
    blocks = []
    offset = 0
    for kind, table in sections:
        for name in sorted(table):
            arr = np.ascontiguousarray(table[name], dtype="<f4")
            entries.append(
                {"kind": kind, "name": name, "offset": offset, "shape": list(arr.shape)}
            )
            blocks.append(arr.tobytes())
            offset += len(blocks[-1])
    index = {
        "config": checkpoint.config,
        "entries": entries,
        "format_version": FORMAT_VERSION,
        "iteration": checkpoint.iteration,
    }
    blob = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for block in blocks:
            f.write(block)


def load_checkpoint(path):
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise InputOutputError(f"cannot read checkpoint {path!r}: {exc}") from exc
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise InputOutputError(f"{path!r} is not a checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    (blob_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    try:
        index = json.loads(raw[pos : pos + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputOutputError(f"corrupt checkpoint index in {path!r}: {exc}") from exc
    if index.get("format_version") != FORMAT_VERSION:
        raise InputOutputError(f"unsupported checkpoint version {index.get('format_version')!r}")
    data = raw[pos + blob_len :]
    tables = {"param": {}, "rms": {}, "stat": {}}
    for entry in index["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(shape)
        table = tables[entry["kind"]]
        if entry["name"] in table:
            raise InputOutputError(f"duplicate checkpoint entry {entry['name']!r}")
        table[entry["name"]] = arr.copy()
    return Checkpoint(
        iteration=index["iteration"],
        params=tables["param"],
        rms=tables["rms"],
        stats=tables["stat"],
        config=index.get("config", {}),
    )


def install_checkpoint(model, checkpoint):
    """Copy checkpoint contents into the model; returns the optimizer state."""
    params = model.named_parameters()
    missing = sorted(set(params) - set(checkpoint.params))
    extra = sorted(set(checkpoint.params) - set(params))
    if missing or extra:
        raise ConfigurationError(
            f"checkpoint/model parameter mismatch: missing {missing[:3]}, unexpected {extra[:3]}"
        )
    for name, p in params.items():
        stored = checkpoint.params[name]
        if tuple(stored.shape) != tuple(p.shape):
            raise ConfigurationError(
                f"checkpoint parameter {name!r} has shape {stored.shape}, model expects {p.shape}"
            )
        p.data = stored.astype(p.data.dtype)
    model.load_state(checkpoint.stats)
    state = RMSPropState(params)
    for name in state.v:
        if name in checkpoint.rms:
            state.v[name] = checkpoint.rms[name].astype(np.float32).copy()
    return state

"""Mask-only optimization: SGD with momentum, per-batch topology sampling,
early stopping, and the two evaluation modes."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Tensor, backward, softmax_cross_entropy
from .data import LabeledDataset, augment
from .errors import ConfigError, NumericalError
from .layers import Network, sample_topology
from .masks import SampledTopology, pruning_rate, seed_stream, threshold_mask
from .rescale import dwr_factor

__all__ = [
    "RunConfig",
    "EpochStats",
    "TrainRecord",
    "MomentumSGD",
    "TrainingSession",
    "train",
    "evaluate_threshold",
    "evaluate_averaging",
    "network_pruning_rate",
    "current_scales",
]

RESCALES = ("none", "smart", "dynamic")
WEIGHTS = ("kaiming", "kaiming-scaled", "signed-constant")
EVAL_MODES = ("threshold", "averaging")
MASK_PER = ("batch", "epoch")
DWR_READINGS = ("keep", "prune")


@dataclass
class RunConfig:
    """Hyperparameters for one mask-training run."""

    mask_lr: float = 50.0
    momentum: float = 0.9
    scale_lr: float = 0.1
    max_epochs: int = 1000
    patience: int = 100
    batch_size: int = 128
    temperature: float = 1.0
    rescale: str = "none"
    weights: str = "kaiming"
    augment: bool = False
    eval_mode: str = "threshold"
    avg_samples: int = 10
    seed: int = 0
    mask_per: str = "batch"
    mask_last_layer: bool = True
    dwr_reading: str = "keep"
    sr_init: float | None = None
    m_hat_init: float = 0.0
    augment_pad: int = 4
    bias: bool = False

    def validate(self):
        # Learning rates of exactly zero are legal (they freeze a
        # parameter group); negatives are not.
        if self.mask_lr < 0 or self.scale_lr < 0 or self.momentum < 0:
            raise ConfigError("learning rates and momentum must be non-negative")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive; got {self.temperature}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be at least 1; got {self.max_epochs}")
        if not 0 <= self.patience <= self.max_epochs:
            raise ConfigError(
                f"patience must lie in [0, max_epochs={self.max_epochs}]; got {self.patience}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive; got {self.batch_size}")
        if self.avg_samples < 1:
            raise ConfigError(f"avg_samples must be positive; got {self.avg_samples}")
        for value, options, name in (
            (self.rescale, RESCALES, "rescale"),
            (self.weights, WEIGHTS, "weights"),
            (self.eval_mode, EVAL_MODES, "eval_mode"),
            (self.mask_per, MASK_PER, "mask_per"),
            (self.dwr_reading, DWR_READINGS, "dwr_reading"),
        ):
            if value not in options:
                raise ConfigError(f"{name} must be one of {options}; got {value!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def network_options(self) -> dict:
        return {
            "weights": self.weights,
            "rescale": self.rescale,
            "bias": self.bias,
            "mask_last_layer": self.mask_last_layer,
            "sr_init": self.sr_init,
            "m_hat_init": self.m_hat_init,
            "dwr_reading": self.dwr_reading,
        }


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_acc: float
    pruning_rate: float
    seconds: float
    scales: tuple


@dataclass
class TrainRecord:
    """Per-epoch trajectory plus the best-validation snapshot."""

    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = float("-inf")
    best_state: dict | None = None

    def csv_header(self) -> str:
        n_scales = len(self.epochs[0].scales) if self.epochs else 0
        scale_cols = "".join(f",s_{i + 1}" for i in range(n_scales))
        return f"epoch,train_loss,val_acc,pruning_rate,epoch_seconds{scale_cols}"

    def to_csv(self, path):
        lines = [self.csv_header()]
        for e in self.epochs:
            scale_cols = "".join(f",{s:.6f}" for s in e.scales)
            lines.append(
                f"{e.epoch},{e.train_loss:.6f},{e.val_acc:.6f},"
                f"{e.pruning_rate:.6f},{e.seconds:.6f}{scale_cols}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def snapshot(self, net: Network):
        self.best_state = {
            "m_hats": [m.m_hat.data.copy() for m in net.mask_parameters()],
            "scales": [s.data.copy() for s in net.scale_parameters()],
        }

    def apply_best(self, net: Network):
        if self.best_state is None:
            return
        for m, saved in zip(net.mask_parameters(), self.best_state["m_hats"]):
            m.m_hat.data[...] = saved
        for s, saved in zip(net.scale_parameters(), self.best_state["scales"]):
            s.data[...] = saved


class MomentumSGD:
    """Classic (non-Nesterov) momentum: v <- mu*v + g; p <- p - lr*v.

    Parameter groups carry their own learning rates; gradients are
    zeroed after each step.
    """

    def __init__(self, groups, momentum: float = 0.9):
        # groups: iterable of (params, lr)
        self.groups = [(list(params), float(lr)) for params, lr in groups]
        self.momentum = float(momentum)
        self._velocity = [
            [np.zeros_like(p.data) for p in params] for params, _ in self.groups
        ]

    def step(self):
        for (params, lr), velocities in zip(self.groups, self._velocity):
            for p, v in zip(params, velocities):
                g = p.grad if p.grad is not None else 0.0
                v *= self.momentum
                v += g
                p.data -= np.float32(lr) * v
        self.zero_grad()

    def zero_grad(self):
        for params, _ in self.groups:
            for p in params:
                p.grad = None


def sgd_momentum_step(params, lr: float, momentum: float, velocities=None):
    """One standalone momentum update over `params`; returns the velocities."""
    if velocities is None:
        velocities = [np.zeros_like(p.data) for p in params]
    for p, v in zip(params, velocities):
        g = p.grad if p.grad is not None else 0.0
        v *= momentum
        v += g
        p.data -= np.float32(lr) * v
        p.grad = None
    return velocities


def network_pruning_rate(net: Network) -> float:
    """Pooled threshold pruning rate over all masked layers."""
    zeros = total = 0
    for m in net.mask_parameters():
        data = threshold_mask(m).data
        zeros += data.size - np.count_nonzero(data)
        total += data.size
    return zeros / total if total else 0.0


def current_scales(net: Network) -> tuple:
    """Effective per-layer factors, in masked-layer order."""
    out = []
    for layer in net.masked_layers:
        if layer.rescale.strategy == "smart":
            out.append(float(layer.rescale.s.data))
        elif layer.rescale.strategy == "dynamic":
            out.append(dwr_factor(threshold_mask(layer.mask).data, layer.rescale.reading))
        else:
            out.append(1.0)
    return tuple(out)


def _diagnostics(net: Network, loss_value) -> str:
    lines = [f"non-finite loss ({loss_value})"]
    for i, layer in enumerate(net.masked_layers):
        m = layer.mask.m_hat.data
        w = layer.weights.data
        lines.append(
            f"  layer {i}: |w| max {np.abs(w).max():.4g}, "
            f"m_hat range [{m.min():.4g}, {m.max():.4g}], "
            f"scale {current_scales(net)[i]:.4g}"
        )
    return "\n".join(lines)


def _make_optimizer(net: Network, cfg: RunConfig) -> MomentumSGD:
    groups = [([m.m_hat for m in net.mask_parameters()], cfg.mask_lr)]
    scales = net.scale_parameters()
    if scales:
        groups.append((scales, cfg.scale_lr))
    return MomentumSGD(groups, cfg.momentum)


class TrainingSession:
    """Incremental training driver: one epoch per run_epoch call.

    train() uses it internally; the benchmark drives several sessions
    in lock-step to time per-epoch overheads against each other.
    """

    def __init__(self, net: Network, train_ds: LabeledDataset, cfg: RunConfig):
        cfg.validate()
        self.net = net
        self.cfg = cfg
        self.images = train_ds.images
        self.labels = train_ds.labels
        self.data_rng = seed_stream(cfg.seed, "data")
        self.layer_rngs = [
            seed_stream(cfg.seed, f"gumbel-layer-{i}")
            for i in range(len(net.masked_layers))
        ]
        self.optimizer = _make_optimizer(net, cfg)

    def run_epoch(self) -> float:
        """One pass over the data; returns the mean batch loss."""
        net, cfg = self.net, self.cfg
        epoch_noise = None
        if cfg.mask_per == "epoch":
            # One Gumbel draw per epoch; every batch replays it against
            # the current latents.
            epoch_noise = sample_topology(net, cfg.temperature, self.layer_rngs).noise
        order = self.data_rng.permutation(len(self.labels))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = self.images[idx]
            if cfg.augment and self.images.ndim == 4:
                x = augment(x, self.data_rng, cfg.augment_pad)
            topo = sample_topology(net, cfg.temperature, self.layer_rngs, noise=epoch_noise)
            loss = softmax_cross_entropy(net.forward(x, topo), self.labels[idx])
            if not np.isfinite(loss.data):
                raise NumericalError(_diagnostics(net, float(loss.data)))
            backward(loss)
            self.optimizer.step()
            losses.append(float(loss.data))
        for m in net.mask_parameters():
            if not np.all(np.isfinite(m.m_hat.data)):
                raise NumericalError(_diagnostics(net, "non-finite mask latents"))
        for s in net.scale_parameters():
            if not np.isfinite(s.data):
                raise NumericalError(_diagnostics(net, f"non-finite scale {float(s.data)}"))
        return float(np.mean(losses)) if losses else 0.0


def _detach_topology(topo: SampledTopology) -> SampledTopology:
    return SampledTopology(
        tuple(Tensor(t.data) for t in topo.hard_masks),
        tuple(Tensor(t.data) for t in topo.soft_surrogates),
        topo.seed_record,
        topo.noise,
    )


def _accuracy(net: Network, ds: LabeledDataset, topology, batch_size: int) -> float:
    correct = 0
    for start in range(0, len(ds), batch_size):
        x = ds.images[start:start + batch_size]
        y = ds.labels[start:start + batch_size]
        logits = net.forward(x, topology)
        correct += int((logits.data.argmax(axis=1) == y).sum())
    return correct / len(ds)


def evaluate_threshold(net: Network, ds: LabeledDataset, batch_size: int = 512) -> float:
    """Deterministic accuracy with the threshold masks."""
    return _accuracy(net, ds, None, batch_size)


def evaluate_averaging(net: Network, ds: LabeledDataset, n: int = 10,
                       rng: np.random.Generator | None = None,
                       temperature: float = 1.0, batch_size: int = 512):
    """Mean accuracy over `n` independently sampled topologies.

    Returns (mean, per-sample accuracies); each topology is held fixed
    across the whole dataset.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    accs = []
    for _ in range(n):
        topo = _detach_topology(sample_topology(net, temperature, rng))
        accs.append(_accuracy(net, ds, topo, batch_size))
    return float(np.mean(accs)), accs


def _validation_accuracy(net, val_ds, cfg, eval_rng):
    if cfg.eval_mode == "averaging":
        mean, _ = evaluate_averaging(
            net, val_ds, cfg.avg_samples, eval_rng, cfg.temperature, cfg.batch_size
        )
        return mean
    return evaluate_threshold(net, val_ds, cfg.batch_size)


def train(net: Network, train_ds: LabeledDataset, val_ds: LabeledDataset,
          cfg: RunConfig, *, clock=time.perf_counter, verbose: bool = False) -> TrainRecord:
    """Optimize masks (and scales, when learned) on frozen weights.

    Each mini-batch draws a fresh topology (or each epoch, per
    cfg.mask_per), computes the masked cross-entropy, and steps the
    latent masks. Training stops when validation accuracy has not
    improved for cfg.patience epochs. `clock` exists so timing can be
    injected; everything else is fully determined by cfg.seed.
    """
    session = TrainingSession(net, train_ds, cfg)
    eval_rng = seed_stream(cfg.seed, "eval")
    record = TrainRecord()

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = clock()
        mean_loss = session.run_epoch()
        val_acc = _validation_accuracy(net, val_ds, cfg, eval_rng)
        stats = EpochStats(
            epoch=epoch,
            train_loss=mean_loss,
            val_acc=val_acc,
            pruning_rate=network_pruning_rate(net),
            seconds=clock() - t0,
            scales=current_scales(net),
        )
        record.epochs.append(stats)
        if verbose:
            print(
                f"epoch {epoch}: loss {mean_loss:.4f} val {val_acc:.4f} "
                f"pruned {stats.pruning_rate:.3f}"
            )
        if val_acc > record.best_val_acc:
            record.best_val_acc = val_acc
            record.best_epoch = epoch
            record.snapshot(net)
        if epoch - record.best_epoch >= cfg.patience:
            break
    return record

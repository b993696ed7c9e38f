"""Block criticality analysis: compress, re-initialize, retrain, measure.

A parent network's block of 2-3 convolutions is replaced by a single
convolution of matching input/output shape.  The new layer is given one
of three starting states (random, mean-of-parent-filters, or
student-teacher matching of the parent's post-pool activations) and the
child is then retrained either with everything outside the new layer
frozen or with the whole model thawed.
"""

import time
import zlib
from dataclasses import dataclass

import numpy as np

from .data import augment_batch, batches
from .errors import (
    InvalidPlanError,
    InvalidSpecError,
    InvalidTapError,
    NothingToCompressError,
    UninitializedLayerError,
)
from .layers import Conv2D, glorot_uniform, softmax_xent
from .metrics import convergence_epoch
from .model import BlockSpec, Network
from .optim import PlateauScheduler, SGDMomentum

INIT_SCHEMES = ("rw", "mw", "stn")
TRAIN_SCHEMES = ("fm", "tm")


@dataclass(frozen=True)
class TriageConfig:
    """One cell of the block x init x train grid."""

    block_index: int
    init: str
    train: str
    comp_epochs: int = 25
    stn_epochs: int = 12
    seed: int = 0

    def validate(self):
        if self.init not in INIT_SCHEMES:
            raise InvalidSpecError(f"init must be one of {INIT_SCHEMES}")
        if self.train not in TRAIN_SCHEMES:
            raise InvalidSpecError(f"train must be one of {TRAIN_SCHEMES}")
        if self.comp_epochs < 1:
            raise InvalidSpecError("comp_epochs must be >= 1")
        if self.init == "stn" and self.stn_epochs < 1:
            raise InvalidSpecError("stn_epochs must be >= 1 for stn cells")

    @property
    def key(self):
        return f"b{self.block_index}-{self.init}-{self.train}"


@dataclass
class ExperimentResult:
    config: TriageConfig
    accuracy_series: list
    max_accuracy: float
    convergence_epoch: int
    param_count_child: int
    wall_time: float
    stn_loss_trace: list | None = None
    test_accuracy: float | None = None

    def __post_init__(self):
        if not self.accuracy_series:
            raise InvalidSpecError("accuracy series must be non-empty")
        if abs(self.max_accuracy - max(self.accuracy_series)) > 0:
            raise InvalidSpecError("max_accuracy must equal max(series)")
        if not 0 <= self.convergence_epoch < len(self.accuracy_series):
            raise InvalidSpecError("convergence epoch outside series bounds")


def derive_seed(master, label):
    """Stable per-cell/per-epoch seed from a master seed and a text key."""
    return zlib.crc32(f"{master}:{label}".encode()) & 0x7FFFFFFF


def result_to_dict(result):
    return {
        "config": {
            "block_index": result.config.block_index,
            "init": result.config.init,
            "train": result.config.train,
            "comp_epochs": result.config.comp_epochs,
            "stn_epochs": result.config.stn_epochs,
            "seed": result.config.seed,
        },
        "accuracy_series": list(result.accuracy_series),
        "max_accuracy": result.max_accuracy,
        "convergence_epoch": result.convergence_epoch,
        "param_count_child": result.param_count_child,
        "wall_time": result.wall_time,
        "stn_loss_trace": result.stn_loss_trace,
        "test_accuracy": result.test_accuracy,
    }


def result_from_dict(d):
    return ExperimentResult(
        config=TriageConfig(**d["config"]),
        accuracy_series=list(d["accuracy_series"]),
        max_accuracy=d["max_accuracy"],
        convergence_epoch=d["convergence_epoch"],
        param_count_child=d["param_count_child"],
        wall_time=d["wall_time"],
        stn_loss_trace=d.get("stn_loss_trace"),
        test_accuracy=d.get("test_accuracy"),
    )


# -- structural compression -----------------------------------------------


def structural_compress(parent, block_index):
    """Child network whose addressed block holds a single convolution.

    Everything outside the block is copied bitwise; the new conv/BN
    parameters stay unset until an init scheme runs.
    """
    if not 0 <= block_index < len(parent.spec.blocks):
        raise InvalidTapError(
            f"block index {block_index} outside [0,{len(parent.spec.blocks)})")
    bs = parent.spec.blocks[block_index]
    if bs.conv_count < 2:
        raise NothingToCompressError(
            f"block {block_index} already has a single convolution")

    child_spec = parent.spec.with_block(block_index, BlockSpec(1, bs.channels))
    child = Network(child_spec, rng=None, dtype=parent.dtype)

    prefix = f"block{block_index}."
    parent_reg = parent.full_registry()
    for name, arr in child.full_registry().items():
        if not name.startswith(prefix):
            arr[...] = parent_reg[name]
    child.pending_init = set(child.block_param_names(block_index))
    return child


def _compressed_conv_bn(child, block_index):
    block = child.blocks[block_index]
    return block[0], block[1]  # Conv2D, BatchNorm2D


# -- initialization schemes -------------------------------------------------


def init_random(child, block_index, seed):
    """Glorot-uniform weights, zero bias, identity normalization."""
    conv, bn = _compressed_conv_bn(child, block_index)
    rng = np.random.default_rng(seed)
    conv.W[...] = glorot_uniform(rng, conv.W.shape, 9 * conv.c_in,
                                 9 * conv.c_out, conv.dtype)
    conv.b[...] = 0
    bn.reset_identity()
    child.pending_init.clear()
    return child


def init_mean_parent(child, parent, block_index, mode="global"):
    """Set every 3x3 slice of the compressed kernel to the parent block's
    average filter.

    ``global`` averages one 3x3 slice over every (in, out) channel pair
    of every conv in the parent block and replicates it everywhere;
    ``first_conv_per_channel`` instead averages the block's first conv
    over its input channels, keeping one slice per output channel.
    """
    conv, bn = _compressed_conv_bn(child, block_index)
    if not 0 <= block_index < len(parent.spec.blocks):
        raise InvalidTapError(f"block index {block_index} out of range")
    parent_convs = [l for l in parent.blocks[block_index] if isinstance(l, Conv2D)]
    if len(parent_convs) < 2:
        raise InvalidPlanError("parent block is not an uncompressed block")
    if parent_convs[0].W.shape != conv.W.shape:
        raise InvalidPlanError(
            f"child conv {conv.W.shape} does not match parent first conv "
            f"{parent_convs[0].W.shape}")

    if mode == "global":
        slice_sum = np.zeros((3, 3), dtype=np.float64)
        slice_count = 0
        bias_values = []
        for pc in parent_convs:
            slice_sum += pc.W.astype(np.float64).sum(axis=(2, 3))
            slice_count += pc.c_in * pc.c_out
            bias_values.append(pc.b.astype(np.float64))
        f_avg = (slice_sum / slice_count).astype(conv.dtype)
        conv.W[...] = f_avg[:, :, None, None]
        conv.b[...] = conv.dtype.type(np.concatenate(bias_values).mean())
    elif mode == "first_conv_per_channel":
        first = parent_convs[0]
        f_avg = first.W.astype(np.float64).mean(axis=2).astype(conv.dtype)
        conv.W[...] = f_avg[:, :, None, :]
        conv.b[...] = first.b
    else:
        raise InvalidPlanError(f"unknown mean-parent mode {mode!r}")

    bn.reset_identity()
    child.pending_init.clear()
    return child


def stn_loss_value(s, t):
    """Mean per-sample squared L2 distance between two activation stacks:
    (1/N) * sum over samples of ||s_i - t_i||^2."""
    if s.shape != t.shape:
        raise InvalidPlanError(
            f"tap shapes differ: student {s.shape} vs teacher {t.shape}")
    diff = (s - t).astype(np.float64)
    return float((diff * diff).sum() / s.shape[0])


def stn_batch_loss(child, parent, block_index, x, student_bn_train=False):
    """Matching loss at the post-pool tap of the addressed block.

    Returns ``(loss, student_tap, teacher_tap)``; the teacher always runs
    in eval mode so its targets are deterministic.
    """
    mode = "train" if student_bn_train else "eval"
    s = child.forward_to_tap(x, block_index, mode=mode,
                             bn_train_blocks={block_index},
                             needs_grad_from=block_index)
    t = parent.forward_to_tap(x, block_index, mode="eval")
    return stn_loss_value(s, t), s, t


def calibrate_bn(child, block_index, train_ds, batch_size=64):
    """Replace the compressed BN's running statistics with the dataset
    moments its training-mode behavior actually saw.

    A short warm-up updates gamma/beta against batch statistics while the
    slow EMA (momentum 0.99) leaves the running stats nearly at their
    reset values, so eval mode would normalize with stale moments.  One
    deterministic pass over the data fixes that without touching any
    trainable parameter.
    """
    conv, bn = _compressed_conv_bn(child, block_index)
    mean_sum = np.zeros(bn.running_mean.shape, dtype=np.float64)
    var_sum = np.zeros(bn.running_var.shape, dtype=np.float64)
    count = 0
    for xb, _ in batches(train_ds, batch_size):
        x = xb
        for i in range(block_index):
            x = child._run_block(i, x, "eval", None, 0)
        pre_bn = conv.forward(x, train=False)
        mean_sum += pre_bn.mean(axis=(0, 1, 2), dtype=np.float64)
        var_sum += pre_bn.var(axis=(0, 1, 2), dtype=np.float64)
        count += 1
    bn.running_mean[...] = (mean_sum / count).astype(bn.running_mean.dtype)
    bn.running_var[...] = (var_sum / count).astype(bn.running_var.dtype)
    return child


def init_stn(child, parent, block_index, stn_epochs, train_ds, opt,
             batch_size=64, seed=0, calibrate=True):
    """Student-teacher warm-up of the compressed layer.

    Minimizes the post-pool L2 distance to the parent over the training
    inputs (labels unused); gradients reach only the compressed conv and
    its BN.  Requires a starting state (e.g. ``init_random``).  Returns
    the child and the per-epoch loss trace.  ``calibrate`` refreshes the
    compressed BN's running statistics afterwards (see
    :func:`calibrate_bn`).
    """
    if child.pending_init:
        raise UninitializedLayerError(
            "compressed layer needs a starting state before matching the teacher")
    prefix = f"block{block_index}."
    params = {n: a for n, a in child.registry().items() if n.startswith(prefix)}
    grads = {n: a for n, a in child.grad_registry().items() if n.startswith(prefix)}

    trace = []
    for epoch in range(stn_epochs):
        total_sq = 0.0
        count = 0
        shuffle = derive_seed(seed, f"stn-epoch{epoch}")
        for xb, _ in batches(train_ds, batch_size, shuffle_seed=shuffle):
            loss, s, t = stn_batch_loss(child, parent, block_index, xb,
                                        student_bn_train=True)
            d_tap = (2.0 / xb.shape[0]) * (s - t).astype(s.dtype)
            child.backward_block(d_tap, block_index)
            opt.step(params, grads)
            total_sq += loss * xb.shape[0]
            count += xb.shape[0]
        trace.append(total_sq / count)
    if calibrate:
        calibrate_bn(child, block_index, train_ds, batch_size)
    return child, trace


# -- training regimes -------------------------------------------------------


def evaluate_accuracy(net, ds, batch_size=256):
    """Eval-mode classification accuracy over a dataset."""
    correct = 0
    for xb, yb in batches(ds, batch_size):
        logits = net.forward(xb, mode="eval")
        correct += int((logits.argmax(axis=1) == yb).sum())
    return correct / len(ds)


def train_network(net, epochs, train_ds, val_ds, opt, sched, *, seed=0,
                  batch_size=64, pre=None, trainable=None,
                  bn_train_blocks=None, needs_grad_from=0, stop_block=0,
                  epoch_hook=None):
    """Generic supervised loop: per-epoch deterministic shuffles, optional
    flip augmentation, validation accuracy each epoch, plateau schedule.

    ``trainable`` restricts optimizer updates to a registry subset;
    the bn/grad window arguments confine batch-stat updates and backward
    caching for frozen-model runs.  Returns the validation accuracy series.
    """
    reg = net.registry()
    greg = net.grad_registry()
    if trainable is None:
        params, grads = reg, greg
    else:
        params = {n: reg[n] for n in trainable}
        grads = {n: greg[n] for n in trainable}

    series = []
    for epoch in range(epochs):
        shuffle = derive_seed(seed, f"epoch{epoch}")
        for bi, (xb, yb) in enumerate(batches(train_ds, batch_size,
                                              shuffle_seed=shuffle)):
            if pre is not None and pre.hflip_prob > 0:
                xb = augment_batch(xb, pre, derive_seed(seed, f"aug{epoch}.{bi}"))
            logits = net.forward(xb, mode="train",
                                 bn_train_blocks=bn_train_blocks,
                                 needs_grad_from=needs_grad_from)
            _, dlogits = softmax_xent(logits, yb)
            net.backward(dlogits, stop_block=stop_block)
            opt.step(params, grads)
        val_acc = evaluate_accuracy(net, val_ds)
        series.append(val_acc)
        if sched is not None:
            sched.update(val_acc)
        if epoch_hook is not None:
            epoch_hook(epoch, val_acc)
    return series


def train_compressed(child, config, train_ds, val_ds, opt, sched, *,
                     batch_size=64, pre=None, test_ds=None,
                     stn_loss_trace=None):
    """Post-compression supervised training under FM or TM.

    FM updates only the compressed conv and its BN (frozen-block BNs run
    in eval mode, so running statistics outside the block stay bitwise
    fixed); TM updates every parameter.
    """
    config.validate()
    if child.pending_init:
        raise UninitializedLayerError(
            f"cell {config.key}: compressed layer was never initialized")
    k = config.block_index

    start = time.perf_counter()
    if config.train == "fm":
        series = train_network(
            child, config.comp_epochs, train_ds, val_ds, opt, sched,
            seed=config.seed, batch_size=batch_size, pre=pre,
            trainable=child.block_param_names(k),
            bn_train_blocks={k}, needs_grad_from=k, stop_block=k)
    else:
        series = train_network(
            child, config.comp_epochs, train_ds, val_ds, opt, sched,
            seed=config.seed, batch_size=batch_size, pre=pre)
    wall = time.perf_counter() - start

    return ExperimentResult(
        config=config,
        accuracy_series=series,
        max_accuracy=max(series),
        convergence_epoch=convergence_epoch(series),
        param_count_child=child.param_count(),
        wall_time=wall,
        stn_loss_trace=stn_loss_trace,
        test_accuracy=(evaluate_accuracy(child, test_ds)
                       if test_ds is not None else None),
    )


@dataclass
class SuiteSettings:
    """Hyperparameters shared by every grid cell."""

    lr: float = 0.001
    lr_min: float = 0.00001
    lr_decay: float = 0.5
    weight_decay: float = 0.001
    momentum: float = 0.9
    patience: int = 1
    cooldown: int = 3
    comp_epochs: int = 25
    stn_epochs: int = 12
    batch_size: int = 64
    seed: int = 0
    mw_mode: str = "global"
    stn_start: str = "rw"  # or "mw": ablation starting state for stn

    def make_optimizer(self):
        return SGDMomentum(self.lr, rho=self.momentum,
                           weight_decay=self.weight_decay)

    def make_scheduler(self, opt):
        return PlateauScheduler(opt, factor=self.lr_decay,
                                patience=self.patience,
                                cooldown=self.cooldown, min_lr=self.lr_min)


def run_cell(parent, config, settings, train_ds, val_ds, *, pre=None,
             test_ds=None):
    """Execute one grid cell from a fresh compression of the parent."""
    child = structural_compress(parent, config.block_index)
    cell_seed = derive_seed(config.seed, config.key)

    stn_trace = None
    if config.init == "rw":
        init_random(child, config.block_index, cell_seed)
    elif config.init == "mw":
        init_mean_parent(child, parent, config.block_index,
                         mode=settings.mw_mode)
    else:
        if settings.stn_start == "mw":
            init_mean_parent(child, parent, config.block_index,
                             mode=settings.mw_mode)
        else:
            init_random(child, config.block_index, cell_seed)
        stn_opt = settings.make_optimizer()
        _, stn_trace = init_stn(child, parent, config.block_index,
                                config.stn_epochs, train_ds, stn_opt,
                                batch_size=settings.batch_size,
                                seed=cell_seed)

    opt = settings.make_optimizer()
    sched = settings.make_scheduler(opt)
    result = train_compressed(child, config, train_ds, val_ds, opt, sched,
                              batch_size=settings.batch_size, pre=pre,
                              test_ds=test_ds, stn_loss_trace=stn_trace)
    return result, child


def run_triage_suite(parent, blocks, inits, trains, settings, train_ds,
                     val_ds, *, pre=None, test_ds=None, cell_hook=None,
                     resume_lookup=None):
    """One ExperimentResult per grid cell, each from a fresh compression
    of the same parent.

    ``resume_lookup(config)`` may return a previously stored result to
    skip a cell; ``cell_hook(config, result, child)`` observes fresh ones
    (the child is ``None`` for resumed cells).
    """
    results = []
    for b in blocks:
        for init in inits:
            for train in trains:
                config = TriageConfig(
                    block_index=b, init=init, train=train,
                    comp_epochs=settings.comp_epochs,
                    stn_epochs=settings.stn_epochs, seed=settings.seed)
                config.validate()
                if resume_lookup is not None:
                    cached = resume_lookup(config)
                    if cached is not None:
                        results.append(cached)
                        if cell_hook is not None:
                            cell_hook(config, cached, None)
                        continue
                result, child = run_cell(parent, config, settings, train_ds,
                                         val_ds, pre=pre, test_ds=test_ds)
                results.append(result)
                if cell_hook is not None:
                    cell_hook(config, result, child)
    return results

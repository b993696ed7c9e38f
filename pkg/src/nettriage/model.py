"""Block-structured CNN: declarative spec, instantiation, and taps.

A network is a sequence of blocks (conv_count x [Conv2D, BatchNorm2D,
ReLU] then a 2x2 max pool) followed by a small classifier head
(Flatten, Dense, ReLU, Dense).  Parameters are addressed through a
registry of stable dotted names so checkpoints and optimizers can refer
to them independently of object identity.
"""

import copy
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError, InvalidTapError, ShapeMismatchError
from .layers import BatchNorm2D, Conv2D, Dense, Flatten, MaxPool2x2, ReLU

# Tap points: the L2-matching tap sits after the block's max pool, the
# activation-visualization tap after the block's last ReLU (pre-pool).
# Distinct constants so the two are never conflated.
TAP_POST_POOL = "pool"
TAP_POST_RELU = "relu"


@dataclass(frozen=True)
class BlockSpec:
    conv_count: int
    channels: int

    def validate(self):
        if self.conv_count < 1:
            raise InvalidSpecError(f"conv_count must be >= 1, got {self.conv_count}")
        if self.channels < 1:
            raise InvalidSpecError(f"channels must be >= 1, got {self.channels}")


@dataclass(frozen=True)
class ModelSpec:
    blocks: tuple
    input_shape: tuple  # (H, W, C)
    num_classes: int
    head_hidden: int

    def validate(self):
        if not self.blocks:
            raise InvalidSpecError("spec needs at least one block")
        for b in self.blocks:
            b.validate()
        h, w, c = self.input_shape
        div = 2 ** len(self.blocks)
        if h % div or w % div:
            raise InvalidSpecError(
                f"input {h}x{w} not divisible by 2^{len(self.blocks)}")
        if c < 1:
            raise InvalidSpecError("input channel count must be >= 1")
        if self.num_classes < 2:
            raise InvalidSpecError("need at least two classes")
        if self.head_hidden < 1:
            raise InvalidSpecError("head_hidden must be >= 1")

    def with_block(self, index, block):
        blocks = list(self.blocks)
        blocks[index] = block
        return ModelSpec(tuple(blocks), self.input_shape, self.num_classes,
                         self.head_hidden)

    def to_dict(self):
        return {
            "blocks": [[b.conv_count, b.channels] for b in self.blocks],
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "head_hidden": self.head_hidden,
        }

    @classmethod
    def from_dict(cls, d):
        spec = cls(
            blocks=tuple(BlockSpec(int(c), int(ch)) for c, ch in d["blocks"]),
            input_shape=tuple(int(v) for v in d["input_shape"]),
            num_classes=int(d["num_classes"]),
            head_hidden=int(d["head_hidden"]),
        )
        spec.validate()
        return spec


def mini_vgg_spec(input_shape=(32, 32, 1), num_classes=10, head_hidden=128):
    """Default desk-scale model: the classic 2,2,3,3,3 block pattern with
    reduced channel widths."""
    return ModelSpec(
        blocks=(BlockSpec(2, 8), BlockSpec(2, 16), BlockSpec(3, 32),
                BlockSpec(3, 32), BlockSpec(3, 32)),
        input_shape=tuple(input_shape),
        num_classes=num_classes,
        head_hidden=head_hidden,
    )


class Network:
    """Instantiated model: layer objects plus a stable parameter registry.

    One logical execution context drives an instance at a time; clones
    are fully independent.
    """

    def __init__(self, spec, rng=None, dtype=np.float32):
        spec.validate()
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.pending_init = set()  # param names awaiting an init scheme

        self.blocks = []
        c_prev = spec.input_shape[2]
        for bs in spec.blocks:
            layers = []
            c_in = c_prev
            for _ in range(bs.conv_count):
                layers.append(Conv2D(c_in, bs.channels, rng=rng, dtype=dtype))
                layers.append(BatchNorm2D(bs.channels, dtype=dtype))
                layers.append(ReLU())
                c_in = bs.channels
            layers.append(MaxPool2x2())
            self.blocks.append(layers)
            c_prev = bs.channels

        h, w, _ = spec.input_shape
        feat = (h >> len(spec.blocks)) * (w >> len(spec.blocks)) * c_prev
        self.head = [
            Flatten(),
            Dense(feat, spec.head_hidden, rng, dtype=dtype),
            ReLU(),
            Dense(spec.head_hidden, spec.num_classes, rng, dtype=dtype),
        ]

    # -- registries ------------------------------------------------------

    def named_layers(self):
        """Yields (path, layer) for every parametered layer, in declaration order."""
        for i, block in enumerate(self.blocks):
            conv_j = bn_j = 0
            for layer in block:
                if isinstance(layer, Conv2D):
                    yield f"block{i}.conv{conv_j}", layer
                    conv_j += 1
                elif isinstance(layer, BatchNorm2D):
                    yield f"block{i}.bn{bn_j}", layer
                    bn_j += 1
        yield "head.fc1", self.head[1]
        yield "head.fc2", self.head[3]

    def registry(self):
        """Trainable parameters: stable name -> live array."""
        out = {}
        for path, layer in self.named_layers():
            for pname, arr in layer.params().items():
                out[f"{path}.{pname}"] = arr
        return out

    def grad_registry(self):
        out = {}
        for path, layer in self.named_layers():
            for pname, arr in layer.grads().items():
                out[f"{path}.{pname}"] = arr
        return out

    def full_registry(self):
        """Trainable parameters plus normalization statistics (checkpoint view)."""
        out = {}
        for path, layer in self.named_layers():
            for pname, arr in layer.params().items():
                out[f"{path}.{pname}"] = arr
            if isinstance(layer, BatchNorm2D):
                for sname, arr in layer.state().items():
                    out[f"{path}.{sname}"] = arr
        return out

    def block_param_names(self, block_index):
        prefix = f"block{block_index}."
        return [name for name in self.registry() if name.startswith(prefix)]

    def param_count(self):
        return int(sum(arr.size for arr in self.registry().values()))

    # -- execution -------------------------------------------------------

    def _check_input(self, x):
        h, w, c = self.spec.input_shape
        if x.ndim != 4 or x.shape[1:] != (h, w, c):
            raise ShapeMismatchError(
                f"input must be [N,{h},{w},{c}], got {tuple(x.shape)}")

    def _bn_train(self, mode, block_index, bn_train_blocks):
        if mode != "train":
            return False
        return bn_train_blocks is None or block_index in bn_train_blocks

    def _run_block(self, i, x, mode, bn_train_blocks, needs_grad_from,
                   stop_at_relu=False):
        train = mode == "train"
        cache = train and i >= needs_grad_from
        last_relu_out = None
        for layer in self.blocks[i]:
            if isinstance(layer, BatchNorm2D):
                x = layer.forward(x, train=self._bn_train(mode, i, bn_train_blocks))
            elif isinstance(layer, Conv2D):
                x = layer.forward(x, train=cache)
            else:
                x = layer.forward(x, train=cache)
            if stop_at_relu and isinstance(layer, ReLU):
                last_relu_out = x
        return (last_relu_out, x) if stop_at_relu else x

    def forward(self, x, mode="train", bn_train_blocks=None, needs_grad_from=0):
        """Full pass to logits.

        ``bn_train_blocks`` restricts which blocks' BN layers use (and
        update) batch statistics in train mode; ``needs_grad_from`` skips
        backward caches for blocks below that index.
        """
        self._check_input(x)
        for i in range(len(self.blocks)):
            x = self._run_block(i, x, mode, bn_train_blocks, needs_grad_from)
        return self.head_forward(x, mode=mode)

    def head_forward(self, x, mode="train"):
        train = mode == "train"
        for layer in self.head:
            x = layer.forward(x, train=train)
        return x

    def forward_to_tap(self, x, block_index, mode="eval", point=TAP_POST_POOL,
                       bn_train_blocks=None, needs_grad_from=0):
        """Activation after block ``block_index``'s pool (or last ReLU)."""
        self._check_tap(block_index)
        if point not in (TAP_POST_POOL, TAP_POST_RELU):
            raise InvalidTapError(f"unknown tap point {point!r}")
        self._check_input(x)
        for i in range(block_index):
            x = self._run_block(i, x, mode, bn_train_blocks, needs_grad_from)
        if point == TAP_POST_RELU:
            relu_out, _ = self._run_block(block_index, x, mode, bn_train_blocks,
                                          needs_grad_from, stop_at_relu=True)
            return relu_out
        return self._run_block(block_index, x, mode, bn_train_blocks,
                               needs_grad_from)

    def backward(self, dlogits, stop_block=0):
        """Backpropagate from the logits; stops after ``stop_block``'s first layer."""
        d = dlogits
        for layer in reversed(self.head):
            d = layer.backward(d)
        for i in range(len(self.blocks) - 1, stop_block - 1, -1):
            for layer in reversed(self.blocks[i]):
                d = layer.backward(d)
        return d

    def backward_block(self, d_tap, block_index):
        """Backpropagate a post-pool gradient through one block only."""
        self._check_tap(block_index)
        d = d_tap
        for layer in reversed(self.blocks[block_index]):
            d = layer.backward(d)
        return d

    def _check_tap(self, block_index):
        if not 0 <= block_index < len(self.blocks):
            raise InvalidTapError(
                f"block index {block_index} outside [0,{len(self.blocks)})")

    # -- copying ---------------------------------------------------------

    def clone(self):
        """Deep copy: bitwise-identical parameters, independent state."""
        other = Network(self.spec, rng=None, dtype=self.dtype)
        src, dst = self.full_registry(), other.full_registry()
        for name, arr in src.items():
            dst[name][...] = arr
        other.pending_init = set(self.pending_init)
        return other

    def load_registry(self, values):
        """Overwrite every full-registry entry from ``values`` (name -> array)."""
        reg = self.full_registry()
        if set(values) != set(reg):
            raise ShapeMismatchError("registry name sets differ")
        for name, arr in reg.items():
            incoming = values[name]
            if tuple(incoming.shape) != tuple(arr.shape):
                raise ShapeMismatchError(
                    f"{name}: expected {tuple(arr.shape)}, got {tuple(incoming.shape)}")
            arr[...] = incoming
        self.pending_init = set()


def build(spec, seed, dtype=np.float32):
    """Instantiate ``spec`` with Glorot-uniform conv/dense weights from ``seed``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    return Network(spec, rng=rng, dtype=dtype)


def param_count(net):
    return net.param_count()


def clone(net):
    return net.clone()


def copy_spec(spec):
    return copy.deepcopy(spec)

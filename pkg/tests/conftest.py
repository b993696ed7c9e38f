import os
from pathlib import Path

import numpy as np
import pytest

from nettriage.data import Dataset, Preprocessor, preprocess, split_train_val, synth_shapes
from nettriage.model import BlockSpec, ModelSpec, build
from nettriage.optim import SGDMomentum
from nettriage.triage import train_network

MNIST_DIR = Path(os.environ.get("NETTRIAGE_MNIST_DIR", "/root/data/mnist"))
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def mnist_available():
    return all((MNIST_DIR / f).exists() for f in MNIST_FILES)


needs_mnist = pytest.mark.skipif(
    not mnist_available(),
    reason=f"MNIST IDX files not found under {MNIST_DIR} "
           f"(set NETTRIAGE_MNIST_DIR)")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_spec():
    """Two compressible blocks, small enough for second-scale training."""
    return ModelSpec(blocks=(BlockSpec(2, 4), BlockSpec(3, 8)),
                     input_shape=(16, 16, 1), num_classes=4, head_hidden=16)


def crop_center(ds, size):
    h = ds.images.shape[1]
    lo = (h - size) // 2
    return Dataset(ds.images[:, lo:lo + size, lo:lo + size, :], ds.labels,
                   ds.split, ds.class_count)


@pytest.fixture(scope="session")
def tiny_data():
    """Synthetic shapes cropped to 16x16 and normalized; train/val pair."""
    ds = crop_center(synth_shapes(320, 42, "train"), 16)
    train, val = split_train_val(ds, 64)
    pre = Preprocessor().fit(train)
    return preprocess(train, pre), preprocess(val, pre)


@pytest.fixture(scope="session")
def trained_parent(tiny_spec, tiny_data):
    """A lightly trained parent so compression starts from structure,
    not noise.  Session-scoped: tests must not mutate it."""
    train, val = tiny_data
    net = build(tiny_spec, seed=11)
    opt = SGDMomentum(0.02, rho=0.9, weight_decay=0.0)
    train_network(net, 4, train, val, opt, None, seed=7, batch_size=32)
    return net

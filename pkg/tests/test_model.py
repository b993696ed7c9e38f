"""Network assembly, parameter registry, taps, cloning, and the
closed-form parameter arithmetic of block compression."""

import numpy as np
import pytest

from nettriage.errors import (InvalidSpecError, InvalidTapError,
                              ShapeMismatchError)
from nettriage.layers import BatchNorm2D, Conv2D
from nettriage.model import (TAP_POST_POOL, TAP_POST_RELU, BlockSpec,
                             ModelSpec, build, mini_vgg_spec)
from nettriage.triage import structural_compress


def conv_params(cin, cout):
    return 9 * cin * cout + cout


def spec_param_count(spec):
    """Closed-form hand count, independent of the registry."""
    total = 0
    cin = spec.input_shape[2]
    for b in spec.blocks:
        for _ in range(b.conv_count):
            total += conv_params(cin, b.channels) + 2 * b.channels
            cin = b.channels
    side = spec.input_shape[0] // (2 ** len(spec.blocks))
    feat = side * (spec.input_shape[1] // (2 ** len(spec.blocks))) * cin
    total += feat * spec.head_hidden + spec.head_hidden
    total += spec.head_hidden * spec.num_classes + spec.num_classes
    return total


def test_minimal_spec_param_count_worked_example():
    spec = ModelSpec(blocks=(BlockSpec(1, 4),), input_shape=(2, 2, 1),
                     num_classes=2, head_hidden=2)
    net = build(spec, seed=0)
    # conv 3*3*1*4+4=40; BN 8; dense1 4*2+2=10; dense2 2*2+2=6
    assert net.param_count() == 64
    assert spec_param_count(spec) == 64


def test_mini_vgg_structure():
    spec = mini_vgg_spec()
    net = build(spec, seed=0)
    convs = [l for _, l in net.named_layers() if isinstance(l, Conv2D)]
    assert len(convs) == 13
    assert len(net.blocks) == 5
    assert [b.channels for b in spec.blocks] == [8, 16, 32, 32, 32]


def test_minimal_spec_structure():
    spec = ModelSpec(blocks=(BlockSpec(1, 4),), input_shape=(2, 2, 1),
                     num_classes=2, head_hidden=2)
    net = build(spec, seed=1)
    x = np.zeros((3, 2, 2, 1), dtype=np.float32)
    tap = net.forward_to_tap(x, 0, mode="eval")
    assert tap.shape == (3, 1, 1, 4)  # head input 1x1x4


def test_indivisible_input_rejected():
    with pytest.raises(InvalidSpecError):
        ModelSpec(blocks=tuple(BlockSpec(2, 8) for _ in range(5)),
                  input_shape=(30, 30, 1), num_classes=10,
                  head_hidden=16).validate()


def test_spec_roundtrip_dict():
    spec = mini_vgg_spec()
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_forward_eval_deterministic(trained_parent, tiny_data):
    x = tiny_data[0].images[:8]
    a = trained_parent.forward(x, mode="eval")
    b = trained_parent.forward(x, mode="eval")
    assert a.tobytes() == b.tobytes()


def test_zero_weights_give_symmetric_logits(tiny_spec):
    net = build(tiny_spec, seed=0)
    for arr in net.registry().values():
        arr[...] = 0
    for name, arr in net.full_registry().items():
        if name.endswith("running_var"):
            arr[...] = 1
        elif name.endswith("running_mean"):
            arr[...] = 0
    x = np.random.default_rng(0).normal(size=(4, 16, 16, 1)).astype(np.float32)
    logits = net.forward(x, mode="eval")
    assert np.all(logits == logits[:, :1])  # equal per sample


def test_logits_shape(trained_parent, tiny_data):
    logits = trained_parent.forward(tiny_data[0].images[:5], mode="eval")
    assert logits.shape == (5, 4)


def test_tap_shapes(trained_parent):
    x = np.zeros((2, 16, 16, 1), dtype=np.float32)
    t0 = trained_parent.forward_to_tap(x, 0, mode="eval")
    assert t0.shape == (2, 8, 8, 4)
    t1 = trained_parent.forward_to_tap(x, 1, mode="eval")
    assert t1.shape == (2, 4, 4, 8)  # input / 2^len(blocks)
    r0 = trained_parent.forward_to_tap(x, 0, mode="eval", point=TAP_POST_RELU)
    assert r0.shape == (2, 16, 16, 4)  # pre-pool


def test_tap_distinct_constants():
    assert TAP_POST_POOL != TAP_POST_RELU


def test_tap_out_of_range(trained_parent):
    x = np.zeros((1, 16, 16, 1), dtype=np.float32)
    with pytest.raises(InvalidTapError):
        trained_parent.forward_to_tap(x, 5, mode="eval")


def test_identical_networks_same_tap_bitwise(tiny_spec):
    a = build(tiny_spec, seed=3)
    b = build(tiny_spec, seed=3)
    x = np.random.default_rng(1).normal(size=(2, 16, 16, 1)).astype(np.float32)
    ta = a.forward_to_tap(x, 1, mode="eval")
    tb = b.forward_to_tap(x, 1, mode="eval")
    assert ta.tobytes() == tb.tobytes()


def test_bad_input_shape_rejected(trained_parent):
    with pytest.raises(ShapeMismatchError):
        trained_parent.forward(np.zeros((1, 8, 8, 1), dtype=np.float32))


def test_clone_is_independent(trained_parent):
    clone = trained_parent.clone()
    x = np.random.default_rng(5).normal(size=(2, 16, 16, 1)).astype(np.float32)
    before = trained_parent.forward(x, mode="eval").copy()
    for arr in clone.registry().values():
        arr += 1.0
    after = trained_parent.forward(x, mode="eval")
    assert before.tobytes() == after.tobytes()
    assert clone.param_count() == trained_parent.param_count()


def test_registry_names_unique_and_stable(tiny_spec):
    net = build(tiny_spec, seed=0)
    names = list(net.full_registry())
    assert len(names) == len(set(names))
    assert names == list(build(tiny_spec, seed=1).full_registry())


def test_load_registry_shape_check(tiny_spec):
    net = build(tiny_spec, seed=0)
    values = {n: a.copy() for n, a in net.full_registry().items()}
    values["block0.conv0.W"] = np.zeros((3, 3, 2, 4), dtype=np.float32)
    with pytest.raises(ShapeMismatchError):
        build(tiny_spec, seed=1).load_registry(values)


# -- compression arithmetic ---------------------------------------------------


def reduction_closed_form(block):
    """Removing convs 2..n and their BNs from a C-channel block."""
    c = block.channels
    return (block.conv_count - 1) * (9 * c * c + c) + (block.conv_count - 1) * 2 * c


@pytest.mark.parametrize("k", range(5))
def test_compression_arithmetic_all_blocks(k):
    spec = mini_vgg_spec()
    parent = build(spec, seed=2)
    child = structural_compress(parent, k)
    assert (parent.param_count() - child.param_count()
            == reduction_closed_form(spec.blocks[k]))
    assert child.spec.blocks[k].conv_count == 1
    counts = [b.conv_count for b in child.spec.blocks]
    want = [2, 2, 3, 3, 3]
    want[k] = 1
    assert counts == want


def test_compression_keeps_tap_shapes(trained_parent):
    child = structural_compress(trained_parent, 0)
    from nettriage.triage import init_random
    init_random(child, 0, seed=0)
    x = np.random.default_rng(3).normal(size=(2, 16, 16, 1)).astype(np.float32)
    for b in range(len(trained_parent.spec.blocks)):
        assert (child.forward_to_tap(x, b, mode="eval").shape
                == trained_parent.forward_to_tap(x, b, mode="eval").shape)
    assert (child.forward(x, mode="eval").shape
            == trained_parent.forward(x, mode="eval").shape)


def test_spec_param_count_closed_form_matches_registry():
    for seed, spec in enumerate((
            mini_vgg_spec(),
            ModelSpec(blocks=(BlockSpec(2, 4), BlockSpec(3, 8)),
                      input_shape=(16, 16, 1), num_classes=4, head_hidden=16),
            ModelSpec(blocks=(BlockSpec(1, 2),), input_shape=(4, 4, 3),
                      num_classes=3, head_hidden=5))):
        assert build(spec, seed=seed).param_count() == spec_param_count(spec)


def test_bn_layers_present_per_conv(tiny_spec):
    net = build(tiny_spec, seed=0)
    for i, bspec in enumerate(tiny_spec.blocks):
        convs = [l for l in net.blocks[i] if isinstance(l, Conv2D)]
        bns = [l for l in net.blocks[i] if isinstance(l, BatchNorm2D)]
        assert len(convs) == len(bns) == bspec.conv_count

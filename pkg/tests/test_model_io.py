import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfnet.errors import ModelFormatError, ModelTruncatedError, ModelVersionError
from lfnet.lattice import LatticeSpec, PlainSpec, initialize_model
from lfnet.model_io import dumps, load_model, loads, models_equal, save_model

SPECS = [
    LatticeSpec(4, 5),
    LatticeSpec(1, 1),
    LatticeSpec(2, 3, fusion="sum"),
    LatticeSpec(3, 2, in_channels=3),
    LatticeSpec(2, 2, filters=8, kernel_size=5),
    PlainSpec(6),
    PlainSpec(5, wide_prefix=2),
]


def _perturbed(spec, seed=0, precision="single"):
    # non-default running stats so they are actually exercised
    model = initialize_model(spec, seed, precision)
    rng = np.random.default_rng(seed)
    for bn in model.bn.values():
        bn.running_mean[...] = rng.normal(size=bn.running_mean.shape)
        bn.running_var[...] = rng.uniform(0.5, 2, size=bn.running_var.shape)
        bn.gamma[...] = rng.normal(size=bn.gamma.shape)
    return model


@pytest.mark.parametrize("spec", SPECS, ids=str)
@pytest.mark.parametrize("precision", ["single", "double"])
def test_round_trip_bitwise(spec, precision, tmp_path):
    model = _perturbed(spec, 3, precision)
    path = tmp_path / "m.lfn"
    save_model(model, path)
    back = load_model(path)
    assert models_equal(model, back)
    assert back.topology.to_adjacency() == model.topology.to_adjacency()
    assert dumps(back) == path.read_bytes()


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.sampled_from(["concat", "sum"]), st.integers(0, 2**31))
def test_round_trip_property(n, m, fusion, seed):
    model = _perturbed(LatticeSpec(n, m, filters=4, fusion=fusion), seed % 1000)
    assert models_equal(loads(dumps(model)), model)


def test_round_trip_preserves_bn_constants():
    model = initialize_model(LatticeSpec(2, 2))
    for bn in model.bn.values():
        bn.epsilon, bn.momentum = 1e-3, 0.2
    back = loads(dumps(model))
    assert all(bn.epsilon == 1e-3 and bn.momentum == 0.2 for bn in back.bn.values())


def test_header_layout():
    data = dumps(initialize_model(LatticeSpec(4, 5)))
    assert data[:4] == b"LFNT"
    assert struct.unpack_from("<H", data, 4)[0] == 1


def test_truncated_at_every_region():
    data = dumps(initialize_model(LatticeSpec(2, 2, filters=4)))
    for cut in (2, 10, 60, len(data) // 2, len(data) - 1):
        with pytest.raises(ModelTruncatedError if cut >= 6 else (ModelTruncatedError, ModelFormatError)):
            loads(data[:cut])


def test_bad_magic():
    data = bytearray(dumps(initialize_model(LatticeSpec(1, 2))))
    data[:4] = b"NOPE"
    with pytest.raises(ModelFormatError, match="magic"):
        loads(bytes(data))


def test_unknown_version():
    data = bytearray(dumps(initialize_model(LatticeSpec(1, 2))))
    struct.pack_into("<H", data, 4, 99)
    with pytest.raises(ModelVersionError, match="99"):
        loads(bytes(data))


def test_trailing_bytes_rejected():
    with pytest.raises(ModelFormatError):
        loads(dumps(initialize_model(LatticeSpec(1, 2))) + b"\0")


def test_models_equal_detects_change():
    a = initialize_model(LatticeSpec(2, 2), seed=1)
    b = a.copy()
    assert models_equal(a, b)
    b.conv["out"].bias[0] += np.float32(1e-7)
    assert not models_equal(a, b)

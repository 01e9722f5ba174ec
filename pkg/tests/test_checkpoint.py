import struct

import numpy as np
import pytest

from sigkan import checkpoint
from sigkan.baselines import MlpConfig, MlpNetwork
from sigkan.checkpoint import ContainerError, clone_model, load_model, save_model, state_dict
from sigkan.model import NetworkConfig, SigKanNetwork


def test_container_round_trip_is_byte_exact():
    tensors = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(3.5), "c": np.zeros((0, 4))}
    blob = checkpoint.dumps({"z": 1, "a": [1, 2]}, tensors)
    meta, back = checkpoint.loads(blob)
    assert checkpoint.dumps(meta, back) == blob
    assert back["a"].shape == (2, 3) and back["b"].shape == () and back["c"].shape == (0, 4)


def test_header_layout():
    blob = checkpoint.dumps({}, {"w": np.ones(2)})
    assert blob[:8] == b"SGKNCTR\0"
    assert struct.unpack("<I", blob[8:12])[0] == checkpoint.VERSION
    (hlen,) = struct.unpack("<Q", blob[12:20])
    assert len(blob) == 20 + hlen + 16


def test_rejects_foreign_bytes():
    with pytest.raises(ContainerError, match="magic"):
        checkpoint.loads(b"not a container at all")


def test_rejects_truncated_payload():
    blob = checkpoint.dumps({}, {"w": np.ones(4)})
    with pytest.raises(ContainerError, match="past the end"):
        checkpoint.loads(blob[:-8])


@pytest.mark.parametrize("variant", ["sigkan", "sigdense"])
def test_model_round_trip(tmp_path, variant):
    net = SigKanNetwork.init(NetworkConfig(d_in=3, seq_len=6, units=4, n_layers=2, variant=variant,
                                           grid_size=4, spline_degree=2, grid_lo=-2.0), seed=5)
    save_model(tmp_path / "m.ckpt", net, extra={"best_val_loss": 0.25})
    back, meta = load_model(tmp_path / "m.ckpt")
    assert meta["extra"]["best_val_loss"] == 0.25
    assert back.config == net.config
    x = np.random.default_rng(0).normal(size=(2, 6, 3))
    np.testing.assert_array_equal(back.forward(x).data, net.forward(x).data)
    save_model(tmp_path / "again.ckpt", back, extra={"best_val_loss": 0.25})
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_mlp_round_trip(tmp_path):
    net = MlpNetwork.init(MlpConfig(d_in=2, seq_len=4, hidden=3), seed=1)
    save_model(tmp_path / "m.ckpt", net)
    back, meta = load_model(tmp_path / "m.ckpt")
    assert meta["model"] == "mlp"
    for k, v in state_dict(net).items():
        np.testing.assert_array_equal(state_dict(back)[k], v)


def test_clone_is_independent():
    net = SigKanNetwork.init(NetworkConfig(d_in=2, seq_len=4, units=3), seed=2)
    twin = clone_model(net)
    name = next(iter(net.named_parameters()))
    twin.named_parameters()[name].data = twin.named_parameters()[name].data + 1.0
    assert not np.array_equal(twin.named_parameters()[name].data, net.named_parameters()[name].data)


def test_shape_mismatch_reported(tmp_path):
    small = SigKanNetwork.init(NetworkConfig(d_in=2, seq_len=4, units=3))
    big = SigKanNetwork.init(NetworkConfig(d_in=2, seq_len=4, units=5))
    with pytest.raises(ContainerError, match="stored shape"):
        checkpoint.load_state_dict(big, state_dict(small))


def test_non_model_container(tmp_path):
    checkpoint.save(tmp_path / "x.bin", {"kind": "scaling"}, {})
    with pytest.raises(ContainerError, match="does not hold a model"):
        load_model(tmp_path / "x.bin")

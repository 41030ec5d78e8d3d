import struct

import numpy as np
import pytest

from dehazer.checkpoint import (MAGIC, Checkpoint, CheckpointError,
                                load_checkpoint, save_checkpoint)
from dehazer.model import ModelConfig, init_params
from dehazer.optim import AdamState

TINY = ModelConfig(base_channels=8, encoder_levels=2, res_blocks=2)


def make_ckpt(seed=0, with_adam=True):
    params = init_params(TINY, seed=seed)
    adam = None
    if with_adam:
        adam = AdamState.for_params(params)
        rng = np.random.default_rng(seed)
        for k in adam.m:
            adam.m[k] = rng.standard_normal(adam.m[k].shape).astype(np.float32)
            adam.v[k] = np.abs(rng.standard_normal(adam.v[k].shape)).astype(
                np.float32)
        adam.step = 17
    return Checkpoint(config=TINY, params=params, adam=adam, epoch=3,
                      iteration=300, seed=seed)


class TestRoundTrip:
    def test_bitwise_equality(self, tmp_path):
        ckpt = make_ckpt()
        path = tmp_path / "a.ckpt"
        save_checkpoint(path, ckpt)
        back = load_checkpoint(path)
        assert back.config == ckpt.config
        assert (back.epoch, back.iteration, back.seed) == (3, 300, 0)
        assert back.adam.step == 17
        for key in ckpt.params:
            np.testing.assert_array_equal(back.params[key], ckpt.params[key])
            np.testing.assert_array_equal(back.adam.m[key], ckpt.adam.m[key])
            np.testing.assert_array_equal(back.adam.v[key], ckpt.adam.v[key])

    def test_without_optimizer_state(self, tmp_path):
        ckpt = make_ckpt(with_adam=False)
        path = tmp_path / "b.ckpt"
        save_checkpoint(path, ckpt)
        back = load_checkpoint(path)
        assert back.adam is None
        assert set(back.params) == set(ckpt.params)

    def test_save_then_save_is_byte_identical(self, tmp_path):
        ckpt = make_ckpt()
        p1, p2 = tmp_path / "c1.ckpt", tmp_path / "c2.ckpt"
        save_checkpoint(p1, ckpt)
        save_checkpoint(p2, ckpt)
        assert p1.read_bytes() == p2.read_bytes()


class TestValidation:
    def test_flipped_magic_byte(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        save_checkpoint(path, make_ckpt())
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "v9.ckpt"
        save_checkpoint(path, make_ckpt())
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "trunc.ckpt"
        save_checkpoint(path, make_ckpt())
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_dim_mismatch_names_tensor(self, tmp_path):
        # declare a different architecture in the config block: every tensor
        # then disagrees with the declared dims and the loader names one
        path = tmp_path / "dims.ckpt"
        save_checkpoint(path, make_ckpt(with_adam=False))
        blob = path.read_bytes()
        # config block: swap res_blocks=2 for res_blocks=3
        patched = blob.replace(b"res_blocks=2", b"res_blocks=3")
        assert patched != blob
        # keep the declared block length valid: equal-length replacement
        assert len(patched) == len(blob)
        path.write_bytes(patched)
        with pytest.raises(CheckpointError, match="missing|dims"):
            load_checkpoint(path)

    def test_magic_constant(self):
        assert MAGIC == b"PFFN"

    def test_nonexistent_path(self, tmp_path):
        with pytest.raises(OSError):
            load_checkpoint(tmp_path / "missing.ckpt")

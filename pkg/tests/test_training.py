import math
import os

import numpy as np
import pytest

from dehazer.checkpoint import load_checkpoint
from dehazer.data import build_patchset
from dehazer.model import ModelConfig
from dehazer.training import (TrainConfig, TrainingDiverged, _batch_at,
                              _split_indices, run_ablation, train)

from conftest import make_hazy_scenes

SMALL = ModelConfig(base_channels=4, encoder_levels=2, res_blocks=1)


@pytest.fixture(scope="module")
def patchset(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    scenes = make_hazy_scenes(root, n=8, size=32, seed=3)
    return build_patchset(scenes, size=32, stride=32, augment_crops=False)


def small_cfg(**kw):
    base = dict(lr=1e-4, batch_size=4, iters_per_epoch=5, total_epochs=2,
                seed=0, eval_every=0, model=SMALL)
    base.update(kw)
    return TrainConfig(**base)


class TestBatchSchedule:
    def test_pure_function_of_iteration(self, patchset):
        idx = list(range(len(patchset)))
        a = _batch_at(patchset, idx, 4, seed=1, global_iter=7)
        b = _batch_at(patchset, idx, 4, seed=1, global_iter=7)
        np.testing.assert_array_equal(a[0], b[0])

    def test_batch_too_large_rejected(self, patchset):
        with pytest.raises(ValueError):
            _batch_at(patchset, list(range(3)), 4, seed=0, global_iter=0)

    def test_split_fraction(self):
        cfg = small_cfg(eval_every=1, val_fraction=0.25)
        val, tr = _split_indices(8, cfg)
        assert len(val) == 2 and len(tr) == 6
        assert sorted(val + tr) == list(range(8))

    def test_split_disabled(self):
        val, tr = _split_indices(8, small_cfg(eval_every=0))
        assert val == [] and len(tr) == 8


class TestTrainLoop:
    def test_losses_logged_and_checkpoints_written(self, patchset, tmp_path):
        cfg = small_cfg()
        result = train(cfg, patchset, tmp_path / "run")
        assert len(result.iter_losses) == 10
        assert len(result.checkpoint_paths) == 2
        assert all(os.path.exists(p) for p in result.checkpoint_paths)
        log = (tmp_path / "run" / "metrics.tsv").read_text()
        assert log.startswith("# epoch\titer\tloss\tval_psnr\twall_seconds")
        assert len(log.strip().splitlines()) == 3  # header + 2 epochs

    def test_fixed_seed_reproducible(self, patchset, tmp_path):
        cfg = small_cfg()
        r1 = train(cfg, patchset, tmp_path / "a")
        r2 = train(cfg, patchset, tmp_path / "b")
        assert r1.iter_losses == r2.iter_losses
        for key in r1.params:
            np.testing.assert_array_equal(r1.params[key], r2.params[key])
        ca = (tmp_path / "a" / "epoch_0002.ckpt").read_bytes()
        cb = (tmp_path / "b" / "epoch_0002.ckpt").read_bytes()
        assert ca == cb

    def test_resume_equals_uninterrupted(self, patchset, tmp_path):
        cfg = small_cfg(total_epochs=3)
        full = train(cfg, patchset, tmp_path / "full")
        part = train(small_cfg(total_epochs=1), patchset, tmp_path / "part")
        resumed = train(cfg, patchset, tmp_path / "part",
                        resume=part.checkpoint_paths[-1])
        assert resumed.iter_losses == full.iter_losses[5:]
        final_full = (tmp_path / "full" / "epoch_0003.ckpt").read_bytes()
        final_res = (tmp_path / "part" / "epoch_0003.ckpt").read_bytes()
        assert final_full == final_res

    def test_resume_config_mismatch_rejected(self, patchset, tmp_path):
        part = train(small_cfg(), patchset, tmp_path / "p")
        other = small_cfg(model=ModelConfig(base_channels=4, encoder_levels=2,
                                            res_blocks=2))
        with pytest.raises(ValueError, match="architecture"):
            train(other, patchset, tmp_path / "q",
                  resume=part.checkpoint_paths[-1])

    def test_validation_column(self, patchset, tmp_path):
        cfg = small_cfg(eval_every=1, val_fraction=0.25)
        result = train(cfg, patchset, tmp_path / "val")
        assert all(math.isfinite(row[3]) for row in result.epoch_rows)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_divergence_aborts_with_diagnostic(self, patchset, tmp_path):
        cfg = small_cfg(lr=1e20, total_epochs=1, iters_per_epoch=50)
        with pytest.raises(TrainingDiverged):
            train(cfg, patchset, tmp_path / "boom")
        diag = tmp_path / "boom" / "diverged.ckpt"
        assert diag.exists()
        back = load_checkpoint(diag)
        assert back.config == SMALL

    def test_checkpoint_counters_advance(self, patchset, tmp_path):
        result = train(small_cfg(), patchset, tmp_path / "cnt")
        first = load_checkpoint(result.checkpoint_paths[0])
        last = load_checkpoint(result.checkpoint_paths[-1])
        assert (first.epoch, first.iteration) == (1, 5)
        assert (last.epoch, last.iteration) == (2, 10)
        assert last.adam.step == 10


class TestResultHelpers:
    def test_psnr_history_and_threshold(self, patchset, tmp_path):
        result = train(small_cfg(), patchset, tmp_path / "h")
        hist = result.psnr_history
        assert len(hist) == len(result.iter_losses)
        assert result.iters_to_reach(-10.0) == 1
        assert result.iters_to_reach(500.0) is None


class TestAblation:
    def test_writes_aligned_curves_per_variant(self, patchset, tmp_path):
        variants = [(1, True), (1, False)]
        results = run_ablation(small_cfg(), variants, patchset, tmp_path / "ab")
        assert set(results) == {"blocks1_skip", "blocks1_noskip"}
        for name, res in results.items():
            curve = tmp_path / "ab" / f"curve_{name}.tsv"
            assert curve.exists()
            rows = [l for l in curve.read_text().splitlines()
                    if l and not l.startswith("#")]
            assert len(rows) == len(res.iter_losses) == 10

    def test_identical_variant_twice_gives_identical_curves(self, patchset,
                                                            tmp_path):
        variants = [(1, True)]
        a = run_ablation(small_cfg(), variants, patchset, tmp_path / "r1")
        b = run_ablation(small_cfg(), variants, patchset, tmp_path / "r2")
        assert a["blocks1_skip"].iter_losses == b["blocks1_skip"].iter_losses

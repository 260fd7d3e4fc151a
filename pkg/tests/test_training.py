import dataclasses
import json

import numpy as np
import pytest
import torch

from mulsa import training
from mulsa.demos import collect
from mulsa.training import (
    CROP,
    DOWNSAMPLE,
    Checkpoint,
    CheckpointError,
    TrainConfig,
    apply_crop,
    augment,
    batch_tensors,
    build_dataset,
    center_crop_offset,
    checkpoint_from_policy,
    crop_offset_grid,
    downsample_frame,
    draw_crop_offset,
    encoder_configs_for,
    fusion_config_for,
    load_checkpoint,
    mel_normalization_stats,
    save_checkpoint,
    train,
)


@pytest.fixture(scope="module")
def packing_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("demos")
    collect(root, "packing", ["soft_slanted", "left_flat"], 2, seed=9, noise_rate=0.0)
    return root / "dataset.json"


@pytest.fixture(scope="module")
def packing_dataset(packing_manifest):
    return build_dataset(packing_manifest, n=6, class_count=27)


def quick_config(manifest, **kw):
    defaults = dict(
        manifest_path=str(manifest), variant="mulsa", topology="small",
        epochs=1, batch_size=8, epoch_samples=16, seed=0,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestAugmentation:
    def test_grid_size(self):
        assert crop_offset_grid() == (13, 10)

    def test_center_offset(self):
        assert center_crop_offset() == (6, 4)

    def test_draw_in_grid(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            ox, oy = draw_crop_offset(rng)
            assert 0 <= ox < 13
            assert 0 <= oy < 10

    def test_draw_roughly_uniform(self):
        # chi-square over the 130-cell grid should not be wildly off uniform
        rng = np.random.default_rng(1)
        counts = np.zeros((13, 10))
        n = 13000
        for _ in range(n):
            ox, oy = draw_crop_offset(rng)
            counts[ox, oy] += 1
        expected = n / 130
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        # 129 dof: mean 129, std ~16; allow a generous band
        assert 60 < chi2 < 230

    def test_apply_crop_shape_and_content(self):
        frames = np.arange(2 * 105 * 140 * 3, dtype=np.uint8).reshape(2, 105, 140, 3)
        out = apply_crop(frames, (3, 2))
        assert out.shape == (2, 96, 128, 3)
        np.testing.assert_array_equal(out[0], frames[0, 2 : 2 + 96, 3 : 3 + 128])

    def test_augment_shares_offset_across_modalities(self):
        rng = np.random.default_rng(5)
        vis = np.zeros((6, 105, 140, 3), np.uint8)
        tac = np.zeros((6, 105, 140, 3), np.uint8)
        _, _, offset = augment(vis, tac, "train", rng)
        rng2 = np.random.default_rng(5)
        assert offset == draw_crop_offset(rng2)

    def test_eval_mode_is_center(self):
        vis = np.zeros((1, 105, 140, 3), np.uint8)
        _, _, offset = augment(vis, vis, "eval")
        assert offset == (6, 4)

    def test_unknown_mode_rejected(self):
        vis = np.zeros((1, 105, 140, 3), np.uint8)
        with pytest.raises(ValueError):
            augment(vis, vis, "test")

    def test_downsample_shape(self):
        frame = np.zeros((240, 320, 3), np.uint8)
        assert downsample_frame(frame).shape == (105, 140, 3)
        tac = np.zeros((300, 400, 3), np.uint8)
        assert downsample_frame(tac).shape == (105, 140, 3)


class TestDataset:
    def test_one_sample_per_step(self, packing_dataset, packing_manifest):
        meta = json.loads(packing_manifest.read_text())
        total = sum(
            len(ep.labels) for ep in packing_dataset.episodes
        )
        assert len(packing_dataset) == total
        assert len(packing_dataset.episodes) == len(meta["episodes"])

    def test_slot_indices(self, packing_dataset):
        assert packing_dataset.slot_indices(30) == [5, 10, 15, 20, 25, 30]
        assert packing_dataset.slot_indices(0) == [-25, -20, -15, -10, -5, 0]

    def test_raw_sample_shapes(self, packing_dataset):
        vis, tac, mel, label = packing_dataset.raw_sample(0)
        assert vis.shape == (6, 105, 140, 3)
        assert tac.shape == (6, 105, 140, 3)
        assert mel.shape == (6, 64, 50)
        assert 0 <= label < 27

    def test_early_slots_fall_back(self, packing_dataset):
        # sample at t=0: all history slots use frame 0 and silence audio
        idx = packing_dataset.samples.index((0, 0))
        vis, tac, mel, _ = packing_dataset.raw_sample(idx)
        for k in range(5):
            np.testing.assert_array_equal(vis[k], vis[5])
            np.testing.assert_array_equal(tac[k], tac[5])
            np.testing.assert_allclose(mel[k], packing_dataset.silence_mel)

    def test_corrupt_episode_skipped(self, tmp_path):
        collect(tmp_path, "packing", ["left_flat"], 2, seed=3, noise_rate=0.0)
        meta = json.loads((tmp_path / "dataset.json").read_text())
        (tmp_path / meta["episodes"][0] / "manifest.json").write_text("broken")
        with pytest.warns(UserWarning, match="skipping corrupt episode"):
            ds = build_dataset(tmp_path / "dataset.json")
        assert ds.skipped == 1
        assert len(ds.episodes) == 1

    def test_mel_stats_match_numpy(self, packing_dataset):
        mean, std = mel_normalization_stats(packing_dataset)
        flat = np.concatenate([ep.mel.ravel() for ep in packing_dataset.episodes])
        assert mean == pytest.approx(float(flat.astype(np.float64).mean()), rel=1e-4)
        assert std == pytest.approx(float(flat.astype(np.float64).std()), rel=1e-3)


class TestBatchTensors:
    def test_shapes_and_normalization(self, packing_dataset):
        rng = np.random.default_rng(0)
        inputs, labels = batch_tensors(
            packing_dataset, [0, 1, 2], "eval", rng, 0.0, 1.0, ("V", "A", "T")
        )
        assert inputs["V"].shape == (3, 6, 3, 96, 128)
        assert inputs["T"].shape == (3, 6, 3, 96, 128)
        assert inputs["A"].shape == (3, 6, 1, 64, 50)
        assert labels.shape == (3,)
        assert inputs["V"].dtype == torch.float32

    def test_modality_subset(self, packing_dataset):
        rng = np.random.default_rng(0)
        inputs, _ = batch_tensors(packing_dataset, [0], "eval", rng, 0.0, 1.0, ("A",))
        assert set(inputs) == {"A"}


class TestCheckpoint:
    def _tiny_checkpoint(self, manifest, dataset):
        cfg = quick_config(manifest)
        return train(cfg, dataset)

    def test_round_trip_bitwise(self, packing_manifest, packing_dataset, tmp_path):
        ckpt = self._tiny_checkpoint(packing_manifest, packing_dataset)
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.fusion_config == ckpt.fusion_config
        assert loaded.encoder_configs == ckpt.encoder_configs
        assert loaded.train_config == ckpt.train_config
        assert loaded.mel_mean == ckpt.mel_mean
        assert loaded.mel_std == ckpt.mel_std
        assert loaded.history == ckpt.history
        assert set(loaded.state) == set(ckpt.state)
        for k in ckpt.state:
            np.testing.assert_array_equal(loaded.state[k], ckpt.state[k])

    def test_forward_identical_after_reload(self, packing_manifest, packing_dataset, tmp_path):
        ckpt = self._tiny_checkpoint(packing_manifest, packing_dataset)
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        rng = np.random.default_rng(0)
        inputs, _ = batch_tensors(packing_dataset, [0, 5], "eval", rng,
                                  ckpt.mel_mean, ckpt.mel_std, ("V", "A", "T"))
        with torch.no_grad():
            a = ckpt.build_policy()(inputs).logits
            b = loaded.build_policy()(inputs).logits
        np.testing.assert_array_equal(a.numpy(), b.numpy())

    def test_save_twice_identical_bytes(self, packing_manifest, packing_dataset, tmp_path):
        ckpt = self._tiny_checkpoint(packing_manifest, packing_dataset)
        save_checkpoint(ckpt, tmp_path / "a.ckpt")
        save_checkpoint(ckpt, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_rejects_non_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"PNG not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_truncated(self, packing_manifest, packing_dataset, tmp_path):
        ckpt = self._tiny_checkpoint(packing_manifest, packing_dataset)
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 100])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_trailing_bytes(self, packing_manifest, packing_dataset, tmp_path):
        ckpt = self._tiny_checkpoint(packing_manifest, packing_dataset)
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        path.write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestTraining:
    def test_initial_loss_near_uniform(self, packing_manifest, packing_dataset):
        # an untrained 27-class head should start near ln(27)
        torch.manual_seed(0)
        cfg = quick_config(packing_manifest)
        fusion_cfg = fusion_config_for(cfg, 27)
        policy = training.build_policy(fusion_cfg, encoder_configs_for("small"))
        policy.eval()
        rng = np.random.default_rng(0)
        mean, std = mel_normalization_stats(packing_dataset)
        inputs, labels = batch_tensors(packing_dataset, list(range(16)), "eval",
                                       rng, mean, std, ("V", "A", "T"))
        with torch.no_grad():
            out = policy(inputs)
        loss = torch.nn.functional.cross_entropy(out.logits, labels)
        assert abs(float(loss) - np.log(27)) < 0.5

    def test_history_and_determinism(self, packing_manifest, packing_dataset):
        cfg = quick_config(packing_manifest, epochs=2, epoch_samples=8)
        a = train(cfg, packing_dataset)
        b = train(cfg, packing_dataset)
        assert len(a.history) == 2
        assert {"epoch", "loss", "accuracy"} <= set(a.history[0])
        assert a.history == b.history
        for k in a.state:
            np.testing.assert_array_equal(a.state[k], b.state[k])

    def test_seed_changes_results(self, packing_manifest, packing_dataset):
        a = train(quick_config(packing_manifest, seed=0), packing_dataset)
        b = train(quick_config(packing_manifest, seed=1), packing_dataset)
        assert a.history != b.history

    def test_empty_dataset_rejected(self, packing_manifest, packing_dataset):
        empty = dataclasses.replace(
            packing_dataset, episodes=[], samples=[]
        )
        with pytest.raises(ValueError):
            train(quick_config(packing_manifest), empty)

    def test_modality_ablation_trains(self, packing_manifest, packing_dataset):
        cfg = quick_config(packing_manifest, active_modalities=("V",))
        ckpt = train(cfg, packing_dataset)
        assert ckpt.fusion_config.active_modalities == ("V",)
        assert "encoders.V.stem.0.weight" in ckpt.state
        assert not any(k.startswith("encoders.A") for k in ckpt.state)

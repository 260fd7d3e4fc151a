"""Behavioral-cloning trainer: dataset windowing, the downsample+crop
augmentation recipe, cross-entropy optimization, and the binary checkpoint
container.

Episodes are preprocessed once into per-step arrays (downsampled frames,
per-tick log-mel grids) so window assembly during training is pure indexing.
Everything is seeded: dataset order, parameter init, and crop draws, so two
runs with the same seed produce identical checkpoints.
"""

from __future__ import annotations

import io
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import audio_dsp
from .encoders import EncoderConfig, normalize_pixels
from .fusion import FusionConfig, build_policy
from .sensordata import (
    POLICY_DT,
    WINDOW_STRIDE,
    EpisodeFormatError,
    StreamSet,
    load_episode,
)

SLOT_TICKS = int(round(WINDOW_STRIDE / POLICY_DT))  # policy ticks between window slots

DOWNSAMPLE = (140, 105)  # W x H
CROP = (128, 96)  # W x H


class TrainingDivergedError(RuntimeError):
    """Loss became NaN; message carries step, batch, and input statistics."""


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint file."""


@dataclass(frozen=True)
class TrainConfig:
    manifest_path: str = ""
    variant: str = "mulsa"
    active_modalities: tuple[str, ...] = ("V", "A", "T")
    topology: str = "small"
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 1e-4
    seed: int = 0
    epoch_samples: int = 0  # 0 -> full pass over all samples each epoch
    val_fraction: float = 0.0
    n_slots: int = 6
    use_positional_embeddings: bool = True

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["active_modalities"] = list(self.active_modalities)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["active_modalities"] = tuple(d["active_modalities"])
        return TrainConfig(**d)


def encoder_configs_for(topology: str, crop=CROP) -> dict[str, EncoderConfig]:
    w, h = crop
    return {
        "V": EncoderConfig(topology, 3, (h, w)),
        "A": EncoderConfig(topology, 1, (64, 50)),
        "T": EncoderConfig(topology, 3, (h, w)),
    }


def fusion_config_for(train_cfg: TrainConfig, class_count: int) -> FusionConfig:
    d = 512 if train_cfg.topology == "paper_resnet18" else 64
    hidden = (1024, 256) if train_cfg.topology == "paper_resnet18" else (128, 64)
    return FusionConfig(
        variant=train_cfg.variant,
        active_modalities=train_cfg.active_modalities,
        feature_dim=d,
        n_slots=train_cfg.n_slots,
        class_count=class_count,
        mlp_hidden_sizes=hidden,
        use_positional_embeddings=train_cfg.use_positional_embeddings,
    )


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


def downsample_frame(pixels: np.ndarray, size=DOWNSAMPLE) -> np.ndarray:
    """Area (box-filter) downsample to W x H."""
    return np.asarray(Image.fromarray(pixels).resize(size, Image.BOX), dtype=np.uint8)


@dataclass
class EpisodeArrays:
    visual: np.ndarray  # (T, 105, 140, 3) uint8
    tactile: np.ndarray
    mel: np.ndarray  # (T, 64, 50) float32, mel[k] ends at tick k
    labels: np.ndarray  # (T,) int64


@dataclass
class WindowDataset:
    episodes: list[EpisodeArrays]
    samples: list[tuple[int, int]]  # (episode index, step index)
    silence_mel: np.ndarray
    class_count: int
    n_slots: int
    skipped: int = 0

    def __len__(self):
        return len(self.samples)

    def slot_indices(self, t: int) -> list[int]:
        return [t - SLOT_TICKS * (self.n_slots - i) for i in range(1, self.n_slots + 1)]

    def raw_sample(self, idx: int):
        ep_idx, t = self.samples[idx]
        ep = self.episodes[ep_idx]
        slots = self.slot_indices(t)
        vis = np.stack([ep.visual[max(k, 0)] for k in slots])
        tac = np.stack([ep.tactile[max(k, 0)] for k in slots])
        mel = np.stack([ep.mel[k] if k >= 0 else self.silence_mel for k in slots])
        return vis, tac, mel, int(ep.labels[t])


def preprocess_episode(directory: Path, mel_params: audio_dsp.MelParams) -> EpisodeArrays:
    episode = load_episode(directory)
    t_count = len(episode.steps)
    visual = np.stack(
        [downsample_frame(s.observation.visual.pixels) for s in episode.steps]
    )
    tactile = np.stack(
        [downsample_frame(s.observation.tactile.pixels) for s in episode.steps]
    )
    streams = StreamSet(episode.audio.sample_rate, episode.audio.start_timestamp)
    streams.append_audio(episode.audio.samples)
    mels = np.empty((t_count, mel_params.n_mels, mel_params.n_frames), dtype=np.float32)
    for k in range(t_count):
        segment = streams.audio_segment(k * POLICY_DT, WINDOW_STRIDE)
        resampled = audio_dsp.resample(segment, mel_params.target_rate)
        mels[k] = audio_dsp.mel_spectrogram(resampled, mel_params).values
    labels = np.array([s.action.class_index for s in episode.steps], dtype=np.int64)
    return EpisodeArrays(visual, tactile, mels, labels)


def silence_mel(mel_params: audio_dsp.MelParams | None = None) -> np.ndarray:
    params = mel_params or audio_dsp.MelParams()
    from .sensordata import AudioChunk

    zeros = AudioChunk(np.zeros(params.segment_samples, np.int16), params.target_rate, 0.0)
    return audio_dsp.mel_spectrogram(zeros, params).values


def build_dataset(manifest: str | Path, n: int = 6, class_count: int = 27) -> WindowDataset:
    """One sample per recorded episode step; corrupt episodes are skipped with
    a warning."""
    manifest = Path(manifest)
    meta = json.loads(manifest.read_text())
    root = manifest.parent
    params = audio_dsp.MelParams()
    episodes: list[EpisodeArrays] = []
    samples: list[tuple[int, int]] = []
    skipped = 0
    for name in meta["episodes"]:
        try:
            arrays = preprocess_episode(root / name, params)
        except (EpisodeFormatError, OSError) as exc:
            warnings.warn(f"skipping corrupt episode {name}: {exc}")
            skipped += 1
            continue
        idx = len(episodes)
        episodes.append(arrays)
        samples.extend((idx, t) for t in range(len(arrays.labels)))
    return WindowDataset(episodes, samples, silence_mel(params), class_count, n, skipped)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def crop_offset_grid(downsample=DOWNSAMPLE, crop=CROP) -> tuple[int, int]:
    return downsample[0] - crop[0] + 1, downsample[1] - crop[1] + 1  # 13 x 10


def draw_crop_offset(rng: np.random.Generator, downsample=DOWNSAMPLE, crop=CROP):
    nx, ny = crop_offset_grid(downsample, crop)
    return int(rng.integers(0, nx)), int(rng.integers(0, ny))


def center_crop_offset(downsample=DOWNSAMPLE, crop=CROP):
    nx, ny = crop_offset_grid(downsample, crop)
    return (nx - 1) // 2, (ny - 1) // 2  # (6, 4) for the default grid


def apply_crop(frames: np.ndarray, offset: tuple[int, int], crop=CROP) -> np.ndarray:
    """(N, H, W, 3) -> cropped; one offset applied identically to all N."""
    ox, oy = offset
    w, h = crop
    return frames[:, oy : oy + h, ox : ox + w]


def augment(
    vis: np.ndarray, tac: np.ndarray, mode: str, rng: np.random.Generator | None = None
):
    """Random crop at train time (one offset shared by all frames of both image
    modalities), center crop at eval. Spectrograms pass through unaugmented."""
    if mode == "train":
        offset = draw_crop_offset(rng)
    elif mode == "eval":
        offset = center_crop_offset()
    else:
        raise ValueError(f"unknown augmentation mode {mode!r}")
    return apply_crop(vis, offset), apply_crop(tac, offset), offset


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"MULSACKPT"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    fusion_config: FusionConfig
    encoder_configs: dict[str, EncoderConfig]
    train_config: TrainConfig
    mel_mean: float
    mel_std: float
    step_counter: int
    history: list[dict] = field(default_factory=list)
    state: dict[str, np.ndarray] = field(default_factory=dict)

    def build_policy(self):
        policy = build_policy(self.fusion_config, self.encoder_configs)
        tensors = {k: torch.from_numpy(v.copy()) for k, v in self.state.items()}
        policy.load_state_dict(tensors)
        policy.eval()
        return policy


def checkpoint_from_policy(policy, train_config, mel_mean, mel_std, step_counter, history):
    state = {
        k: v.detach().cpu().numpy().astype(np.float32, copy=True)
        for k, v in policy.state_dict().items()
    }
    return Checkpoint(
        policy.config,
        policy.encoder_configs,
        train_config,
        float(mel_mean),
        float(mel_std),
        step_counter,
        history,
        state,
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """JSON header followed by named little-endian float32 tensor records."""
    header = {
        "version": CKPT_VERSION,
        "fusion_config": ckpt.fusion_config.to_dict(),
        "encoder_configs": {m: c.to_dict() for m, c in ckpt.encoder_configs.items()},
        "train_config": ckpt.train_config.to_dict(),
        "mel_mean": ckpt.mel_mean,
        "mel_std": ckpt.mel_std,
        "step_counter": ckpt.step_counter,
        "history": ckpt.history,
        "tensors": [
            {"name": k, "dims": list(v.shape)} for k, v in ckpt.state.items()
        ],
    }
    buf = io.BytesIO()
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", len(header_bytes)))
    buf.write(header_bytes)
    for k, v in ckpt.state.items():
        buf.write(v.astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(CKPT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    off += hlen
    if header["version"] != CKPT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {header['version']} != supported {CKPT_VERSION}"
        )
    state = {}
    for rec in header["tensors"]:
        count = int(np.prod(rec["dims"])) if rec["dims"] else 1
        nbytes = count * 4
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {rec['name']}")
        state[rec["name"]] = (
            np.frombuffer(raw, dtype="<f4", count=count, offset=off)
            .reshape(rec["dims"])
            .copy()
        )
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return Checkpoint(
        FusionConfig.from_dict(header["fusion_config"]),
        {m: EncoderConfig.from_dict(c) for m, c in header["encoder_configs"].items()},
        TrainConfig.from_dict(header["train_config"]),
        header["mel_mean"],
        header["mel_std"],
        header["step_counter"],
        header["history"],
        state,
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def batch_tensors(
    dataset: WindowDataset,
    indices: list[int],
    mode: str,
    rng: np.random.Generator,
    mel_mean: float,
    mel_std: float,
    active: tuple[str, ...],
):
    vis_list, tac_list, mel_list, labels = [], [], [], []
    for idx in indices:
        vis, tac, mel, label = dataset.raw_sample(idx)
        if "V" in active or "T" in active:
            vis_c, tac_c, _ = augment(vis, tac, mode, rng)
        else:
            vis_c, tac_c = vis, tac
        vis_list.append(vis_c)
        tac_list.append(tac_c)
        mel_list.append(mel)
        labels.append(label)
    inputs = {}
    if "V" in active:
        frames = torch.from_numpy(np.stack(vis_list)).permute(0, 1, 4, 2, 3)
        inputs["V"] = normalize_pixels(frames)
    if "T" in active:
        frames = torch.from_numpy(np.stack(tac_list)).permute(0, 1, 4, 2, 3)
        inputs["T"] = normalize_pixels(frames)
    if "A" in active:
        mel = torch.from_numpy(np.stack(mel_list)).unsqueeze(2)  # (B, N, 1, 64, 50)
        inputs["A"] = (mel - mel_mean) / mel_std
    return inputs, torch.tensor(labels, dtype=torch.int64)


def mel_normalization_stats(dataset: WindowDataset) -> tuple[float, float]:
    total, sq, count = 0.0, 0.0, 0
    for ep in dataset.episodes:
        total += float(ep.mel.sum())
        sq += float((ep.mel.astype(np.float64) ** 2).sum())
        count += ep.mel.size
    if count == 0:
        return 0.0, 1.0
    mean = total / count
    var = max(sq / count - mean * mean, 1e-12)
    return mean, float(np.sqrt(var))


def train(config: TrainConfig, dataset: WindowDataset | None = None) -> Checkpoint:
    """Minimize mean cross-entropy of predicted logits vs demonstrated action
    classes; returns a checkpoint with per-epoch loss/accuracy history."""
    if dataset is None:
        dataset = build_dataset(config.manifest_path)
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    torch.manual_seed(config.seed)
    fusion_cfg = fusion_config_for(config, dataset.class_count)
    policy = build_policy(fusion_cfg, encoder_configs_for(config.topology))
    policy.train()
    mel_mean, mel_std = mel_normalization_stats(dataset)
    optimizer = torch.optim.Adam(policy.parameters(), lr=config.learning_rate)
    loss_fn = torch.nn.CrossEntropyLoss()

    order_rng = np.random.default_rng([config.seed, 101])
    all_indices = np.arange(len(dataset))
    val_count = int(len(dataset) * config.val_fraction)
    if val_count:
        perm = order_rng.permutation(all_indices)
        val_indices, train_indices = perm[:val_count], perm[val_count:]
    else:
        val_indices, train_indices = np.array([], dtype=int), all_indices

    history: list[dict] = []
    step_counter = 0
    for epoch in range(config.epochs):
        epoch_rng = np.random.default_rng([config.seed, 202, epoch])
        order = epoch_rng.permutation(train_indices)
        if config.epoch_samples:
            order = order[: config.epoch_samples]
        losses, correct, seen = [], 0, 0
        for b in range(0, len(order), config.batch_size):
            batch_idx = [int(i) for i in order[b : b + config.batch_size]]
            batch_rng = np.random.default_rng([config.seed, 303, epoch, b])
            inputs, labels = batch_tensors(
                dataset, batch_idx, "train", batch_rng, mel_mean, mel_std,
                config.active_modalities,
            )
            out = policy(inputs)
            loss = loss_fn(out.logits, labels)
            if torch.isnan(loss):
                stats = {
                    m: (float(v.mean()), float(v.std())) for m, v in inputs.items()
                }
                raise TrainingDivergedError(
                    f"NaN loss at step {step_counter}, epoch {epoch}, batch {b // config.batch_size}; "
                    f"per-modality input (mean, std): {stats}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step_counter += 1
            losses.append(float(loss.detach()))
            correct += int((out.predicted == labels.numpy()).sum())
            seen += len(batch_idx)
        history.append(
            {"epoch": epoch, "loss": float(np.mean(losses)), "accuracy": correct / max(seen, 1)}
        )
    policy.eval()
    return checkpoint_from_policy(policy, config, mel_mean, mel_std, step_counter, history)

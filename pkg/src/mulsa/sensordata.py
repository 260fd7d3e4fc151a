"""Core data model: multimodal observations, ternary actions, episodes, and
window assembly from heterogeneous-rate sensor streams.

The on-disk episode format lives here too (``save_episode`` / ``load_episode``):
a directory with ``manifest.json``, per-step ``visual/%06d.png`` and
``tactile/%06d.png``, a single ``audio.wav`` covering the whole episode, and
``aux.jsonl``.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np
from PIL import Image

if TYPE_CHECKING:
    from .audio_dsp import MelSpectrogram

POLICY_DT = 0.1  # seconds per policy tick (10 Hz)
WINDOW_STRIDE = 0.5  # seconds between adjacent window slots
DEFAULT_WINDOW_LENGTH = 6  # N
CAPTURE_AUDIO_RATE = 44100

VISUAL_SHAPE = (240, 320)  # H, W at capture
TACTILE_SHAPE = (300, 400)


class InvalidActionError(ValueError):
    """An action value or class index is outside its ternary action space."""


class EpisodeFormatError(ValueError):
    """An episode directory is missing or inconsistent; carries the path."""


class NoDataError(ValueError):
    """A stream queried for a window contains no data at all."""


@dataclass
class VisualFrame:
    pixels: np.ndarray  # H x W x 3 uint8
    timestamp: float


@dataclass
class TactileFrame:
    pixels: np.ndarray  # H x W x 3 uint8
    timestamp: float


@dataclass
class AudioChunk:
    samples: np.ndarray  # 1-D int16 PCM
    sample_rate: int
    start_timestamp: float

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Observation:
    """One synchronized multimodal snapshot at a policy tick.

    ``aux`` carries simulator ground truth (scale reading, debug state) for
    metrics only; policies never read it.
    """

    visual: VisualFrame
    tactile: TactileFrame
    audio_segment: AudioChunk  # trailing 0.5 s at capture rate
    aux: dict = field(default_factory=dict)


@dataclass
class ObservationWindow:
    """Stacked N-slot model input; slots are temporally ordered, oldest first,
    adjacent slots WINDOW_STRIDE seconds apart."""

    visual_stack: list[VisualFrame]
    audio_stack: "list[MelSpectrogram]"
    tactile_stack: list[TactileFrame]
    n: int


@dataclass(frozen=True)
class ActionSpec:
    task: str  # "packing" | "pouring"
    dims: tuple[str, ...]
    step_sizes: tuple[float, ...]  # physical magnitude per dimension per tick

    @property
    def class_count(self) -> int:
        return 3 ** len(self.dims)

    def to_dict(self) -> dict:
        return {"task": self.task, "dims": list(self.dims), "step_sizes": list(self.step_sizes)}

    @staticmethod
    def from_dict(d: dict) -> "ActionSpec":
        return ActionSpec(d["task"], tuple(d["dims"]), tuple(d["step_sizes"]))


PACKING_SPEC = ActionSpec("packing", ("x", "y", "z"), (0.005, 0.005, 0.005))
POURING_SPEC = ActionSpec("pouring", ("x", "phi"), (0.005, np.deg2rad(2.0)))

SPEC_BY_TASK = {"packing": PACKING_SPEC, "pouring": POURING_SPEC}


@dataclass
class Action:
    values: tuple[int, ...]  # per-dimension ternary in {-1, 0, +1}
    class_index: int


def encode_action(values: Sequence[int], spec: ActionSpec) -> int:
    """Map a ternary displacement vector to its base-3 class index."""
    if len(values) != len(spec.dims):
        raise InvalidActionError(
            f"expected {len(spec.dims)} values for task {spec.task!r}, got {len(values)}"
        )
    index = 0
    for v in values:
        if v not in (-1, 0, 1):
            raise InvalidActionError(f"action value {v} not in {{-1, 0, +1}}")
        index = index * 3 + (int(v) + 1)
    return index


def decode_action(class_index: int, spec: ActionSpec) -> tuple[int, ...]:
    """Inverse of :func:`encode_action`."""
    if not 0 <= class_index < spec.class_count:
        raise InvalidActionError(
            f"class index {class_index} out of range [0, {spec.class_count})"
        )
    digits = []
    rem = int(class_index)
    for _ in spec.dims:
        digits.append(rem % 3 - 1)
        rem //= 3
    return tuple(reversed(digits))


def make_action(values: Sequence[int], spec: ActionSpec) -> Action:
    return Action(tuple(int(v) for v in values), encode_action(values, spec))


@dataclass
class EpisodeStep:
    observation: Observation
    action: Action
    timestamp: float


@dataclass
class EpisodeMetadata:
    task: str
    scenario: str
    seed: int
    source: str  # "scripted" | "teleop" | "rollout"
    initial_condition: dict = field(default_factory=dict)


@dataclass
class Episode:
    steps: list[EpisodeStep]
    metadata: EpisodeMetadata
    action_spec: ActionSpec
    audio: AudioChunk  # continuous capture-rate stream covering the episode
    outcome: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Stream buffers and window assembly
# ---------------------------------------------------------------------------


class StreamSet:
    """Per-modality ring buffers with single-writer append and snapshot reads.

    The audio buffer is one growing capture-rate PCM stream starting at
    ``audio_start``; visual/tactile buffers hold timestamped frames.
    """

    def __init__(self, audio_rate: int = CAPTURE_AUDIO_RATE, audio_start: float = 0.0):
        self.visual: list[VisualFrame] = []
        self.tactile: list[TactileFrame] = []
        self.audio_rate = audio_rate
        self.audio_start = audio_start
        self._audio_parts: list[np.ndarray] = []
        self._audio_len = 0

    def append_visual(self, frame: VisualFrame) -> None:
        self.visual.append(frame)

    def append_tactile(self, frame: TactileFrame) -> None:
        self.tactile.append(frame)

    def append_audio(self, samples: np.ndarray) -> None:
        self._audio_parts.append(np.asarray(samples, dtype=np.int16))
        self._audio_len += len(samples)

    def audio_samples(self) -> np.ndarray:
        if len(self._audio_parts) != 1:
            merged = (
                np.concatenate(self._audio_parts)
                if self._audio_parts
                else np.zeros(0, dtype=np.int16)
            )
            self._audio_parts = [merged]
        return self._audio_parts[0]

    def audio_segment(self, end_time: float, duration: float) -> AudioChunk:
        """Capture-rate PCM covering (end_time - duration, end_time], zero-padded
        where it precedes the stream start."""
        samples = self.audio_samples()
        n = int(round(duration * self.audio_rate))
        end_idx = int(round((end_time - self.audio_start) * self.audio_rate))
        start_idx = end_idx - n
        out = np.zeros(n, dtype=np.int16)
        lo = max(start_idx, 0)
        hi = min(end_idx, len(samples))
        if hi > lo:
            out[lo - start_idx : hi - start_idx] = samples[lo:hi]
        return AudioChunk(out, self.audio_rate, end_time - duration)


def _nearest_frame(frames, t: float):
    """Frame whose timestamp is nearest t; ties break toward the earlier frame."""
    best = frames[0]
    best_d = abs(best.timestamp - t)
    for f in frames[1:]:
        d = abs(f.timestamp - t)
        if d < best_d - 1e-12:
            best, best_d = f, d
    return best


def assemble_window(
    streams: StreamSet,
    t: float,
    n: int = DEFAULT_WINDOW_LENGTH,
    stride: float = WINDOW_STRIDE,
    mel_params=None,
) -> ObservationWindow:
    """Build the N-slot model input at query time t.

    Slot i (1-based) covers the audio interval (t-(n-i+1)*stride, t-(n-i)*stride];
    the visual/tactile entry for the slot is the captured frame nearest the
    interval's end time. Intervals preceding the episode start come back as
    silence, and frames as repeats of the earliest frame.
    """
    from . import audio_dsp

    if not streams.visual or not streams.tactile:
        raise NoDataError("cannot assemble a window from empty streams")
    if mel_params is None:
        mel_params = audio_dsp.MelParams()

    visual_stack: list[VisualFrame] = []
    tactile_stack: list[TactileFrame] = []
    audio_stack = []
    for i in range(1, n + 1):
        end = t - (n - i) * stride
        segment = streams.audio_segment(end, stride)
        resampled = audio_dsp.resample(segment, mel_params.target_rate)
        audio_stack.append(audio_dsp.mel_spectrogram(resampled, mel_params))
        visual_stack.append(_nearest_frame(streams.visual, end))
        tactile_stack.append(_nearest_frame(streams.tactile, end))
    return ObservationWindow(visual_stack, audio_stack, tactile_stack, n)


# ---------------------------------------------------------------------------
# Episode directory format
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def save_episode(episode: Episode, directory: str | Path) -> None:
    """Write an episode in the bit-exact directory format."""
    directory = Path(directory)
    (directory / "visual").mkdir(parents=True, exist_ok=True)
    (directory / "tactile").mkdir(parents=True, exist_ok=True)

    for i, step in enumerate(episode.steps):
        Image.fromarray(step.observation.visual.pixels).save(
            directory / "visual" / f"{i:06d}.png", compress_level=1
        )
        Image.fromarray(step.observation.tactile.pixels).save(
            directory / "tactile" / f"{i:06d}.png", compress_level=1
        )

    with wave.open(str(directory / "audio.wav"), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(episode.audio.sample_rate)
        wav.writeframes(episode.audio.samples.astype("<i2").tobytes())

    with open(directory / "aux.jsonl", "w", encoding="utf-8") as fh:
        for step in episode.steps:
            fh.write(json.dumps(step.observation.aux, sort_keys=True) + "\n")

    manifest = {
        "format_version": 1,
        "task": episode.metadata.task,
        "scenario": episode.metadata.scenario,
        "seed": episode.metadata.seed,
        "source": episode.metadata.source,
        "initial_condition": episode.metadata.initial_condition,
        "step_count": len(episode.steps),
        "action_spec": episode.action_spec.to_dict(),
        "outcome": episode.outcome,
        "audio_rate": episode.audio.sample_rate,
        "audio_start": episode.audio.start_timestamp,
        "timestamps": [step.timestamp for step in episode.steps],
        "action_classes": [step.action.class_index for step in episode.steps],
        "frame_timestamps": {
            "visual": [s.observation.visual.timestamp for s in episode.steps],
            "tactile": [s.observation.tactile.timestamp for s in episode.steps],
        },
    }
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_episode(directory: str | Path) -> Episode:
    """Read an episode directory back; byte-exact inverse of save_episode."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise EpisodeFormatError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EpisodeFormatError(f"corrupt manifest {manifest_path}: {exc}") from exc

    count = manifest["step_count"]
    spec = ActionSpec.from_dict(manifest["action_spec"])
    for sub in ("visual", "tactile"):
        found = len(list((directory / sub).glob("*.png")))
        if found != count:
            raise EpisodeFormatError(
                f"{directory / sub}: manifest says {count} steps, found {found} frames"
            )

    with wave.open(str(directory / "audio.wav"), "rb") as wav:
        rate = wav.getframerate()
        raw = wav.readframes(wav.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.int16)
    audio = AudioChunk(samples, rate, manifest["audio_start"])

    aux_path = directory / "aux.jsonl"
    aux_lines = aux_path.read_text(encoding="utf-8").splitlines() if aux_path.exists() else []
    if len(aux_lines) != count:
        raise EpisodeFormatError(f"{aux_path}: {len(aux_lines)} aux rows for {count} steps")

    streams = StreamSet(rate, manifest["audio_start"])
    streams.append_audio(samples)

    steps: list[EpisodeStep] = []
    for i in range(count):
        ts = manifest["timestamps"][i]
        vis = np.asarray(Image.open(directory / "visual" / f"{i:06d}.png"), dtype=np.uint8)
        tac = np.asarray(Image.open(directory / "tactile" / f"{i:06d}.png"), dtype=np.uint8)
        segment = streams.audio_segment(ts, WINDOW_STRIDE)
        cls = manifest["action_classes"][i]
        steps.append(
            EpisodeStep(
                Observation(
                    VisualFrame(vis, manifest["frame_timestamps"]["visual"][i]),
                    TactileFrame(tac, manifest["frame_timestamps"]["tactile"][i]),
                    segment,
                    json.loads(aux_lines[i]),
                ),
                Action(decode_action(cls, spec), cls),
                ts,
            )
        )

    metadata = EpisodeMetadata(
        task=manifest["task"],
        scenario=manifest["scenario"],
        seed=manifest["seed"],
        source=manifest["source"],
        initial_condition=manifest["initial_condition"],
    )
    return Episode(steps, metadata, spec, audio, manifest["outcome"])

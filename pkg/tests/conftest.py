import numpy as np
import pytest

from mulsa.sensordata import (
    CAPTURE_AUDIO_RATE,
    PACKING_SPEC,
    POLICY_DT,
    AudioChunk,
    Episode,
    EpisodeMetadata,
    EpisodeStep,
    Observation,
    TactileFrame,
    VisualFrame,
    make_action,
)


def tiny_episode(n_steps: int = 4, seed: int = 0) -> Episode:
    """Small synthetic episode with distinct per-step pixels and audio."""
    rng = np.random.default_rng(seed)
    steps = []
    tick_samples = int(round(POLICY_DT * CAPTURE_AUDIO_RATE))
    audio = rng.integers(-2000, 2000, tick_samples * (n_steps + 1)).astype(np.int16)
    for i in range(n_steps):
        t = i * POLICY_DT
        vis = rng.integers(0, 256, (240, 320, 3)).astype(np.uint8)
        tac = rng.integers(0, 256, (300, 400, 3)).astype(np.uint8)
        segment = AudioChunk(
            audio[i * tick_samples : (i + 1) * tick_samples], CAPTURE_AUDIO_RATE, t - POLICY_DT
        )
        obs = Observation(VisualFrame(vis, t), TactileFrame(tac, t), segment, {"i": i})
        action = make_action(((i % 3) - 1, 0, 1), PACKING_SPEC)
        steps.append(EpisodeStep(obs, action, t))
    meta = EpisodeMetadata("packing", "hard_slanted", seed, "scripted", {"orientation": "left"})
    full_audio = AudioChunk(audio, CAPTURE_AUDIO_RATE, -POLICY_DT)
    return Episode(steps, meta, PACKING_SPEC, full_audio, {"success": True})


@pytest.fixture
def episode():
    return tiny_episode()

"""Live teleoperation session server.

Hosts one simulator session behind a WebSocket with JSON text frames. A fixed
10 Hz tick loop reads the action mailbox (latest message wins, all-zero
default), steps the environment, broadcasts an observation packet, and
appends to the episode being recorded. Control messages (reset / record /
ping) are handled between ticks.

Server -> client ``obs`` packet::

    {"type": "obs", "tick", "task", "scenario", "visual": <base64 PNG>,
     "tactile": <base64 PNG>, "mel": [[...64x50...]], "scale_g", "recording",
     "terminal", "outcome"?, "applied_class"}

Client -> server: ``{"type": "action", "values": [...]}``,
``{"type": "reset", "scenario": ..., "seed": ...}``,
``{"type": "record", "on": bool}``, ``{"type": "ping"}``.
"""

from __future__ import annotations

import asyncio
import base64
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import audio_dsp, demos
from .sensordata import (
    POLICY_DT,
    SPEC_BY_TASK,
    WINDOW_STRIDE,
    AudioChunk,
    Episode,
    EpisodeMetadata,
    EpisodeStep,
    encode_action,
    make_action,
    save_episode,
)


def _png_b64(pixels: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG", compress_level=1)
    return base64.b64encode(buf.getvalue()).decode("ascii")


@dataclass
class SessionState:
    task: str
    scenario: str
    seed: int
    tick: int = 0
    recording: bool = False
    pending_action: list[int] | None = None  # mailbox, latest wins, consumed per tick
    episode_counter: int = 0
    clients: set = field(default_factory=set)


class TeleopSession:
    """One environment, one tick loop, any number of viewer clients."""

    def __init__(
        self,
        task: str,
        scenario: str,
        record_dir: str | Path | None = None,
        seed: int = 0,
        tick_period: float = POLICY_DT,
        sim_config: dict | None = None,
    ):
        self.spec = SPEC_BY_TASK[task]
        self.sim_config = sim_config
        self.session = SessionState(task, scenario, seed)
        self.record_dir = Path(record_dir) if record_dir else None
        self.tick_period = tick_period
        self.env = demos.make_env(task, scenario, sim_config)
        self.env.reset(seed)
        self._obs = demos.initial_observation(self.env)
        self._steps: list[EpisodeStep] = []
        self._audio_parts: list[np.ndarray] = [self._obs.audio_segment.samples]
        self._mel_params = audio_dsp.MelParams()
        self._stop = asyncio.Event()
        self.saved_episodes: list[Path] = []

    # -- message handling ---------------------------------------------------

    def handle_message(self, raw: str) -> dict | None:
        """Apply one client message; returns an immediate reply frame or None."""
        try:
            msg = json.loads(raw)
            kind = msg["type"]
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            return {"type": "error", "message": f"malformed message: {exc}"}
        if kind == "action":
            try:
                values = [int(v) for v in msg["values"]]
                encode_action(values, self.spec)
            except (ValueError, TypeError, KeyError) as exc:
                return {"type": "error", "message": str(exc)}
            self.session.pending_action = values
            return None
        if kind == "reset":
            scenario = str(msg.get("scenario", self.session.scenario))
            seed = int(msg.get("seed", self.session.seed + 1))
            self._rotate_episode()
            self.session.scenario = scenario
            self.session.seed = seed
            self.env = demos.make_env(self.session.task, scenario, self.sim_config)
            self.env.reset(seed)
            self._obs = demos.initial_observation(self.env)
            self._audio_parts = [self._obs.audio_segment.samples]
            self.session.tick = 0
            return None
        if kind == "record":
            on = bool(msg.get("on"))
            if self.session.recording and not on:
                self._rotate_episode()
            self.session.recording = on
            return None
        if kind == "ping":
            return {"type": "pong"}
        return {"type": "error", "message": f"unknown message type {kind!r}"}

    def _rotate_episode(self) -> None:
        if not self._steps:
            return
        if self.record_dir is not None and self.session.recording:
            episode = Episode(
                self._steps,
                EpisodeMetadata(
                    self.session.task,
                    self.session.scenario,
                    self.session.seed,
                    "teleop",
                    {},
                ),
                self.spec,
                AudioChunk(
                    np.concatenate(self._audio_parts),
                    self._obs.audio_segment.sample_rate,
                    -POLICY_DT,
                ),
                self._episode_outcome(),
            )
            name = f"teleop_{self.session.scenario}_{self.session.episode_counter:04d}"
            path = self.record_dir / name
            save_episode(episode, path)
            self.saved_episodes.append(path)
            self.session.episode_counter += 1
        self._steps = []

    def _episode_outcome(self) -> dict:
        outcome = self.env.outcome()
        if self.session.task == "packing":
            return {
                "success": outcome.success,
                "steps_used": outcome.steps_used,
                "failure_mode": outcome.failure_mode,
            }
        return {"weight_error_g": outcome.weight_error_g, "steps_used": outcome.steps_used}

    # -- tick loop ----------------------------------------------------------

    def tick_once(self) -> dict:
        """Advance the environment one policy tick and return the obs packet."""
        values = self.session.pending_action or [0] * len(self.spec.dims)
        self.session.pending_action = None
        action = make_action(values, self.spec)
        terminal = self.env.terminal()
        applied = None
        if not terminal:
            if self.session.recording:
                self._steps.append(
                    EpisodeStep(self._obs, action, self.env.state.step_count * POLICY_DT)
                )
            state, obs = self.env.step(action.values)
            self._obs = obs
            self._audio_parts.append(obs.audio_segment.samples)
            applied = action.class_index
            terminal = self.env.terminal()
        self.session.tick += 1
        return self._packet(terminal, applied)

    def _packet(self, terminal: bool, applied_class: int | None) -> dict:
        obs = self._obs
        segment = audio_dsp.resample(
            AudioChunk(
                obs.audio_segment.samples[-int(WINDOW_STRIDE * obs.audio_segment.sample_rate) :],
                obs.audio_segment.sample_rate,
                0.0,
            ),
            self._mel_params.target_rate,
        )
        mel = audio_dsp.mel_spectrogram(segment, self._mel_params)
        packet = {
            "type": "obs",
            "tick": self.session.tick,
            "task": self.session.task,
            "scenario": self.session.scenario,
            "visual": _png_b64(obs.visual.pixels),
            "tactile": _png_b64(obs.tactile.pixels),
            "mel": [[round(float(v), 4) for v in row] for row in mel.values],
            "recording": self.session.recording,
            "terminal": terminal,
            "applied_class": applied_class,
        }
        if self.session.task == "pouring":
            packet["scale_g"] = obs.aux.get("scale_g", 0.0)
        if terminal:
            packet["outcome"] = self._episode_outcome()
        return packet

    # -- server -------------------------------------------------------------

    async def serve(self, host: str, port: int) -> None:
        import websockets

        async def handler(ws):
            self.session.clients.add(ws)
            try:
                async for raw in ws:
                    reply = self.handle_message(raw)
                    if reply is not None:
                        await ws.send(json.dumps(reply))
            except websockets.ConnectionClosed:
                pass
            finally:
                self.session.clients.discard(ws)

        async with websockets.serve(handler, host, port):
            next_tick = time.monotonic()
            while not self._stop.is_set():
                packet = json.dumps(self.tick_once())
                dead = []
                for ws in list(self.session.clients):
                    try:
                        await asyncio.wait_for(ws.send(packet), timeout=self.tick_period)
                    except Exception:
                        dead.append(ws)
                for ws in dead:
                    self.session.clients.discard(ws)
                next_tick += self.tick_period
                delay = next_tick - time.monotonic()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_tick = time.monotonic()
        self._rotate_episode()

    def stop(self) -> None:
        self._stop.set()


def serve(
    task: str,
    scenario: str,
    port: int,
    record_dir: str | None = None,
    host: str = "127.0.0.1",
    seed: int = 0,
    sim_config: dict | None = None,
) -> None:
    session = TeleopSession(task, scenario, record_dir, seed, sim_config=sim_config)
    try:
        asyncio.run(session.serve(host, port))
    except KeyboardInterrupt:
        pass

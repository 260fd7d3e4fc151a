"""Pouring simulator: granular mass flow between two cylinder cups.

Mass accounting is exact, in integer milligrams. Flow starts once the cup
angle exceeds a critical angle that rises as the in-hand mass drains (an
emptier cup needs more tilt), at a rate proportional to the excess angle.
Flowing mass lands in the fixed cup when the cups are aligned, otherwise it
spills.

Observability is partitioned by construction: vision renders only the poses
(both cups opaque, no fill levels), audio pitch rises with the mass already
in the fixed cup, and tactile shear contrast tracks the in-hand mass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .sensordata import (
    CAPTURE_AUDIO_RATE,
    POLICY_DT,
    AudioChunk,
    Observation,
    TactileFrame,
    VisualFrame,
)

INITIAL_MASSES = (60, 100)  # grams
TARGET_MASS_G = 40.0


class EpisodeFinishedError(RuntimeError):
    """step() was called on a terminated episode."""


def default_config() -> dict:
    with resources.files("mulsa.scenarios").joinpath("pouring.json").open() as fh:
        return json.load(fh)


def load_config(path: str | Path | None) -> dict:
    cfg = default_config()
    if path is not None:
        cfg.update(json.loads(Path(path).read_text()))
    return cfg


@dataclass
class PouringState:
    cup_x: float  # meters
    cup_angle_deg: float
    mass_in_hand_mg: int
    mass_in_fixed_mg: int
    mass_spilled_mg: int
    initial_mass_g: int
    fixed_cup_x: float
    poured_any: bool
    step_count: int

    @property
    def scale_reading_g(self) -> float:
        return self.mass_in_fixed_mg / 1000.0

    @property
    def mass_in_hand_g(self) -> float:
        return self.mass_in_hand_mg / 1000.0


@dataclass
class PouringOutcome:
    weight_error_g: float
    steps_used: int


def critical_angle_deg(mass_in_hand_g: float, cfg: dict) -> float:
    """Linear in mass: a full (100 g) cup pours at phi_crit_full, an empty one
    only at phi_crit_empty."""
    full, empty = cfg["phi_crit_full"], cfg["phi_crit_empty"]
    frac = min(max(mass_in_hand_g / 100.0, 0.0), 1.0)
    return empty + (full - empty) * frac


class PouringEnv:
    def __init__(self, initial_mass_g: int, config: dict | None = None):
        if initial_mass_g not in INITIAL_MASSES:
            raise ValueError(f"initial mass must be one of {INITIAL_MASSES}, got {initial_mass_g}")
        self.initial_mass_g = initial_mass_g
        self.cfg = config or default_config()
        self.state: PouringState | None = None
        self._rng: np.random.Generator | None = None

    def reset(self, seed: int) -> PouringState:
        self._rng = np.random.default_rng([int(seed), self.initial_mass_g, 55])
        shift = self._rng.uniform(-self.cfg["shift_max"], self.cfg["shift_max"])
        self.state = PouringState(
            cup_x=self.cfg["cup_start_x"],
            cup_angle_deg=0.0,
            mass_in_hand_mg=self.initial_mass_g * 1000,
            mass_in_fixed_mg=0,
            mass_spilled_mg=0,
            initial_mass_g=self.initial_mass_g,
            fixed_cup_x=self.cfg["fixed_cup_nominal_x"] + shift,
            poured_any=False,
            step_count=0,
        )
        return self.state

    def terminal(self, state: PouringState | None = None) -> bool:
        s = state or self.state
        return (
            s.step_count >= self.cfg["max_steps"]
            or (s.poured_any and s.cup_angle_deg <= self.cfg["retreat_angle"])
        )

    def outcome(self, state: PouringState | None = None) -> PouringOutcome:
        s = state or self.state
        return PouringOutcome(abs(s.scale_reading_g - TARGET_MASS_G), s.step_count)

    def step(
        self, action: tuple[int, int], observe: bool = True
    ) -> tuple[PouringState, Observation | None]:
        """Advance one tick; with observe=False skips observation synthesis
        (dynamics only, for bulk property checks)."""
        if self.state is None:
            raise RuntimeError("reset() before step()")
        if self.terminal():
            raise EpisodeFinishedError("episode already terminated")
        prev = self.state
        cfg = self.cfg
        x = min(max(prev.cup_x + action[0] * cfg["x_step"], 0.0), cfg["workspace_x"])
        phi = min(max(prev.cup_angle_deg + action[1] * cfg["phi_step_deg"], 0.0), cfg["phi_max"])

        hand = prev.mass_in_hand_mg
        fixed = prev.mass_in_fixed_mg
        spilled = prev.mass_spilled_mg
        phi_crit = critical_angle_deg(hand / 1000.0, cfg)
        flow_mg = 0
        if phi > phi_crit and hand > 0:
            flow_mg = min(hand, int(round(cfg["flow_rate"] * (phi - phi_crit) * 1000)))
        if flow_mg > 0:
            hand -= flow_mg
            if abs(x - prev.fixed_cup_x) < cfg["align_tol"]:
                fixed += flow_mg
            else:
                spilled += flow_mg

        new = replace(
            prev,
            cup_x=x,
            cup_angle_deg=phi,
            mass_in_hand_mg=hand,
            mass_in_fixed_mg=fixed,
            mass_spilled_mg=spilled,
            poured_any=prev.poured_any or flow_mg > 0,
            step_count=prev.step_count + 1,
        )
        assert hand + fixed + spilled == prev.initial_mass_g * 1000
        self.state = new
        return new, self.observe(new, prev) if observe else None

    def observe(self, state: PouringState, prev: PouringState) -> Observation:
        t = state.step_count * POLICY_DT
        visual = VisualFrame(render_visual(state, self.cfg), t)
        tactile = TactileFrame(synth_tactile(state, self.cfg), t)
        audio = synth_audio(state, prev, self.cfg, self._rng)
        audio.start_timestamp = t - POLICY_DT
        aux = {
            "scale_g": state.scale_reading_g,
            "mass_in_hand_g": state.mass_in_hand_g,
            "mass_spilled_g": state.mass_spilled_mg / 1000.0,
            "cup_x": state.cup_x,
            "cup_angle_deg": state.cup_angle_deg,
            "fixed_cup_x": state.fixed_cup_x,
        }
        return Observation(visual, tactile, audio, aux)


# ---------------------------------------------------------------------------
# Renderers
# ---------------------------------------------------------------------------

BG = 210
CUP_COLOR = (60, 110, 60)
FIXED_CUP_COLOR = (110, 60, 60)
ARM_COLOR = (80, 80, 90)


def render_visual(state: PouringState, cfg: dict) -> np.ndarray:
    """320x240 schematic side view. Both cups are opaque: no pixel depends on
    any of the three masses."""
    img = np.full((240, 320, 3), BG, dtype=np.uint8)
    img[220:240, :] = (140, 140, 140)  # table

    def col(wx):
        return int(round(wx / cfg["workspace_x"] * 310)) + 5

    # fixed cup: opaque rectangle on the table
    fc = col(state.fixed_cup_x)
    img[180:220, max(fc - 18, 0) : fc + 18] = FIXED_CUP_COLOR

    # held cup: rotated rectangle around its grasp point
    cx, cy = col(state.cup_x), 100
    theta = np.deg2rad(state.cup_angle_deg)
    rows, cols = np.meshgrid(np.arange(240), np.arange(320), indexing="ij")
    u = (cols - cx) * np.cos(theta) - (rows - cy) * np.sin(theta)
    v = (cols - cx) * np.sin(theta) + (rows - cy) * np.cos(theta)
    cup_mask = (np.abs(u) <= 16) & (v >= -30) & (v <= 30)
    img[cup_mask] = CUP_COLOR
    img[80:95, max(cx - 6, 0) : cx + 7] = ARM_COLOR  # gripper above the cup
    return img


def synth_tactile(state: PouringState, cfg: dict) -> np.ndarray:
    """400x300 gel image: shear gradient from the torque the cup contents
    exert about the grasp; contrast strictly monotone in in-hand mass."""
    h, w = 300, 400
    v, u = np.meshgrid(np.linspace(-1.0, 1.0, h), np.linspace(-1.0, 1.0, w), indexing="ij")
    base = 120.0 + 30.0 * np.exp(-((u / 0.55) ** 2 + (v / 0.45) ** 2))
    phi = np.deg2rad(state.cup_angle_deg)
    torque = state.mass_in_hand_g * (cfg["tactile_static_lever"] + np.sin(phi))
    contrast = cfg["tactile_gain"] * torque
    theta = phi  # shear rotates with the cup
    img = base + contrast * (np.cos(theta) * u + np.sin(theta) * v) / 100.0
    img = np.clip(img, 0, 255).astype(np.uint8)
    return np.repeat(img[:, :, None], 3, axis=2)


def bead_impact_frequency(mass_in_fixed_g: float, cfg: dict) -> float:
    return cfg["f_base"] + cfg["k_pitch"] * mass_in_fixed_g


def synth_audio(
    state: PouringState, prev: PouringState, cfg: dict, rng: np.random.Generator
) -> AudioChunk:
    """One 0.1 s tick at the capture rate: bead-impact grains whose resonant
    frequency rises with the fixed-cup mass; spills give dull low taps."""
    n = int(round(POLICY_DT * CAPTURE_AUDIO_RATE))
    samples = rng.normal(0.0, cfg["epsilon"], n)
    d_fixed = state.mass_in_fixed_mg - prev.mass_in_fixed_mg
    d_spill = state.mass_spilled_mg - prev.mass_spilled_mg
    t_axis = np.arange(n) / CAPTURE_AUDIO_RATE
    if d_fixed > 0:
        grains = min(12, 1 + d_fixed // int(cfg["grain_mass_mg"]))
        freq = bead_impact_frequency(state.mass_in_fixed_mg / 1000.0, cfg)
        for _ in range(grains):
            onset = rng.uniform(0.0, 0.08)
            tau = cfg["grain_decay"]
            phase = rng.uniform(0.0, 2 * np.pi)
            env = np.where(t_axis >= onset, np.exp(-(t_axis - onset) / tau), 0.0)
            samples += cfg["grain_amp"] * env * np.sin(2 * np.pi * freq * (t_axis - onset) + phase)
    if d_spill > 0:
        onset = rng.uniform(0.0, 0.08)
        env = np.where(t_axis >= onset, np.exp(-(t_axis - onset) / 0.03), 0.0)
        samples += cfg["spill_amp"] * env * np.sin(2 * np.pi * cfg["spill_freq"] * (t_axis - onset))
    pcm = np.clip(np.rint(samples * 32767.0), -32768, 32767).astype(np.int16)
    return AudioChunk(pcm, CAPTURE_AUDIO_RATE, 0.0)

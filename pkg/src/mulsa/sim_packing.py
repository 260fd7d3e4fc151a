"""Deterministic dense-packing simulator.

A peg descends into a walled base containing one of four bump configurations
(hard slanted, soft slanted, left flat, back flat). Kinematic stepping at
10 Hz with 5 mm moves per axis. The information content of the synthesized
observations is deliberately partitioned:

* vision renders the gripper pose and the static base, never the bump or the
  peg tilt, and the base interior below wall height is always occluded;
* audio alone distinguishes hard from soft contact (transient character);
* touch alone reveals the tilt direction and contact force.

Slanted scenarios randomize the slope orientation (gap on the left or right)
per seed, so the correct avoidance direction is only readable from touch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
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

SCENARIOS = ("hard_slanted", "soft_slanted", "left_flat", "back_flat")

TILT_ANGLES = {"right": 0.0, "back": 90.0, "left": 180.0, "front": 270.0}


class EpisodeFinishedError(RuntimeError):
    """step() was called on a terminated episode."""


def default_config() -> dict:
    with resources.files("mulsa.scenarios").joinpath("packing.json").open() as fh:
        return json.load(fh)


def load_config(path: str | Path | None) -> dict:
    cfg = default_config()
    if path is not None:
        cfg.update(json.loads(Path(path).read_text()))
    return cfg


@dataclass
class PackingState:
    peg_position: tuple[float, float, float]
    tilt_direction: str  # none | left | right | back | front
    tilt_magnitude: float  # radians
    scenario: str
    orientation: str  # slanted scenarios: side the gap is on ("left" | "right")
    contact: str  # none | bump | wall | floor
    contact_force: float  # newtons
    pushes: int  # consecutive blocked -z pushes in the current contact
    passed_soft: bool
    bump_contacted: bool  # sticky: the peg has touched the bump at least once
    stuck: bool
    success: bool
    step_count: int


@dataclass
class PackingOutcome:
    success: bool
    steps_used: int
    failure_mode: str  # timeout | stuck_on_hard | none


class PackingEnv:
    def __init__(self, scenario: str, config: dict | None = None):
        if scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {scenario!r}")
        self.scenario = scenario
        self.cfg = config or default_config()
        self.state: PackingState | None = None
        self._rng: np.random.Generator | None = None

    # -- geometry helpers ---------------------------------------------------

    @property
    def interior(self) -> tuple[float, float, float, float]:
        return tuple(self.cfg["interior"])  # x0, x1, y0, y1

    def bump_region(self, state: PackingState) -> tuple[float, float, float, float]:
        x0, x1, y0, y1 = self.interior
        gap = self.cfg["gap_width"]
        if state.scenario in ("hard_slanted", "soft_slanted"):
            if state.orientation == "left":
                return (x0 + gap, x1, y0, y1)
            return (x0, x1 - gap, y0, y1)
        if state.scenario == "left_flat":
            return (x0, x0 + self.cfg["flat_extent"], y0, y1)
        return (x0, x1, y1 - self.cfg["flat_extent"], y1)  # back_flat

    def _over_bump(self, state: PackingState, x: float, y: float) -> bool:
        bx0, bx1, by0, by1 = self.bump_region(state)
        return bx0 <= x <= bx1 and by0 <= y <= by1

    def _inside_interior(self, x: float, y: float) -> bool:
        x0, x1, y0, y1 = self.interior
        return x0 <= x <= x1 and y0 <= y <= y1

    def tilt_direction_for(self, state: PackingState) -> str:
        if state.scenario in ("hard_slanted", "soft_slanted"):
            return state.orientation  # downhill faces the gap
        if state.scenario == "left_flat":
            return "right"
        return "front"  # back_flat: bump at back, peg tilts forward

    def is_hard(self) -> bool:
        return self.scenario != "soft_slanted"

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int) -> PackingState:
        scen_idx = SCENARIOS.index(self.scenario)
        self._rng = np.random.default_rng([int(seed), scen_idx, 77])
        x0, x1, y0, y1 = self.interior
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        r = self.cfg["start_radius"]
        x = cx + self._rng.uniform(-r, r)
        y = cy + self._rng.uniform(-r, r)
        z = self.cfg["start_height"]
        orientation = "left" if self._rng.random() < 0.5 else "right"
        self.state = PackingState(
            peg_position=(x, y, z),
            tilt_direction="none",
            tilt_magnitude=0.0,
            scenario=self.scenario,
            orientation=orientation,
            contact="none",
            contact_force=0.0,
            pushes=0,
            passed_soft=False,
            bump_contacted=False,
            stuck=False,
            success=False,
            step_count=0,
        )
        return self.state

    def terminal(self, state: PackingState | None = None) -> bool:
        s = state or self.state
        return s.success or s.stuck or s.step_count >= self.cfg["max_steps"]

    def outcome(self, state: PackingState | None = None) -> PackingOutcome:
        s = state or self.state
        if s.success:
            mode = "none"
        elif s.stuck:
            mode = "stuck_on_hard"
        else:
            mode = "timeout"
        return PackingOutcome(s.success, s.step_count, mode)

    # -- dynamics -----------------------------------------------------------

    def step(
        self, action: tuple[int, int, int], observe: bool = True
    ) -> tuple[PackingState, Observation | None]:
        """Advance one tick; with observe=False skips observation synthesis
        (dynamics only, for bulk property checks)."""
        if self.state is None:
            raise RuntimeError("reset() before step()")
        if self.terminal():
            raise EpisodeFinishedError("episode already terminated")
        prev = self.state
        step = self.cfg["step_size"]
        ws = self.cfg["workspace"]  # [x, y, z] extents
        x, y, z = prev.peg_position
        wall_h = self.cfg["wall_height"]

        # lateral moves, axis by axis, blocked by walls below wall height
        for axis, delta in ((0, action[0] * step), (1, action[1] * step)):
            if delta == 0.0:
                continue
            cand = [x, y]
            cand[axis] += delta
            cx = min(max(cand[0], 0.0), ws[0])
            cy = min(max(cand[1], 0.0), ws[1])
            if z < wall_h and self._inside_interior(x, y) != self._inside_interior(cx, cy):
                continue  # wall blocks the crossing
            x, y = cx, cy

        contact = "none"
        pushes = prev.pushes
        passed_soft = prev.passed_soft
        bump_contacted = prev.bump_contacted
        stuck = prev.stuck
        bump_top = self.cfg["bump_top"]
        resting_on_bump = (
            self._over_bump(prev, x, y) and abs(z - bump_top) < 1e-9 and not passed_soft
        )

        dz = action[2] * step
        if dz > 0:
            z = min(z + dz, ws[2])
            pushes = 0
        elif dz < 0:
            z_new = max(z + dz, 0.0)
            if self._over_bump(prev, x, y) and not passed_soft and z_new < bump_top <= z:
                # descending onto the bump
                contact = "bump"
                bump_contacted = True
                if abs(z - bump_top) < 1e-9:
                    pushes += 1
                else:
                    pushes = 1
                z = bump_top
                if self.scenario == "soft_slanted" and pushes >= self.cfg["k_soft"]:
                    passed_soft = True  # sponge yields; peg squeezes through
                    z = bump_top - step
                    contact = "none"
                    pushes = 0
                elif self.is_hard() and pushes >= self.cfg["k_hard"]:
                    stuck = True
            else:
                z = z_new
                pushes = 0
                if z == 0.0:
                    contact = "floor"
        else:
            if resting_on_bump:
                contact = "bump"  # still supported by the bump

        if contact == "bump":
            tilt_direction = self.tilt_direction_for(prev)
            tilt_magnitude = min(
                self.cfg["max_tilt"], self.cfg["tilt_base"] + self.cfg["tilt_per_push"] * pushes
            )
            force = float(pushes) * self.cfg["force_per_push"]
        else:
            tilt_direction = "none"
            tilt_magnitude = 0.0
            force = 0.0

        success = prev.success or (self._inside_interior(x, y) and z <= self.cfg["insert_depth"])
        new = replace(
            prev,
            peg_position=(x, y, z),
            tilt_direction=tilt_direction,
            tilt_magnitude=tilt_magnitude,
            contact=contact,
            contact_force=force,
            pushes=pushes,
            passed_soft=passed_soft,
            bump_contacted=bump_contacted,
            stuck=stuck,
            success=success,
            step_count=prev.step_count + 1,
        )
        self.state = new
        return new, self.observe(new, prev) if observe else None

    # -- observation synthesis ----------------------------------------------

    def observe(self, state: PackingState, prev: PackingState) -> Observation:
        t = state.step_count * POLICY_DT
        visual = VisualFrame(render_visual(state, self.cfg), t)
        tactile = TactileFrame(synth_tactile(state, self.cfg), t)
        audio = synth_audio(state, prev, self.cfg, self._rng, self.is_hard())
        audio.start_timestamp = t - POLICY_DT
        aux = {
            "peg_position": list(state.peg_position),
            "contact": state.contact,
            "scenario": state.scenario,
            "orientation": state.orientation,
            "success": state.success,
            "stuck": state.stuck,
        }
        return Observation(visual, tactile, audio, aux)


# ---------------------------------------------------------------------------
# Renderers (pure functions of state + config)
# ---------------------------------------------------------------------------

BG = 205
WALL_COLOR = (70, 70, 75)
INTERIOR_COLOR = (95, 90, 85)
PEG_COLOR = (40, 90, 170)
FLOOR_COLOR = (120, 120, 120)


def render_visual(state: PackingState, cfg: dict) -> np.ndarray:
    """320x240 schematic: front view (x, z) on the left half, top view (x, y)
    on the right. The base interior below wall height is always painted over,
    so nothing inside the box (bump, inserted peg) is visible."""
    img = np.full((240, 320, 3), BG, dtype=np.uint8)
    ws = cfg["workspace"]
    x0, x1, y0, y1 = cfg["interior"]
    wall_h = cfg["wall_height"]
    px, py, pz = state.peg_position

    def fx(wx):  # world x -> front-view column
        return int(round(wx / ws[0] * 155)) + 2

    def fz(wz):  # world z -> row (bottom of frame is z=0)
        return 235 - int(round(wz / ws[2] * 230))

    img[fz(0.0) : 240, 2:158] = FLOOR_COLOR
    # walls and the occluding interior band
    img[fz(wall_h) : fz(0.0), fx(x0) - 3 : fx(x0)] = WALL_COLOR
    img[fz(wall_h) : fz(0.0), fx(x1) : fx(x1) + 3] = WALL_COLOR
    img[fz(wall_h) : fz(0.0), fx(x0) : fx(x1)] = INTERIOR_COLOR
    # peg: a vertical column from its bottom up, clipped at the occluder
    top_row = max(fz(pz + cfg["peg_height"]), 0)
    bottom_row = fz(pz)
    col = fx(px)
    visible_bottom = min(bottom_row, fz(wall_h)) if x0 - 0.004 <= px <= x1 + 0.004 else bottom_row
    if visible_bottom > top_row:
        img[top_row:visible_bottom, max(col - 2, 0) : col + 3] = PEG_COLOR

    def tx(wx):  # world x -> top-view column
        return 162 + int(round(wx / ws[0] * 155))

    def ty(wy):
        return 5 + int(round(wy / ws[1] * 230))

    img[ty(y0) - 3 : ty(y1) + 3, tx(x0) - 3 : tx(x1) + 3] = WALL_COLOR
    img[ty(y0) : ty(y1), tx(x0) : tx(x1)] = INTERIOR_COLOR
    # gripper marker, always visible from above
    r, c = ty(py), tx(px)
    img[max(r - 3, 0) : r + 4, max(c - 3, 0) : c + 4] = PEG_COLOR
    return img


def _gel_base(height: int, width: int) -> np.ndarray:
    v, u = np.meshgrid(
        np.linspace(-1.0, 1.0, height), np.linspace(-1.0, 1.0, width), indexing="ij"
    )
    base = 120.0 + 30.0 * np.exp(-((u / 0.55) ** 2 + (v / 0.45) ** 2))
    return base, u, v


def synth_tactile(state: PackingState, cfg: dict) -> np.ndarray:
    """400x300 gel image: baseline texture plus a shading gradient whose
    orientation maps 1:1 to the tilt direction and whose contrast grows with
    tilt magnitude and contact force. Hardness never shows up here."""
    h, w = 300, 400
    base, u, v = _gel_base(h, w)
    img = base.copy()
    if state.tilt_direction != "none" and state.tilt_magnitude > 0.0:
        theta = np.deg2rad(TILT_ANGLES[state.tilt_direction])
        contrast = (
            cfg["tactile_gain"]
            * (state.tilt_magnitude / cfg["max_tilt"])
            * (0.5 + cfg["tactile_force_gain"] * state.contact_force)
        )
        img = img + contrast * (np.cos(theta) * u - np.sin(theta) * v)
    img = np.clip(img, 0, 255).astype(np.uint8)
    return np.repeat(img[:, :, None], 3, axis=2)


def synth_audio(
    state: PackingState,
    prev: PackingState,
    cfg: dict,
    rng: np.random.Generator,
    hard: bool,
) -> AudioChunk:
    """One 0.1 s tick of contact-microphone samples at the capture rate."""
    n = int(round(POLICY_DT * CAPTURE_AUDIO_RATE))
    eps = cfg["epsilon"]
    samples = rng.normal(0.0, eps, n)
    new_contact = state.contact != "none" and prev.contact == "none"
    if new_contact:
        t = np.arange(n) / CAPTURE_AUDIO_RATE
        burst = rng.normal(0.0, 1.0, n)
        if hard or state.contact in ("floor", "wall"):
            samples += cfg["A_hard"] * burst * np.exp(-t / cfg["tau_hard"])
        else:
            # soft contact: small, low-passed thud
            kernel = np.ones(32) / 32.0
            low = np.convolve(burst, kernel, mode="same")
            samples += cfg["A_soft"] * low * np.exp(-t / cfg["tau_soft"]) * 4.0
    lateral = abs(state.peg_position[0] - prev.peg_position[0]) + abs(
        state.peg_position[1] - prev.peg_position[1]
    )
    if state.contact != "none" and lateral > 0:
        samples += rng.normal(0.0, cfg["scrape_gain"] * lateral / cfg["step_size"], n)
    pcm = np.clip(np.rint(samples * 32767.0), -32768, 32767).astype(np.int16)
    return AudioChunk(pcm, CAPTURE_AUDIO_RATE, 0.0)

"""Demonstration sources: scripted experts for both tasks and the recording
pathway shared with teleoperation.

Experts are privileged: they read simulator ground truth, while learned
policies see only the synthesized observations. The recorder wraps either
simulator, pairs each observation with the action chosen from the state that
produced it, and writes episodes in the on-disk format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sim_packing, sim_pouring
from .sensordata import (
    PACKING_SPEC,
    POLICY_DT,
    POURING_SPEC,
    Action,
    Episode,
    EpisodeMetadata,
    EpisodeStep,
    Observation,
    StreamSet,
    make_action,
    save_episode,
)
from .sim_packing import PackingEnv, PackingState
from .sim_pouring import TARGET_MASS_G, PouringEnv, PouringState


@dataclass(frozen=True)
class ExpertConfig:
    task: str
    noise_rate: float = 0.0  # probability of substituting a random valid action
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_rate <= 0.2:
            raise ValueError("noise_rate must be in [0, 0.2]")


def packing_expert(state: PackingState, env: PackingEnv) -> Action:
    """Phase machine: align over the base center, descend, then respond to the
    bump by hardness (squeeze soft, sidestep hard toward the gap, move off a
    flat bump away from its side), and insert."""
    cfg = env.cfg
    x, y, z = state.peg_position
    x0, x1, y0, y1 = env.interior
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    half_step = cfg["step_size"] / 2

    def toward(err: float) -> int:
        return 0 if abs(err) <= half_step else (1 if err > 0 else -1)

    if state.success:
        return make_action((0, 0, 0), PACKING_SPEC)

    if state.contact == "bump" or (state.bump_contacted and not state.passed_soft
                                   and env._over_bump(state, x, y)
                                   and abs(z - cfg["bump_top"]) < 1e-9):
        if state.scenario == "soft_slanted":
            return make_action((0, 0, -1), PACKING_SPEC)  # squeeze through
        # move away from the bump, in the tilt (downhill / free) direction
        direction = env.tilt_direction_for(state)
        vec = {"left": (-1, 0, 0), "right": (1, 0, 0), "front": (0, -1, 0), "back": (0, 1, 0)}[
            direction
        ]
        return make_action(vec, PACKING_SPEC)

    if not state.bump_contacted:
        ax, ay = toward(cx - x), toward(cy - y)
        if ax or ay:
            return make_action((ax, ay, 0), PACKING_SPEC)
        return make_action((0, 0, -1), PACKING_SPEC)

    # bump already handled (sidestepped or squeezed through): insert
    return make_action((0, 0, -1), PACKING_SPEC)


def _predicted_retreat_pour_mg(state: PouringState, cfg: dict) -> int:
    """Exact replay of the flow arithmetic over a retreat starting now."""
    hand = state.mass_in_hand_mg
    phi = state.cup_angle_deg
    poured = 0
    while phi > cfg["retreat_angle"] and hand > 0:
        phi = max(phi - cfg["phi_step_deg"], 0.0)
        phi_crit = sim_pouring.critical_angle_deg(hand / 1000.0, cfg)
        if phi <= phi_crit:
            break
        flow = min(hand, int(round(cfg["flow_rate"] * (phi - phi_crit) * 1000)))
        hand -= flow
        poured += flow
    return poured


def pouring_expert(state: PouringState, env: PouringEnv) -> Action:
    """Align, tilt until the flow reaches a working rate, hold, and retreat
    with one-step lead compensation for the residual flow."""
    cfg = env.cfg
    dx = state.fixed_cup_x - state.cup_x
    if abs(dx) > cfg["align_tol"] / 2 and not state.poured_any:
        return make_action((1 if dx > 0 else -1, 0), POURING_SPEC)

    target_mg = int(TARGET_MASS_G * 1000)
    if state.mass_in_fixed_mg + _predicted_retreat_pour_mg(state, cfg) >= target_mg:
        return make_action((0, -1), POURING_SPEC)
    phi_crit = sim_pouring.critical_angle_deg(state.mass_in_hand_g, cfg)
    flow_next = cfg["flow_rate"] * (state.cup_angle_deg + cfg["phi_step_deg"] - phi_crit)
    if flow_next < cfg["flow_target"]:
        return make_action((0, 1), POURING_SPEC)
    flow_hold = cfg["flow_rate"] * (state.cup_angle_deg - phi_crit)
    if flow_hold < cfg["flow_target"] / 4:
        return make_action((0, 1), POURING_SPEC)
    return make_action((0, 0), POURING_SPEC)


# ---------------------------------------------------------------------------
# Recording
# ---------------------------------------------------------------------------


def make_env(task: str, scenario: str, config: dict | None = None):
    if task == "packing":
        return PackingEnv(scenario, config)
    if task == "pouring":
        return PouringEnv(int(scenario), config)
    raise ValueError(f"unknown task {task!r}")


def initial_observation(env) -> Observation:
    return env.observe(env.state, env.state)


def run_episode(
    env,
    policy_fn,
    seed: int,
    source: str,
    noise_rate: float = 0.0,
    max_steps: int | None = None,
) -> Episode:
    """Roll one episode: policy_fn(state, env, observation) -> Action, applied
    until the simulator terminates. Observations pair with the action chosen
    from the state that produced them."""
    state = env.reset(seed)
    task = "packing" if isinstance(env, PackingEnv) else "pouring"
    spec = PACKING_SPEC if task == "packing" else POURING_SPEC
    noise_rng = np.random.default_rng([seed, 13, 1 if task == "packing" else 2])
    obs = initial_observation(env)
    limit = max_steps if max_steps is not None else env.cfg["max_steps"]

    steps: list[EpisodeStep] = []
    audio_parts = [obs.audio_segment.samples]
    t = 0.0
    while True:
        action = policy_fn(state, env, obs)
        if noise_rate > 0 and noise_rng.random() < noise_rate:
            action_values = tuple(int(v) for v in noise_rng.integers(-1, 2, len(spec.dims)))
            action = make_action(action_values, spec)
        steps.append(EpisodeStep(obs, action, t))
        state, obs = env.step(action.values)
        audio_parts.append(obs.audio_segment.samples)
        t = state.step_count * POLICY_DT
        if env.terminal() or state.step_count >= limit:
            steps.append(EpisodeStep(obs, make_action((0,) * len(spec.dims), spec), t))
            break

    from .sensordata import AudioChunk, CAPTURE_AUDIO_RATE

    audio = AudioChunk(np.concatenate(audio_parts), CAPTURE_AUDIO_RATE, -POLICY_DT)
    outcome = env.outcome()
    if task == "packing":
        outcome_dict = {
            "success": outcome.success,
            "steps_used": outcome.steps_used,
            "failure_mode": outcome.failure_mode,
        }
        scenario = env.scenario
        initial_condition = {"orientation": env.state.orientation}
    else:
        outcome_dict = {"weight_error_g": outcome.weight_error_g, "steps_used": outcome.steps_used}
        scenario = str(env.initial_mass_g)
        initial_condition = {"fixed_cup_x": env.state.fixed_cup_x}
    metadata = EpisodeMetadata(task, scenario, seed, source, initial_condition)
    return Episode(steps, metadata, spec, audio, outcome_dict)


def expert_policy_fn(task: str):
    if task == "packing":
        return lambda state, env, obs: packing_expert(state, env)
    return lambda state, env, obs: pouring_expert(state, env)


def collect(
    out_dir: str | Path,
    task: str,
    scenarios: list[str],
    episodes_per_scenario: int,
    seed: int = 0,
    noise_rate: float = 0.05,
    config: dict | None = None,
) -> list[Path]:
    """Record scripted-expert episodes and a dataset manifest; returns the
    episode directories."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dirs: list[Path] = []
    policy = expert_policy_fn(task)
    for scenario in scenarios:
        for i in range(episodes_per_scenario):
            ep_seed = seed * 100_000 + len(dirs)
            env = make_env(task, scenario, config)
            episode = run_episode(env, policy, ep_seed, "scripted", noise_rate)
            ep_dir = out_dir / f"{task}_{scenario}_{i:04d}"
            save_episode(episode, ep_dir)
            dirs.append(ep_dir)
    manifest = {
        "task": task,
        "scenarios": scenarios,
        "episodes": [d.name for d in dirs],
        "seed": seed,
        "noise_rate": noise_rate,
    }
    (out_dir / "dataset.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return dirs

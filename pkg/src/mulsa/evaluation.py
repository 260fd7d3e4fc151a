"""Closed-loop rollout harness, metrics, table-style reports, and per-step
modality attention timelines.

A rollout feeds the simulator's observation streams through the same
window-assembly and preprocessing path the trainer used (center crop, frozen
normalization stats from the checkpoint), decodes the predicted class, and
steps the environment at 10 Hz.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import demos
from .fusion import TraceNotAvailableError, aggregate_modality_attention
from .encoders import normalize_pixels
from .sensordata import (
    PACKING_SPEC,
    POLICY_DT,
    POURING_SPEC,
    decode_action,
    make_action,
    assemble_window,
    StreamSet,
    ObservationWindow,
)
from .sim_packing import SCENARIOS, PackingEnv
from .sim_pouring import INITIAL_MASSES, PouringEnv
from .training import (
    Checkpoint,
    apply_crop,
    center_crop_offset,
    downsample_frame,
)


class ProtocolError(ValueError):
    """Checkpoint and environment disagree (task, class count)."""


@dataclass
class TrialResult:
    seed: int
    scenario: str
    success: bool | None
    weight_error_g: float | None
    steps_used: int
    timeline: list[dict]  # per step: {"step", "V", "A", "T"} when available


@dataclass
class EvalReport:
    task: str
    variant: str
    modalities: list[str]
    per_scenario: dict[str, dict]  # scenario -> aggregate metrics
    average: dict
    trials: list[TrialResult] = field(default_factory=list)


class PolicyRunner:
    """Wraps a checkpoint for closed-loop use: window -> action class."""

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.policy = checkpoint.build_policy()
        self.active = checkpoint.fusion_config.active_modalities
        self.task = "packing" if checkpoint.fusion_config.class_count == 27 else "pouring"

    def window_tensors(self, window: ObservationWindow) -> dict[str, torch.Tensor]:
        offset = center_crop_offset()
        inputs: dict[str, torch.Tensor] = {}
        if "V" in self.active:
            frames = np.stack([downsample_frame(f.pixels) for f in window.visual_stack])
            frames = apply_crop(frames, offset)
            inputs["V"] = normalize_pixels(
                torch.from_numpy(frames).permute(0, 3, 1, 2).unsqueeze(0)
            )
        if "T" in self.active:
            frames = np.stack([downsample_frame(f.pixels) for f in window.tactile_stack])
            frames = apply_crop(frames, offset)
            inputs["T"] = normalize_pixels(
                torch.from_numpy(frames).permute(0, 3, 1, 2).unsqueeze(0)
            )
        if "A" in self.active:
            mel = np.stack([m.values for m in window.audio_stack])
            mel_t = torch.from_numpy(mel).unsqueeze(1).unsqueeze(0)  # (1, N, 1, M, L)
            inputs["A"] = (mel_t - self.checkpoint.mel_mean) / self.checkpoint.mel_std
        return inputs

    @torch.no_grad()
    def act(self, window: ObservationWindow) -> tuple[int, dict | None]:
        out = self.policy(self.window_tensors(window))
        scores = None
        if out.attention_trace is not None:
            try:
                scores = aggregate_modality_attention(out.attention_trace)
            except TraceNotAvailableError:
                scores = None
        return int(out.predicted[0]), scores


def rollout(
    runner: PolicyRunner,
    env,
    seed: int,
    max_steps: int | None = None,
) -> TrialResult:
    """Run one closed-loop trial; returns the outcome and attention timeline."""
    task = "packing" if isinstance(env, PackingEnv) else "pouring"
    if runner.task != task:
        raise ProtocolError(f"checkpoint is for {runner.task}, env is {task}")
    spec = PACKING_SPEC if task == "packing" else POURING_SPEC
    n = runner.checkpoint.fusion_config.n_slots

    state = env.reset(seed)
    obs = demos.initial_observation(env)
    streams = StreamSet(obs.audio_segment.sample_rate, -POLICY_DT)
    limit = max_steps if max_steps is not None else env.cfg["max_steps"]
    timeline: list[dict] = []
    t = 0.0
    while True:
        streams.append_visual(obs.visual)
        streams.append_tactile(obs.tactile)
        streams.append_audio(obs.audio_segment.samples)
        window = assemble_window(streams, t, n)
        cls, scores = runner.act(window)
        if scores is not None:
            timeline.append({"step": state.step_count, **scores})
        state, obs = env.step(decode_action(cls, spec))
        t = state.step_count * POLICY_DT
        if env.terminal() or state.step_count >= limit:
            break
    outcome = env.outcome()
    if task == "packing":
        return TrialResult(seed, env.scenario, outcome.success, None, outcome.steps_used, timeline)
    return TrialResult(
        seed, str(env.initial_mass_g), None, outcome.weight_error_g, outcome.steps_used, timeline
    )


def evaluate(
    checkpoint: Checkpoint,
    task: str,
    trials: int = 10,
    base_seed: int = 1000,
    scenarios: list[str] | None = None,
    max_steps: int | None = None,
    sim_config: dict | None = None,
) -> EvalReport:
    """Aggregate rollouts into a Table-style report: per-scenario success rates
    for packing, per-initial-mass mean +/- std weight error for pouring."""
    runner = PolicyRunner(checkpoint)
    if runner.task != task:
        raise ProtocolError(f"checkpoint is for {runner.task}, requested {task}")
    if scenarios is None:
        scenarios = list(SCENARIOS) if task == "packing" else [str(m) for m in INITIAL_MASSES]

    all_trials: list[TrialResult] = []
    per_scenario: dict[str, dict] = {}
    for scenario in scenarios:
        results = []
        for i in range(trials):
            env = demos.make_env(task, scenario, sim_config)
            results.append(rollout(runner, env, base_seed + i, max_steps))
        all_trials.extend(results)
        if task == "packing":
            rate = float(np.mean([r.success for r in results]))
            per_scenario[scenario] = {"success_rate": rate, "trials": trials}
        else:
            errs = np.array([r.weight_error_g for r in results])
            per_scenario[scenario] = {
                "mean_weight_error_g": float(errs.mean()),
                "std_weight_error_g": float(errs.std(ddof=1)) if len(errs) > 1 else 0.0,
                "trials": trials,
            }
    if task == "packing":
        average = {
            "success_rate": float(np.mean([r.success for r in all_trials])),
        }
    else:
        errs = np.array([r.weight_error_g for r in all_trials])
        average = {
            "mean_weight_error_g": float(errs.mean()),
            "std_weight_error_g": float(errs.std(ddof=1)) if len(errs) > 1 else 0.0,
        }
    cfg = checkpoint.fusion_config
    return EvalReport(task, cfg.variant, list(cfg.active_modalities), per_scenario, average, all_trials)


def report_to_dict(report: EvalReport) -> dict:
    return {
        "task": report.task,
        "variant": report.variant,
        "modalities": report.modalities,
        "per_scenario": report.per_scenario,
        "average": report.average,
        "trials": [
            {
                "seed": t.seed,
                "scenario": t.scenario,
                "success": t.success,
                "weight_error_g": t.weight_error_g,
                "steps_used": t.steps_used,
                "timeline": t.timeline,
            }
            for t in report.trials
        ],
    }


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=1, sort_keys=True))


def format_report(report: EvalReport) -> str:
    lines = [f"task: {report.task}  variant: {report.variant} ({'+'.join(report.modalities)})"]
    if report.task == "packing":
        for scenario, row in report.per_scenario.items():
            lines.append(f"  {scenario:<14} success rate {row['success_rate']:.2f}")
        lines.append(f"  {'average':<14} success rate {report.average['success_rate']:.2f}")
    else:
        for scenario, row in report.per_scenario.items():
            lines.append(
                f"  initial {scenario:>3} g  weight error "
                f"{row['mean_weight_error_g']:.2f} +/- {row['std_weight_error_g']:.2f} g"
            )
        lines.append(
            f"  {'average':<13} weight error {report.average['mean_weight_error_g']:.2f} g"
        )
    return "\n".join(lines)


def attention_timeline_export(report: EvalReport, trial_index: int, path: str | Path) -> None:
    """CSV rows: step, score_V, score_A, score_T (rows sum to 1)."""
    trial = report.trials[trial_index]
    if not trial.timeline:
        raise TraceNotAvailableError("trial used a non-attention variant")
    mods = report.modalities
    header = "step," + ",".join(f"score_{m}" for m in mods)
    rows = [header]
    for entry in trial.timeline:
        rows.append(
            str(entry["step"]) + "," + ",".join(f"{entry[m]:.6f}" for m in mods)
        )
    Path(path).write_text("\n".join(rows) + "\n")

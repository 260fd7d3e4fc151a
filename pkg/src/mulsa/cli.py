"""Top-level command-line interface: collect / train / eval / serve /
spectrogram / report-plot.

Every subcommand accepts ``--config FILE`` with JSON overrides for its
keyword options; explicit flags win over the file. Episodes default to
``$MULSA_DATA_DIR`` when set.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import audio_dsp, demos, evaluation, training
from .sensordata import AudioChunk
from .sim_packing import SCENARIOS
from .sim_pouring import INITIAL_MASSES


def _data_dir(value: str | None) -> Path:
    if value:
        return Path(value)
    return Path(os.environ.get("MULSA_DATA_DIR", "data"))


def _apply_config(config_path: str | None, params: dict) -> dict:
    if config_path:
        overrides = json.loads(Path(config_path).read_text())
        for key, value in overrides.items():
            if key in params and params[key] is None:
                params[key] = value
    return params


@click.group()
def main():
    """Multisensory manipulation: simulators, imitation learning, teleop."""


@main.command()
@click.option("--task", type=click.Choice(["packing", "pouring"]), required=True)
@click.option("--source", type=click.Choice(["expert"]), default="expert")
@click.option("--episodes", type=int, default=10, help="episodes per scenario")
@click.option("--scenario", "scenarios", multiple=True, help="subset of scenarios")
@click.option("--initial", type=int, default=None, help="pouring initial mass (g)")
@click.option("--out", type=str, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--noise-rate", type=float, default=0.05)
@click.option("--config", "config_path", type=str, default=None)
def collect(task, source, episodes, scenarios, initial, out, seed, noise_rate, config_path):
    """Record scripted demonstrations into episode directories."""
    _apply_config(config_path, {})
    if task == "packing":
        scenario_list = list(scenarios) or list(SCENARIOS)
    else:
        scenario_list = [str(initial)] if initial else [str(m) for m in INITIAL_MASSES]
    out_dir = _data_dir(out)
    dirs = demos.collect(out_dir, task, scenario_list, episodes, seed, noise_rate)
    click.echo(f"wrote {len(dirs)} episodes under {out_dir}")


@main.command()
@click.option("--manifest", type=str, required=True, help="dataset.json from collect")
@click.option("--variant", type=click.Choice(["mulsa", "direct_concat", "recurrent"]), default="mulsa")
@click.option("--modalities", type=str, default="VAT", help="subset of V, A, T")
@click.option("--topology", type=click.Choice(["small", "paper_resnet18"]), default="small")
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--epoch-samples", type=int, default=None)
@click.option("--val-fraction", type=float, default=None)
@click.option("--out", type=str, required=True, help="checkpoint path")
@click.option("--config", "config_path", type=str, default=None)
def train(manifest, variant, modalities, topology, epochs, batch_size, lr, seed,
          epoch_samples, val_fraction, out, config_path):
    """Behavioral cloning on a collected dataset."""
    params = _apply_config(config_path, {
        "epochs": epochs, "batch_size": batch_size, "lr": lr, "seed": seed,
        "epoch_samples": epoch_samples, "val_fraction": val_fraction,
    })
    task = json.loads(Path(manifest).read_text())["task"]
    cfg = training.TrainConfig(
        manifest_path=manifest,
        variant=variant,
        active_modalities=tuple(m for m in "VAT" if m in modalities.upper()),
        topology=topology,
        epochs=params["epochs"] if params["epochs"] is not None else 50,
        batch_size=params["batch_size"] or 32,
        learning_rate=params["lr"] or 1e-4,
        seed=params["seed"] or 0,
        epoch_samples=params["epoch_samples"] or 0,
        val_fraction=params["val_fraction"] or 0.0,
    )
    class_count = 27 if task == "packing" else 9
    dataset = training.build_dataset(manifest, cfg.n_slots, class_count)
    ckpt = training.train(cfg, dataset)
    training.save_checkpoint(ckpt, out)
    last = ckpt.history[-1] if ckpt.history else {}
    click.echo(f"saved {out}  (final loss {last.get('loss'):.4f} acc {last.get('accuracy'):.3f})")


@main.command(name="eval")
@click.option("--checkpoint", type=str, required=True)
@click.option("--task", type=click.Choice(["packing", "pouring"]), required=True)
@click.option("--trials", type=int, default=10)
@click.option("--seed", type=int, default=1000)
@click.option("--out", type=str, default="report.json")
@click.option("--config", "config_path", type=str, default=None)
def eval_cmd(checkpoint, task, trials, seed, out, config_path):
    """Closed-loop evaluation; writes report.json and prints the table."""
    _apply_config(config_path, {})
    ckpt = training.load_checkpoint(checkpoint)
    report = evaluation.evaluate(ckpt, task, trials, seed)
    evaluation.save_report(report, out)
    click.echo(evaluation.format_report(report))


@main.command()
@click.option("--task", type=click.Choice(["packing", "pouring"]), required=True)
@click.option("--scenario", type=str, default=None)
@click.option("--port", type=int, default=8765)
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--record-dir", type=str, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--config", "config_path", type=str, default=None)
def serve(task, scenario, port, host, record_dir, seed, config_path):
    """Host a live teleoperation session over WebSocket."""
    _apply_config(config_path, {})
    from . import teleop

    if scenario is None:
        scenario = "hard_slanted" if task == "packing" else "60"
    teleop.serve(task, scenario, port, record_dir, host, seed)


@main.command()
@click.option("--wav", type=str, required=True, help="input mono 16-bit WAV")
@click.option("--start", type=float, default=0.0, help="segment start (s)")
@click.option("--out", type=str, default="spectrogram.csv")
def spectrogram(wav, start, out):
    """Dump the 64x50 log-mel grid of one 0.5 s segment as CSV."""
    import wave as wave_mod

    with wave_mod.open(wav, "rb") as fh:
        rate = fh.getframerate()
        samples = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    lo = int(start * rate)
    chunk = AudioChunk(samples[lo : lo + int(0.5 * rate)], rate, start)
    mel = audio_dsp.mel_spectrogram(audio_dsp.resample(chunk, 16000))
    np.savetxt(out, mel.values, delimiter=",", fmt="%.6f")
    click.echo(f"wrote {out} shape {mel.values.shape}")


@main.command(name="report-plot")
@click.option("--report", type=str, required=True, help="report.json from eval")
@click.option("--trial", type=int, default=0)
@click.option("--out", type=str, default="timeline.png")
def report_plot(report, trial, out):
    """Plot the per-modality attention timeline of one trial."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = json.loads(Path(report).read_text())
    timeline = data["trials"][trial]["timeline"]
    if not timeline:
        click.echo("trial has no attention timeline", err=True)
        sys.exit(1)
    steps = [e["step"] for e in timeline]
    fig, ax = plt.subplots(figsize=(8, 3))
    for m in data["modalities"]:
        ax.plot(steps, [e[m] for e in timeline], label=m)
    ax.set_xlabel("policy step")
    ax.set_ylabel("aggregated attention score")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()

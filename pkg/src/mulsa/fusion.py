"""Modality-temporal fusion policies.

The main variant fuses per-modality, per-slot embeddings with multi-head
self-attention over the token sequence [v_1..v_N, a_1..a_N, t_1..t_N],
concatenates the attention outputs into one long feature, and classifies it
into a discrete ternary action. Attention weights are captured per layer and
head so each policy step can report how much total attention mass each
modality received.

Baselines: direct concatenation of all tokens (no attention) and an LSTM
fusing the per-slot concatenated embeddings. Any subset of {V, A, T} can be
active; inactive modalities simply contribute no tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .encoders import EncoderConfig, ModalityEncoder, encode_modality
from .sensordata import Action

MODALITY_ORDER = ("V", "A", "T")


class ConfigError(ValueError):
    """Inconsistent fusion configuration or input set."""


class NumericFailureError(RuntimeError):
    """NaN appeared in activations; message names the failing layer."""


class TraceNotAvailableError(RuntimeError):
    """The variant does not produce attention traces."""


@dataclass(frozen=True)
class FusionConfig:
    variant: str = "mulsa"  # "mulsa" | "direct_concat" | "recurrent"
    active_modalities: tuple[str, ...] = ("V", "A", "T")
    feature_dim: int = 64
    n_slots: int = 6
    class_count: int = 27
    layers: int = 1
    heads: int = 8
    ff_width: int = 0  # 0 -> 4 * feature_dim
    mlp_hidden_sizes: tuple[int, ...] = (128, 64)
    use_positional_embeddings: bool = True
    recurrent_hidden: int = 0  # 0 -> feature_dim

    def __post_init__(self):
        if self.variant not in ("mulsa", "direct_concat", "recurrent"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if not self.active_modalities:
            raise ConfigError("at least one modality must be active")
        for m in self.active_modalities:
            if m not in MODALITY_ORDER:
                raise ConfigError(f"unknown modality {m!r}")
        if self.feature_dim % self.heads != 0:
            raise ConfigError("heads must divide feature_dim")
        if self.ff_width == 0:
            object.__setattr__(self, "ff_width", 4 * self.feature_dim)
        if self.recurrent_hidden == 0:
            object.__setattr__(self, "recurrent_hidden", self.feature_dim)

    @property
    def head_dim(self) -> int:
        return self.feature_dim // self.heads

    @property
    def token_count(self) -> int:
        return len(self.active_modalities) * self.n_slots

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "active_modalities": list(self.active_modalities),
            "feature_dim": self.feature_dim,
            "n_slots": self.n_slots,
            "class_count": self.class_count,
            "layers": self.layers,
            "heads": self.heads,
            "ff_width": self.ff_width,
            "mlp_hidden_sizes": list(self.mlp_hidden_sizes),
            "use_positional_embeddings": self.use_positional_embeddings,
            "recurrent_hidden": self.recurrent_hidden,
        }

    @staticmethod
    def from_dict(d: dict) -> "FusionConfig":
        d = dict(d)
        d["active_modalities"] = tuple(d["active_modalities"])
        d["mlp_hidden_sizes"] = tuple(d["mlp_hidden_sizes"])
        return FusionConfig(**d)


@dataclass
class AttentionTrace:
    """Post-softmax weights of every layer/head for one policy step.

    ``weights[l]`` has shape (heads, T, T) and every row sums to 1.
    ``modality_ids[j]`` names the modality of key/query token j.
    """

    weights: list[np.ndarray]
    modality_ids: list[str]


@dataclass
class PolicyOutput:
    logits: torch.Tensor  # (B, class_count)
    predicted: np.ndarray  # (B,) argmax class, ties toward lowest index
    attention_trace: AttentionTrace | None = None
    traces: list[AttentionTrace] = field(default_factory=list)  # one per batch row


def _argmax_lowest(logits: torch.Tensor) -> np.ndarray:
    return np.argmax(logits.detach().cpu().numpy(), axis=1)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product attention with learned Q/K/V/output projections."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ConfigError("heads must divide dim")
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, T, D) -> output (B, T, D) and weights (B, heads, T, T)."""
        b, t, d = x.shape

        def split(z):
            return z.view(b, t, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        scores = q @ k.transpose(-2, -1) / self.head_dim**0.5
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, t, d)
        return self.out_proj(out), weights


class TransformerLayer(nn.Module):
    """Post-norm block: attention and position-wise feed-forward sublayers,
    each wrapped in residual + layer normalization."""

    def __init__(self, dim: int, heads: int, ff_width: int):
        super().__init__()
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_width), nn.ReLU(), nn.Linear(ff_width, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x):
        attn_out, weights = self.attn(x)
        x = self.norm1(x + attn_out)
        x = self.norm2(x + self.ff(x))
        return x, weights


def make_mlp(in_dim: int, hidden: tuple[int, ...], out_dim: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_dim
    for h in hidden:
        layers += [nn.Linear(prev, h), nn.ReLU()]
        prev = h
    layers.append(nn.Linear(prev, out_dim))
    return nn.Sequential(*layers)


class TokenBuilder(nn.Module):
    """Canonically orders per-modality token sets and adds the learned
    modality-type and temporal-position embeddings."""

    def __init__(self, config: FusionConfig):
        super().__init__()
        self.config = config
        d = config.feature_dim
        self.modality_embed = nn.ParameterDict(
            {m: nn.Parameter(torch.zeros(d)) for m in config.active_modalities}
        )
        self.time_embed = nn.Parameter(torch.zeros(config.n_slots, d))

    def forward(self, features: dict[str, torch.Tensor]) -> torch.Tensor:
        cfg = self.config
        if set(features) != set(cfg.active_modalities):
            raise ConfigError(
                f"got modalities {sorted(features)}, config wants {sorted(cfg.active_modalities)}"
            )
        parts = []
        for m in MODALITY_ORDER:
            if m not in cfg.active_modalities:
                continue
            f = features[m]
            if f.shape[1] != cfg.n_slots:
                raise ConfigError(f"modality {m}: expected {cfg.n_slots} slots, got {f.shape[1]}")
            if cfg.use_positional_embeddings:
                f = f + self.modality_embed[m] + self.time_embed
            parts.append(f)
        return torch.cat(parts, dim=1)  # (B, kN, D)


def token_modality_ids(config: FusionConfig) -> list[str]:
    return [m for m in MODALITY_ORDER if m in config.active_modalities for _ in range(config.n_slots)]


def build_encoders(
    config: FusionConfig, encoder_configs: dict[str, EncoderConfig]
) -> nn.ModuleDict:
    return nn.ModuleDict(
        {m: ModalityEncoder(encoder_configs[m]) for m in config.active_modalities}
    )


class _PolicyBase(nn.Module):
    def __init__(self, config: FusionConfig, encoder_configs: dict[str, EncoderConfig]):
        super().__init__()
        self.config = config
        self.encoder_configs = {m: encoder_configs[m] for m in config.active_modalities}
        self.encoders = build_encoders(config, encoder_configs)

    def encode(self, inputs: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
        if set(inputs) != set(self.config.active_modalities):
            raise ConfigError(
                f"got modalities {sorted(inputs)}, "
                f"config wants {sorted(self.config.active_modalities)}"
            )
        return {m: encode_modality(inputs[m], self.encoders[m]) for m in self.config.active_modalities}


class MulsaPolicy(_PolicyBase):
    """Self-attention fusion over the 3N (or kN) modality-time tokens."""

    def __init__(self, config: FusionConfig, encoder_configs: dict[str, EncoderConfig]):
        super().__init__(config, encoder_configs)
        self.token_builder = TokenBuilder(config)
        self.blocks = nn.ModuleList(
            TransformerLayer(config.feature_dim, config.heads, config.ff_width)
            for _ in range(config.layers)
        )
        self.head = make_mlp(
            config.token_count * config.feature_dim, config.mlp_hidden_sizes, config.class_count
        )

    def forward(self, inputs: dict[str, torch.Tensor]) -> PolicyOutput:
        features = self.encode(inputs)
        tokens = self.token_builder(features)
        return self.forward_tokens(tokens)

    def forward_tokens(self, tokens: torch.Tensor) -> PolicyOutput:
        x = tokens
        all_weights = []
        for i, block in enumerate(self.blocks):
            x, weights = block(x)
            if torch.isnan(x).any():
                raise NumericFailureError(f"NaN activations after attention layer {i}")
            all_weights.append(weights)
        b = x.shape[0]
        fused = x.reshape(b, -1)  # m = [o_1 | ... | o_{3N}]
        logits = self.head(fused)
        ids = token_modality_ids(self.config)
        traces = [
            AttentionTrace([w[j].detach().cpu().numpy() for w in all_weights], ids)
            for j in range(b)
        ]
        return PolicyOutput(logits, _argmax_lowest(logits), traces[0], traces)


class DirectConcatPolicy(_PolicyBase):
    """Concatenates all kN embeddings straight into the MLP head."""

    def __init__(self, config: FusionConfig, encoder_configs: dict[str, EncoderConfig]):
        super().__init__(config, encoder_configs)
        self.head = make_mlp(
            config.token_count * config.feature_dim, config.mlp_hidden_sizes, config.class_count
        )

    def forward(self, inputs: dict[str, torch.Tensor]) -> PolicyOutput:
        features = self.encode(inputs)
        parts = [features[m] for m in MODALITY_ORDER if m in self.config.active_modalities]
        fused = torch.cat(parts, dim=1).flatten(1)
        logits = self.head(fused)
        return PolicyOutput(logits, _argmax_lowest(logits))


class RecurrentPolicy(_PolicyBase):
    """Per slot, concatenates the active-modality embeddings and runs the
    N-step sequence through an LSTM; the final hidden state feeds the head."""

    def __init__(self, config: FusionConfig, encoder_configs: dict[str, EncoderConfig]):
        super().__init__(config, encoder_configs)
        k = len(config.active_modalities)
        self.lstm = nn.LSTM(
            input_size=k * config.feature_dim,
            hidden_size=config.recurrent_hidden,
            batch_first=True,
        )
        self.head = make_mlp(config.recurrent_hidden, config.mlp_hidden_sizes, config.class_count)

    def forward(self, inputs: dict[str, torch.Tensor]) -> PolicyOutput:
        features = self.encode(inputs)
        per_slot = torch.cat(
            [features[m] for m in MODALITY_ORDER if m in self.config.active_modalities], dim=2
        )  # (B, N, kD)
        _, (h, _) = self.lstm(per_slot)
        logits = self.head(h[-1])
        return PolicyOutput(logits, _argmax_lowest(logits))


def build_policy(config: FusionConfig, encoder_configs: dict[str, EncoderConfig]) -> _PolicyBase:
    cls = {
        "mulsa": MulsaPolicy,
        "direct_concat": DirectConcatPolicy,
        "recurrent": RecurrentPolicy,
    }[config.variant]
    return cls(config, encoder_configs)


def aggregate_modality_attention(trace: AttentionTrace | None) -> dict[str, float]:
    """Mean over layers, heads, and query rows of the total attention mass
    received by each modality's key tokens. Scores sum to 1."""
    if trace is None or not trace.weights:
        raise TraceNotAvailableError("this variant produces no attention trace")
    ids = np.asarray(trace.modality_ids)
    totals = {m: 0.0 for m in MODALITY_ORDER if m in set(trace.modality_ids)}
    count = 0
    for layer in trace.weights:
        heads, rows, _ = layer.shape
        count += heads * rows
        for m in totals:
            totals[m] += float(layer[:, :, ids == m].sum())
    return {m: totals[m] / count for m in totals}


def heuristic_visual_policy(env_state_summary: dict) -> tuple[Action, bool]:
    """Scripted alignment controller used with the audio+touch ablation.

    Proportionally steps the peg toward a fixed pre-insertion pose above the
    base; reports handover once within the positional tolerance so the learned
    policy can take over.
    """
    from .sensordata import PACKING_SPEC

    pos = env_state_summary["peg_position"]
    target = env_state_summary["pre_insertion_pose"]
    tol = env_state_summary.get("tolerance", 0.004)
    values = []
    for axis in range(2):
        err = target[axis] - pos[axis]
        values.append(0 if abs(err) <= tol else (1 if err > 0 else -1))
    # hold z during alignment; descend only after handover
    values.append(0)
    handover = values[0] == 0 and values[1] == 0
    from .sensordata import encode_action

    return Action(tuple(values), encode_action(values, PACKING_SPEC)), handover

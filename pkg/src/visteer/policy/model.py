"""Trainable prompt-conditioned visuomotor policy.

Two tiny conv streams (observation and prompt image) with coordinate
channels and spatial-softmax readout feed a shared trunk.  The trunk
carries two heads: an action head regressing a whole n-step chunk in one
shot, and a grounding head emitting per-coordinate bin logits.  Everything
except the action head counts as "encoder" for the purposes of parameter
partitioning and gradient scoping; the grounding loss must never touch the
action head.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..grounding import N_BINS
from ..sim.scenes import PNP_OBJECT_STYLE, load_registry
from ..sim.types import TaskSpec

PROMPT_MODES = ("separate_image", "direct_overlay", "none")
GROUNDING_COORDS = 4  # x, y, x2, y2 slots; point targets use the first two

_vocab_cache: list[str] | None = None


def instruction_tokens() -> list[str]:
    """Closed instruction vocabulary, deterministic order."""
    global _vocab_cache
    if _vocab_cache is None:
        reg = load_registry()
        tokens = ["<pad>", "<pick>", "<sort>", "<grid>", "<pnp>"]
        tokens += sorted(reg["colors"]["training"]) + sorted(reg["colors"]["held_out"])
        tokens += sorted(reg["sorting"]["category_phrases"].values())
        tokens += sorted(set(reg["sorting"]["box_for_category"].values()))
        tokens += ["egg", "cabinet"] + sorted(PNP_OBJECT_STYLE)
        tokens += [f"line{i}" for i in range(1, 5)]
        tokens += [f"col{i}" for i in range(1, 5)]
        _vocab_cache = tokens
    return _vocab_cache


def _tok(name: str) -> int:
    return instruction_tokens().index(name)


def encode_instruction(task: TaskSpec, length: int = 5) -> list[int]:
    """Token ids for a task; fixed-length, zero-padded."""
    if task.family == "attribute_pick":
        color = task.steps[0].object_noun.removesuffix(" egg")
        toks = [_tok("<pick>"), _tok(color), _tok("egg")]
    elif task.family == "sorting":
        toks = [_tok("<sort>"), _tok(task.steps[0].object_noun), _tok(task.steps[1].location_noun)]
    elif task.family == "grid_place":
        row, col = task.target_cell
        toks = [_tok("<grid>"), _tok("egg"), _tok(f"line{row + 1}"), _tok(f"col{col + 1}")]
    elif task.family == "pnp_close":
        toks = [_tok("<pnp>"), _tok(task.steps[0].object_noun), _tok("cabinet")]
    else:
        raise ValueError(f"unknown family {task.family!r}")
    toks = toks[:length]
    return toks + [0] * (length - len(toks))


@dataclass
class PolicyConfig:
    chunk_size: int = 16
    image_size: int = 64
    embed_dim: int = 8
    conv_channels: tuple[int, int, int] = (16, 32, 64)
    trunk_width: int = 256
    grounding_bins: int = N_BINS
    prompt_mode: str = "separate_image"
    instruction_length: int = 5
    vocab_size: int = 0  # 0 = use the package vocabulary
    # the head predicts actions in these units; consumers divide them back
    # out, which keeps translation and gripper channels comparable under L1
    action_scale: tuple[float, float, float] = (20.0, 20.0, 1.0)

    def __post_init__(self):
        if self.prompt_mode not in PROMPT_MODES:
            raise ValueError(f"unknown prompt_mode {self.prompt_mode!r}")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.vocab_size == 0:
            self.vocab_size = len(instruction_tokens())
        self.action_scale = tuple(float(s) for s in self.action_scale)
        if len(self.action_scale) != 3 or any(s <= 0 for s in self.action_scale):
            raise ValueError("action_scale must be three positive factors")

    @property
    def num_streams(self) -> int:
        return 2 if self.prompt_mode == "separate_image" else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["action_scale"] = list(self.action_scale)
        return d

    @staticmethod
    def from_dict(d: dict) -> "PolicyConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["action_scale"] = tuple(d.get("action_scale", (20.0, 20.0, 1.0)))
        return PolicyConfig(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class PolicyOutput:
    chunk: torch.Tensor  # (B, n, 3)
    grounding_logits: torch.Tensor | None  # (B, 4, N) when requested


class _ConvStream(nn.Module):
    """Stride-2 conv stack over RGB + 2 coordinate channels."""

    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        chans = [5, *cfg.conv_channels]
        self.stages = nn.Sequential(
            *[
                layer
                for cin, cout in zip(chans[:-1], chans[1:])
                for layer in (nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.ReLU())
            ]
        )
        size = cfg.image_size
        for _ in cfg.conv_channels:
            size = (size + 1) // 2
        self.out_size = size
        self.out_channels = cfg.conv_channels[-1]

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        feats = self.stages(img)  # (B, C, s, s)
        b, c, h, w = feats.shape
        flat = feats.reshape(b, c, h * w)
        probs = torch.softmax(flat, dim=-1)
        device, dtype = img.device, img.dtype
        xs = torch.linspace(-1.0, 1.0, w, device=device, dtype=dtype)
        ys = torch.linspace(-1.0, 1.0, h, device=device, dtype=dtype)
        grid_x = xs.repeat(h)
        grid_y = ys.repeat_interleave(w)
        ex = (probs * grid_x).sum(-1)
        ey = (probs * grid_y).sum(-1)
        mean_act = flat.mean(-1)
        return torch.cat([ex, ey, mean_act], dim=1)  # (B, 3C)

    @property
    def feature_dim(self) -> int:
        return 3 * self.out_channels


class VisuomotorPolicy(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.streams = nn.ModuleList(_ConvStream(cfg) for _ in range(cfg.num_streams))
        feat = sum(s.feature_dim for s in self.streams) + cfg.embed_dim
        self.trunk = nn.Sequential(
            nn.Linear(feat, cfg.trunk_width),
            nn.ReLU(),
            nn.Linear(cfg.trunk_width, cfg.trunk_width),
            nn.ReLU(),
        )
        self.grounding_head = nn.Linear(
            cfg.trunk_width, GROUNDING_COORDS * cfg.grounding_bins
        )
        self.action_head = nn.Linear(cfg.trunk_width, cfg.chunk_size * 3)
        size = cfg.image_size
        xs = torch.linspace(-1.0, 1.0, size)
        grid_y, grid_x = torch.meshgrid(xs, xs, indexing="ij")
        self.register_buffer("coord_grid", torch.stack([grid_x, grid_y])[None], persistent=False)

    def encoder_parameters(self) -> list[nn.Parameter]:
        """Everything that embeds inputs, including the grounding head."""
        action_ids = {id(p) for p in self.action_head.parameters()}
        return [p for p in self.parameters() if id(p) not in action_ids]

    def action_parameters(self) -> list[nn.Parameter]:
        return list(self.action_head.parameters())

    def _prep(self, img: torch.Tensor) -> torch.Tensor:
        # (B, H, W, 3) uint8 or float -> (B, 5, H, W) normalized + coords
        if img.dtype == torch.uint8:
            img = img.to(self.coord_grid.dtype)
        img = img.permute(0, 3, 1, 2) / 255.0
        coords = self.coord_grid.to(img.dtype).expand(img.shape[0], -1, -1, -1)
        return torch.cat([img, coords], dim=1)

    def forward(
        self,
        tokens: torch.Tensor,
        obs: torch.Tensor,
        prompt: torch.Tensor | None = None,
        *,
        want_grounding: bool = False,
    ) -> PolicyOutput:
        if obs.shape[1] != self.cfg.image_size or obs.shape[2] != self.cfg.image_size:
            raise ValueError(
                f"observation raster {tuple(obs.shape[1:3])} does not match "
                f"config image_size {self.cfg.image_size}"
            )
        if self.cfg.prompt_mode == "separate_image":
            if prompt is None:
                raise ValueError("separate_image policy requires a prompt raster")
            feats = [self.streams[0](self._prep(obs)), self.streams[1](self._prep(prompt))]
        else:
            if prompt is not None:
                raise ValueError(f"{self.cfg.prompt_mode} policy takes no prompt stream")
            feats = [self.streams[0](self._prep(obs))]
        emb = self.embedding(tokens).sum(dim=1)  # (B, E)
        z = self.trunk(torch.cat([*feats, emb], dim=1))
        chunk = self.action_head(z).reshape(-1, self.cfg.chunk_size, 3)
        logits = None
        if want_grounding:
            logits = self.grounding_head(z).reshape(
                -1, GROUNDING_COORDS, self.cfg.grounding_bins
            )
        return PolicyOutput(chunk=chunk, grounding_logits=logits)

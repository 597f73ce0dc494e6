"""Policy training loop.

The objective per sampled frame is an L1 action-chunk loss plus a gated
auxiliary term: cross entropy of the grounding head against the quantized
coordinates of the active prompt. The auxiliary term backpropagates through
the encoder only; the action head receives no gradient from it, which the
optimizer setup preserves exactly because parameters without gradients are
skipped entirely.

Logged quantities satisfy total = l_action + lambda * l_grounding, where
each component is the batch mean of its per-frame value (frames without
grounding supervision contribute zero to the grounding mean).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data.dataset import IGNORE_BIN, TrainBatch, TrainDataset
from .errors import ConfigError, DivergenceError
from .policy import PolicyConfig, VisuomotorPolicy, save_checkpoint
from .variants import VariantSpec, get_variant


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lambda_grounding: float = 0.1
    lr_encoder: float = 1e-4
    lr_action: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    grounding_gate: str = "key_frames"  # "key_frames" | "all_frames" | "off"
    augment_shift: int = 0  # max whole-pixel translation jitter during sampling
    token_dropout: float = 0.0  # fraction of samples with a blanked instruction
    seed: int = 0
    log_every: int = 25
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.grounding_gate not in ("key_frames", "all_frames", "off"):
            raise ConfigError(f"unknown grounding gate {self.grounding_gate!r}")
        if self.lambda_grounding < 0:
            raise ConfigError("lambda_grounding must be non-negative")
        if self.augment_shift < 0:
            raise ConfigError("augment_shift must be >= 0")
        if not 0.0 <= self.token_dropout < 1.0:
            raise ConfigError("token_dropout must lie in [0, 1)")


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    steps: int
    final_total: float


def make_optimizer(model: VisuomotorPolicy, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW with separate learning rates for the encoder and action head."""
    return torch.optim.AdamW(
        [
            {"params": model.encoder_parameters(), "lr": cfg.lr_encoder},
            {"params": model.action_parameters(), "lr": cfg.lr_action},
        ],
        betas=cfg.betas,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )


def _to_tensors(model: VisuomotorPolicy, batch: TrainBatch):
    dtype = model.coord_grid.dtype
    tokens = torch.from_numpy(np.ascontiguousarray(batch.tokens))
    obs = torch.from_numpy(np.ascontiguousarray(batch.obs))
    prompt = None
    if batch.prompt is not None:
        prompt = torch.from_numpy(np.ascontiguousarray(batch.prompt))
    chunk = torch.from_numpy(np.ascontiguousarray(batch.chunk)).to(dtype)
    ground = torch.from_numpy(np.ascontiguousarray(batch.grounding))
    gmask = torch.from_numpy(np.ascontiguousarray(batch.grounding_mask)).to(dtype)
    return tokens, obs, prompt, chunk, ground, gmask


def compute_losses(
    model: VisuomotorPolicy,
    batch: TrainBatch,
    cfg: TrainConfig,
    *,
    zero_action_loss: bool = False,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Return (total, l_action, l_grounding) for one batch.

    With ``zero_action_loss`` the action term is dropped from the total
    entirely, so the action head's parameters never receive gradients.
    """
    tokens, obs, prompt, chunk_target, ground, gmask = _to_tensors(model, batch)
    supervise_grounding = bool((gmask > 0).any())
    out = model(tokens, obs, prompt, want_grounding=supervise_grounding)

    per_action = (out.chunk - chunk_target).abs().mean(dim=(1, 2))  # (B,)
    l_action = per_action.mean()

    if supervise_grounding:
        B, C, N = out.grounding_logits.shape
        ce_rows = F.cross_entropy(
            out.grounding_logits.reshape(B * C, N),
            ground.reshape(B * C),
            ignore_index=IGNORE_BIN,
            reduction="none",
        ).reshape(B, C)
        counts = (ground != IGNORE_BIN).sum(dim=1)
        per_ground = torch.where(
            counts > 0,
            ce_rows.sum(dim=1) / counts.clamp(min=1).to(ce_rows.dtype),
            torch.zeros_like(ce_rows[:, 0]),
        )
        l_ground = (per_ground * gmask).mean()
    else:
        l_ground = torch.zeros((), dtype=l_action.dtype)

    if zero_action_loss:
        total = cfg.lambda_grounding * l_ground
    else:
        total = l_action + cfg.lambda_grounding * l_ground
    return total, l_action, l_ground


def _check_compat(dataset: TrainDataset, policy_cfg: PolicyConfig, cfg: TrainConfig) -> None:
    if dataset.gate != cfg.grounding_gate:
        raise ConfigError(
            f"dataset gate {dataset.gate!r} != training gate {cfg.grounding_gate!r}"
        )
    if dataset.chunk_size != policy_cfg.chunk_size:
        raise ConfigError(
            f"dataset chunk {dataset.chunk_size} != policy chunk {policy_cfg.chunk_size}"
        )
    if dataset.spec.prompt_mode != policy_cfg.prompt_mode:
        raise ConfigError(
            f"dataset prompt mode {dataset.spec.prompt_mode!r} != "
            f"policy prompt mode {policy_cfg.prompt_mode!r}"
        )
    if dataset.width != policy_cfg.image_size:
        raise ConfigError(
            f"dataset raster {dataset.width} != policy image_size {policy_cfg.image_size}"
        )
    if dataset.n_bins != policy_cfg.grounding_bins:
        raise ConfigError(
            f"dataset bins {dataset.n_bins} != policy bins {policy_cfg.grounding_bins}"
        )
    if dataset.augment_shift != cfg.augment_shift:
        raise ConfigError(
            f"dataset augment_shift {dataset.augment_shift} != "
            f"training augment_shift {cfg.augment_shift}"
        )
    if dataset.token_dropout != cfg.token_dropout:
        raise ConfigError(
            f"dataset token_dropout {dataset.token_dropout} != "
            f"training token_dropout {cfg.token_dropout}"
        )
    if dataset.action_scale != policy_cfg.action_scale:
        raise ConfigError(
            f"dataset action scale {dataset.action_scale} != "
            f"policy action scale {policy_cfg.action_scale}"
        )


def train(
    dataset: TrainDataset,
    policy_cfg: PolicyConfig,
    cfg: TrainConfig,
    out_dir: str | Path,
    *,
    zero_action_loss: bool = False,
    step_hook=None,
) -> TrainResult:
    """Train a policy on ``dataset`` and leave a checkpoint plus JSONL log.

    Deterministic for fixed seeds: two runs with identical arguments write
    byte-identical checkpoints. A non-finite loss aborts with a
    DivergenceError carrying the last checkpoint that was still healthy.
    """
    _check_compat(dataset, policy_cfg, cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "training_log.jsonl"
    ckpt_path = out_dir / "policy.ckpt"

    torch.manual_seed(cfg.seed)
    model = VisuomotorPolicy(policy_cfg)
    model.train()
    opt = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    lrs = [group["lr"] for group in opt.param_groups]

    last_good: str | None = None
    final_total = math.nan
    with open(log_path, "w") as log:
        json.dump(
            {"policy": policy_cfg.to_dict(), "train": asdict(cfg), "frames": dataset.frames},
            log,
        )
        log.write("\n")
        for step in range(1, cfg.steps + 1):
            batch = dataset.sample(rng, cfg.batch_size)
            total, l_action, l_ground = compute_losses(
                model, batch, cfg, zero_action_loss=zero_action_loss
            )
            if not torch.isfinite(total):
                raise DivergenceError(
                    f"non-finite loss at step {step}", step, last_good
                )
            if total.requires_grad:
                opt.zero_grad(set_to_none=True)
                total.backward()
                opt.step()
            action_val = float(l_action.detach())
            ground_val = float(l_ground.detach())
            final_total = action_val + cfg.lambda_grounding * ground_val
            if step == 1 or step == cfg.steps or step % cfg.log_every == 0:
                log.write(
                    json.dumps(
                        {
                            "step": step,
                            "l_action": action_val,
                            "l_grounding": ground_val,
                            "total": final_total,
                            "lr_enc": lrs[0],
                            "lr_act": lrs[1],
                        }
                    )
                    + "\n"
                )
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt_path, model)
                last_good = str(ckpt_path)
            if step_hook is not None:
                step_hook(step, model)

    save_checkpoint(ckpt_path, model)
    return TrainResult(
        checkpoint_path=str(ckpt_path),
        log_path=str(log_path),
        steps=cfg.steps,
        final_total=final_total,
    )


def train_variant(
    dataset_dir: str | Path,
    variant: str | VariantSpec,
    out_dir: str | Path,
    *,
    policy_cfg: PolicyConfig | None = None,
    train_cfg: TrainConfig | None = None,
    max_episodes: int | None = None,
) -> TrainResult:
    """Train one named variant from a dataset directory.

    The variant decides the prompt mode, anchor glyph, static-prompt flag,
    and default grounding gate; ``train_cfg.grounding_gate`` is overridden
    to match unless the caller already set it to the variant's gate.
    """
    spec = variant if isinstance(variant, VariantSpec) else get_variant(variant)
    base_policy = policy_cfg or PolicyConfig()
    policy = PolicyConfig.from_dict({**base_policy.to_dict(), "prompt_mode": spec.prompt_mode})
    cfg = train_cfg or TrainConfig()
    if cfg.grounding_gate != spec.gate:
        cfg = TrainConfig(**{**asdict(cfg), "grounding_gate": spec.gate})
    dataset = TrainDataset(
        dataset_dir,
        spec,
        gate=cfg.grounding_gate,
        instruction_length=policy.instruction_length,
        chunk_size=policy.chunk_size,
        n_bins=policy.grounding_bins,
        action_scale=policy.action_scale,
        augment_shift=cfg.augment_shift,
        token_dropout=cfg.token_dropout,
        max_episodes=max_episodes,
    )
    return train(dataset, policy, cfg, out_dir)

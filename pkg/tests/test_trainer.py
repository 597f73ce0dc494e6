"""Training loop: gradients, loss algebra, determinism, failure handling.

The gradient oracle here is plain central finite differences over every
parameter of a deliberately tiny model, evaluated in float64 so the
comparison against autograd is meaningful at 1e-4 relative error.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest
import torch

from visteer.data import TrainDataset
from visteer.data.dataset import IGNORE_BIN, TrainBatch
from visteer.errors import ConfigError, DivergenceError
from visteer.grounding import grounding_ce_loss
from visteer.policy import PolicyConfig, VisuomotorPolicy, load_checkpoint, load_policy
from visteer.trainer import (
    TrainConfig,
    compute_losses,
    make_optimizer,
    train,
    train_variant,
)

torch.set_num_threads(1)


def tiny_policy(**over) -> PolicyConfig:
    base = dict(
        chunk_size=2,
        image_size=8,
        embed_dim=2,
        conv_channels=(2,),
        trunk_width=4,
        grounding_bins=5,
        prompt_mode="separate_image",
    )
    base.update(over)
    return PolicyConfig(**base)


def synthetic_batch(rng: np.random.Generator, size=8, batch=3, chunk=2, bins=5) -> TrainBatch:
    grounding = np.full((batch, 4), IGNORE_BIN, dtype=np.int64)
    gmask = np.zeros(batch, dtype=np.float32)
    grounding[0] = rng.integers(0, bins, 4)  # box row
    grounding[1, :2] = rng.integers(0, bins, 2)  # point row
    gmask[:2] = 1.0
    return TrainBatch(
        obs=rng.integers(0, 256, (batch, size, size, 3), dtype=np.uint8),
        prompt=rng.integers(0, 256, (batch, size, size, 3), dtype=np.uint8),
        tokens=rng.integers(0, 30, (batch, 5)),
        chunk=rng.normal(0, 0.05, (batch, chunk, 3)).astype(np.float32),
        grounding=grounding,
        grounding_mask=gmask,
    )


def finite_difference_grads(model, batch, cfg, h=1e-5):
    """Central-difference gradient of the total loss for every parameter."""

    def value() -> float:
        with torch.no_grad():
            total, _, _ = compute_losses(model, batch, cfg)
        return float(total)

    grads = {}
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        g = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + h
            up = value()
            flat[i] = orig - h
            down = value()
            flat[i] = orig
            g[i] = (up - down) / (2 * h)
        grads[name] = g.view_as(p)
    return grads


class TestGradients:
    def test_autograd_matches_finite_differences_everywhere(self):
        torch.manual_seed(0)
        model = VisuomotorPolicy(tiny_policy()).double()
        n_params = sum(p.numel() for p in model.parameters())
        assert n_params <= 1000
        cfg = TrainConfig(lambda_grounding=0.1)
        batch = synthetic_batch(np.random.default_rng(1))

        total, _, _ = compute_losses(model, batch, cfg)
        total.backward()
        numeric = finite_difference_grads(model, batch, cfg)
        for name, p in model.named_parameters():
            an = p.grad if p.grad is not None else torch.zeros_like(p)
            fd = numeric[name]
            denom = (an.abs() + fd.abs()).clamp(min=1e-8)
            rel = ((an - fd).abs() / denom).max()
            assert float(rel) < 1e-4, f"{name}: rel err {float(rel):.2e}"

    def test_grounding_loss_never_reaches_action_head(self):
        torch.manual_seed(1)
        model = VisuomotorPolicy(tiny_policy()).double()
        cfg = TrainConfig()
        batch = synthetic_batch(np.random.default_rng(2))
        total, _, l_ground = compute_losses(model, batch, cfg, zero_action_loss=True)
        assert float(l_ground.detach()) > 0
        total.backward()
        for p in model.action_parameters():
            assert p.grad is None
        assert any(
            p.grad is not None and p.grad.abs().sum() > 0
            for p in model.encoder_parameters()
        )

    def test_ce_component_matches_reference(self):
        torch.manual_seed(2)
        model = VisuomotorPolicy(tiny_policy()).double()
        cfg = TrainConfig(lambda_grounding=1.0)
        rng = np.random.default_rng(3)
        batch = synthetic_batch(rng, batch=2)
        batch.grounding_mask[:] = 1.0
        batch.grounding[1, 2:] = IGNORE_BIN

        tokens = torch.from_numpy(batch.tokens)
        obs = torch.from_numpy(batch.obs)
        prompt = torch.from_numpy(batch.prompt)
        with torch.no_grad():
            out = model(tokens, obs, prompt, want_grounding=True)
        expected = []
        for b in range(2):
            bins = [int(x) for x in batch.grounding[b] if x != IGNORE_BIN]
            logits = out.grounding_logits[b, : len(bins)].numpy()
            expected.append(grounding_ce_loss(logits, bins)[0])
        _, _, l_ground = compute_losses(model, batch, cfg)
        assert float(l_ground.detach()) == pytest.approx(np.mean(expected), rel=1e-9)


class TestLossAlgebra:
    def setup_method(self):
        torch.manual_seed(3)
        self.model = VisuomotorPolicy(tiny_policy()).double()
        self.batch = synthetic_batch(np.random.default_rng(4))

    def _values(self, cfg, batch=None):
        with torch.no_grad():
            total, l_action, l_ground = compute_losses(
                self.model, batch if batch is not None else self.batch, cfg
            )
        return float(total), float(l_action), float(l_ground)

    def test_total_is_action_plus_scaled_grounding(self):
        total, l_action, l_ground = self._values(TrainConfig(lambda_grounding=0.1))
        assert abs(total - (l_action + 0.1 * l_ground)) < 1e-6

    def test_lambda_zero_drops_the_auxiliary_term(self):
        total0, l_action, _ = self._values(TrainConfig(lambda_grounding=0.0))
        assert total0 == pytest.approx(l_action)

    def test_lambda_scales_linearly(self):
        t1, _, g1 = self._values(TrainConfig(lambda_grounding=0.1))
        t2, _, g2 = self._values(TrainConfig(lambda_grounding=0.2))
        assert g1 == pytest.approx(g2)
        assert t2 - t1 == pytest.approx(0.1 * g1, rel=1e-6)

    def test_unsupervised_rows_contribute_nothing(self):
        cfg = TrainConfig(lambda_grounding=0.1)
        ref = self._values(cfg)
        poisoned = dataclasses.replace(
            self.batch, grounding=self.batch.grounding.copy()
        )
        poisoned.grounding[2] = 4  # row 2 is masked off
        got = self._values(cfg, poisoned)
        assert got[0] == pytest.approx(ref[0])

    def test_all_masked_batch_has_zero_grounding(self):
        batch = dataclasses.replace(
            self.batch,
            grounding=np.full_like(self.batch.grounding, IGNORE_BIN),
            grounding_mask=np.zeros_like(self.batch.grounding_mask),
        )
        total, l_action, l_ground = self._values(TrainConfig(lambda_grounding=0.1), batch)
        assert l_ground == 0.0
        assert total == pytest.approx(l_action)


def loop_policy(**over) -> PolicyConfig:
    return tiny_policy(image_size=64, **over)


def _small_train_cfg(**over) -> TrainConfig:
    base = dict(steps=4, batch_size=4, log_every=1, checkpoint_every=2, seed=9)
    base.update(over)
    return TrainConfig(**base)


def _attr_dataset(attr_dataset_dir, **over):
    kw = dict(gate="key_frames", chunk_size=2, n_bins=5, instruction_length=5)
    kw.update(over)
    return TrainDataset(attr_dataset_dir, "full", **kw)


class TestTrainingLoop:
    def test_writes_log_and_checkpoint(self, attr_dataset_dir, tmp_path):
        ds = _attr_dataset(attr_dataset_dir)
        result = train(ds, loop_policy(), _small_train_cfg(), tmp_path)
        lines = [json.loads(l) for l in open(result.log_path)]
        header, rows = lines[0], lines[1:]
        assert header["policy"]["prompt_mode"] == "separate_image"
        assert [r["step"] for r in rows] == [1, 2, 3, 4]
        for r in rows:
            assert r["total"] == pytest.approx(
                r["l_action"] + 0.1 * r["l_grounding"], abs=1e-6
            )
            assert r["lr_enc"] == pytest.approx(1e-4)
            assert r["lr_act"] == pytest.approx(1e-3)
        model = load_policy(result.checkpoint_path)
        assert model.cfg.chunk_size == 2

    def test_same_seed_gives_identical_checkpoints(self, attr_dataset_dir, tmp_path):
        ds = _attr_dataset(attr_dataset_dir)
        a = train(ds, loop_policy(), _small_train_cfg(), tmp_path / "a")
        b = train(ds, loop_policy(), _small_train_cfg(), tmp_path / "b")
        assert (
            open(a.checkpoint_path, "rb").read() == open(b.checkpoint_path, "rb").read()
        )

    def test_different_seed_changes_the_checkpoint(self, attr_dataset_dir, tmp_path):
        ds = _attr_dataset(attr_dataset_dir)
        a = train(ds, loop_policy(), _small_train_cfg(seed=9), tmp_path / "a")
        b = train(ds, loop_policy(), _small_train_cfg(seed=10), tmp_path / "b")
        assert (
            open(a.checkpoint_path, "rb").read() != open(b.checkpoint_path, "rb").read()
        )

    def test_zero_learning_rate_changes_nothing(self, attr_dataset_dir, tmp_path):
        ds = _attr_dataset(attr_dataset_dir)
        cfg = _small_train_cfg(lr_encoder=0.0, lr_action=0.0, steps=2)
        result = train(ds, loop_policy(), cfg, tmp_path)
        torch.manual_seed(cfg.seed)
        reference = VisuomotorPolicy(loop_policy())
        _, tensors = load_checkpoint(result.checkpoint_path)
        for name, p in reference.named_parameters():
            assert np.array_equal(tensors[name], p.detach().numpy()), name

    def test_grounding_only_steps_leave_action_head_bits(self, attr_dataset_dir, tmp_path):
        ds = _attr_dataset(attr_dataset_dir)
        cfg = _small_train_cfg(steps=3)
        result = train(ds, loop_policy(), cfg, tmp_path, zero_action_loss=True)
        torch.manual_seed(cfg.seed)
        reference = VisuomotorPolicy(loop_policy())
        _, tensors = load_checkpoint(result.checkpoint_path)
        for name, p in reference.action_head.named_parameters():
            assert np.array_equal(
                tensors[f"action_head.{name}"], p.detach().numpy()
            ), name
        moved = any(
            not np.array_equal(tensors[name], p.detach().numpy())
            for name, p in reference.named_parameters()
            if not name.startswith("action_head.")
        )
        assert moved

    def test_divergence_aborts_with_last_checkpoint(self, attr_dataset_dir, tmp_path):
        ds = _attr_dataset(attr_dataset_dir)

        def poison(step, model):
            if step == 3:
                with torch.no_grad():
                    model.trunk[0].weight[0, 0] = float("nan")

        with pytest.raises(DivergenceError) as info:
            train(
                ds,
                loop_policy(),
                _small_train_cfg(steps=6),
                tmp_path,
                step_hook=poison,
            )
        assert info.value.step == 4
        assert info.value.checkpoint_path is not None
        load_policy(info.value.checkpoint_path)

    def test_gate_mismatch_rejected(self, attr_dataset_dir, tmp_path):
        ds = _attr_dataset(attr_dataset_dir, gate="off")
        with pytest.raises(ConfigError, match="gate"):
            train(ds, loop_policy(), _small_train_cfg(), tmp_path)

    def test_chunk_mismatch_rejected(self, attr_dataset_dir, tmp_path):
        ds = _attr_dataset(attr_dataset_dir, chunk_size=4)
        with pytest.raises(ConfigError, match="chunk"):
            train(ds, loop_policy(), _small_train_cfg(), tmp_path)

    def test_prompt_mode_mismatch_rejected(self, attr_dataset_dir, tmp_path):
        ds = TrainDataset(
            attr_dataset_dir, "language_only", gate="off", chunk_size=2, n_bins=5
        )
        cfg = _small_train_cfg(grounding_gate="off")
        with pytest.raises(ConfigError, match="prompt mode"):
            train(ds, loop_policy(), cfg, tmp_path)

    def test_unknown_gate_rejected(self):
        with pytest.raises(ConfigError, match="gate"):
            TrainConfig(grounding_gate="sometimes")

    def test_variant_helper_builds_matching_policy(self, attr_dataset_dir, tmp_path):
        result = train_variant(
            attr_dataset_dir,
            "language_only",
            tmp_path,
            policy_cfg=loop_policy(),
            train_cfg=_small_train_cfg(steps=2),
        )
        cfg, _ = load_checkpoint(result.checkpoint_path)
        assert cfg.prompt_mode == "none"

    def test_optimizer_has_two_groups_with_configured_rates(self):
        model = VisuomotorPolicy(tiny_policy())
        opt = make_optimizer(model, TrainConfig())
        assert [g["lr"] for g in opt.param_groups] == [1e-4, 1e-3]
        assert all(g["betas"] == (0.9, 0.999) for g in opt.param_groups)
        assert all(g["eps"] == 1e-8 for g in opt.param_groups)
        assert all(g["weight_decay"] == 0.01 for g in opt.param_groups)
        counted = sum(len(g["params"]) for g in opt.param_groups)
        assert counted == len(list(model.parameters()))

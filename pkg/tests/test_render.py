"""Rasterization, ground-truth masks, and prompt overlays."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visteer.errors import EmptyMaskError, PromptError
from visteer.prompts import PromptImage, VisualPrompt, dump_raster, load_raster, rasterize_prompt
from visteer.render import (
    COLOR_RGB,
    PROMPT_COLOR,
    TABLE_BG,
    CameraConfig,
    Observation,
    mask_centroid,
    render_observation,
)
from visteer.sim import (
    GripperState,
    ObjectInstance,
    Receptacle,
    WorldState,
    generate_scene,
)


def world_with(objects=None, receptacles=None, gripper=(0.9, 0.9)):
    return WorldState(
        objects=objects or [],
        receptacles=receptacles or [],
        gripper=GripperState(position=gripper),
    )


def render(state, width=64, height=64):
    return render_observation(state, CameraConfig(width=width, height=height))


class TestMasks:
    def test_empty_table_has_no_object_masks(self):
        obs = render(world_with())
        assert obs.entities == []
        assert obs.gt_masks == {}

    def test_circle_pixel_count_matches_analytic_area(self):
        # one circle, radius 0.1, at the center of a 64px frame
        obj = ObjectInstance(0, "circle", "red", 0.1, (0.5, 0.5), labels=("red ball",))
        obs = render(world_with(objects=[obj]))
        count = int(obs.gt_masks["object:0"].sum())
        assert abs(count - math.pi * 6.4**2) <= 8

    def test_circle_mask_matches_per_pixel_oracle(self):
        obj = ObjectInstance(0, "circle", "red", 0.1, (0.37, 0.61), labels=("red ball",))
        obs = render(world_with(objects=[obj]))
        mask = obs.gt_masks["object:0"]
        for v in range(64):
            for u in range(64):
                x, y = (u + 0.5) / 64, (v + 0.5) / 64
                inside = (x - 0.37) ** 2 + (y - 0.61) ** 2 <= 0.1**2
                assert mask[v, u] == inside, (u, v)

    def test_overlapping_masks_disjoint_top_wins(self):
        a = ObjectInstance(0, "square", "red", 0.08, (0.5, 0.5), labels=("red square",))
        b = ObjectInstance(1, "square", "blue", 0.08, (0.55, 0.5), labels=("blue square",))
        obs = render(world_with(objects=[a, b]))
        ma, mb = obs.gt_masks["object:0"], obs.gt_masks["object:1"]
        assert not (ma & mb).any()
        # the later-drawn object owns the contested pixels
        overlap_u = int(0.53 * 64)
        assert mb[32, overlap_u] and not ma[32, overlap_u]

    def test_masks_present_for_all_families(self):
        for family in ("sorting", "attribute_pick", "grid_place", "pnp_close"):
            state, task = generate_scene(family, seed=1)
            obs = render(state)
            for obj in state.objects:
                assert obs.gt_masks[f"object:{obj.object_id}"].any(), family

    def test_receptacle_box_is_tight_rect_of_mask(self):
        state, _ = generate_scene("sorting", seed=0)
        obs = render(state)
        for key, mask in obs.gt_masks.items():
            if not mask.any():
                continue
            rows, cols = np.nonzero(mask)
            assert obs.gt_boxes[key] == (
                int(cols.min()),
                int(rows.min()),
                int(cols.max()),
                int(rows.max()),
            ), key

    def test_high_resolution_render_works(self):
        state, _ = generate_scene("sorting", seed=0)
        obs = render(state, width=224, height=224)
        assert obs.overhead.shape == (224, 224, 3)
        assert obs.gt_masks["object:0"].sum() > 0

    def test_drawer_views_exposed(self):
        state, _ = generate_scene("pnp_close", seed=0)
        obs = render(state)
        view = obs.articulations[0]
        assert view.open_fraction == 1.0
        assert obs.gt_masks["handle:0"].any()
        hu, hv = view.handle_px
        assert obs.gt_masks["handle:0"][hv, hu]

    def test_ego_crop_enabled(self):
        state, _ = generate_scene("sorting", seed=0)
        obs = render_observation(state, CameraConfig(ego_enabled=True))
        half = round(0.15 * 64)
        assert obs.ego is not None and obs.ego.shape == (2 * half, 2 * half, 3)


class TestCentroid:
    def test_single_pixel(self):
        m = np.zeros((8, 8), dtype=bool)
        m[3, 5] = True
        assert mask_centroid(m) == (3, 5)

    def test_two_pixel_tie_rounds_half_up(self):
        m = np.zeros((8, 8), dtype=bool)
        m[2, 2] = True
        m[3, 2] = True
        assert mask_centroid(m) == (3, 2)  # mean 2.5 -> 3

    def test_empty_mask_raises(self):
        with pytest.raises(EmptyMaskError):
            mask_centroid(np.zeros((4, 4), dtype=bool))

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=50, deadline=None)
    def test_centroid_matches_mean_formula(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.random((16, 16)) < 0.2
        if not m.any():
            m[0, 0] = True
        r, c = mask_centroid(m)
        rows, cols = np.nonzero(m)
        assert r == math.floor(rows.mean() + 0.5)
        assert c == math.floor(cols.mean() + 0.5)

    def test_circle_centroid_is_its_center_pixel(self):
        obj = ObjectInstance(0, "circle", "red", 0.08, (0.5, 0.5), labels=("r",))
        obs = render(world_with(objects=[obj]))
        r, c = mask_centroid(obs.gt_masks["object:0"])
        assert (r, c) == (32, 32)


class TestPromptRaster:
    def frame(self):
        return np.full((64, 64, 3), TABLE_BG, dtype=np.uint8)

    def test_crosshair_touches_exactly_12_pixels(self):
        base = self.frame()
        out = rasterize_prompt(base, VisualPrompt(anchor=(32, 32)))
        diff = np.nonzero((out.raster != base).any(axis=2))
        assert len(diff[0]) == 12
        assert not out.clipped

    def test_crosshair_geometry(self):
        out = rasterize_prompt(self.frame(), VisualPrompt(anchor=(32, 32)))
        img = out.raster
        for d in (-4, -3, -2, 2, 3, 4):
            assert tuple(img[32, 32 + d]) == PROMPT_COLOR
            assert tuple(img[32 + d, 32]) == PROMPT_COLOR
        for d in (-1, 0, 1):
            assert tuple(img[32, 32 + d]) == TABLE_BG
            assert tuple(img[32 + d, 32]) == TABLE_BG

    def test_point_style_is_3x3_square(self):
        base = self.frame()
        out = rasterize_prompt(base, VisualPrompt(anchor=(10, 20), style="point"))
        diff = (out.raster != base).any(axis=2)
        assert diff.sum() == 9
        assert diff[19:22, 9:12].all()

    def test_box_outline_only_perimeter(self):
        base = self.frame()
        box = (8, 12, 20, 30)
        out = rasterize_prompt(base, VisualPrompt(box=box))
        diff = (out.raster != base).any(axis=2)
        u1, v1, u2, v2 = box
        perimeter = 2 * (u2 - u1 + 1) + 2 * (v2 - v1 + 1) - 4
        assert diff.sum() == perimeter
        assert not diff[v1 + 1 : v2, u1 + 1 : u2].any()  # interior untouched

    def test_both_fields_rendered_when_requested(self):
        out = rasterize_prompt(
            self.frame(), VisualPrompt(anchor=(32, 32), box=(5, 5, 15, 15), render_both=True)
        )
        diff = (out.raster != self.frame()).any(axis=2)
        assert diff[32, 28] and diff[5, 5]

    def test_prompt_without_fields_rejected(self):
        with pytest.raises(PromptError):
            rasterize_prompt(self.frame(), VisualPrompt())

    def test_out_of_bounds_anchor_rejected(self):
        with pytest.raises(PromptError):
            rasterize_prompt(self.frame(), VisualPrompt(anchor=(64, 10)))

    def test_degenerate_box_rejected(self):
        with pytest.raises(PromptError):
            rasterize_prompt(self.frame(), VisualPrompt(box=(10, 10, 10, 20)))

    def test_clipped_arms_flagged(self):
        out = rasterize_prompt(self.frame(), VisualPrompt(anchor=(1, 32)))
        assert out.clipped

    def test_rasterize_is_pure_and_idempotent(self):
        base = self.frame()
        keep = base.copy()
        p = VisualPrompt(anchor=(32, 32))
        a = rasterize_prompt(base, p)
        b = rasterize_prompt(base, p)
        assert np.array_equal(base, keep)
        assert np.array_equal(a.raster, b.raster)

    @given(st.integers(min_value=0, max_value=5000))
    @settings(max_examples=50, deadline=None)
    def test_overlay_touches_only_glyph_pixels(self, seed):
        rng = np.random.default_rng(seed)
        base = rng.integers(0, 255, size=(64, 64, 3), dtype=np.uint8)
        u = int(rng.integers(5, 59))
        v = int(rng.integers(5, 59))
        out = rasterize_prompt(base, VisualPrompt(anchor=(u, v)))
        diff = (out.raster != base).any(axis=2)
        expect = np.zeros((64, 64), dtype=bool)
        for d in (-4, -3, -2, 2, 3, 4):
            expect[v, u + d] = True
            expect[v + d, u] = True
        # glyph pixels may coincide with source pixels already that color
        assert not (diff & ~expect).any()
        assert (out.raster[expect] == PROMPT_COLOR).all()

    def test_prompt_color_not_in_palette(self):
        assert PROMPT_COLOR not in COLOR_RGB.values()
        assert PROMPT_COLOR != TABLE_BG


class TestRasterIO:
    def test_dump_and_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        raster = rng.integers(0, 255, size=(48, 32, 3), dtype=np.uint8)
        path = tmp_path / "frame.rgb8"
        dump_raster(path, raster)
        assert np.array_equal(load_raster(path), raster)

    def test_sidecar_names_dimensions(self, tmp_path):
        import json

        raster = np.zeros((8, 16, 3), dtype=np.uint8)
        dump_raster(tmp_path / "f.rgb8", raster)
        hdr = json.loads((tmp_path / "f.rgb8.hdr.json").read_text())
        assert hdr == {"width": 16, "height": 8, "channels": 3}

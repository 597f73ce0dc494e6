"""Bin codec and grounding loss.

The codec oracles below recompute the quantization maps independently with
exact rational arithmetic; the implementation must agree on every coordinate
for every raster extent we use.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visteer.grounding import (
    N_BINS,
    GroundingTarget,
    box_target,
    decode_coord,
    encode_coord,
    grounding_ce_loss,
    point_target,
    target_from_json,
    target_to_json,
)


def oracle_encode(p: int, extent: int, n: int) -> int:
    b = math.floor(Fraction(2 * p + 1, 2 * extent) * n)
    return min(n - 1, max(0, b))


def oracle_decode(b: int, extent: int, n: int) -> int:
    y = Fraction(2 * b + 1, 2 * n) * extent - Fraction(1, 2)
    p = math.floor(y + Fraction(1, 2))  # round half up
    return min(extent - 1, max(0, p))


@pytest.mark.parametrize("extent", [64, 224, 1000])
def test_encode_matches_oracle_exhaustively(extent):
    for p in range(extent):
        assert encode_coord(p, extent) == oracle_encode(p, extent, N_BINS)


@pytest.mark.parametrize("extent", [64, 224, 1000])
def test_decode_matches_oracle_exhaustively(extent):
    for b in range(N_BINS):
        assert decode_coord(b, extent) == oracle_decode(b, extent, N_BINS)


@pytest.mark.parametrize("extent", [64, 224, 1000])
def test_round_trip_error_within_quantization_bound(extent):
    # decode(encode(p)) moves a coordinate by at most extent/(2N) + 0.5 px
    bound = extent / (2 * N_BINS) + 0.5
    for p in range(extent):
        back = decode_coord(encode_coord(p, extent), extent)
        assert abs(back - p) <= bound


def test_encode_examples():
    assert encode_coord(0, 64) == oracle_encode(0, 64, N_BINS)
    assert encode_coord(63, 64) == 992
    assert encode_coord(0, 1000) == 0
    assert encode_coord(999, 1000) == 999


@given(
    st.integers(min_value=2, max_value=512),
    st.data(),
)
@settings(max_examples=60, deadline=None)
def test_encode_monotone(extent, data):
    p1 = data.draw(st.integers(min_value=0, max_value=extent - 1))
    p2 = data.draw(st.integers(min_value=0, max_value=extent - 1))
    if p1 > p2:
        p1, p2 = p2, p1
    assert encode_coord(p1, extent) <= encode_coord(p2, extent)


def test_box_bins_stay_ordered():
    # monotone encoding keeps box corners ordered after quantization
    t = box_target((3, 5, 40, 50), 64, 64)
    assert t.bins[0] <= t.bins[2] and t.bins[1] <= t.bins[3]


def test_target_json_canonical_forms():
    t = point_target((12, 40), 1000, 1000)
    assert target_to_json(t) == '{"point":[12,40]}'
    b = GroundingTarget("box", (1, 2, 3, 4))
    assert target_to_json(b) == '{"box":[1,2,3,4]}'


def test_target_json_round_trip_fuzz():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        if rng.random() < 0.5:
            t = GroundingTarget("point", tuple(int(x) for x in rng.integers(0, N_BINS, 2)))
        else:
            t = GroundingTarget("box", tuple(int(x) for x in rng.integers(0, N_BINS, 4)))
        assert target_from_json(target_to_json(t)) == t


@pytest.mark.parametrize(
    "text",
    [
        "not json",
        "[1,2]",
        '{"point":[1,2],"box":[1,2,3,4]}',
        '{"blob":[1,2]}',
        '{"point":[1]}',
        '{"point":[1,2,3]}',
        '{"box":[1,2,3]}',
        '{"point":[1,1000]}',
        '{"point":[-1,2]}',
        '{"point":[1.5,2]}',
        '{"point":[true,2]}',
    ],
)
def test_target_json_rejects_malformed(text):
    with pytest.raises(ValueError):
        target_from_json(text)


@pytest.mark.parametrize("n", [10, 32, N_BINS])
def test_ce_uniform_logits_is_log_n(n):
    logits = np.zeros((2, n))
    loss, _ = grounding_ce_loss(logits, (3 % n, (n * 7 // 10) % n))
    assert loss == pytest.approx(math.log(n), rel=1e-9)
    assert loss >= 0.0


def test_ce_one_hot_logits_near_zero():
    logits = np.zeros((2, 50))
    logits[0, 7] = 100.0
    logits[1, 9] = 100.0
    loss, _ = grounding_ce_loss(logits, (7, 9))
    assert loss < 1e-6


def test_ce_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(4, 32)).astype(np.float64)
    bins = (5, 0, 31, 17)
    _, grad = grounding_ce_loss(logits, bins)
    eps = 1e-6
    for _ in range(40):
        i = int(rng.integers(0, 4))
        j = int(rng.integers(0, 32))
        up = logits.copy()
        up[i, j] += eps
        down = logits.copy()
        down[i, j] -= eps
        lu, _ = grounding_ce_loss(up, bins)
        ld, _ = grounding_ce_loss(down, bins)
        fd = (lu - ld) / (2 * eps)
        assert grad[i, j] == pytest.approx(fd, abs=1e-6)


def test_ce_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(11)
    logits = rng.normal(size=(2, 16))
    _, grad = grounding_ce_loss(logits, (3, 4))
    assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-12)


def test_ce_shape_validation():
    with pytest.raises(ValueError):
        grounding_ce_loss(np.zeros((2, 8)), (1, 2, 3))
    with pytest.raises(ValueError):
        grounding_ce_loss(np.zeros(8), (1,))
    with pytest.raises(ValueError):
        grounding_ce_loss(np.zeros((1, 8)), (9,))


def test_target_arity_enforced():
    with pytest.raises(ValueError):
        GroundingTarget("point", (1, 2, 3))
    with pytest.raises(ValueError):
        GroundingTarget("box", (1, 2))
    with pytest.raises(ValueError):
        GroundingTarget("blob", (1, 2))


def test_json_is_parseable_standard_json():
    t = point_target((5, 6), 64, 64)
    payload = json.loads(target_to_json(t))
    assert payload == {"point": [encode_coord(5, 64), encode_coord(6, 64)]}

"""Shared fixtures: small pre-generated demo datasets reused across modules."""

from __future__ import annotations

import pytest

from visteer.data import generate_dataset


@pytest.fixture(scope="session")
def demo_dataset_dir(tmp_path_factory):
    """A mixed-family demo set, small enough to regenerate in under a second."""
    path = tmp_path_factory.mktemp("demos-mixed")
    generate_dataset(
        path,
        counts={"attribute_pick": 6, "sorting": 4, "grid_place": 6, "pnp_close": 3},
        seed=11,
    )
    return path


@pytest.fixture(scope="session")
def attr_dataset_dir(tmp_path_factory):
    """Attribute-pick demos only; used by training tests."""
    path = tmp_path_factory.mktemp("demos-attr")
    generate_dataset(path, counts={"attribute_pick": 12}, seed=23)
    return path

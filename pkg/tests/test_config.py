#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Tests for configuration module."""

import importlib
from collections.abc import Generator

import pytest

import spanflow.config

ENV_VARS = [
    "GAP_FACTOR",
    "LINE_TOL",
    "EMBED_DIM",
    "HEADS",
    "LAYERS",
    "ORDER",
    "ATTENTION_MODE",
    "NEIGHBORHOOD_RULE",
    "MIN_COUNT",
    "HASH_BUCKETS",
    "MARGIN",
    "LEARNING_RATE",
    "BETA1",
    "BETA2",
    "EPSILON",
    "EPOCHS",
    "FOLDS",
    "SEED",
    "EVAL_K",
    "LOG_LEVEL",
    "REDIS_URL",
    "JOB_TIMEOUT_SECONDS",
    "POLL_INTERVAL_SECONDS",
]


@pytest.fixture
def clean_env(monkeypatch: pytest.MonkeyPatch) -> Generator[None, None, None]:
    """Clear every SPANFLOW_ variable and restore the module afterwards."""
    for var in ENV_VARS:
        monkeypatch.delenv(f"SPANFLOW_{var}", raising=False)
    yield
    monkeypatch.undo()
    importlib.reload(spanflow.config)


@pytest.mark.parametrize(
    ("env_var", "expected_value"),
    [
        pytest.param("GAP_FACTOR", 3.0, id="UT-CFG-001"),
        pytest.param("LINE_TOL", None, id="UT-CFG-002"),
        pytest.param("EMBED_DIM", 360, id="UT-CFG-003"),
        pytest.param("HEADS", 4, id="UT-CFG-004"),
        pytest.param("LAYERS", 8, id="UT-CFG-005"),
        pytest.param("ORDER", 8, id="UT-CFG-006"),
        pytest.param("ATTENTION_MODE", "softmax", id="UT-CFG-007"),
        pytest.param("NEIGHBORHOOD_RULE", "and", id="UT-CFG-008"),
        pytest.param("MARGIN", 1.0, id="UT-CFG-009"),
        pytest.param("LEARNING_RATE", 1e-4, id="UT-CFG-010"),
        pytest.param("BETA1", 0.9, id="UT-CFG-011"),
        pytest.param("BETA2", 0.999, id="UT-CFG-012"),
        pytest.param("EPSILON", 1e-8, id="UT-CFG-013"),
        pytest.param("EPOCHS", 400, id="UT-CFG-014"),
        pytest.param("FOLDS", 5, id="UT-CFG-015"),
        pytest.param("SEED", 0, id="UT-CFG-016"),
        pytest.param("HASH_BUCKETS", 1024, id="UT-CFG-017"),
        pytest.param("EVAL_K", "1,3,5,10", id="UT-CFG-018"),
        pytest.param("REDIS_URL", "", id="UT-CFG-019"),
        pytest.param("POLL_INTERVAL_SECONDS", 2, id="UT-CFG-020"),
    ],
)
def test_config_defaults(
    clean_env: None,
    env_var: str,
    expected_value: object,
) -> None:
    """Test that Config class has correct default values.

    Args:
        clean_env: Cleared environment
        env_var: Config attribute name
        expected_value: Expected default value
    """
    importlib.reload(spanflow.config)

    assert getattr(spanflow.config.Config, env_var) == expected_value


@pytest.mark.parametrize(
    ("env_var", "value", "expected"),
    [
        pytest.param("EMBED_DIM", "64", 64, id="UT-CFG-021"),
        pytest.param("ORDER", "5", 5, id="UT-CFG-022"),
        pytest.param("LAYERS", "0", 0, id="UT-CFG-023"),
        pytest.param("LINE_TOL", "2.5", 2.5, id="UT-CFG-024"),
        pytest.param("ATTENTION_MODE", "LITERAL_EQ2", "literal_eq2", id="UT-CFG-025"),
        pytest.param("LEARNING_RATE", "0", 0.0, id="UT-CFG-026"),
    ],
)
def test_config_env_override(
    monkeypatch: pytest.MonkeyPatch,
    clean_env: None,
    env_var: str,
    value: str,
    expected: object,
) -> None:
    """SPANFLOW_ variables override the built-in defaults."""
    monkeypatch.setenv(f"SPANFLOW_{env_var}", value)
    importlib.reload(spanflow.config)

    assert getattr(spanflow.config.Config, env_var) == expected


@pytest.mark.parametrize(
    ("env_var", "value", "message"),
    [
        pytest.param("EMBED_DIM", "0", "must be >= 1", id="UT-CFG-027"),
        pytest.param("FOLDS", "1", "must be >= 2", id="UT-CFG-028"),
        pytest.param("MARGIN", "0", "must be > 0", id="UT-CFG-029"),
        pytest.param("LINE_TOL", "-1", "must be > 0", id="UT-CFG-030"),
        pytest.param("NEIGHBORHOOD_RULE", "xor", "must be one of", id="UT-CFG-031"),
    ],
)
def test_config_rejects_out_of_range(
    monkeypatch: pytest.MonkeyPatch,
    clean_env: None,
    env_var: str,
    value: str,
    message: str,
) -> None:
    """Out-of-range values fail at import time with the variable name."""
    monkeypatch.setenv(f"SPANFLOW_{env_var}", value)

    with pytest.raises(ValueError, match=message) as exc_info:
        importlib.reload(spanflow.config)

    assert f"SPANFLOW_{env_var}" in str(exc_info.value)


def test_config_rejects_non_integer(
    monkeypatch: pytest.MonkeyPatch,
    clean_env: None,
) -> None:
    """Non-numeric integers raise ValueError (UT-CFG-032)."""
    monkeypatch.setenv("SPANFLOW_EPOCHS", "many")

    with pytest.raises(ValueError, match="invalid literal"):
        importlib.reload(spanflow.config)


def test_unprefixed_variables_are_ignored(
    monkeypatch: pytest.MonkeyPatch,
    clean_env: None,
) -> None:
    """Only SPANFLOW_-prefixed variables are read (UT-CFG-033)."""
    monkeypatch.setenv("EMBED_DIM", "64")
    importlib.reload(spanflow.config)

    assert spanflow.config.Config.EMBED_DIM == 360

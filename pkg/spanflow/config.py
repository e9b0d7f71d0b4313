#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Application configuration."""

import os

ENV_PREFIX = "SPANFLOW_"


def _env_name(name: str) -> str:
    return f"{ENV_PREFIX}{name}"


def _get_positive_int_from_env(env_var: str, default: int, min_value: int = 1) -> int:
    """Get a positive integer from environment variable.

    Args:
        env_var: Environment variable name (without prefix)
        default: Default value if not set
        min_value: Minimum allowed value (default: 1)

    Returns:
        int: Validated integer value

    Raises:
        ValueError: If value is not a valid integer >= min_value
    """
    name = _env_name(env_var)
    raw_value = os.environ.get(name, str(default))
    value = int(raw_value)  # Raises ValueError for non-integer
    if value < min_value:
        raise ValueError(f"{name} must be >= {min_value}, got {value}")
    return value


def _get_positive_float_from_env(
    env_var: str,
    default: float,
    min_value: float = 0.0,
    *,
    strict: bool = True,
) -> float:
    """Get a non-negative float from environment variable.

    Args:
        env_var: Environment variable name (without prefix)
        default: Default value if not set
        min_value: Lower bound
        strict: Whether the bound itself is excluded

    Returns:
        float: Validated float value

    Raises:
        ValueError: If value is not a float or violates the bound
    """
    name = _env_name(env_var)
    value = float(os.environ.get(name, repr(default)))
    if value < min_value or (strict and value == min_value):
        op = ">" if strict else ">="
        raise ValueError(f"{name} must be {op} {min_value}, got {value}")
    return value


def _get_choice_from_env(env_var: str, default: str, choices: tuple[str, ...]) -> str:
    name = _env_name(env_var)
    value = os.environ.get(name, default).strip().lower()
    if value not in choices:
        raise ValueError(f"{name} must be one of {', '.join(choices)}, got {value!r}")
    return value


def _get_bool_from_env(env_var: str, default: bool) -> bool:
    name = _env_name(env_var)
    value = os.environ.get(name, "1" if default else "0").strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{name} must be a boolean, got {value!r}")


def _get_optional_float_from_env(env_var: str) -> float | None:
    raw_value = os.environ.get(_env_name(env_var), "").strip()
    if not raw_value:
        return None
    value = float(raw_value)
    if value <= 0:
        raise ValueError(f"{_env_name(env_var)} must be > 0, got {value}")
    return value


class Config:
    """Built-in defaults, overridable through ``SPANFLOW_*`` variables."""

    # layout
    GAP_FACTOR = _get_positive_float_from_env("GAP_FACTOR", 3.0)
    LINE_TOL = _get_optional_float_from_env("LINE_TOL")

    # model
    EMBED_DIM = _get_positive_int_from_env("EMBED_DIM", 360)
    HEADS = _get_positive_int_from_env("HEADS", 4)
    LAYERS = _get_positive_int_from_env("LAYERS", 8, min_value=0)
    ORDER = _get_positive_int_from_env("ORDER", 8)
    ATTENTION_MODE = _get_choice_from_env(
        "ATTENTION_MODE",
        "softmax",
        ("softmax", "literal_eq2"),
    )
    NEIGHBORHOOD_RULE = _get_choice_from_env("NEIGHBORHOOD_RULE", "and", ("and", "or"))
    POSITION_KEYS = _get_bool_from_env("POSITION_KEYS", False)

    # featurizer
    MIN_COUNT = _get_positive_int_from_env("MIN_COUNT", 1)
    HASH_BUCKETS = _get_positive_int_from_env("HASH_BUCKETS", 1024)

    # training
    MARGIN = _get_positive_float_from_env("MARGIN", 1.0)
    LEARNING_RATE = _get_positive_float_from_env("LEARNING_RATE", 1e-4, strict=False)
    BETA1 = _get_positive_float_from_env("BETA1", 0.9, strict=False)
    BETA2 = _get_positive_float_from_env("BETA2", 0.999, strict=False)
    EPSILON = _get_positive_float_from_env("EPSILON", 1e-8)
    EPOCHS = _get_positive_int_from_env("EPOCHS", 400)
    FOLDS = _get_positive_int_from_env("FOLDS", 5, min_value=2)
    SEED = _get_positive_int_from_env("SEED", 0, min_value=0)

    # evaluation
    EVAL_K = os.environ.get(_env_name("EVAL_K"), "1,3,5,10")

    # runtime
    LOG_LEVEL = os.environ.get(_env_name("LOG_LEVEL"), "INFO").upper()
    REDIS_URL = os.environ.get(_env_name("REDIS_URL"), "")
    JOB_TIMEOUT_SECONDS = _get_positive_int_from_env("JOB_TIMEOUT_SECONDS", 86400)
    POLL_INTERVAL_SECONDS = _get_positive_int_from_env("POLL_INTERVAL_SECONDS", 2)

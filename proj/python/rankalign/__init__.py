"""Python access to the rankalign core."""

from ._core import (
    ConfigError,
    dcg_at_n,
    default_config,
    exp_decay_return,
    generate_world,
    kl_penalty,
    normalize_config,
    rank_advantages,
    returns,
    run,
    seq_advantages,
)

__all__ = [
    "ConfigError",
    "dcg_at_n",
    "default_config",
    "exp_decay_return",
    "generate_world",
    "kl_penalty",
    "normalize_config",
    "rank_advantages",
    "returns",
    "run",
    "seq_advantages",
]

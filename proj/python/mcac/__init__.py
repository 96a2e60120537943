"""Python bindings for the mcac library."""

from ._core import (
    METRICS_HEADER,
    ConfigError,
    NavEnv,
    NumericError,
    ShapeError,
    UsageError,
    ValidationError,
    critic_tail_mc_target,
    dump_qs,
    generate_demos,
    gqe_target,
    lambda_mix_target,
    mc_inf_returns,
    mcac_combine,
    td1_target,
    train,
)

__all__ = [
    "METRICS_HEADER",
    "ConfigError",
    "NavEnv",
    "NumericError",
    "ShapeError",
    "UsageError",
    "ValidationError",
    "critic_tail_mc_target",
    "dump_qs",
    "generate_demos",
    "gqe_target",
    "lambda_mix_target",
    "mc_inf_returns",
    "mcac_combine",
    "td1_target",
    "train",
]

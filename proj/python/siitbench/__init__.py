# Copyright 2026 The siitbench Authors
# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the siit benchmark library."""

from ._core import (
    FORMAT_VERSION,
    ConfigError,
    DivergenceError,
    DomainError,
    Error,
    IntegrityError,
    MigrationError,
    Model,
    NodeError,
    ShapeError,
    int_inv,
    mann_whitney_u,
    pair_statistic,
    parse_sweep,
    roc_auc,
    run_cli,
    run_high_level,
    sample_inputs,
    task_info,
    task_names,
    vargha_delaney_a12,
)

__all__ = [
    "FORMAT_VERSION",
    "ConfigError",
    "DivergenceError",
    "DomainError",
    "Error",
    "IntegrityError",
    "MigrationError",
    "Model",
    "NodeError",
    "ShapeError",
    "int_inv",
    "mann_whitney_u",
    "pair_statistic",
    "parse_sweep",
    "roc_auc",
    "run_cli",
    "run_high_level",
    "sample_inputs",
    "task_info",
    "task_names",
    "vargha_delaney_a12",
]

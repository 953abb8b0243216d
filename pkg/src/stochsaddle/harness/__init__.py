"""Experiment configs, multi-seed runs, rate fits and figure presets."""

from .config import ConfigError, ExperimentConfig, config_sha, parse_seeds
from .experiment import (
    AggregateReport,
    ExperimentResult,
    RateError,
    RateFit,
    RunRecord,
    aggregate,
    emit_csv,
    fit_rate,
    run_experiment,
)
from .replicate import FIGURES, ReplicationReport, presets, replicate

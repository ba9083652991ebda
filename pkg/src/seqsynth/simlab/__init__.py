"""Simulation studies for the variance estimators."""

from .report import ArmSummary, SimReport, paired_variance_difference, summarize_arm, write_report, write_table
from .srs import SrsSimConfig, run_srs_simulation
from .standin import (RatioStudyConfig, RatioStudyResult, interaction_shrinkage, make_standin, run_ratio_study,
                      standin_plan)
from .stratified import StratSimConfig, config, run_stratified_simulation, srs_variance, stratified_mean

__all__ = [
    "ArmSummary", "SimReport", "paired_variance_difference", "summarize_arm", "write_report", "write_table",
    "SrsSimConfig", "run_srs_simulation", "RatioStudyConfig", "RatioStudyResult", "interaction_shrinkage",
    "make_standin", "run_ratio_study", "standin_plan", "StratSimConfig", "config", "run_stratified_simulation",
    "srs_variance", "stratified_mean",
]

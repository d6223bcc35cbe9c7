"""Experiment harness: hitting benchmark, system identification, filter evaluation, self-play."""
from .scenarios import KINDS, run_filter_eval, run_hit_bench, run_selfplay, run_sysid

__all__ = ["KINDS", "run_filter_eval", "run_hit_bench", "run_selfplay", "run_sysid"]

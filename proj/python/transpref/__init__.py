"""Metric-induced translation preference toolkit."""

import json as _json

from ._core import (
    Error,
    _build_preferences,
    chrf,
    cpo_loss,
    cpo_pref_loss,
    dpo_loss,
    kendall_tau_b,
    pairwise_accuracy,
    pearson,
    render_report,
    run_pipeline,
    spearman,
    train_fixture,
    wilcoxon_rank_sum,
)


def build_preferences(rows, orientation="higher_better", min_margin=0.0):
    """Best-vs-worst triples from rows of {source_id, system_id, text, score}.

    Returns (triples, report) as plain dicts.
    """
    out = _json.loads(_build_preferences(_json.dumps(list(rows)), orientation, float(min_margin)))
    return out["triples"], out["report"]

__all__ = [
    "Error",
    "build_preferences",
    "chrf",
    "cpo_loss",
    "cpo_pref_loss",
    "dpo_loss",
    "kendall_tau_b",
    "pairwise_accuracy",
    "pearson",
    "render_report",
    "run_pipeline",
    "spearman",
    "train_fixture",
    "wilcoxon_rank_sum",
]

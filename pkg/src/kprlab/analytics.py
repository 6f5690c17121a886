"""Behavioural analytics over traces.

Everything here consumes the same trace format the simulator emits and the
session replayer reconstructs, so live experiments and simulations are
analysed by literally the same code: switch rates conditioned on the
previous round's outcome, a threshold classifier that sorts agents into
stable / intermediate / noise-trader bands, and a Welch two-sample
comparison of mean utilization between two treatment arms.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import stats as scipy_stats

from .errors import ConfigError, DataError
from .simulate import Trace, default_burn_in, utilization_stats

_Z95 = 1.959963984540054  # two-sided 95% normal quantile


@dataclass(frozen=True)
class SwitchCounts:
    """Lag-1 transition tallies pooled over agents and rounds."""

    win_stay: int
    win_switch: int
    loss_stay: int
    loss_switch: int


@dataclass(frozen=True)
class SwitchStats:
    """Outcome-conditioned switching behaviour of one trace."""

    per_agent_switch_rate: tuple[float, ...]
    p_switch_given_win: float
    p_switch_given_loss: float
    counts: SwitchCounts
    ci95_win: float
    ci95_loss: float

    def to_json_dict(self) -> dict:
        return {
            "per_agent_switch_rate": list(self.per_agent_switch_rate),
            "p_switch_given_win": _nan_to_none(self.p_switch_given_win),
            "p_switch_given_loss": _nan_to_none(self.p_switch_given_loss),
            "counts": {
                "win_stay": self.counts.win_stay,
                "win_switch": self.counts.win_switch,
                "loss_stay": self.counts.loss_stay,
                "loss_switch": self.counts.loss_switch,
            },
            "ci95_win": _nan_to_none(self.ci95_win),
            "ci95_loss": _nan_to_none(self.ci95_loss),
        }


def _nan_to_none(value: float):
    return None if math.isnan(value) else value


def _rate_and_ci(switches: int, total: int) -> tuple[float, float]:
    if total == 0:
        return float("nan"), float("nan")
    p = switches / total
    return p, _Z95 * math.sqrt(p * (1.0 - p) / total)


def switch_statistics(trace: Trace) -> SwitchStats:
    """Per-agent switch rates plus switch probabilities conditioned on
    having won or lost the previous round, with binomial 95% intervals."""
    if trace.horizon_played < 2:
        raise DataError("need at least two rounds to measure switching")
    choices = trace.choices_array()
    won = trace.payoffs_array() > 0
    switched = choices[1:] != choices[:-1]
    previous_won = won[:-1]
    win_switch = int(switched[previous_won].sum())
    win_total = int(previous_won.sum())
    loss_switch = int(switched[~previous_won].sum())
    loss_total = int((~previous_won).sum())
    p_win, ci_win = _rate_and_ci(win_switch, win_total)
    p_loss, ci_loss = _rate_and_ci(loss_switch, loss_total)
    return SwitchStats(
        per_agent_switch_rate=tuple(switched.mean(axis=0).tolist()),
        p_switch_given_win=p_win,
        p_switch_given_loss=p_loss,
        counts=SwitchCounts(
            win_stay=win_total - win_switch,
            win_switch=win_switch,
            loss_stay=loss_total - loss_switch,
            loss_switch=loss_switch,
        ),
        ci95_win=ci_win,
        ci95_loss=ci_loss,
    )


class BehaviorBand(str, Enum):
    STABLE = "STABLE"
    INTERMEDIATE = "INTERMEDIATE"
    NOISE_TRADER = "NOISE_TRADER"


@dataclass(frozen=True)
class ClassifierThresholds:
    """Band edges on observed switch rate: at most `stable` is stable, at
    least `noise` is a noise trader, in between is intermediate."""

    stable: float = 0.02
    noise: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.stable < self.noise <= 1.0:
            raise ConfigError("thresholds must satisfy 0 <= stable < noise <= 1")


@dataclass(frozen=True)
class BehaviorLabel:
    agent: int
    band: BehaviorBand
    switch_rate: float

    def to_json_dict(self) -> dict:
        return {
            "agent": self.agent,
            "band": self.band.value,
            "switch_rate": self.switch_rate,
        }


MIN_CLASSIFIER_ROUNDS = 20


def classify_behavior(
    trace: Trace, thresholds: ClassifierThresholds | None = None
) -> list[BehaviorLabel]:
    """Sort every agent into a switching band from its observed rate.

    Refuses traces shorter than 20 rounds: band membership on fewer
    transitions is noise, not measurement.
    """
    if trace.horizon_played < MIN_CLASSIFIER_ROUNDS:
        raise DataError(
            f"classification needs at least {MIN_CLASSIFIER_ROUNDS} rounds, "
            f"got {trace.horizon_played}"
        )
    thresholds = thresholds or ClassifierThresholds()
    stats = switch_statistics(trace)
    labels = []
    for agent, rate in enumerate(stats.per_agent_switch_rate):
        if rate <= thresholds.stable:
            band = BehaviorBand.STABLE
        elif rate >= thresholds.noise:
            band = BehaviorBand.NOISE_TRADER
        else:
            band = BehaviorBand.INTERMEDIATE
        labels.append(BehaviorLabel(agent, band, rate))
    return labels


@dataclass(frozen=True)
class TreatmentComparison:
    """Welch two-sample comparison of mean post-burn-in utilization."""

    n_a: int
    n_b: int
    mean_a: float
    mean_b: float
    std_a: float
    std_b: float
    difference: float
    t_statistic: float
    dof: float
    ci95_low: float
    ci95_high: float

    def to_json_dict(self) -> dict:
        return {
            "n_a": self.n_a,
            "n_b": self.n_b,
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "std_a": self.std_a,
            "std_b": self.std_b,
            "difference": self.difference,
            "t_statistic": self.t_statistic,
            "dof": self.dof,
            "ci95_low": self.ci95_low,
            "ci95_high": self.ci95_high,
        }


def _arm_means(traces: Sequence[Trace], burn_in: int | None) -> np.ndarray:
    if len(traces) < 2:
        raise DataError("each treatment arm needs at least two traces")
    return np.array(
        [utilization_stats(trace, burn_in)[0] for trace in traces], dtype=np.float64
    )


def compare_treatments(
    traces_a: Sequence[Trace],
    traces_b: Sequence[Trace],
    burn_in: int | None = None,
) -> TreatmentComparison:
    """Compare two arms of replicated runs by mean utilization.

    Each trace contributes one observation (its post-burn-in mean);
    arms are compared with Welch's t and a 95% interval for the
    difference a minus b.
    """
    a = _arm_means(traces_a, burn_in)
    b = _arm_means(traces_b, burn_in)
    mean_a, mean_b = float(a.mean()), float(b.mean())
    var_a, var_b = float(a.var(ddof=1)), float(b.var(ddof=1))
    n_a, n_b = len(a), len(b)
    difference = mean_a - mean_b
    se_sq = var_a / n_a + var_b / n_b
    if se_sq == 0.0:
        # Degenerate arms with zero spread: identical means give a zero
        # difference and a point interval, anything else is infinitely far.
        t_stat = 0.0 if difference == 0.0 else math.copysign(math.inf, difference)
        return TreatmentComparison(
            n_a=n_a,
            n_b=n_b,
            mean_a=mean_a,
            mean_b=mean_b,
            std_a=0.0,
            std_b=0.0,
            difference=difference,
            t_statistic=t_stat,
            dof=float(n_a + n_b - 2),
            ci95_low=difference,
            ci95_high=difference,
        )
    se = math.sqrt(se_sq)
    dof = se_sq**2 / (
        (var_a / n_a) ** 2 / (n_a - 1) + (var_b / n_b) ** 2 / (n_b - 1)
    )
    t_crit = float(scipy_stats.t.ppf(0.975, dof))
    return TreatmentComparison(
        n_a=n_a,
        n_b=n_b,
        mean_a=mean_a,
        mean_b=mean_b,
        std_a=math.sqrt(var_a),
        std_b=math.sqrt(var_b),
        difference=difference,
        t_statistic=difference / se,
        dof=float(dof),
        ci95_low=difference - t_crit * se,
        ci95_high=difference + t_crit * se,
    )


def utilization_series_csv(trace: Trace) -> str:
    """Plot-ready CSV of utilization per round."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["round", "utilization"])
    for t, value in enumerate(trace.per_round_utilization):
        writer.writerow([t, repr(float(value))])
    return out.getvalue()


def switch_rate_bars_json(trace: Trace) -> str:
    """Plot-ready JSON for the win/loss conditional switch-rate bars."""
    stats = switch_statistics(trace)
    payload = {
        "bars": [
            {
                "condition": "after_win",
                "rate": _nan_to_none(stats.p_switch_given_win),
                "ci95": _nan_to_none(stats.ci95_win),
            },
            {
                "condition": "after_loss",
                "rate": _nan_to_none(stats.p_switch_given_loss),
                "ci95": _nan_to_none(stats.ci95_loss),
            },
        ]
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


__all__ = [
    "BehaviorBand",
    "BehaviorLabel",
    "ClassifierThresholds",
    "MIN_CLASSIFIER_ROUNDS",
    "SwitchCounts",
    "SwitchStats",
    "TreatmentComparison",
    "classify_behavior",
    "compare_treatments",
    "switch_rate_bars_json",
    "switch_statistics",
    "utilization_series_csv",
]

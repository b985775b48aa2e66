"""Decision-support outputs: smoothed incidence rates, weekly-rate / R_t
risk levels against the official threshold sets, and the correlation
structure of the spatial patterns attached to each spline basis function.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .rt import smoothed_rt

__all__ = [
    "RiskCuts",
    "classify_risk",
    "smoothed_rate",
    "weekly_rate",
    "risk_table",
    "pattern_correlation",
    "summarize_draws",
]

DEFAULT_RATE_CUTS = (10.0, 25.0, 75.0, 125.0)
DEFAULT_RT_CUTS = (1.0, 1.1, 1.5, 2.0)


@dataclass(frozen=True)
class RiskCuts:
    """Ascending thresholds for weekly rates per 100k and for R_t."""

    rate_cuts: tuple = DEFAULT_RATE_CUTS
    rt_cuts: tuple = DEFAULT_RT_CUTS

    def __post_init__(self):
        for name, cuts in (("rate_cuts", self.rate_cuts),
                           ("rt_cuts", self.rt_cuts)):
            arr = np.asarray(cuts, dtype=float)
            if arr.size == 0 or np.any(arr <= 0):
                raise ValueError(f"{name} must be positive")
            if np.any(np.diff(arr) <= 0):
                raise ValueError(f"{name} must be strictly ascending")


def _level(value, cuts):
    # values exactly on a cut belong to the higher level (closed below)
    return int(np.searchsorted(np.asarray(cuts, dtype=float), value,
                               side="right"))


def classify_risk(weekly_rate_mean, rt_mean, cuts=None):
    """(rate_level, rt_level, combined_level) against the cut sets.

    Levels count the thresholds at or below the value; combined risk is
    the maximum of the two marginal levels. The raw pair is returned too
    so any other combination rule can be applied downstream.
    """
    cuts = cuts or RiskCuts()
    rate_level = _level(weekly_rate_mean, cuts.rate_cuts)
    rt_level = _level(rt_mean, cuts.rt_cuts)
    return rate_level, rt_level, max(rate_level, rt_level)


def summarize_draws(values, axis=0):
    """(mean, lo95, hi95) pointwise summaries over the draw axis."""
    return (
        values.mean(axis=axis),
        np.percentile(values, 2.5, axis=axis),
        np.percentile(values, 97.5, axis=axis),
    )


def smoothed_rate(draws, basis, area=None, day=None, chunk=64):
    """Per-draw smoothed daily rate per 100 000, from the spline trend only.

    The population offset cancels by construction, so the rate is
    100000 * exp((beta X)_i,day) regardless of P_i. ``day`` is 1-based;
    omitted axes stay in the output: (draws, I, J), (draws, J) for a fixed
    area, (draws, I) for a fixed day, or (draws,) for both.
    """
    C, N, I = draws.n_chains, draws.n_kept, draws.I
    D = C * N
    mu = draws.mu.reshape(D, -1)
    beta = draws.beta_star.reshape(D, I, -1)
    if day is not None:
        if not 1 <= day <= basis.J:
            raise ValueError(f"day {day} outside 1..{basis.J}")
        x_col = basis.X[:, day - 1]
        coef = mu[:, None, :] + beta
        rates = 1e5 * np.exp(np.einsum("dik,k->di", coef, x_col))
        return rates[:, area] if area is not None else rates
    out = np.empty((D, I, basis.J))
    for s in range(0, D, chunk):
        e = min(s + chunk, D)
        trend = np.einsum("dik,kj->dij", mu[s:e, None, :] + beta[s:e],
                          basis.X)
        out[s:e] = 1e5 * np.exp(trend)
    return out[:, area, :] if area is not None else out


def weekly_rate(draws, basis, area=None, reference_day=None):
    """Per-draw weekly rate: 7x the daily rate at the reference day.

    The reference day defaults to the latest study day; earlier days
    reproduce the table for past dates.
    """
    reference_day = basis.J if reference_day is None else int(reference_day)
    return 7.0 * smoothed_rate(draws, basis, area=area, day=reference_day)


def risk_table(draws, basis, dataset, profile, reference_day=None,
               rate_cuts=None, rt_cuts=None):
    """Per-area risk classification at the reference day.

    Columns: area_id, weekly_rate, rt (posterior means), rate_level,
    rt_level, combined_level.
    """
    cuts = RiskCuts(
        rate_cuts=tuple(rate_cuts) if rate_cuts is not None
        else DEFAULT_RATE_CUTS,
        rt_cuts=tuple(rt_cuts) if rt_cuts is not None else DEFAULT_RT_CUTS,
    )
    reference_day = basis.J if reference_day is None else int(reference_day)
    if reference_day <= profile.S:
        raise ValueError(
            f"reference day {reference_day} has no R_t "
            f"(first reported day is {profile.S + 1})"
        )
    wk = weekly_rate(draws, basis, reference_day=reference_day).mean(axis=0)
    surface = smoothed_rt(draws, basis, profile)
    rt_mean = surface.at_day(reference_day).mean(axis=0)
    rows = []
    for i, area in enumerate(dataset.area_ids):
        rate_level, rt_level, combined = classify_risk(
            wk[i], rt_mean[i], cuts
        )
        rows.append((area, wk[i], rt_mean[i], rate_level, rt_level, combined))
    return pd.DataFrame(
        rows,
        columns=["area_id", "weekly_rate", "rt", "rate_level", "rt_level",
                 "combined_level"],
    )


def pattern_correlation(draws, basis, per_draw=False):
    """Correlation across areas between the spatial patterns of each basis.

    Returns (corr, peak_days): a K x K matrix of Pearson correlations
    between columns of beta*, plus the 1-based day where each basis
    function peaks (the natural row/column label). By default the
    correlation of the posterior-mean patterns; ``per_draw`` averages the
    per-draw correlation matrices instead.
    """
    K = draws.K
    peak_days = np.argmax(basis.X, axis=1) + 1
    # a constant-across-areas pattern has no correlation; NaN entries flag it
    with np.errstate(invalid="ignore", divide="ignore"):
        if per_draw:
            D = draws.n_total
            beta = draws.beta_star.reshape(D, draws.I, K)
            acc = np.zeros((K, K))
            for d in range(D):
                acc += np.corrcoef(beta[d].T)
            corr = acc / D
        else:
            mean_beta = draws.beta_star.reshape(-1, draws.I, K).mean(axis=0)
            corr = np.corrcoef(mean_beta.T)
    return corr, peak_days

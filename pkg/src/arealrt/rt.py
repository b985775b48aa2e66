"""Reproduction-number estimation: infectivity profile, smoothed small-area
R_t surfaces from posterior draws, population-weighted regional series, and
the windowed count-ratio baseline.

The smoothed estimator divides the spline-only intensity by its
infectivity-weighted recent history,

    R_it = exp((beta X)_it) / sum_s exp((beta X)_{i,t-s}) w_s,

so the population offset cancels and the weekly reporting cycle is
filtered out. t runs over S+1..J.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.stats import gamma as gamma_dist

__all__ = [
    "InfectivityProfile",
    "RtSurface",
    "build_infectivity",
    "smoothed_rt",
    "regional_rt",
    "cori_rt",
    "renewal_growth_rate",
]


@dataclass(frozen=True)
class InfectivityProfile:
    """Discretized serial-interval weights w_1..w_S.

    ``w`` sums to exactly 1 (normalized so a flat epidemic gives R = 1);
    ``raw_mass`` keeps the pre-normalization total as a coverage check on
    the lag cutoff S.
    """

    S: int
    w: np.ndarray
    raw_mass: float


def build_infectivity(mean, sd, S):
    """Daily infectivity weights from a shifted Gamma serial interval.

    The Gamma has shape (mean/sd)^2 and scale sd^2/mean; daily masses come
    from CDF differencing on the support shifted to start one day after
    the primary case: w_s = F(s) - F(s-1) for s = 1..S, then normalized.
    """
    if mean <= 0 or sd <= 0:
        raise ValueError("mean and sd must be positive")
    S = int(S)
    if S < 1:
        raise ValueError("S must be >= 1")
    shape = (mean / sd) ** 2
    scale = sd ** 2 / mean
    s = np.arange(0, S + 1, dtype=float)
    cdf = gamma_dist.cdf(s, a=shape, scale=scale)
    w = np.diff(cdf)
    raw_mass = float(w.sum())
    return InfectivityProfile(S=S, w=w / raw_mass, raw_mass=raw_mass)


@dataclass(frozen=True)
class RtSurface:
    """Per-draw R_it values for every area and day t = S+1..J."""

    values: np.ndarray  # (draws, I, J - S)
    first_day: int      # 1-based first reported day, == S + 1

    @property
    def n_days(self):
        return self.values.shape[2]

    @property
    def day_indices(self):
        """0-based day indices into the study period."""
        return np.arange(self.first_day - 1, self.first_day - 1 + self.n_days)

    @cached_property
    def mean(self):
        return self.values.mean(axis=0)

    @cached_property
    def lo95(self):
        return np.percentile(self.values, 2.5, axis=0)

    @cached_property
    def hi95(self):
        return np.percentile(self.values, 97.5, axis=0)

    @cached_property
    def p_gt_1(self):
        return (self.values > 1.0).mean(axis=0)

    def at_day(self, day):
        """Per-draw values at a 1-based study day -> (draws, I)."""
        t = day - self.first_day
        if not 0 <= t < self.n_days:
            raise ValueError(
                f"day {day} outside reported range "
                f"{self.first_day}..{self.first_day + self.n_days - 1}"
            )
        return self.values[:, :, t]


def rt_from_log_intensity(log_lam, profile):
    """R_t from log-intensities along the last axis.

    Input shape (..., J); output (..., J - S) for days S+1..J.
    """
    w = profile.w
    S = profile.S
    J = log_lam.shape[-1]
    if J <= S:
        raise ValueError(
            f"period too short for R_t: J={J} must exceed S={S}"
        )
    lam = np.exp(log_lam)
    T = J - S
    denom = np.zeros(lam.shape[:-1] + (T,))
    for s in range(1, S + 1):
        denom += w[s - 1] * lam[..., S - s:S - s + T]
    return lam[..., S:] / denom


def smoothed_rt(draws, basis, profile, include_dow=False, include_eps=False,
                chunk=64):
    """Smoothed small-area R_it surface across all retained draws.

    By default only the spline trend enters (populations cancel, the
    weekly cycle and the overdispersion are filtered out); the alternative
    intensity definitions stay available behind the flags.
    """
    C, N, I = draws.n_chains, draws.n_kept, draws.I
    J = basis.J
    if J <= profile.S:
        raise ValueError(
            f"period too short for R_t: J={J} must exceed S={profile.S}"
        )
    if include_eps and draws.eps is None:
        raise ValueError("eps draws were not stored")
    D = C * N
    mu = draws.mu.reshape(D, -1)
    beta = draws.beta_star.reshape(D, I, -1)
    values = np.empty((D, I, J - profile.S))
    dow_idx = np.arange(J) % 7
    for s in range(0, D, chunk):
        e = min(s + chunk, D)
        trend = np.einsum(
            "dik,kj->dij", mu[s:e, None, :] + beta[s:e], basis.X
        )
        if include_dow:
            gamma = draws.gamma.reshape(D, 7)[s:e]
            trend = trend + gamma[:, dow_idx][:, None, :]
        if include_eps:
            trend = trend + draws.eps.reshape(D, I, J)[s:e]
        values[s:e] = rt_from_log_intensity(trend, profile)
    return RtSurface(values=values, first_day=profile.S + 1)


def regional_rt(surface, populations):
    """Population-weighted regional R_t series, summarized across draws."""
    populations = np.asarray(populations, dtype=float)
    if populations.shape != (surface.values.shape[1],):
        raise ValueError("populations misaligned with the R_t surface")
    weights = populations / populations.sum()
    series = np.einsum("dit,i->dt", surface.values, weights)
    return pd.DataFrame({
        "mean": series.mean(axis=0),
        "lo95": np.percentile(series, 2.5, axis=0),
        "hi95": np.percentile(series, 97.5, axis=0),
        "p_gt_1": (series > 1.0).mean(axis=0),
    })


def cori_rt(counts, profile, tau=7):
    """Windowed count-ratio R_t point estimates (the non-spatial baseline).

    Returns a length-J array aligned with the input series; entries are
    NaN where the estimate is undefined (t < S + tau, or an all-zero lag
    window makes the denominator vanish). tau=1 is the single-day
    estimator O_t / sum_s O_{t-s} w_s.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 1:
        raise ValueError("counts must be a single series")
    tau = int(tau)
    if tau < 1:
        raise ValueError("tau must be >= 1")
    J = counts.size
    S, w = profile.S, profile.w
    out = np.full(J, np.nan)
    if J <= S:
        return out
    T = J - S
    lam_hist = np.zeros(T)  # infectivity-weighted history for days S+1..J
    for s in range(1, S + 1):
        lam_hist += w[s - 1] * counts[S - s:S - s + T]
    for t0 in range(S + tau - 1, J):  # 0-based day index, day t = t0 + 1
        num = counts[t0 - tau + 1:t0 + 1].sum()
        den = lam_hist[t0 - tau + 1 - S:t0 + 1 - S].sum()
        if den > 0:
            out[t0] = num / den
    return out


def renewal_growth_rate(profile, r):
    """Exponential rate g solving the renewal balance sum_s w_s e^(-g s) = 1/r."""
    if r <= 0:
        raise ValueError("r must be positive")
    s = np.arange(1, profile.S + 1, dtype=float)

    def balance(g):
        return float(profile.w @ np.exp(-g * s)) - 1.0 / r

    return brentq(balance, -5.0, 5.0, xtol=1e-12)

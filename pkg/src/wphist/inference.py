"""Posterior inference on stored surface draws: BFDR flags, credible bands, metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, InvalidParameterError, ShapeError
from .model import historical_region, retained_energy

SD_FLOOR = 1e-12


def _draws(samples) -> np.ndarray:
    d = samples.draws if hasattr(samples, "draws") else samples
    d = np.asarray(d, dtype=float)
    if d.ndim != 3 or d.shape[1] != d.shape[2]:
        raise ShapeError(f"expected draws of shape (M, V, V), got {d.shape}")
    return d


def nearest_rank(values, prob, axis=0):
    """Type-1 (inverse empirical CDF) quantile."""
    return np.quantile(values, prob, axis=axis, method="inverted_cdf")


@dataclass(frozen=True)
class BfdrResult:
    p_b: np.ndarray
    phi_alpha: float
    lambda_rank: int
    flagged: np.ndarray  # boolean V x T
    delta: float
    alpha: float

    @property
    def flagged_cells(self) -> set:
        return {(int(v), int(t)) for v, t in zip(*np.nonzero(self.flagged))}


def bfdr_cutoff(probs, alpha):
    """Rank and cutoff for a vector of exceedance probabilities.

    Returns ``(lambda, phi)``; ``(0, 1.0)`` when no prefix meets the bound.
    Ties are ordered by position (stable sort).
    """
    p = np.asarray(probs, dtype=float)
    order = np.argsort(-p, kind="stable")
    ranked = p[order]
    running = np.cumsum(1.0 - ranked) / np.arange(1, p.size + 1)
    ok = np.flatnonzero(running <= alpha)
    if ok.size == 0:
        return 0, 1.0
    lam = int(ok[-1]) + 1
    return lam, float(ranked[lam - 1])


def bfdr(samples, delta: float, alpha: float) -> BfdrResult:
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta!r}")
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha!r}")
    d = _draws(samples)
    if d.shape[0] < 1:
        raise ShapeError("no posterior draws")
    region = historical_region(d.shape[1])
    p_b = np.where(region, np.mean(np.abs(d) > delta, axis=0), 0.0)
    lam, phi = bfdr_cutoff(p_b[region], alpha)
    flagged = region & (p_b >= phi) if lam else np.zeros_like(region)
    return BfdrResult(p_b, phi, lam, flagged, float(delta), float(alpha))


@dataclass(frozen=True)
class BandResult:
    lower: np.ndarray
    upper: np.ndarray
    kind: str
    alpha: float
    q_quantile: float | None = None
    center: np.ndarray | None = None

    def contains(self, surface, tol=0.0) -> np.ndarray:
        """Cellwise containment over the historical region (True outside it)."""
        region = historical_region(self.lower.shape[0])
        inside = (surface >= self.lower - tol) & (surface <= self.upper + tol)
        return inside | ~region


def joint_band(samples, alpha: float) -> BandResult:
    """Simultaneous band: mean +/- q * sd, q the (1 - alpha) quantile of max |standardized deviation|."""
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha!r}")
    d = _draws(samples)
    M = d.shape[0]
    if M < 10:
        raise ShapeError(f"joint band needs at least 10 draws, got {M}")
    mean = d.mean(axis=0)
    sd = d.std(axis=0, ddof=1)
    region = historical_region(d.shape[1])
    live = region & (sd >= SD_FLOOR)
    if not live.any():
        raise DataError("posterior draws are constant over the historical region")
    q_m = np.max(np.abs(d[:, live] - mean[live]) / sd[live], axis=1)
    q = float(nearest_rank(q_m, 1.0 - alpha))
    half = np.where(live, q * sd, 0.0)
    return BandResult(mean - half, mean + half, "joint", float(alpha), q, mean)


def pointwise_band(samples, alpha: float) -> BandResult:
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha!r}")
    d = _draws(samples)
    if d.shape[0] < 10:
        raise ShapeError(f"pointwise band needs at least 10 draws, got {d.shape[0]}")
    lower = nearest_rank(d, alpha / 2.0)
    upper = nearest_rank(d, 1.0 - alpha / 2.0)
    return BandResult(lower, upper, "pointwise", float(alpha), None, d.mean(axis=0))


def draws_inside(samples, band: BandResult, rtol=1e-9) -> np.ndarray:
    """Per draw: does it lie inside the band at every historical cell?"""
    d = _draws(samples)
    region = historical_region(d.shape[1])
    scale = rtol * np.maximum(np.abs(band.upper - band.lower), 1.0)
    ok = (d >= band.lower - scale) & (d <= band.upper + scale)
    return np.all(ok[:, region], axis=1)


def metrics(samples, beta_true, bands=None, design=None) -> dict:
    """RMISE over the historical region, band coverage of the truth, energy preserved."""
    d = _draws(samples)
    truth = np.asarray(getattr(beta_true, "beta", beta_true), dtype=float)
    if truth.shape != d.shape[1:]:
        raise ShapeError(f"true surface shape {truth.shape} does not match draws {d.shape[1:]}")
    region = historical_region(truth.shape[0])
    est = d.mean(axis=0)
    out = {"rmise": float(np.sqrt(np.mean((est - truth)[region] ** 2)))}
    bands = bands or {}
    if isinstance(bands, BandResult):
        bands = {bands.kind: bands}
    for kind, band in bands.items():
        if band.lower.shape != truth.shape:
            raise ShapeError("band shape does not match the true surface")
        inside = (band.lower <= truth) & (truth <= band.upper)
        out[f"{kind}_coverage"] = float(np.mean(inside[region]))
    if design is not None:
        out["energy_preserved"] = float(np.mean(retained_energy(design.X_wp, design.n_retained)))
    elif hasattr(samples, "meta") and "energy_preserved" in samples.meta:
        out["energy_preserved"] = float(samples.meta["energy_preserved"])
    return out

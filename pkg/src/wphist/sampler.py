"""Spike-and-slab Gibbs sampler for the packet-space historical model.

Outcome packet coefficients (columns of ``Y_wp``) are conditionally
independent given the regularization parameters, so every single-site update
below is vectorized across outcome coefficients and loops only over the
retained exposure columns.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import DataError, InvalidParameterError, NumericalFailure
from .model import HflmDesign, packet_to_data, retained_energy

log = logging.getLogger(__name__)

BF_EXPONENTS = ("derived", "paper_literal")
PI_UPDATES = ("derived", "paper_literal")
SCANS = ("raster", "random")

_LOG_ODDS_CAP = 30.0
_PI_CLIP = (0.01, 0.99)
_BETA_CONCENTRATION = (1.0, 1000.0)


@dataclass(frozen=True)
class HyperParameters:
    a_tau: float = 2.0
    b_tau: float = 1.0
    a_pi: float = 1.0
    b_pi: float = 1.0
    a_sigma2: float = 2.0
    b_sigma2: float = 1.0
    mh_proposal_sd: float = 0.2

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (np.isfinite(value) and value > 0):
                raise InvalidParameterError(f"hyperparameter {name} must be positive, got {value!r}")


@dataclass(frozen=True)
class SamplerSettings:
    total_iterations: int = 2000
    burn_in: int = 1000
    thinning: int = 1
    seed: int = 0
    bf_exponent: str = "derived"
    pi_update: str = "derived"
    scan: str = "raster"
    keep_packet_draws: bool = False
    diagnostics_every: int = 100

    def __post_init__(self):
        if not self.total_iterations > self.burn_in >= 0:
            raise InvalidParameterError("need total_iterations > burn_in >= 0")
        if self.thinning < 1:
            raise InvalidParameterError("thinning must be >= 1")
        if self.bf_exponent not in BF_EXPONENTS:
            raise InvalidParameterError(f"bf_exponent must be one of {BF_EXPONENTS}")
        if self.pi_update not in PI_UPDATES:
            raise InvalidParameterError(f"pi_update must be one of {PI_UPDATES}")
        if self.scan not in SCANS:
            raise InvalidParameterError(f"scan must be one of {SCANS}")
        if self.seed < 0:
            raise InvalidParameterError("seed must be non-negative")

    @property
    def n_stored(self) -> int:
        return (self.total_iterations - self.burn_in) // self.thinning


@dataclass
class SamplerState:
    beta_wp: np.ndarray  # V' x T
    gamma: np.ndarray  # V' x T, bool
    sigma2: np.ndarray  # T
    tau: np.ndarray  # V' x n_scales
    pi: np.ndarray  # V' x n_scales
    iteration: int = 0

    def copy(self) -> "SamplerState":
        return SamplerState(
            self.beta_wp.copy(), self.gamma.copy(), self.sigma2.copy(),
            self.tau.copy(), self.pi.copy(), self.iteration,
        )


@dataclass
class PosteriorSamples:
    draws: np.ndarray  # M x V x T data-space surfaces
    gamma_means: np.ndarray  # V' x T
    meta: dict = field(default_factory=dict)
    packet_draws: np.ndarray | None = None
    diagnostics: np.ndarray | None = None
    diagnostic_columns: list | None = None

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def beta_mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)


# -- OLS screen ---------------------------------------------------------------


@dataclass(frozen=True)
class OlsScreen:
    beta: np.ndarray  # V' x T, zero off-mask
    se: np.ndarray  # V' x T, nan off-mask
    resid_var: np.ndarray  # T, nan where not estimable

    @property
    def significant(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.abs(self.beta) > 3.0 * self.se


def ols_screen(design: HflmDesign) -> OlsScreen:
    """Per-outcome-coefficient least squares on the columns the mask allows."""
    X = design.X_wp_retained
    Y = design.Y_wp
    N, Vr = X.shape
    mask = design.constraint_mask
    beta = np.zeros((Vr, design.n_points))
    se = np.full((Vr, design.n_points), np.nan)
    resid_var = np.full(design.n_points, np.nan)
    # the allowed column set depends only on the outcome location
    for k in np.unique(design.y_location):
        cols = np.flatnonzero(design.y_location == k)
        allowed = mask[:, cols[0]]
        Xa = X[:, allowed]
        p = Xa.shape[1]
        coef, *_ = np.linalg.lstsq(Xa, Y[:, cols], rcond=None)
        beta[np.ix_(allowed, cols)] = coef
        dof = N - p
        if dof <= 0:
            continue
        rss = np.sum((Y[:, cols] - Xa @ coef) ** 2, axis=0)
        s2 = rss / dof
        resid_var[cols] = s2
        xtx_inv_diag = np.diag(np.linalg.pinv(Xa.T @ Xa))
        se[np.ix_(allowed, cols)] = np.sqrt(np.outer(xtx_inv_diag, s2))
    return OlsScreen(beta, se, resid_var)


def _inverse_gamma_moments(values):
    """(a, b) of the inverse gamma with the sample mean and variance of ``values``."""
    m = float(np.mean(values))
    s2 = float(np.var(values, ddof=1))
    if not (m > 0 and s2 > 0 and np.isfinite(m) and np.isfinite(s2)):
        return None
    a = m * m / s2 + 2.0
    return a, m * (a - 1.0)


def _beta_moments(props):
    p = float(np.mean(props))
    v = float(np.var(props, ddof=1))
    if v > 0:
        conc = p * (1.0 - p) / v - 1.0
    else:
        conc = np.inf
    conc = float(np.clip(conc, *_BETA_CONCENTRATION))
    return p * conc, (1.0 - p) * conc


def empirical_bayes(design: HflmDesign, screen: OlsScreen | None = None) -> HyperParameters:
    """Moment-matched hyperparameters from an OLS screen of the design.

    Falls back to IG(2, 1) / Beta(1, 1) with a warning whenever a fit has
    fewer than two usable values.
    """
    screen = ols_screen(design) if screen is None else screen
    defaults = HyperParameters()
    mask = design.constraint_mask

    rv = screen.resid_var[np.isfinite(screen.resid_var) & (screen.resid_var > 1e-12)]
    fit = _inverse_gamma_moments(rv) if rv.size >= 2 else None
    if fit is None:
        log.warning("empirical Bayes: residual variances unusable, using IG(2, 1) for sigma2")
        a_s, b_s = defaults.a_sigma2, defaults.b_sigma2
        mh_sd = defaults.mh_proposal_sd
    else:
        a_s, b_s = fit
        mh_sd = 0.2 * float(np.median(rv))

    sig = screen.significant & mask
    finite = mask & np.isfinite(screen.se)
    pool = screen.beta[sig] ** 2
    if pool.size < 5:
        pool = screen.beta[finite] ** 2
    pool = pool[pool > 0]
    fit = _inverse_gamma_moments(pool) if pool.size >= 2 else None
    if fit is None:
        log.warning("empirical Bayes: too few coefficients for tau, using IG(2, 1)")
        a_t, b_t = defaults.a_tau, defaults.b_tau
    else:
        a_t, b_t = fit

    nb = design.scale_size
    Vr = design.n_retained
    blocks_sig = sig.reshape(Vr, design.n_scales, nb).sum(axis=2)
    blocks_n = (finite).reshape(Vr, design.n_scales, nb).sum(axis=2)
    usable = blocks_n > 0
    if usable.sum() >= 2:
        props = np.clip(blocks_sig[usable] / blocks_n[usable], *_PI_CLIP)
        a_p, b_p = _beta_moments(props)
    else:
        log.warning("empirical Bayes: too few blocks for pi, using Beta(1, 1)")
        a_p, b_p = defaults.a_pi, defaults.b_pi

    return HyperParameters(a_t, b_t, a_p, b_p, a_s, b_s, mh_sd)


# -- conditional updates ------------------------------------------------------


def ols_partial(design: HflmDesign, state: SamplerState, column: int, outcome: int):
    """Single-site OLS estimate and its variance from the partial residual.

    ``column`` indexes the retained exposure columns and ``outcome`` the
    outcome packet coefficients.
    """
    X = design.X_wp_retained
    x = X[:, column]
    xx = float(x @ x)
    if xx == 0:
        raise DataError(f"exposure column {column} is identically zero")
    others = state.beta_wp[:, outcome].copy()
    others[column] = 0.0
    r = design.Y_wp[:, outcome] - X @ others
    return float(x @ r) / xx, float(state.sigma2[outcome]) / xx


def inclusion_probability(beta_hat, lam, tau, pi, bf_exponent="derived"):
    """Posterior probability that the slab generated the coefficient.

    Works elementwise on arrays. The log odds are capped: above the cap the
    probability is exactly one.
    """
    beta_hat, lam, tau, pi = np.broadcast_arrays(*map(np.asarray, (beta_hat, lam, tau, pi)))
    zeta2 = beta_hat**2 / lam
    shrink = 1.0 + lam / tau
    if bf_exponent == "derived":
        expo = 0.5 * zeta2 / shrink
    elif bf_exponent == "paper_literal":
        expo = 0.5 * zeta2 * shrink
    else:
        raise InvalidParameterError(f"unknown bf_exponent {bf_exponent!r}")
    with np.errstate(divide="ignore"):
        log_odds = np.log(pi) - np.log1p(-pi) - 0.5 * np.log1p(tau / lam) + expo
    alpha = np.empty(log_odds.shape)
    hi = log_odds > _LOG_ODDS_CAP
    alpha[hi] = 1.0
    lo = ~hi
    alpha[lo] = 1.0 / (1.0 + np.exp(-log_odds[lo]))
    return alpha


def slab_moments(beta_hat, lam, tau):
    """Mean and variance of the normal part of the full conditional."""
    shrink = 1.0 + np.asarray(lam) / np.asarray(tau)
    return np.asarray(beta_hat) / shrink, np.asarray(lam) / shrink


class _Workspace:
    """Cached design arrays plus the running residual matrix."""

    def __init__(self, design: HflmDesign, state: SamplerState):
        self.design = design
        self.X = design.X_wp_retained
        self.Y = design.Y_wp
        self.xx = np.sum(self.X**2, axis=0)
        if np.any(self.xx == 0):
            raise DataError("a retained exposure column is identically zero")
        self.mask = design.constraint_mask
        self.y_scale = design.y_scale
        self.nb = design.scale_size
        self.block_sizes = self.mask.reshape(
            design.n_retained, design.n_scales, self.nb
        ).sum(axis=2)
        self.resid = self.Y - self.X @ state.beta_wp


def _sweep_beta_gamma(ws: _Workspace, state, hyper, rng, bf_exponent, scan):
    n_cols = ws.X.shape[1]
    order = rng.permutation(n_cols) if scan == "random" else range(n_cols)
    it = state.iteration
    for c in order:
        x = ws.X[:, c]
        allowed = ws.mask[c]
        old = state.beta_wp[c]
        beta_hat = (x @ ws.resid) / ws.xx[c] + old
        lam = state.sigma2 / ws.xx[c]
        tau = state.tau[c, ws.y_scale]
        pi = state.pi[c, ws.y_scale]
        u = rng.random(beta_hat.shape)
        z = rng.standard_normal(beta_hat.shape)
        if not (np.all(np.isfinite(beta_hat[allowed])) and np.all(np.isfinite(lam[allowed]))):
            bad = np.flatnonzero(allowed & ~(np.isfinite(beta_hat) & np.isfinite(lam)))[0]
            raise NumericalFailure(
                f"non-finite single-site estimate at exposure column {c}, outcome {bad}", it
            )
        alpha = inclusion_probability(beta_hat, lam, tau, pi, bf_exponent)
        gamma = (u < alpha) & allowed
        mu, eps = slab_moments(beta_hat, lam, tau)
        new = np.where(gamma, mu + np.sqrt(eps) * z, 0.0)
        ws.resid -= np.outer(x, new - old)
        state.beta_wp[c] = new
        state.gamma[c] = gamma


def sample_beta_gamma(state, design, hyper, rng, bf_exponent="derived", scan="raster"):
    """One full single-site sweep over all allowed (exposure, outcome) cells, in place."""
    ws = _Workspace(design, state)
    _sweep_beta_gamma(ws, state, hyper, rng, bf_exponent, scan)
    return state.beta_wp, state.gamma


def log_sigma2_target(s2, rss, n, a, b):
    """Unnormalized log full conditional of a residual variance."""
    s2 = np.asarray(s2, dtype=float)
    return -(a + 1.0 + 0.5 * n) * np.log(s2) - (b + 0.5 * np.asarray(rss)) / s2


def log_mh_ratio(current, proposal, rss, n, a, b, sd):
    """Log acceptance ratio for the zero-truncated Gaussian random walk."""
    # q(cur | prop) / q(prop | cur) = Phi(cur / sd) / Phi(prop / sd)
    return (
        log_sigma2_target(proposal, rss, n, a, b)
        - log_sigma2_target(current, rss, n, a, b)
        + log_ndtr(np.asarray(current) / sd)
        - log_ndtr(np.asarray(proposal) / sd)
    )


def truncated_proposal(current, sd, rng):
    """Draw from N(current, sd^2) restricted to (0, inf)."""
    current = np.asarray(current, dtype=float)
    u = rng.random(current.shape)
    # w = -(prop - cur)/sd is N(0,1) truncated to w < cur/sd
    w = ndtri(u * ndtr(current / sd))
    prop = current - sd * w
    return np.maximum(prop, np.finfo(float).tiny)


def _mh_sigma2(sigma2, rss, n, hyper, rng):
    sd = hyper.mh_proposal_sd
    prop = truncated_proposal(sigma2, sd, rng)
    log_r = log_mh_ratio(sigma2, prop, rss, n, hyper.a_sigma2, hyper.b_sigma2, sd)
    accept = np.log(rng.random(sigma2.shape)) < log_r
    return np.where(accept, prop, sigma2), accept


def sample_sigma2(state, design, hyper, rng, resid=None):
    """Metropolis-Hastings update of every outcome residual variance, in place."""
    if resid is None:
        resid = design.Y_wp - design.X_wp_retained @ state.beta_wp
    rss = np.sum(resid**2, axis=0)
    state.sigma2, _ = _mh_sigma2(state.sigma2, rss, design.n_subjects, hyper, rng)
    return state.sigma2


def block_sums(state: SamplerState, design: HflmDesign):
    """Per (exposure column, outcome scale) counts of included cells and their sum of squares."""
    shape = (design.n_retained, design.n_scales, design.scale_size)
    g = state.gamma.reshape(shape)
    b2 = (state.beta_wp**2).reshape(shape)
    return g.sum(axis=2), np.where(g, b2, 0.0).sum(axis=2)


def sample_tau_pi(state, design, hyper, rng, pi_update="derived", block_sizes=None):
    """Draw the block-level slab variances and inclusion rates, in place."""
    n_in, ss = block_sums(state, design)
    if block_sizes is None:
        block_sizes = design.constraint_mask.reshape(
            design.n_retained, design.n_scales, design.scale_size
        ).sum(axis=2)
    shape = hyper.a_tau + 0.5 * n_in
    rate = hyper.b_tau + 0.5 * ss
    state.tau = rate / rng.standard_gamma(shape)
    if pi_update == "derived":
        b_post = hyper.b_pi + (block_sizes - n_in)
    elif pi_update == "paper_literal":
        b_post = hyper.b_pi + n_in
    else:
        raise InvalidParameterError(f"unknown pi_update {pi_update!r}")
    pi = rng.beta(hyper.a_pi + n_in, b_post)
    state.pi = np.clip(pi, 1e-12, 1.0 - 1e-12)
    return state.tau, state.pi


# -- driver -------------------------------------------------------------------


def initial_state(design: HflmDesign, hyper: HyperParameters, screen: OlsScreen) -> SamplerState:
    keep = screen.significant & design.constraint_mask
    beta = np.where(keep, screen.beta, 0.0)
    sigma2 = screen.resid_var.copy()
    fallback = np.var(design.Y_wp, axis=0, ddof=1)
    bad = ~(np.isfinite(sigma2) & (sigma2 > 0))
    sigma2[bad] = fallback[bad]
    sigma2 = np.maximum(sigma2, 1e-10)
    n_blocks = (design.n_retained, design.n_scales)
    tau = np.full(n_blocks, hyper.b_tau / (hyper.a_tau - 1.0) if hyper.a_tau > 1 else hyper.b_tau)
    pi = np.full(n_blocks, hyper.a_pi / (hyper.a_pi + hyper.b_pi))
    return SamplerState(beta, keep.copy(), sigma2, tau, pi, 0)


def _tracked_cells(screen: OlsScreen, mask, n=5):
    score = np.where(mask, np.abs(screen.beta), -1.0).ravel()
    order = np.argsort(-score, kind="stable")[:n]
    return [tuple(int(i) for i in np.unravel_index(o, mask.shape)) for o in order]


def run(
    design: HflmDesign,
    settings: SamplerSettings | None = None,
    hyper: HyperParameters | None = None,
    original_units: bool = True,
) -> PosteriorSamples:
    """Run the sampler and return data-space surface draws.

    Draws are mapped back through the inverse outcome transform and, when
    ``original_units`` is set, through the standardization record.
    """
    settings = SamplerSettings() if settings is None else settings
    screen = ols_screen(design)
    hyper = empirical_bayes(design, screen) if hyper is None else hyper
    rng = np.random.default_rng(settings.seed)
    state = initial_state(design, hyper, screen)
    ws = _Workspace(design, state)

    M = settings.n_stored
    packet = np.empty((M, design.n_retained, design.n_points))
    gamma_sum = np.zeros((design.n_retained, design.n_points))
    tracked = _tracked_cells(screen, design.constraint_mask)
    rows = []
    s2_sum = np.zeros(design.n_points)
    b_sum = np.zeros(len(tracked))
    stored = 0
    for it in range(1, settings.total_iterations + 1):
        state.iteration = it
        _sweep_beta_gamma(ws, state, hyper, rng, settings.bf_exponent, settings.scan)
        rss = np.sum(ws.resid**2, axis=0)
        state.sigma2, _ = _mh_sigma2(state.sigma2, rss, design.n_subjects, hyper, rng)
        if not np.all(np.isfinite(state.sigma2)):
            raise NumericalFailure("non-finite residual variance", it)
        sample_tau_pi(state, design, hyper, rng, settings.pi_update, ws.block_sizes)

        s2_sum += state.sigma2
        b_sum += [state.beta_wp[c] for c in tracked]
        if settings.diagnostics_every and it % settings.diagnostics_every == 0:
            rows.append(np.concatenate([[it], s2_sum / it, b_sum / it]))
        if it > settings.burn_in and (it - settings.burn_in) % settings.thinning == 0:
            packet[stored] = state.beta_wp
            gamma_sum += state.gamma
            stored += 1

    draws = packet_to_data(packet, design)
    if original_units:
        draws = design.standardization.unscale_surface(draws)
    meta = {
        "seed": int(settings.seed),
        "burn_in": int(settings.burn_in),
        "total_iterations": int(settings.total_iterations),
        "thinning": int(settings.thinning),
        "bf_exponent": settings.bf_exponent,
        "pi_update": settings.pi_update,
        "scan": settings.scan,
        "units": "original" if original_units else "standardized",
        "design": design.fingerprint(),
        "hyperparameters": asdict(hyper),
        "energy_preserved": float(np.mean(retained_energy(design.X_wp, design.n_retained))),
        "tracked_cells": [list(c) for c in tracked],
    }
    columns = (
        ["iteration"]
        + [f"sigma2_{k}" for k in range(design.n_points)]
        + [f"beta_{c}_{k}" for c, k in tracked]
    )
    return PosteriorSamples(
        draws=draws,
        gamma_means=gamma_sum / max(stored, 1),
        meta=meta,
        packet_draws=packet if settings.keep_packet_draws else None,
        diagnostics=np.array(rows) if rows else np.empty((0, len(columns))),
        diagnostic_columns=columns,
    )


def with_seed(settings: SamplerSettings, seed: int) -> SamplerSettings:
    return replace(settings, seed=int(seed))

"""Discrete historical model: standardization, packet-space design, constraint mask."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DataError, InvalidParameterError, ShapeError
from .wavelets import PacketBasisMatrix, WaveletFilter, build_basis

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FunctionalDataset:
    """Outcome curves ``Y`` (N x T) and exposure curves ``X`` (N x V), one subject per row."""

    Y: np.ndarray
    X: np.ndarray
    t_grid: np.ndarray = None
    v_grid: np.ndarray = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if Y.ndim != 2 or X.ndim != 2:
            raise DataError("Y and X must be two-dimensional (subjects x grid)")
        if Y.shape[0] != X.shape[0]:
            raise DataError(
                f"Y has {Y.shape[0]} subjects but X has {X.shape[0]}"
            )
        if Y.shape[0] < 2:
            raise DataError("need at least two subjects")
        if Y.shape[1] != X.shape[1]:
            raise DataError(
                f"outcome grid length {Y.shape[1]} differs from exposure grid length "
                f"{X.shape[1]}; the historical constraint needs T == V"
            )
        if not (np.isfinite(Y).all() and np.isfinite(X).all()):
            raise DataError("non-finite entries in Y or X")
        T = Y.shape[1]
        t_grid = np.arange(1.0, T + 1) if self.t_grid is None else np.asarray(self.t_grid, float)
        v_grid = t_grid.copy() if self.v_grid is None else np.asarray(self.v_grid, float)
        if t_grid.shape != (T,) or v_grid.shape != (T,):
            raise DataError("grid lengths must match the data")
        if np.any(np.diff(t_grid) <= 0):
            raise DataError("t_grid must be strictly increasing")
        if not np.array_equal(t_grid, v_grid):
            raise DataError("t_grid and v_grid must coincide")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t_grid", t_grid)
        object.__setattr__(self, "v_grid", v_grid)

    @property
    def n_subjects(self) -> int:
        return self.Y.shape[0]

    @property
    def n_points(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class Standardization:
    y_mean: np.ndarray
    y_sd: np.ndarray
    x_mean: np.ndarray
    x_sd: np.ndarray

    @classmethod
    def identity(cls, n_points: int) -> "Standardization":
        zeros, ones = np.zeros(n_points), np.ones(n_points)
        return cls(zeros, ones, zeros, ones)

    def unscale_surface(self, beta):
        """Map a surface fitted on standardized data back to the original units.

        ``beta`` may carry leading batch axes; the last two are (v, t).
        """
        return np.asarray(beta) * (self.y_sd[None, :] / self.x_sd[:, None])

    def predict(self, X, beta):
        """Predicted outcome curves, in original units, for a surface in original units."""
        X = np.asarray(X, dtype=float)
        return (X - self.x_mean) @ beta + self.y_mean


def _column_stats(A, label):
    mean = A.mean(axis=0)
    sd = A.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(sd > 1e-12 * np.maximum(1.0, np.abs(mean))))
    if bad.size:
        raise DataError(f"{label} column {int(bad[0])} has zero variance")
    return mean, sd


def standardize(data: FunctionalDataset):
    """Center and scale every time point of Y and X across subjects (divisor N-1)."""
    y_mean, y_sd = _column_stats(data.Y, "Y")
    x_mean, x_sd = _column_stats(data.X, "X")
    out = FunctionalDataset(
        (data.Y - y_mean) / y_sd, (data.X - x_mean) / x_sd, data.t_grid, data.v_grid
    )
    return out, Standardization(y_mean, y_sd, x_mean, x_sd)


@dataclass(frozen=True)
class HflmDesign:
    Y_wp: np.ndarray
    X_wp: np.ndarray
    retained_columns: np.ndarray  # (V', 2) array of (scale, location)
    levels: int
    basis_x: PacketBasisMatrix = field(repr=False)
    basis_y: PacketBasisMatrix = field(repr=False)
    standardization: Standardization = field(repr=False)
    retain_fraction: float

    @property
    def X_wp_retained(self) -> np.ndarray:
        return self.X_wp[:, : self.n_retained]

    @property
    def n_retained(self) -> int:
        return len(self.retained_columns)

    @property
    def n_subjects(self) -> int:
        return self.Y_wp.shape[0]

    @property
    def n_points(self) -> int:
        return self.Y_wp.shape[1]

    @property
    def scale_size(self) -> int:
        return self.n_points // 2**self.levels

    @property
    def n_scales(self) -> int:
        return 2**self.levels

    @property
    def y_scale(self) -> np.ndarray:
        return self.basis_y.scale_of

    @property
    def y_location(self) -> np.ndarray:
        return self.basis_y.location_of

    @property
    def constraint_mask(self) -> np.ndarray:
        """V' x T boolean, true where exposure location <= outcome location."""
        return self.retained_columns[:, 1][:, None] <= self.y_location[None, :]

    def fingerprint(self) -> dict:
        return {
            "N": self.n_subjects,
            "T": self.n_points,
            "levels": self.levels,
            "filter": self.basis_x.filter.name,
            "retain_fraction": self.retain_fraction,
            "n_retained": self.n_retained,
        }


def retained_scale_count(retain_fraction: float, levels: int) -> int:
    if not (0.0 < retain_fraction <= 1.0):
        raise InvalidParameterError(
            f"retain_fraction must lie in (0, 1], got {retain_fraction!r}"
        )
    exact = retain_fraction * 2**levels
    n_scales = int(math.floor(exact + 1e-9))
    if n_scales < 1:
        raise InvalidParameterError(
            f"retain_fraction {retain_fraction} keeps no whole scale at J={levels}"
        )
    if abs(exact - n_scales) > 1e-9:
        log.warning(
            "retain_fraction %s does not select whole scales at J=%d; keeping %d of %d scales",
            retain_fraction, levels, n_scales, 2**levels,
        )
    return n_scales


def build_design(
    data: FunctionalDataset,
    filt: WaveletFilter,
    levels: int,
    retain_fraction: float,
    standardization: Standardization | None = None,
) -> HflmDesign:
    """Transform both sides of the model and drop the high-scale exposure columns."""
    T = data.n_points
    if T % 2**levels:
        raise ShapeError(f"grid length {T} is not divisible by 2**levels = {2**levels}")
    n_scales = retained_scale_count(retain_fraction, levels)
    basis = build_basis(filt, levels, T)
    Y_wp = basis.forward(data.Y)
    X_wp = basis.forward(data.X)
    scale_size = T // 2**levels
    n_keep = n_scales * scale_size
    retained = np.column_stack([basis.scale_of[:n_keep], basis.location_of[:n_keep]])
    zero_cols = np.flatnonzero(np.all(X_wp[:, :n_keep] == 0, axis=0))
    if zero_cols.size:
        raise DataError(f"retained exposure column {int(zero_cols[0])} is identically zero")
    if standardization is None:
        standardization = Standardization.identity(T)
    return HflmDesign(
        Y_wp=Y_wp,
        X_wp=X_wp,
        retained_columns=retained,
        levels=int(levels),
        basis_x=basis,
        basis_y=basis,
        standardization=standardization,
        retain_fraction=n_scales / 2**levels,
    )


@dataclass(frozen=True)
class ConstrainedSurface:
    beta: np.ndarray  # V x T, rows are exposure times
    v_grid: np.ndarray = None
    t_grid: np.ndarray = None

    def below_diagonal(self, offset: int = 0) -> np.ndarray:
        """Entries with v index > t index + offset."""
        v, t = np.indices(self.beta.shape)
        return self.beta[v > t + offset]


def historical_region(n: int) -> np.ndarray:
    """Boolean n x n mask of the cells with v <= t."""
    return np.triu(np.ones((n, n), dtype=bool))


def packet_to_data(beta_wp, design: HflmDesign) -> np.ndarray:
    """Map packet-space surfaces (..., V', T) to standardized data-space surfaces (..., V, T).

    X beta = X_wp[:, kept] beta_wp W_y^{-1}, so the data-space surface is the
    analysis functions of the kept exposure columns times beta_wp times the
    outcome synthesis functions.
    """
    beta_wp = np.asarray(beta_wp, dtype=float)
    k = design.n_retained
    analysis_x = design.basis_x.matrix[:k].T  # V x V'
    synthesis_y = design.basis_y.inverse.T  # T x T, rows are synthesis functions
    return analysis_x @ beta_wp @ synthesis_y


def reconstruct_surface(beta_wp, design: HflmDesign, original_units: bool = False) -> ConstrainedSurface:
    beta_wp = np.asarray(beta_wp, dtype=float)
    if beta_wp.shape != (design.n_retained, design.n_points):
        raise ShapeError(
            f"packet surface has shape {beta_wp.shape}, expected "
            f"{(design.n_retained, design.n_points)}"
        )
    if np.any(beta_wp[~design.constraint_mask] != 0):
        raise ContractViolation("packet surface is nonzero where exposure location > outcome location")
    beta = packet_to_data(beta_wp, design)
    if original_units:
        beta = design.standardization.unscale_surface(beta)
    return ConstrainedSurface(beta)


def retained_energy(X_wp, n_retained: int) -> np.ndarray:
    """Per-subject share of squared packet norm held by the first ``n_retained`` columns."""
    X_wp = np.atleast_2d(np.asarray(X_wp, dtype=float))
    total = np.sum(X_wp**2, axis=1)
    kept = np.sum(X_wp[:, :n_retained] ** 2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, kept / total, 1.0)

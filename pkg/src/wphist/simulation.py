"""Synthetic AR(1) functional data, surrogate historical surfaces, replicate experiments."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, WphistError
from .model import ConstrainedSurface, FunctionalDataset, build_design, standardize
from .sampler import SamplerSettings, run
from .wavelets import filter_from_name

log = logging.getLogger(__name__)

SURFACE_KINDS = ("lagged", "cumulative", "time_specific", "delayed_time_specific")
SUMMARY_COLUMNS = [
    "N", "T", "retain", "surface", "replicates_ok", "rmise", "pe",
    "pointwise_cov", "joint_cov", "wall_seconds",
]


@dataclass(frozen=True)
class Ar1Spec:
    sigma2: float
    rho: float

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise InvalidParameterError("AR1 variance must be non-negative")
        if not abs(self.rho) < 1:
            raise InvalidParameterError("AR1 correlation must lie in (-1, 1)")


X_SPEC = Ar1Spec(3.5, 0.75)
E_SPEC = Ar1Spec(0.1, 0.5)


def ar1_curves(spec: Ar1Spec, n_curves: int, length: int, rng) -> np.ndarray:
    """Rows drawn from the stationary AR(1) recursion, Cov = sigma2 * rho^|i-j|."""
    z = rng.standard_normal((n_curves, length))
    out = np.empty((n_curves, length))
    sd = np.sqrt(spec.sigma2)
    innov = sd * np.sqrt(1.0 - spec.rho**2)
    out[:, 0] = sd * z[:, 0]
    for k in range(1, length):
        out[:, k] = spec.rho * out[:, k - 1] + innov * z[:, k]
    return out


@dataclass(frozen=True)
class SurfaceSpec:
    """Piecewise-constant stand-ins for the four historical scenarios.

    Geometry is in grid indices (0-based). ``None`` picks the default for the
    grid size: lag width T/8, window [T/4, 3T/8], delay T/4.
    """

    kind: str
    lag_width: int | None = None
    window: tuple | None = None
    delay: int | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in SURFACE_KINDS:
            raise InvalidParameterError(f"surface kind must be one of {SURFACE_KINDS}")
        if self.window is not None:
            object.__setattr__(self, "window", tuple(int(w) for w in self.window))


def make_surface(spec: SurfaceSpec, T: int) -> ConstrainedSurface:
    v, t = np.indices((T, T))
    hist = v <= t
    if spec.kind == "cumulative":
        support = hist
    elif spec.kind == "lagged":
        width = T // 8 if spec.lag_width is None else int(spec.lag_width)
        if width < 0:
            raise InvalidParameterError("lag width must be non-negative")
        support = hist & (t - width <= v)
    else:
        lo, hi = (T // 4, 3 * T // 8) if spec.window is None else spec.window
        if not (0 <= lo <= hi < T):
            raise InvalidParameterError(f"window [{lo}, {hi}] outside grid of size {T}")
        in_window = (v >= lo) & (v <= hi)
        if spec.kind == "time_specific":
            support = in_window & hist
        else:
            d = T // 4 if spec.delay is None else int(spec.delay)
            if not 0 <= d < T:
                raise InvalidParameterError(f"delay {d} outside grid of size {T}")
            support = in_window & (t >= v + d)
    grid = np.arange(1.0, T + 1)
    return ConstrainedSurface(np.where(support, float(spec.amplitude), 0.0), grid, grid)


def generate_dataset(surface: ConstrainedSurface, N: int, x_spec=X_SPEC, e_spec=E_SPEC, rng=None):
    rng = np.random.default_rng() if rng is None else rng
    T = surface.beta.shape[1]
    X = ar1_curves(x_spec, N, T, rng)
    E = ar1_curves(e_spec, N, T, rng)
    return FunctionalDataset(X @ surface.beta + E, X)


# -- experiment harness -------------------------------------------------------


@dataclass
class ExperimentGrid:
    master_seed: int = 20190101
    replicates: int = 20
    N_list: list = field(default_factory=lambda: [50, 200])
    T_list: list = field(default_factory=lambda: [64])
    retain_list: list = field(default_factory=lambda: [0.25])
    surfaces: list = field(default_factory=lambda: [SurfaceSpec(k) for k in SURFACE_KINDS])
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    filter: str = "db3"
    levels: int = 3
    alpha: float = 0.05
    output_dir: str = "simulation_output"

    def __post_init__(self):
        if self.replicates < 1:
            raise InvalidParameterError("replicates must be >= 1")
        if not (self.N_list and self.T_list and self.retain_list and self.surfaces):
            raise InvalidParameterError("grid has an empty axis")
        self.surfaces = [s if isinstance(s, SurfaceSpec) else SurfaceSpec(**s) for s in self.surfaces]
        if isinstance(self.sampler, dict):
            self.sampler = SamplerSettings(**self.sampler)
        filter_from_name(self.filter)

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentGrid":
        known = set(cls.__dataclass_fields__)
        unknown = set(cfg) - known
        if unknown:
            raise InvalidParameterError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**cfg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["surfaces"] = [asdict(s) for s in self.surfaces]
        return d

    def cells(self):
        out = []
        for N in self.N_list:
            for T in self.T_list:
                for r in self.retain_list:
                    for si, s in enumerate(self.surfaces):
                        out.append({"N": int(N), "T": int(T), "retain": float(r), "surface_index": si})
        return out

    def replicate_seeds(self, cell_index: int, replicate: int):
        """(data seed, sampler seed), distinct across cells and replicates."""
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(cell_index, replicate))
        data, chain = ss.generate_state(2, dtype=np.uint32)
        return int(data), int(chain)


def fit_replicate(grid: ExperimentGrid, cell: dict, cell_index: int, replicate: int, keep_samples_dir=None):
    """Generate, fit and score one dataset. Returns a JSON-serialisable record."""
    from .inference import draws_inside, joint_band, metrics, pointwise_band
    from .persistence import write_samples

    spec = grid.surfaces[cell["surface_index"]]
    data_seed, chain_seed = grid.replicate_seeds(cell_index, replicate)
    start = time.perf_counter()
    truth = make_surface(spec, cell["T"])
    data = generate_dataset(truth, cell["N"], rng=np.random.default_rng(data_seed))
    std, record = standardize(data)
    design = build_design(std, filter_from_name(grid.filter), grid.levels, cell["retain"], record)
    settings = SamplerSettings(**{**asdict(grid.sampler), "seed": chain_seed})
    samples = run(design, settings)
    joint = joint_band(samples, grid.alpha)
    point = pointwise_band(samples, grid.alpha)
    m = metrics(samples, truth, {"pointwise": point, "joint": joint}, design)
    spill_mean, spill_draws = constraint_spillover(samples.draws, grid.levels)
    if keep_samples_dir is not None:
        write_samples(Path(keep_samples_dir) / f"rep{replicate:04d}.wph", samples)
    return {
        "replicate": replicate,
        "data_seed": data_seed,
        "chain_seed": chain_seed,
        "rmise": m["rmise"],
        "pe": m["energy_preserved"],
        "pointwise_cov": m["pointwise_coverage"],
        "joint_cov": m["joint_coverage"],
        "mean_gamma": float(samples.gamma_means[design.constraint_mask].mean()),
        "joint_content": float(draws_inside(samples, joint).mean()),
        "spillover": spill_mean,
        "spillover_draw_max": float(spill_draws.max()),
        "wall_seconds": time.perf_counter() - start,
    }


def constraint_spillover(draws, levels: int):
    """Largest |beta| more than 2**levels below the diagonal, relative to the largest |beta| with v <= t.

    Returns the ratio for the posterior mean and the per-draw ratios.
    """
    draws = np.asarray(draws, dtype=float)
    n = draws.shape[-1]
    v, t = np.indices((n, n))
    far = v > t + 2**levels
    allowed = v <= t

    def ratio(a):
        top = np.abs(a[..., allowed]).max(axis=-1)
        low = np.abs(a[..., far]).max(axis=-1) if far.any() else np.zeros_like(top)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(top > 0, low / top, 0.0)

    return float(ratio(draws.mean(axis=0))), ratio(draws)


def _cell_dir(grid: ExperimentGrid, cell: dict) -> Path:
    s = grid.surfaces[cell["surface_index"]]
    name = f"N{cell['N']}_T{cell['T']}_rc{int(round(cell['retain'] * 100))}_{cell['surface_index']}{s.kind}"
    return Path(grid.output_dir) / "replicates" / name


def _job(args):
    grid, cell, ci, rep, keep = args
    path = _cell_dir(grid, cell) / f"rep{rep:04d}.json"
    if path.exists():
        return json.loads(path.read_text())
    try:
        rec = fit_replicate(grid, cell, ci, rep, path.parent if keep else None)
    except WphistError as exc:
        log.warning("replicate %d of %s failed: %s", rep, path.parent.name, exc)
        rec = {"replicate": rep, "failed": str(exc)}
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(rec, sort_keys=True))
    os.replace(tmp, path)
    return rec


def run_experiment(grid: ExperimentGrid, jobs: int = 1, keep_samples: bool = False):
    """Run every cell of the grid and write ``summary.csv``.

    Finished replicates are persisted one JSON file each and reused on rerun,
    so an interrupted run resumes where it stopped. Returns the summary rows.
    """
    out = Path(grid.output_dir)
    cells = grid.cells()
    for cell in cells:
        _cell_dir(grid, cell).mkdir(parents=True, exist_ok=True)
    tasks = [(grid, cell, ci, rep, keep_samples) for ci, cell in enumerate(cells) for rep in range(grid.replicates)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_job, tasks))
    else:
        records = [_job(t) for t in tasks]

    rows = []
    per_cell = grid.replicates
    for ci, cell in enumerate(cells):
        recs = records[ci * per_cell : (ci + 1) * per_cell]
        ok = [r for r in recs if "failed" not in r]
        if len(ok) < 0.8 * per_cell:
            raise WphistError(
                f"cell {_cell_dir(grid, cell).name}: {per_cell - len(ok)} of {per_cell} replicates failed"
            )
        row = {
            "N": cell["N"],
            "T": cell["T"],
            "retain": cell["retain"],
            "surface": grid.surfaces[cell["surface_index"]].kind,
            "replicates_ok": len(ok),
        }
        for key in ("rmise", "pe", "pointwise_cov", "joint_cov", "wall_seconds"):
            row[key] = float(np.mean([r[key] for r in ok]))
        rows.append(row)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    return rows

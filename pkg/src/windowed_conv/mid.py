"""Mobile infrastructure on demand: scenarios, relay oracle, power metric, sweeps.

Power to sustain normalised rate ``R`` over ``d`` meters under path loss::

    P(d) = erfinv(R)**2 * P_N0 * d**n / Kc    [mW]

The per-edge power of a configuration is the mean edge weight of the
minimum spanning tree over the complete graph of all agents weighted by P.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .conv_net import CNNModel, default_mid_model, forward_batch
from .errors import InvalidArgumentError, InvalidConfigError
from .rasterize import ExtractionConfig, PositionSet, RasterConfig, extract_positions, rasterize
from .reporting import write_csv
from .seeding import rng_for
from .signal_core import GridSignal
from .training import Adam, fit

# (window width m, task agents): density fixed at 5 agents per 320 m square
REFERENCE_SWEEP = ((320, 5), (640, 20), (960, 45), (1280, 80), (1600, 125))

_SQRT_PI = math.sqrt(math.pi)


def erfinv(y: float) -> float:
    """Inverse error function, Newton-polished to near machine precision."""
    y = float(y)
    if not -1.0 < y < 1.0:
        if y in (-1.0, 1.0):
            return math.copysign(math.inf, y)
        raise InvalidArgumentError(f"erfinv domain is (-1, 1), got {y}")
    if y == 0.0:
        return 0.0
    # Winitzki's closed form (a = 0.147) is good to ~2e-3 everywhere
    a = 0.147
    ln = math.log1p(-y * y)
    t = 2.0 / (math.pi * a) + 0.5 * ln
    x = math.copysign(math.sqrt(math.sqrt(t * t - ln / a) - t), y)
    # near |y| = 1 the residual is taken through erfc, where 1 - |y| is exact
    tail = abs(y) > 0.5
    q = 1.0 - abs(y)
    for _ in range(60):
        if tail:
            resid = (q - math.erfc(abs(x))) * (1.0 if y > 0 else -1.0)
        else:
            resid = math.erf(x) - y
        step = resid / (2.0 / _SQRT_PI * math.exp(-x * x))
        x -= step
        if abs(step) <= 1e-16 * abs(x):
            break
    return x


@dataclass(frozen=True)
class ChannelParams:
    rate_R: float = 0.5
    noise_power_PN0: float = 1e-7
    channel_const_Kc: float = 5e-6
    path_loss_exp_n: float = 2.52

    def __post_init__(self):
        if not 0 < self.rate_R < 1:
            raise InvalidConfigError("rate_R must lie in (0, 1)")
        if not (self.noise_power_PN0 > 0 and self.channel_const_Kc > 0 and self.path_loss_exp_n > 0):
            raise InvalidConfigError("noise power, channel constant and path-loss exponent must be positive")

    @property
    def coefficient(self) -> float:
        return erfinv(self.rate_R) ** 2 * self.noise_power_PN0 / self.channel_const_Kc


def min_power(d, cp: ChannelParams = ChannelParams()):
    """Milliwatts needed to reach rate R over distance ``d`` (scalar or array)."""
    arr = np.asarray(d, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise InvalidArgumentError("distance must be non-negative")
    p = cp.coefficient * arr**cp.path_loss_exp_n
    return float(p) if np.ndim(d) == 0 else p


def _distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def minimum_spanning_tree(weights: np.ndarray) -> list[tuple[int, int]]:
    """Edges ``(parent, child)`` of the MST of a dense symmetric weight matrix.

    Dense O(n^2) Prim from vertex 0; the lowest index wins every tie.
    """
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise InvalidArgumentError("weights must be a square matrix")
    parent = kernels.dense_prim(w)
    return [(int(parent[v]), v) for v in range(1, w.shape[0])]


def mst_mean_edge_power(agents: PositionSet, cp: ChannelParams = ChannelParams()) -> tuple[float, int]:
    if len(agents) < 2:
        raise InvalidArgumentError(f"need at least 2 agents, got {len(agents)}")
    w = min_power(_distances(agents.points), cp)
    edges = minimum_spanning_tree(w)
    return math.fsum(w[u, v] for u, v in edges) / len(edges), len(edges)


def oracle_comm_positions(task: PositionSet, spacing_d: float = 30.0) -> PositionSet:
    """Relays subdividing every Euclidean MST edge into pieces no longer than ``spacing_d``.

    Stand-in for an optimal relay placement; an edge of length l gets
    ``ceil(l / spacing_d) - 1`` equally spaced relays.
    """
    if len(task) < 2:
        raise InvalidArgumentError("need at least 2 task agents")
    if not spacing_d > 0:
        raise InvalidArgumentError("spacing_d must be positive")
    pts = task.points
    dist = _distances(pts)
    relays = []
    for u, v in minimum_spanning_tree(dist):
        m = math.ceil(dist[u, v] / spacing_d - 1e-9) - 1
        for j in range(1, m + 1):
            relays.append(pts[u] + (pts[v] - pts[u]) * (j / (m + 1)))
    return PositionSet(np.array(relays).reshape(-1, 2))


@dataclass(frozen=True)
class ScenarioConfig:
    window_width_A: float
    num_task_agents: int
    seed: int = 0

    def __post_init__(self):
        if not self.window_width_A > 0:
            raise InvalidConfigError("window width must be positive")
        if self.num_task_agents < 2:
            raise InvalidConfigError("need at least 2 task agents")


def sample_task_positions(sc: ScenarioConfig) -> PositionSet:
    rng = rng_for(sc.seed, "task-positions")
    half = 0.5 * sc.window_width_A
    return PositionSet(rng.uniform(-half, half, size=(sc.num_task_agents, 2)))


def area_scaled_count(base_count: int, base_width: float, width: float) -> int:
    return max(2, int(round(base_count * (width / base_width) ** 2)))


# --------------------------------------------------------------- predictors

Predictor = Callable[[GridSignal, PositionSet, RasterConfig], GridSignal]


def image_scale(rc: RasterConfig) -> float:
    """Factor that brings a single rasterised pulse to unit peak."""
    return 2.0 * math.pi * rc.sigma_m**2


class CNNPredictor:
    """Runs a single-channel 2D model on peak-normalised images."""

    def __init__(self, model: CNNModel):
        self.model = model

    def __call__(self, img: GridSignal, task: PositionSet, rc: RasterConfig) -> GridSignal:
        x = np.asarray(img.values)[None, None] * image_scale(rc)
        y = forward_batch(self.model, x)[0, 0]
        return img.with_values(y)


class OracleReplay:
    """Predictor stub that returns the rasterised oracle relays."""

    def __init__(self, spacing_d: float = 30.0):
        self.spacing_d = spacing_d

    def __call__(self, img: GridSignal, task: PositionSet, rc: RasterConfig) -> GridSignal:
        return rasterize(oracle_comm_positions(task, self.spacing_d), rc)


# ----------------------------------------------------------------- training


@dataclass(frozen=True)
class MidTrainConfig:
    base_width: float = 160.0
    base_count: int = 16
    resolution: float = 2.5
    sigma_x: float = 6.4
    spacing_d: float = 30.0
    samples: int = 256
    steps: int = 1500
    batch_size: int = 4
    learning_rate: float = 2e-3
    seed: int = 0

    def raster(self) -> RasterConfig:
        return RasterConfig(self.base_width, self.resolution, self.sigma_x)


def mid_dataset(cfg: MidTrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Peak-normalised (task image, oracle relay image) pairs at the base width."""
    rc = cfg.raster()
    scale = image_scale(rc)
    xs, ys = [], []
    for i in range(cfg.samples):
        task = sample_task_positions(ScenarioConfig(cfg.base_width, cfg.base_count, seed=cfg.seed * 1_000_003 + i))
        xs.append(rasterize(task, rc).values * scale)
        ys.append(rasterize(oracle_comm_positions(task, cfg.spacing_d), rc).values * scale)
    return np.stack(xs)[:, None], np.stack(ys)[:, None]


def train_mid(
    cfg: MidTrainConfig,
    model: CNNModel | None = None,
    start_step: int = 0,
    on_step=None,
) -> tuple[CNNModel, list[float]]:
    """Fit the 2D model to oracle labels on full base-width images."""
    model = default_mid_model(rng_for(cfg.seed, "mid-init")) if model is None else model
    xs, ys = mid_dataset(cfg)
    n = xs.shape[-1]

    def batch_fn(step):
        idx = rng_for(cfg.seed, "mid-batch", step).choice(cfg.samples, size=cfg.batch_size, replace=False)
        return xs[idx], ys[idx]

    return fit(model, batch_fn, n, n, cfg.steps, Adam(cfg.learning_rate), start_step, on_step)


# --------------------------------------------------------------- evaluation


@dataclass
class TrialRecord:
    width_m: float
    trial: int
    num_task: int
    num_comm: int
    power_mW: float
    edges: int
    flagged: bool
    seconds: float
    images: tuple[GridSignal, GridSignal] | None = None


@dataclass
class PowerRow:
    width_m: float
    num_task: int
    mean_num_comm: float
    power_mean_mW: float
    power_std_mW: float
    trials: int
    flagged: int


REPORT_HEADER = ("width_m", "num_task", "mean_num_comm", "power_mean_mW", "power_std_mW", "trials", "flagged")
BOX_HEADER = ("width_m", "q1", "median", "q3", "notch_low", "notch_high", "whisker_low", "whisker_high", "trials")
DETAIL_HEADER = ("width_m", "trial", "num_task", "num_comm", "power_mW", "edges", "flagged")


def box_stats(values: Sequence[float]) -> tuple[float, ...]:
    """Quartiles, 95% median notch (median +- 1.57 IQR / sqrt(n)) and Tukey whiskers."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    half = 1.57 * iqr / math.sqrt(len(v))
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return float(q1), float(med), float(q3), float(med - half), float(med + half), float(lo), float(hi)


@dataclass
class PowerReport:
    rows: list[PowerRow] = field(default_factory=list)
    records: list[TrialRecord] = field(default_factory=list)

    def powers(self, width: float) -> list[float]:
        return [r.power_mW for r in self.records if r.width_m == width]

    def row(self, width: float) -> PowerRow:
        return next(r for r in self.rows if r.width_m == width)

    def write_csv(self, path) -> None:
        write_csv(path, REPORT_HEADER, (
            (r.width_m, r.num_task, r.mean_num_comm, r.power_mean_mW, r.power_std_mW, r.trials, r.flagged)
            for r in self.rows
        ))

    def write_box_csv(self, path) -> None:
        write_csv(path, BOX_HEADER, (
            (r.width_m, *box_stats(self.powers(r.width_m)), r.trials) for r in self.rows
        ))

    def write_detail_csv(self, path) -> None:
        write_csv(path, DETAIL_HEADER, (
            (t.width_m, t.trial, t.num_task, t.num_comm, t.power_mW, t.edges, t.flagged)
            for t in self.records
        ))


def run_trial(
    predictor: Predictor,
    rc: RasterConfig,
    ec: ExtractionConfig,
    cp: ChannelParams,
    count: int,
    seed: int,
    trial: int,
    keep_images: bool = False,
) -> TrialRecord:
    t0 = time.perf_counter()
    task = sample_task_positions(ScenarioConfig(rc.window_width_A, count, seed))
    img = rasterize(task, rc)
    pred = predictor(img, task, rc)
    comm = extract_positions(pred, rc, ec)
    power, edges = mst_mean_edge_power(task.union(comm), cp)
    return TrialRecord(
        rc.window_width_A, trial, count, len(comm), power, edges, len(comm) == 0,
        time.perf_counter() - t0, (img, pred) if keep_images else None,
    )


def trial_seed(root: int, width: float, trial: int) -> int:
    ss = rng_for(root, "zero-shot", int(round(width * 1000)), trial)
    return int(ss.integers(0, 2**62))


def evaluate_zero_shot(
    model: CNNModel | Predictor,
    rc: RasterConfig,
    ec: ExtractionConfig,
    cp: ChannelParams,
    widths: Sequence[float],
    trials: int,
    seed: int,
    base_count: int,
    render: int = 0,
) -> PowerReport:
    """Sweep widths at fixed resolution, scaling task counts with area.

    ``rc`` carries the base (training) width. The first ``render`` trials
    per width keep their input/output images on the records.
    """
    base = rc.window_width_A
    if any(w < base for w in widths):
        raise InvalidConfigError(f"evaluation widths must be >= training width {base}")
    predictor = CNNPredictor(model) if isinstance(model, CNNModel) else model
    report = PowerReport()
    for width in widths:
        wrc = rc.with_width(width)
        count = area_scaled_count(base_count, base, width)
        recs = [
            run_trial(predictor, wrc, ec, cp, count, trial_seed(seed, width, t), t, t < render)
            for t in range(trials)
        ]
        report.records.extend(recs)
        p = np.array([r.power_mW for r in recs])
        report.rows.append(PowerRow(
            float(width), count, float(np.mean([r.num_comm for r in recs])), float(np.mean(p)),
            float(np.std(p, ddof=1)) if trials > 1 else 0.0, trials, sum(r.flagged for r in recs),
        ))
    return report

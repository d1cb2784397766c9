"""Windowed training, full-signal loss estimation, and the window-transfer bound.

The bound relates the loss of a network on an ``A``-sample input window
scored over the central ``B`` output samples to its loss on the unbounded
signal::

    L_full <= L_window + H * max(0, B + L*K - A) / B * var(X)

with ``H`` the product of per-layer filter L1 norms, ``L`` the depth and
``K`` the filter width in taps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .conv_net import CNNModel, backward_batch, forward_batch, init_model, l1_product
from .errors import InvalidConfigError, ShapeError, TrainingDivergedError
from .reporting import write_csv
from .seeding import rng_for
from .signal_core import (
    GridSignal,
    StationaryPairConfig,
    WindowSpec,
    draw_noise,
    pair_from_noise,
    sample_variance,
)


@dataclass(frozen=True)
class BoundInputs:
    loss_window: float
    h_product: float
    num_layers: int
    filter_width: int
    input_width: int
    output_width: int
    var_x: float

    def __post_init__(self):
        vals = (self.loss_window, self.h_product, self.var_x)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidConfigError("bound inputs must be finite")
        if self.loss_window < 0 or self.var_x < 0 or self.h_product <= 0:
            raise InvalidConfigError("need loss_window >= 0, var_x >= 0, h_product > 0")
        if self.num_layers < 1 or self.filter_width < 1:
            raise InvalidConfigError("num_layers and filter_width must be positive")
        if self.output_width <= 0:
            raise InvalidConfigError("output window must be positive")
        if self.input_width < self.output_width:
            raise InvalidConfigError(
                f"input window A={self.input_width} smaller than output window B={self.output_width}"
            )


@dataclass(frozen=True)
class LossEstimate:
    mean: float
    stderr: float
    trials: int


@dataclass(frozen=True)
class TrainConfig:
    input_window_A: int = 128
    output_window_B: int = 64
    batch_size: int = 16
    steps: int = 500
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    resolution: float = 1.0

    def __post_init__(self):
        if self.output_window_B <= 0:
            raise InvalidConfigError("output window B must be positive")
        if self.input_window_A < self.output_window_B:
            raise InvalidConfigError(
                f"input window A={self.input_window_A} < output window B={self.output_window_B}"
            )
        if self.steps < 0:
            raise InvalidConfigError("steps must be non-negative")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise InvalidConfigError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class ArchSpec:
    """Recipe for a freshly initialised model."""

    channels: tuple[int, ...] = (1, 8, 8, 1)
    filter_width: int = 5
    dims: int = 1
    hidden: str = "tanh"
    last: str = "identity"
    padding_mode: str = "zero_same"
    bias: bool = False
    gain: float = 1.0

    def build(self, seed) -> CNNModel:
        return init_model(
            self.channels, self.filter_width, self.dims, self.hidden, self.last,
            self.padding_mode, self.bias, seed=seed, gain=self.gain,
        )


# ----------------------------------------------------------------- losses


def _central(n: int, width: int) -> int:
    return (n - width) // 2


def _geometry(model: CNNModel, n: int, a: int, b: int):
    if b <= 0:
        raise InvalidConfigError("output window B must be positive")
    if a < b:
        raise InvalidConfigError(f"input window A={a} < output window B={b}")
    if a > n:
        raise InvalidConfigError(f"input window A={a} exceeds grid of {n} samples")
    start_a = _central(n, a)
    start_b = _central(n, b)
    shift = model.num_layers * (model.filter_width - 1) // 2 if model.padding_mode == "valid" else 0
    out_n = n - 2 * shift
    lo = start_b - shift
    if lo < 0 or lo + b > out_n:
        raise InvalidConfigError("output window not covered by the valid-mode output")
    return start_a, start_b, lo


def _mask_input(x: np.ndarray, start: int, width: int, dims: int) -> np.ndarray:
    n = x.shape[-1]
    if start == 0 and width == n:
        return x
    keep = np.zeros(n, dtype=bool)
    keep[start : start + width] = True
    if dims == 2:
        keep = keep[:, None] & keep[None, :]
    return np.where(keep, x, 0.0)


def _region(lo: int, width: int, dims: int):
    return (Ellipsis,) + (slice(lo, lo + width),) * dims


def windowed_loss_batch(
    model: CNNModel, xb: np.ndarray, yb: np.ndarray, a: int, b: int, grad: bool = False
):
    """Per-example windowed MSE for ``xb``/``yb`` of shape ``[batch, C, *spatial]``.

    With ``grad`` also returns the gradients of the batch-mean loss.
    """
    n = xb.shape[-1]
    if yb.shape[0] != xb.shape[0] or yb.shape[2:] != xb.shape[2:]:
        raise ShapeError("x and y batches are not on the same grid")
    start_a, start_b, lo = _geometry(model, n, a, b)
    xin = _mask_input(np.asarray(xb, dtype=np.float64), start_a, a, model.dims)
    out, tape = forward_batch(model, xin, keep=True) if grad else (forward_batch(model, xin), None)
    diff = out[_region(lo, b, model.dims)] - yb[_region(start_b, b, model.dims)]
    per = np.mean(diff.reshape(diff.shape[0], -1) ** 2, axis=1)
    if not grad:
        return per
    up = np.zeros_like(out)
    count = diff[0].size * diff.shape[0]
    up[_region(lo, b, model.dims)] = 2.0 * diff / count
    return per, backward_batch(model, tape, up)


def windowed_loss(model: CNNModel, x: GridSignal, y: GridSignal, a: int, b: int) -> float:
    """Mean squared error over the central ``b`` samples for an input windowed to ``a``."""
    if x.spatial_shape != y.spatial_shape or x.origin != y.origin or x.resolution != y.resolution:
        raise ShapeError("x and y must share one grid")
    return float(windowed_loss_batch(model, x.channel_array()[None], y.channel_array()[None], a, b)[0])


# -------------------------------------------------------------- optimisers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(cfg.learning_rate)
    return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


def _flat_params(model: CNNModel):
    params, layout = [], []
    for w, b in model.params():
        params.append(np.array(w, dtype=np.float64))
        layout.append(b is not None)
        if b is not None:
            params.append(np.array(b, dtype=np.float64))
    return params, layout


def _rebuild(model: CNNModel, params, layout, dtype) -> CNNModel:
    out, it = [], iter(params)
    for has_bias in layout:
        w = next(it).astype(dtype)
        b = next(it).astype(dtype) if has_bias else None
        out.append((w, b))
    return model.with_params(out)


def _flat_grads(grads, layout):
    flat = []
    for gw, gb, has_bias in zip(grads.filters, grads.bias, layout):
        flat.append(gw)
        if has_bias:
            flat.append(gb)
    return flat


def fit(
    model: CNNModel,
    batch_fn: Callable[[int], tuple[np.ndarray, np.ndarray]],
    a: int,
    b: int,
    steps: int,
    optimizer,
    start_step: int = 0,
    on_step: Callable[[int, float], None] | None = None,
) -> tuple[CNNModel, list[float]]:
    """Generic minibatch loop on the windowed loss.

    ``batch_fn(step)`` supplies ``(xb, yb)``. Updates run in float64 and are
    rounded to the model's storage dtype after every step.
    """
    dtype = model.layers[0].filters.dtype
    params, layout = _flat_params(model)
    curve: list[float] = []
    current = model
    for step in range(start_step, start_step + steps):
        xb, yb = batch_fn(step)
        per, grads = windowed_loss_batch(current, xb, yb, a, b, grad=True)
        loss = float(np.mean(per))
        if not math.isfinite(loss):
            raise TrainingDivergedError(step, loss, current, curve)
        curve.append(loss)
        if on_step is not None:
            on_step(step, loss)
        optimizer.step(params, _flat_grads(grads, layout))
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDivergedError(step, float("nan"), current, curve)
        for i, p in enumerate(params):
            params[i] = p.astype(dtype).astype(np.float64)
        current = _rebuild(model, params, layout, dtype)
    return current, curve


def _pair_batch(pair_cfg: StationaryPairConfig, rng: np.random.Generator, count: int, n: int):
    xs, ys = [], []
    for _ in range(count):
        x, y = pair_from_noise(pair_cfg, draw_noise(pair_cfg, rng, n), n)
        xs.append(x.values)
        ys.append(y.values)
    return np.stack(xs)[:, None], np.stack(ys)[:, None]


def train_windowed(
    cfg: TrainConfig, pair_cfg: StationaryPairConfig, arch: ArchSpec | CNNModel
) -> tuple[CNNModel, list[float]]:
    """Train on fresh ``A``-sample windows, scoring the central ``B`` outputs."""
    model = arch if isinstance(arch, CNNModel) else arch.build(rng_for(cfg.seed, "init"))
    if model.padding_mode == "valid":
        _geometry(model, cfg.input_window_A, cfg.input_window_A, cfg.output_window_B)
    if cfg.steps == 0:
        return model, []

    def batch_fn(step):
        rng = rng_for(cfg.seed, "train-batch", step)
        return _pair_batch(pair_cfg, rng, cfg.batch_size, cfg.input_window_A)

    return fit(model, batch_fn, cfg.input_window_A, cfg.output_window_B, cfg.steps, make_optimizer(cfg))


# ------------------------------------------------------------- estimation


def _interior_errors(model: CNNModel, xb: np.ndarray, yb: np.ndarray, margin: int) -> np.ndarray:
    n = xb.shape[-1]
    out = forward_batch(model, xb)
    shift = (n - out.shape[-1]) // 2
    width = n - 2 * margin
    diff = out[_region(margin - shift, width, model.dims)] - yb[_region(margin, width, model.dims)]
    return np.mean(diff.reshape(diff.shape[0], -1) ** 2, axis=1)


def estimate_full_loss(
    model: CNNModel,
    pair_cfg: StationaryPairConfig,
    eval_width: int,
    margin: int,
    trials: int,
    seed: int = 0,
    chunk: int = 16,
) -> LossEstimate:
    """Monte-Carlo estimate of the full-signal loss on wide, unwindowed draws."""
    if margin < model.border:
        raise InvalidConfigError(
            f"margin {margin} below the padding border {model.border}; interior would be contaminated"
        )
    if trials < 1:
        raise InvalidConfigError("trials must be >= 1")
    if eval_width - 2 * margin < 1:
        raise InvalidConfigError("eval_width leaves no interior after margins")
    per_trial = []
    for start in range(0, trials, chunk):
        count = min(chunk, trials - start)
        xs, ys = [], []
        for t in range(start, start + count):
            rng = rng_for(seed, "full-loss", t)
            x, y = pair_from_noise(pair_cfg, draw_noise(pair_cfg, rng, eval_width), eval_width)
            xs.append(x.values)
            ys.append(y.values)
        per_trial.append(_interior_errors(model, np.stack(xs)[:, None], np.stack(ys)[:, None], margin))
    vals = np.concatenate(per_trial)
    stderr = float(np.std(vals, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return LossEstimate(float(np.mean(vals)), stderr, trials)


def heldout_window_loss(
    model: CNNModel, pair_cfg: StationaryPairConfig, a: int, b: int, windows: int, seed: int
) -> tuple[LossEstimate, float]:
    """Windowed loss on fresh draws plus the pooled input variance of those draws."""
    rng = rng_for(seed, "heldout")
    xb, yb = _pair_batch(pair_cfg, rng, windows, a)
    per = windowed_loss_batch(model, xb, yb, a, b)
    var_x = sample_variance(
        [GridSignal(x[0], origin=-0.5 * (a - 1)) for x in xb], WindowSpec(width=float(a), center=0.0)
    )
    stderr = float(np.std(per, ddof=1) / math.sqrt(windows)) if windows > 1 else 0.0
    return LossEstimate(float(np.mean(per)), stderr, windows), var_x


def theorem_bound_raw(b: BoundInputs) -> float:
    slack = b.output_width + b.num_layers * b.filter_width - b.input_width
    return b.loss_window + b.h_product * slack / b.output_width * b.var_x


def theorem_bound(b: BoundInputs) -> float:
    """Upper bound on the full-signal loss; the slack term is clamped at zero."""
    slack = max(0, b.output_width + b.num_layers * b.filter_width - b.input_width)
    if slack == 0 or b.var_x == 0:
        return b.loss_window
    return b.loss_window + b.h_product * slack / b.output_width * b.var_x


# ---------------------------------------------------------------- verify

BOUND_CSV_HEADER = (
    "seed", "loss_window", "H", "varX", "A", "B", "L", "K",
    "lhs_mean", "lhs_stderr", "rhs", "holds", "rhs_unclamped", "loss_window_stderr",
)


@dataclass
class BoundRow:
    seed: int
    loss_window: float
    loss_window_stderr: float
    h_product: float
    var_x: float
    A: int
    B: int
    L: int
    K: int
    lhs_mean: float
    lhs_stderr: float
    rhs: float
    rhs_unclamped: float

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.lhs_stderr, self.loss_window_stderr)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs_mean

    @property
    def holds(self) -> bool:
        return self.lhs_mean <= self.rhs + 3.0 * self.combined_stderr

    def csv_row(self):
        return (
            self.seed, self.loss_window, self.h_product, self.var_x, self.A, self.B, self.L, self.K,
            self.lhs_mean, self.lhs_stderr, self.rhs, self.holds, self.rhs_unclamped,
            self.loss_window_stderr,
        )


@dataclass
class BoundReport:
    rows: list[BoundRow] = field(default_factory=list)

    @property
    def holds_fraction(self) -> float:
        return sum(r.holds for r in self.rows) / len(self.rows) if self.rows else 0.0

    def write_csv(self, path) -> None:
        write_csv(path, BOUND_CSV_HEADER, (r.csv_row() for r in sorted(self.rows, key=lambda r: r.seed)))


def verify_seed(
    pair_cfg: StationaryPairConfig,
    arch: ArchSpec | CNNModel,
    cfg: TrainConfig,
    eval_width: int,
    trials: int,
    seed: int,
    heldout_windows: int = 256,
) -> BoundRow:
    model, _ = train_windowed(replace(cfg, seed=seed), pair_cfg, arch)
    a, b = cfg.input_window_A, cfg.output_window_B
    lw, var_x = heldout_window_loss(model, pair_cfg, a, b, heldout_windows, seed)
    inputs = BoundInputs(lw.mean, l1_product(model), model.num_layers, model.filter_width, a, b, var_x)
    full = estimate_full_loss(model, pair_cfg, eval_width, model.border, trials, seed=seed)
    return BoundRow(
        seed, lw.mean, lw.stderr, inputs.h_product, var_x, a, b, model.num_layers,
        model.filter_width, full.mean, full.stderr, theorem_bound(inputs), theorem_bound_raw(inputs),
    )


def verify_bound(
    pair_cfg: StationaryPairConfig,
    arch: ArchSpec | CNNModel,
    cfg: TrainConfig,
    eval_width: int,
    trials: int,
    seeds: Sequence[int],
    heldout_windows: int = 256,
) -> BoundReport:
    """Train per seed and compare the measured full loss against the bound.

    A seed "holds" when ``lhs_mean <= rhs + 3 * se``, where ``se`` combines
    the standard errors of the full-loss and held-out window-loss estimates.
    """
    rows = [
        verify_seed(pair_cfg, arch, cfg, eval_width, trials, s, heldout_windows)
        for s in sorted(seeds)
    ]
    return BoundReport(rows)

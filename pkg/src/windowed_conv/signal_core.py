"""Grid-sampled signals, square windows, and jointly stationary input/output pairs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError, InvalidConfigError

NONLINEARITIES = ("identity", "tanh", "relu")


@dataclass(frozen=True, eq=False)
class GridSignal:
    """A real field sampled on a regular 1D or 2D grid.

    ``values`` has the spatial shape ``(N,)`` or ``(N, N)`` when
    ``channels == 1`` and a leading channel axis otherwise. Sample ``i``
    along any axis sits at ``origin + i * resolution`` meters.
    """

    values: np.ndarray
    resolution: float = 1.0
    origin: float = 0.0
    channels: int = 1

    def __post_init__(self):
        raw = np.asarray(self.values)
        vals = np.array(raw, dtype=np.float32 if raw.dtype == np.float32 else np.float64)
        if self.channels < 1:
            raise InvalidArgumentError(f"channels must be positive, got {self.channels}")
        if not self.resolution > 0:
            raise InvalidArgumentError(f"resolution must be positive, got {self.resolution}")
        spatial = vals.shape if self.channels == 1 else vals.shape[1:]
        if self.channels > 1 and vals.shape[0] != self.channels:
            raise InvalidArgumentError("leading axis does not match channel count")
        if len(spatial) not in (1, 2) or min(spatial, default=0) < 1:
            raise InvalidArgumentError(f"bad grid shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("signal contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.values.shape if self.channels == 1 else self.values.shape[1:]

    @property
    def ndim(self) -> int:
        return len(self.spatial_shape)

    @property
    def n(self) -> int:
        return self.spatial_shape[0]

    def coords(self, axis: int = 0) -> np.ndarray:
        return self.origin + self.resolution * np.arange(self.spatial_shape[axis])

    def with_values(self, values: np.ndarray, origin: float | None = None) -> "GridSignal":
        return GridSignal(
            values,
            resolution=self.resolution,
            origin=self.origin if origin is None else origin,
            channels=self.channels,
        )

    def channel_array(self) -> np.ndarray:
        """Values with an explicit leading channel axis."""
        return self.values[None] if self.channels == 1 else self.values


@dataclass(frozen=True)
class WindowSpec:
    width: float
    center: float = 0.0

    def __post_init__(self):
        if not self.width > 0:
            raise InvalidArgumentError(f"window width must be positive, got {self.width}")


@dataclass(frozen=True)
class StationaryPairConfig:
    """FIR-filtered white noise pair: X = g * w, Y = sigma(f * w).

    ``clamp`` truncates the driving noise at +-6 noise_std, which makes both
    processes bounded; off by default.
    """

    noise_std: float = 1.0
    gen_filter: Sequence[float] = (1.0,)
    target_filter: Sequence[float] = (1.0,)
    target_nonlinearity: str = "identity"
    clamp: bool = False

    def __post_init__(self):
        g = np.asarray(self.gen_filter, dtype=np.float64)
        f = np.asarray(self.target_filter, dtype=np.float64)
        object.__setattr__(self, "gen_filter", tuple(g.ravel().tolist()) if g.ndim == 1 else g)
        object.__setattr__(self, "target_filter", tuple(f.ravel().tolist()) if f.ndim == 1 else f)
        if not self.noise_std > 0:
            raise InvalidConfigError(f"noise_std must be positive, got {self.noise_std}")
        for name, h in (("gen_filter", g), ("target_filter", f)):
            if h.size == 0 or h.ndim not in (1, 2) or not np.all(np.isfinite(h)):
                raise InvalidConfigError(f"{name} must be a finite, non-empty 1D or 2D array")
        if g.ndim != f.ndim:
            raise InvalidConfigError("gen_filter and target_filter must have the same dimensionality")
        if self.target_nonlinearity not in NONLINEARITIES:
            raise InvalidConfigError(f"unknown target_nonlinearity {self.target_nonlinearity!r}")

    @property
    def dims(self) -> int:
        return np.asarray(self.gen_filter).ndim

    @property
    def support(self) -> int:
        return max(max(np.shape(self.gen_filter)), max(np.shape(self.target_filter)))

    def variance_x(self) -> float:
        """Closed-form variance of the input process (unclamped noise)."""
        return self.noise_std**2 * float(np.sum(np.square(self.gen_filter)))


def _circular_fir(w: np.ndarray, h: np.ndarray) -> np.ndarray:
    # out[t] = sum_k h[k] w[t - k] on the ring; fixed summation order keeps
    # circular shifts of w bit-exact in the output.
    out = np.zeros_like(w)
    for idx in np.ndindex(*h.shape):
        if h[idx] != 0.0:
            out += h[idx] * np.roll(w, idx, axis=tuple(range(h.ndim)))
    return out


def _apply_nonlinearity(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def extended_length(cfg: StationaryPairConfig, n: int) -> int:
    return n + cfg.support - 1


def draw_noise(cfg: StationaryPairConfig, seed, n: int) -> np.ndarray:
    """White-noise draw on the extended ring used to build an ``n``-sample pair."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m = extended_length(cfg, n)
    w = rng.standard_normal((m,) * cfg.dims) * cfg.noise_std
    if cfg.clamp:
        lim = 6.0 * cfg.noise_std
        np.clip(w, -lim, lim, out=w)
    return w


def pair_from_noise(cfg: StationaryPairConfig, w: np.ndarray, n: int, resolution: float = 1.0):
    """Filter a given extended noise ring and crop ``n`` wrap-free samples."""
    g = np.asarray(cfg.gen_filter, dtype=np.float64)
    f = np.asarray(cfg.target_filter, dtype=np.float64)
    x_ext = _circular_fir(w, g)
    y_ext = _apply_nonlinearity(cfg.target_nonlinearity, _circular_fir(w, f))
    start = cfg.support - 1
    crop = tuple(slice(start, start + n) for _ in range(cfg.dims))
    origin = -0.5 * (n - 1) * resolution
    return (
        GridSignal(x_ext[crop], resolution=resolution, origin=origin),
        GridSignal(y_ext[crop], resolution=resolution, origin=origin),
    )


def generate_stationary_pair(
    cfg: StationaryPairConfig, seed, extent: float, resolution: float = 1.0
) -> tuple[GridSignal, GridSignal]:
    """Draw one jointly stationary (X, Y) pair covering ``extent`` meters.

    Both outputs share a grid of ``floor(extent / resolution)`` samples per
    axis centred on the origin. ``seed`` may be an int or a numpy Generator.
    """
    if not resolution > 0:
        raise InvalidConfigError(f"resolution must be positive, got {resolution}")
    n = int(np.floor(extent / resolution + 1e-9))
    if n < cfg.support:
        raise InvalidConfigError(
            f"extent covers {n} samples, smaller than filter support {cfg.support}"
        )
    w = draw_noise(cfg, seed, n)
    return pair_from_noise(cfg, w, n, resolution)


def window_mask(sig: GridSignal, w: WindowSpec) -> np.ndarray:
    lo, hi = w.center - 0.5 * w.width, w.center + 0.5 * w.width
    masks = []
    for axis in range(sig.ndim):
        c = sig.coords(axis)
        masks.append((c >= lo) & (c <= hi))
    if sig.ndim == 1:
        return masks[0]
    return masks[0][:, None] & masks[1][None, :]


def apply_window(sig: GridSignal, w: WindowSpec) -> GridSignal:
    """Zero every sample whose coordinate falls outside the square pulse."""
    mask = window_mask(sig, w)
    vals = np.where(mask, sig.values, 0.0).astype(sig.values.dtype)
    return sig.with_values(vals)


def sample_variance(sigs: Sequence[GridSignal], region: WindowSpec) -> float:
    """Unbiased variance pooled over every in-region sample of every signal."""
    pooled = [np.asarray(s.values)[..., window_mask(s, region)].ravel() for s in sigs]
    vals = np.concatenate(pooled) if pooled else np.empty(0)
    if vals.size < 2:
        raise InsufficientDataError(f"need at least 2 samples in region, got {vals.size}")
    return float(np.var(vals, ddof=1))


def empirical_autocovariance(sig: GridSignal, lag: int, axis: int = 0) -> float:
    n = sig.spatial_shape[axis]
    if abs(lag) >= n:
        raise InvalidArgumentError(f"lag {lag} out of range for {n} samples")
    x = np.asarray(sig.values, dtype=np.float64)
    x = x - x.mean()
    lag = abs(lag)
    a = np.take(x, np.arange(0, n - lag), axis=axis)
    b = np.take(x, np.arange(lag, n), axis=axis)
    return float(np.mean(a * b))

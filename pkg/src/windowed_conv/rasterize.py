"""Point sets to Gaussian-superposition images and back.

Images are square, centred on the origin, with pixel ``(i, j)`` sampled at
``(rho*(i + 1/2) - A/2, rho*(j + 1/2) - A/2)`` meters. The pixel count per
side is ``floor(A / rho)`` because ``rho`` is meters per pixel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import kernels
from .errors import InvalidArgumentError, InvalidConfigError
from .reporting import read_csv, write_csv
from .signal_core import GridSignal

DEFAULT_RESOLUTION = 1.25
DEFAULT_SIGMA = 6.4


@dataclass(frozen=True, eq=False)
class PositionSet:
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("positions must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def translate(self, dx: float, dy: float) -> "PositionSet":
        return PositionSet(self.points + np.array([dx, dy]))

    def union(self, other: "PositionSet") -> "PositionSet":
        return PositionSet(np.vstack([self.points, other.points]))

    def to_csv(self, path) -> None:
        write_csv(path, ("x_m", "y_m"), self.points.tolist())

    @classmethod
    def from_csv(cls, path) -> "PositionSet":
        header, rows = read_csv(path)
        if header != ["x_m", "y_m"]:
            raise InvalidArgumentError(f"{path}: expected header x_m,y_m, got {header}")
        return cls(np.array([[float(a), float(b)] for a, b in rows]).reshape(-1, 2))


@dataclass(frozen=True)
class RasterConfig:
    """``sigma_units="pixels"`` reads ``sigma_x`` in pixels instead of meters."""

    window_width_A: float
    resolution_rho: float = DEFAULT_RESOLUTION
    sigma_x: float = DEFAULT_SIGMA
    sigma_units: str = "meters"

    def __post_init__(self):
        if not (self.window_width_A > 0 and self.resolution_rho > 0 and self.sigma_x > 0):
            raise InvalidConfigError("window width, resolution and sigma must be positive")
        if self.sigma_units not in ("meters", "pixels"):
            raise InvalidConfigError(f"sigma_units must be meters or pixels, got {self.sigma_units!r}")
        if self.pixels < 1:
            raise InvalidConfigError("window narrower than one pixel")

    @property
    def pixels(self) -> int:
        return int(math.floor(self.window_width_A / self.resolution_rho + 1e-9))

    @property
    def sigma_m(self) -> float:
        return self.sigma_x * self.resolution_rho if self.sigma_units == "pixels" else self.sigma_x

    @property
    def origin(self) -> float:
        return 0.5 * self.resolution_rho - 0.5 * self.window_width_A

    def centers(self) -> np.ndarray:
        return self.origin + self.resolution_rho * np.arange(self.pixels)

    def with_width(self, width: float) -> "RasterConfig":
        return RasterConfig(width, self.resolution_rho, self.sigma_x, self.sigma_units)


@dataclass(frozen=True)
class ExtractionConfig:
    """Unset ``tol`` defaults to rho/10 and ``merge_radius`` to 2 sigma_x (meters)."""

    threshold_frac: float = 0.1
    max_iters: int = 50
    tol: float | None = None
    merge_radius: float | None = None

    def __post_init__(self):
        if not 0 < self.threshold_frac < 1:
            raise InvalidConfigError("threshold_frac must lie in (0, 1)")
        if self.max_iters < 1:
            raise InvalidConfigError("max_iters must be >= 1")


def rasterize(ps: PositionSet, rc: RasterConfig) -> GridSignal:
    """Sum of unit-mass Gaussians, one per point, sampled at pixel centres.

    Points outside the window still contribute their tails.
    """
    c = rc.centers()
    if len(ps) == 0:
        img = np.zeros((c.size, c.size))
    else:
        p = np.ascontiguousarray(ps.points)
        img = kernels.gaussian_raster(p[:, 0].copy(), p[:, 1].copy(), c, c, rc.sigma_m)
    return GridSignal(img, resolution=rc.resolution_rho, origin=rc.origin)


@dataclass
class ExtractionInfo:
    seeds: int
    iterations: int
    movements: list[float]

    @property
    def final_movement(self) -> float:
        return self.movements[-1] if self.movements else 0.0


def _merge_seeds(coords: np.ndarray, bright: np.ndarray, radius: float) -> np.ndarray:
    order = np.lexsort((np.arange(len(bright)), -bright))
    kept: list[int] = []
    r2 = radius * radius
    for idx in order:
        if all(np.sum((coords[idx] - coords[k]) ** 2) >= r2 for k in kept):
            kept.append(int(idx))
    return coords[kept]


def extract_positions_info(
    img: GridSignal, rc: RasterConfig, ec: ExtractionConfig = ExtractionConfig()
) -> tuple[PositionSet, ExtractionInfo]:
    """Threshold, seed at local maxima, merge close seeds, then weighted Lloyd."""
    v = np.clip(np.asarray(img.values, dtype=np.float64), 0.0, None)
    if v.ndim != 2:
        raise InvalidArgumentError("extraction needs a single-channel 2D image")
    peak = float(v.max())
    if peak <= 0.0:
        return PositionSet(), ExtractionInfo(0, 0, [])
    thr = ec.threshold_frac * peak
    above = v > thr
    local_max = (v == ndimage.maximum_filter(v, size=3, mode="constant", cval=-np.inf)) & above
    rho = img.resolution
    tol = rho / 10.0 if ec.tol is None else ec.tol
    merge_radius = 2.0 * rc.sigma_m if ec.merge_radius is None else ec.merge_radius

    def to_m(idx):
        return img.origin + rho * idx.astype(np.float64)

    si, sj = np.nonzero(local_max)
    seeds = np.column_stack([to_m(si), to_m(sj)])
    centers = _merge_seeds(seeds, v[si, sj], merge_radius)

    pi, pj = np.nonzero(above)
    pix = np.column_stack([to_m(pi), to_m(pj)])
    wts = v[pi, pj]
    movements: list[float] = []
    it = 0
    for it in range(1, ec.max_iters + 1):
        _, label = cKDTree(centers).query(pix)
        mass = np.bincount(label, weights=wts, minlength=len(centers))
        sx = np.bincount(label, weights=wts * pix[:, 0], minlength=len(centers))
        sy = np.bincount(label, weights=wts * pix[:, 1], minlength=len(centers))
        new = centers.copy()
        has = mass > 0
        new[has, 0] = sx[has] / mass[has]
        new[has, 1] = sy[has] / mass[has]
        move = float(np.max(np.hypot(*(new - centers).T)))
        centers = new
        movements.append(move)
        if move < tol:
            break
    return PositionSet(centers), ExtractionInfo(len(seeds), it, movements)


def extract_positions(
    img: GridSignal, rc: RasterConfig, ec: ExtractionConfig = ExtractionConfig()
) -> PositionSet:
    return extract_positions_info(img, rc, ec)[0]


# ---------------------------------------------------------------- file I/O


def _sidecar(path) -> Path:
    return Path(f"{path}.txt")


def write_pgm(path, img: GridSignal, rc: RasterConfig) -> None:
    """16-bit binary PGM plus a ``<path>.txt`` sidecar holding the scale.

    Row ``r`` of the file is pixel index ``i = r`` (the x axis); columns run
    along y. Stored value is ``round(65535 * pixel / max)`` after clamping
    negatives to zero.
    """
    v = np.clip(np.asarray(img.values, dtype=np.float64), 0.0, None)
    peak = float(v.max()) if v.size else 0.0
    q = np.zeros(v.shape, dtype=">u2") if peak <= 0 else np.round(65535.0 * v / peak).astype(">u2")
    h, w = v.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())
    lines = [
        f"max {peak!r}",
        f"resolution {rc.resolution_rho!r}",
        f"window_width {rc.window_width_A!r}",
        f"sigma {rc.sigma_x!r}",
        f"sigma_units {rc.sigma_units}",
    ]
    _sidecar(path).write_text("\n".join(lines) + "\n")


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidArgumentError("truncated PGM header")
        tokens.append(data[start:pos].decode("ascii"))
    return tokens, pos + 1


def read_pgm(path) -> tuple[GridSignal, RasterConfig]:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _pgm_tokens(data, 4)
    if magic != "P5":
        raise InvalidArgumentError(f"{path}: not a binary PGM")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    q = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    meta = dict(line.split(None, 1) for line in _sidecar(path).read_text().splitlines() if line.strip())
    rc = RasterConfig(
        float(meta["window_width"]), float(meta["resolution"]), float(meta["sigma"]),
        meta.get("sigma_units", "meters").strip(),
    )
    vals = q.astype(np.float64) / maxval * float(meta["max"])
    return GridSignal(vals, resolution=rc.resolution_rho, origin=rc.origin), rc

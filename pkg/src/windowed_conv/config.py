"""JSON run configs: parsing, defaults, strict key checking and echo.

Every command reads one JSON object. Top-level keys per command:

``bound``
    ``seed``, ``pair`` (StationaryPairConfig), ``arch`` (ArchSpec),
    ``train`` (TrainConfig minus seed), ``eval_width``, ``trials``,
    ``num_seeds``, ``heldout_windows``, ``holds_threshold``.
``mid-train``
    ``seed``, ``mid_train`` (MidTrainConfig minus seed), ``arch`` (2D
    ArchSpec), ``loss_threshold``.
``mid-eval``
    ``seed``, ``raster`` (RasterConfig at the training width), ``extraction``,
    ``channel``, ``widths``, ``trials``, ``base_count``, ``predictor``
    (``"cnn"`` or ``"oracle"``), ``spacing_d``, ``detail``.
``rasterize`` / ``extract``
    ``raster`` and, for extract, ``extraction``.
"""
from __future__ import annotations

import dataclasses
import json
from typing import Any

import numpy as np

from .errors import InvalidConfigError
from .mid import ChannelParams, MidTrainConfig
from .rasterize import ExtractionConfig, RasterConfig
from .signal_core import StationaryPairConfig
from .training import ArchSpec, TrainConfig


MID_ARCH = ArchSpec((1, 16, 32, 16, 1), 5, 2, "leaky_relu", "identity", "zero_same")


class ConfigError(InvalidConfigError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line, self.column = line, column


def parse_json(text: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _section(cls, raw: Any, name: str, skip: tuple[str, ...] = ()):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _check_top(data: dict, allowed: set[str]) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")


def _num(data, key, default, kind=int):
    val = data.get(key, default)
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(f"{key!r} must be an integer")
    if kind is float and not isinstance(val, (int, float)):
        raise ConfigError(f"{key!r} must be a number")
    return kind(val)


@dataclasses.dataclass
class BoundRun:
    seed: int = 0
    pair: StationaryPairConfig = dataclasses.field(default_factory=lambda: StationaryPairConfig(
        1.0, (0.5, 1.0, -0.3, 0.2), (0.3, 0.8, 0.5, -0.4, 0.2), "tanh"))
    arch: ArchSpec = dataclasses.field(default_factory=lambda: ArchSpec((1, 8, 8, 1), 5, 1, "tanh"))
    train: TrainConfig = dataclasses.field(default_factory=lambda: TrainConfig(128, 64, 16, 300, 1e-2))
    eval_width: int = 2048
    trials: int = 64
    num_seeds: int = 20
    heldout_windows: int = 256
    holds_threshold: float = 0.95

    def echo(self) -> dict:
        out = _plain(self)
        out["train"].pop("seed", None)
        return out


def bound_run(data: dict) -> BoundRun:
    _check_top(data, {f.name for f in dataclasses.fields(BoundRun)})
    d = BoundRun()
    run = BoundRun(
        seed=_num(data, "seed", d.seed),
        pair=_section(StationaryPairConfig, data["pair"], "pair") if "pair" in data else d.pair,
        arch=_section(ArchSpec, data["arch"], "arch") if "arch" in data else d.arch,
        train=_section(TrainConfig, data["train"], "train", skip=("seed",)) if "train" in data else d.train,
        eval_width=_num(data, "eval_width", d.eval_width),
        trials=_num(data, "trials", d.trials),
        num_seeds=_num(data, "num_seeds", d.num_seeds),
        heldout_windows=_num(data, "heldout_windows", d.heldout_windows),
        holds_threshold=_num(data, "holds_threshold", d.holds_threshold, float),
    )
    if run.num_seeds < 1 or run.trials < 2 or run.heldout_windows < 2:
        raise ConfigError("num_seeds >= 1, trials >= 2 and heldout_windows >= 2 required")
    if run.arch.dims != 1:
        raise ConfigError("bound verification runs on 1D models")
    return run


@dataclasses.dataclass
class MidTrainRun:
    seed: int = 0
    mid_train: MidTrainConfig = dataclasses.field(default_factory=MidTrainConfig)
    arch: ArchSpec = dataclasses.field(default_factory=lambda: MID_ARCH)
    loss_threshold: float = 0.05

    def echo(self) -> dict:
        out = _plain(self)
        out["mid_train"].pop("seed", None)
        return out


def mid_train_run(data: dict) -> MidTrainRun:
    _check_top(data, {f.name for f in dataclasses.fields(MidTrainRun)})
    d = MidTrainRun()
    run = MidTrainRun(
        seed=_num(data, "seed", d.seed),
        mid_train=_section(MidTrainConfig, data.get("mid_train"), "mid_train", skip=("seed",)),
        arch=_section(ArchSpec, data["arch"], "arch") if "arch" in data else d.arch,
        loss_threshold=_num(data, "loss_threshold", d.loss_threshold, float),
    )
    if run.arch.dims != 2 or run.arch.channels[0] != 1 or run.arch.channels[-1] != 1:
        raise ConfigError("mid-train needs a 2D single-channel-in/out architecture")
    return run


@dataclasses.dataclass
class MidEvalRun:
    seed: int = 0
    raster: RasterConfig = dataclasses.field(default_factory=lambda: RasterConfig(160.0, 2.5))
    extraction: ExtractionConfig = dataclasses.field(default_factory=ExtractionConfig)
    channel: ChannelParams = dataclasses.field(default_factory=ChannelParams)
    widths: tuple[float, ...] = (160.0, 320.0, 640.0)
    trials: int = 50
    base_count: int = 16
    predictor: str = "cnn"
    spacing_d: float = 30.0
    detail: bool = False

    def echo(self) -> dict:
        return _plain(self)


def mid_eval_run(data: dict) -> MidEvalRun:
    _check_top(data, {f.name for f in dataclasses.fields(MidEvalRun)})
    d = MidEvalRun()
    widths = data.get("widths", list(d.widths))
    if not isinstance(widths, list) or not widths or not all(isinstance(w, (int, float)) for w in widths):
        raise ConfigError("'widths' must be a non-empty list of numbers")
    run = MidEvalRun(
        seed=_num(data, "seed", d.seed),
        raster=_section(RasterConfig, data["raster"], "raster") if "raster" in data else d.raster,
        extraction=_section(ExtractionConfig, data.get("extraction"), "extraction"),
        channel=_section(ChannelParams, data.get("channel"), "channel"),
        widths=tuple(float(w) for w in widths),
        trials=_num(data, "trials", d.trials),
        base_count=_num(data, "base_count", d.base_count),
        predictor=data.get("predictor", d.predictor),
        spacing_d=_num(data, "spacing_d", d.spacing_d, float),
        detail=bool(data.get("detail", d.detail)),
    )
    if run.predictor not in ("cnn", "oracle"):
        raise ConfigError("'predictor' must be 'cnn' or 'oracle'")
    if run.trials < 1 or run.base_count < 2:
        raise ConfigError("trials >= 1 and base_count >= 2 required")
    base = run.raster.window_width_A
    if any(w < base for w in run.widths):
        raise ConfigError(f"evaluation widths must be >= training width {base}")
    return run


@dataclasses.dataclass
class ImageRun:
    raster: RasterConfig = dataclasses.field(default_factory=lambda: RasterConfig(320.0))
    extraction: ExtractionConfig = dataclasses.field(default_factory=ExtractionConfig)

    def echo(self) -> dict:
        return _plain(self)


def image_run(data: dict) -> ImageRun:
    _check_top(data, {"raster", "extraction", "seed"})
    d = ImageRun()
    return ImageRun(
        raster=_section(RasterConfig, data["raster"], "raster") if "raster" in data else d.raster,
        extraction=_section(ExtractionConfig, data.get("extraction"), "extraction"),
    )


def dump(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"

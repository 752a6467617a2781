"""Flat ``key=value`` run configuration shared by every CLI command.

Precedence is flags > config file > defaults. Every key is validated before
any work starts, and the effective config is embedded in each artifact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

from .errors import ConfigError
from .evaluation import ProtocolConfig
from .featurelearn.autoencoder import Hyperparams
from .featurelearn.train import WhiteningConfig
from .preprocess import PreprocessConfig
from .signatures import DatasetLayout


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _columns(text: str) -> str:
    return ",".join(c.strip() for c in text.split(",") if c.strip())


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str
    check: Optional[Callable[[Any], bool]] = None
    requirement: str = ""


def _choice(*opts):
    return (lambda v: v in opts), f"one of {', '.join(opts)}"


_pos = (lambda v: v > 0), "> 0"
_nonneg = (lambda v: v >= 0), ">= 0"
_unit_open = (lambda v: 0 < v < 1), "in (0, 1)"
_unit_half = (lambda v: 0 < v <= 1), "in (0, 1]"


def _k(name, parse, default, help, rule=(None, "")):
    return Key(name, parse, default, help, rule[0], rule[1])


KEYS = [
    # preprocessing
    _k("raster_width", int, 64, "raster width in pixels", ((lambda v: v >= 8), ">= 8")),
    _k("raster_height", int, 64, "raster height in pixels", ((lambda v: v >= 8), ">= 8")),
    _k("smooth", _bool, True, "spline-smooth pen-down runs"),
    _k("smooth_factor", float, 2.0, "resampling factor for smoothing", ((lambda v: v >= 1), ">= 1")),
    _k("rotate", _bool, True, "rotation normalization"),
    _k("normalize", _bool, True, "coordinate normalization"),
    # feature learning
    _k("patch", int, 8, "square patch side in pixels", _pos),
    _k("n_patches", int, 50_000, "patches sampled from the corpus", _pos),
    _k("hidden", int, 2000, "autoencoder hidden units", _pos),
    _k("iters", int, 700, "L-BFGS iteration cap", _pos),
    _k("rho", float, 0.05, "sparsity target", _unit_open),
    _k("beta", float, 3.0, "sparsity weight", _nonneg),
    _k("lambda", float, 3e-3, "weight decay", _nonneg),
    _k("squared_activation", _bool, False, "average squared activations in the sparsity term"),
    _k("whiten_eps", float, 0.1, "whitening regularizer", _nonneg),
    _k("variance_keep", float, 0.99, "fraction of variance retained", _unit_half),
    _k("whiten_mode", str, "pca", "pca or zca", _choice("pca", "zca")),
    _k("lbfgs_history", int, 20, "L-BFGS memory", _pos),
    _k("seed", int, 0, "master seed for every random stream", _nonneg),
    # features and classifier
    _k("pool_rows", int, 3, "pooling grid rows", _pos),
    _k("pool_cols", int, 3, "pooling grid columns", _pos),
    _k("reg", float, 0.01, "relative covariance ridge", _pos),
    _k("quantile", float, 1.0, "threshold quantile of training distances", _unit_half),
    _k("slack", float, 1.5, "threshold multiplier", _pos),
    _k("calibration", str, "loo", "loo or resubstitution", _choice("loo", "resubstitution")),
    # protocol
    _k("folds", int, 4, "K for K-fold (0 or 1: single split)", _nonneg),
    _k("train_fraction", float, 0.25, "training fraction for a single split", _unit_half),
    _k("forgery_kind", str, "skilled", "skilled or random", _choice("skilled", "random")),
    _k("random_cap", int, 20, "random forgeries per impostor pair", _pos),
    _k("eer_mode", str, "user", "headline EER: user-averaged or pooled", _choice("user", "pooled")),
    # dataset layout
    _k("format", str, "svc2004", "svc2004 or column_mapped", _choice("svc2004", "column_mapped")),
    _k("columns", _columns, "x,y,t,pen_down,azimuth,altitude,pressure", "column map, comma separated"),
    _k("filename_rule", str, "U{user}S{index}.TXT", "file name glob with {user} and {index}"),
    _k("genuine_per_user", int, 20, "genuine files per user", _pos),
    _k("forgery_per_user", int, 20, "forgery files per user", _nonneg),
    _k("header_lines", int, 0, "lines to skip in column_mapped files", _nonneg),
]
KEY_INDEX = {k.name: k for k in KEYS}


def flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


class RunConfig:
    """Validated, immutable mapping of every config key to its value."""

    def __init__(self, values: Optional[dict] = None, sources: Optional[dict] = None):
        merged = {k.name: k.default for k in KEYS}
        for name, v in (values or {}).items():
            if name not in KEY_INDEX:
                raise ConfigError(f"unknown config key {name!r}")
            merged[name] = v
        self._values = merged
        self._sources = dict(sources or {})
        self._validate()

    @classmethod
    def from_sources(cls, file_path=None, flags: Optional[dict] = None) -> "RunConfig":
        values, sources = {}, {}
        if file_path is not None:
            for name, v in parse_config_text(_read(file_path), str(file_path)).items():
                values[name], sources[name] = v, f"config file {file_path}"
        for name, raw in (flags or {}).items():
            if raw is None:
                continue
            values[name] = _convert(name, raw, flag_name(name)) if isinstance(raw, str) else raw
            sources[name] = f"flag {flag_name(name)}"
        return cls(values, sources)

    def _validate(self):
        for k in KEYS:
            v = self._values[k.name]
            if k.check is not None and not k.check(v):
                where = self._sources.get(k.name, "default")
                raise ConfigError(f"{k.name}={v!r} ({where}) must be {k.requirement}")
        try:
            self.layout()
            self.preprocess()
            self.protocol()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self["patch"] > min(self["raster_width"], self["raster_height"]):
            raise ConfigError("patch must not exceed the raster size")

    def __getitem__(self, key):
        return self._values[key]

    def as_dict(self) -> dict:
        return dict(sorted(self._values.items()))

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.as_dict().items())

    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(self["raster_width"], self["raster_height"], self["smooth_factor"],
                                self["smooth"], self["rotate"], self["normalize"])

    def hyper(self) -> Hyperparams:
        return Hyperparams(rho=self["rho"], beta=self["beta"], lam=self["lambda"],
                           iterations=self["iters"], seed=self["seed"], hidden_size=self["hidden"],
                           squared_activation=self["squared_activation"])

    def whitening(self) -> WhiteningConfig:
        return WhiteningConfig(self["whiten_eps"], self["variance_keep"], self["whiten_mode"])

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(forgery_kind=self["forgery_kind"], folds=self["folds"],
                              train_fraction=self["train_fraction"], seed=self["seed"],
                              reg=self["reg"], quantile=self["quantile"], slack=self["slack"],
                              calibration=self["calibration"], random_cap=self["random_cap"],
                              pool_rows=self["pool_rows"], pool_cols=self["pool_cols"],
                              eer_mode=self["eer_mode"])

    def layout(self) -> DatasetLayout:
        return DatasetLayout(self["format"], tuple(self["columns"].split(",")), self["filename_rule"],
                             self["genuine_per_user"], self["forgery_per_user"], self["header_lines"])


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc


def _convert(name: str, raw: str, where: str):
    try:
        return KEY_INDEX[name].parse(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value {raw!r} for {name}: {exc}") from exc


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KEY_INDEX:
            raise ConfigError(f"{origin}:{n}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"{origin}:{n}: duplicate key {key!r}")
        out[key] = _convert(key, raw, f"{origin}:{n}")
    return out

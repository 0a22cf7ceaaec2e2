"""Strict JSON run configuration.

Unknown keys anywhere in the document are rejected so that a typo can never
silently fall back to a default.
"""

from dataclasses import MISSING, dataclass, field, fields, is_dataclass
import json
import typing
from typing import Optional

from .datasets import SyntheticSpec
from .errors import ConfigError, LayerProbeError
from .network import NUM_LAYERS, NetConfig, TrainConfig
from .reports import FORMATS


@dataclass
class DataConfig:
    source: str = "synthetic"
    cifar10_dir: Optional[str] = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    test_samples: int = 200
    whitening: bool = True
    zca_epsilon: float = 1e-5
    max_train: Optional[int] = None
    max_test: Optional[int] = None
    seed: int = 0


@dataclass
class ProbeConfig:
    depths: tuple = tuple(range(NUM_LAYERS + 1))
    knn_k: int = 1
    svm: bool = True
    svm_C: float = 1.0
    svm_bandwidth: Optional[float] = None
    pca_classes: Optional[tuple] = None


@dataclass
class BoundaryConfig:
    k_max: int = 20


@dataclass
class OutputConfig:
    directory: str = "run"
    report_format: str = "csv"
    checkpoint_every: int = 0
    log_every: int = 1


@dataclass
class RunConfig:
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    probes: ProbeConfig = field(default_factory=ProbeConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: Optional[int] = None

    def __post_init__(self):
        if self.data.source not in ("synthetic", "cifar10"):
            raise ConfigError(f"data.source must be 'synthetic' or 'cifar10', got {self.data.source!r}")
        if self.data.source == "cifar10" and not self.data.cifar10_dir:
            raise ConfigError("data.cifar10_dir is required when data.source is 'cifar10'")
        if self.output.report_format not in FORMATS:
            raise ConfigError(f"output.report_format must be one of {FORMATS}, got {self.output.report_format!r}")
        if self.seed is not None:
            self.apply_seed(self.seed)

    def apply_seed(self, seed):
        """A run-level seed overrides the network, training and data seeds."""
        self.seed = seed
        self.net.seed = seed
        self.train.seed = seed
        self.data.seed = seed


_SCALARS = {int: (int,), float: (int, float), str: (str,), bool: (bool,)}


def _check_type(value, tp, where):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _check_type(value, args[0], where)
    if is_dataclass(tp):
        return from_dict(tp, value, where)
    if tp is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        return tuple(value)
    allowed = _SCALARS.get(tp)
    if allowed is not None:
        if isinstance(value, bool) and tp is not bool:
            raise ConfigError(f"{where}: expected {tp.__name__}, got a boolean")
        if not isinstance(value, allowed):
            raise ConfigError(f"{where}: expected {tp.__name__}, got {type(value).__name__}")
        return tp(value) if tp is float else value
    return value


def from_dict(cls, data, where=""):
    """Build dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _check_type(value, hints[name], f"{where}.{name}" if where else name)
    try:
        return cls(**kwargs)
    except LayerProbeError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def parse_run_config(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    return from_dict(RunConfig, data)


def load_run_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_run_config(text)


def _default_of(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def describe(cls=RunConfig, prefix=""):
    """One line per config key with its default, for ``--help``."""
    lines = []
    for f in fields(cls):
        default = _default_of(f)
        key = f"{prefix}{f.name}"
        if is_dataclass(default):
            lines.extend(describe(type(default), key + "."))
        else:
            shown = list(default) if isinstance(default, tuple) else default
            lines.append(f"  {key} = {json.dumps(shown)}")
    return lines

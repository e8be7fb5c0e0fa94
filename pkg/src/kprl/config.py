"""Run configuration: every knob of the pipeline in one flat record.

A config file is plain ``key = value`` lines (``#`` comments and blank
lines ignored). Every key has a default, so an empty or missing file is
a valid configuration; unknown keys are rejected rather than ignored.
Command-line flags override file values.
"""

from dataclasses import dataclass, fields

from .corpus import RELATION_NAMES
from .errors import ConfigError
from .training import TrainConfig

DEFAULT_CLASS_LABELS = ("C1", "C2", "C3", "C4")

_TRAIN_FIELDS = tuple(f.name for f in fields(TrainConfig))


@dataclass
class RunConfig(TrainConfig):
    """TrainConfig plus data, encoder, and synthesis settings."""

    class_labels: tuple = DEFAULT_CLASS_LABELS
    relation_names: tuple = RELATION_NAMES
    embed_dim: int = 50
    embedding_path: str = ""
    seed: int = 42
    n_train: int = 600
    n_dev: int = 100
    n_test: int = 100
    noise_rate: float = 0.1
    workers: int = 1

    def validate(self):
        super().validate()
        if not self.class_labels:
            raise ConfigError("class_labels must not be empty")
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ConfigError("class_labels contains duplicates")
        if len(set(self.relation_names)) != len(self.relation_names):
            raise ConfigError("relation_names contains duplicates")
        if self.embed_dim <= 0:
            raise ConfigError(f"embed_dim must be positive, got {self.embed_dim}")
        for name in ("n_train", "n_dev", "n_test"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError(f"noise_rate must lie in [0, 1), got {self.noise_rate}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        return self

    def train_config(self):
        return TrainConfig(**{name: getattr(self, name) for name in _TRAIN_FIELDS})


_INT_KEYS = frozenset({
    "batch_size", "patience", "max_epochs", "h1", "h2", "ensemble_size",
    "top_k", "embed_dim", "seed", "n_train", "n_dev", "n_test", "workers",
})
_FLOAT_KEYS = frozenset({
    "lr", "clip_norm", "epsilon", "threshold", "prune_sigma",
    "join_threshold", "noise_rate",
})
_STR_KEYS = frozenset({"aggregate", "embedding_path"})
_FLOAT_TUPLE_KEYS = frozenset({"weight_grid"})
_STR_TUPLE_KEYS = frozenset({"class_labels", "relation_names"})

ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _FLOAT_TUPLE_KEYS | _STR_TUPLE_KEYS


def _parse_value(key, raw, path=None, line=None):
    def fail(reason):
        where = f" ({path} line {line})" if path else ""
        return ConfigError(f"bad value for {key!r}: {reason}{where}")

    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _FLOAT_TUPLE_KEYS:
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise fail(f"{raw!r} is not numeric") from None
    if key in _STR_TUPLE_KEYS:
        values = tuple(v.strip() for v in raw.split(",") if v.strip())
        if not values:
            raise fail("empty list")
        return values
    return raw  # plain string


def read_config_file(path):
    """Parse a ``key = value`` file into a typed dict (unknown keys fail)."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"{path} line {lineno}: expected key = value")
            key, _, raw = text.partition("=")
            key = key.strip()
            if key not in ALL_KEYS:
                raise ConfigError(f"{path} line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw, path, lineno)
    return values


def load_run_config(path=None, overrides=None):
    """Defaults, then the optional file, then explicit overrides."""
    values = {} if path is None else read_config_file(path)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in ALL_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return RunConfig(**values).validate()

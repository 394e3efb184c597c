"""Experiment configuration: a flat ``key = value`` text file.

Blank lines and ``#`` comments are ignored. Lists are comma separated,
booleans accept true/false/yes/no/1/0. ``seed`` has no default and must be
given. Unknown keys are rejected so that typos fail loudly.

Example::

    seed = 0
    protocol = single
    head = partcom
    epochs = 30
    pufs = true
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .shapes import CATALOG, TaskSpec, choose_classes


class ConfigError(ValueError):
    pass


PROTOCOLS = {"single": "single", "cross": "cross", "mixup": "confusing_mixup", "confusing_mixup": "confusing_mixup"}
HEADS = ("partcom", "gcp", "softmax")


@dataclass
class ExperimentConfig:
    seed: int
    # task
    protocol: str = "single"
    n_known: int = 5
    n_unknown: int = 5
    known: list[str] = field(default_factory=list)
    unknown: list[str] = field(default_factory=list)
    n_train_per_class: int = 40
    n_test_per_class: int = 20
    n_points: int = 512
    mix_radius: float = 0.4
    data_dir: str = ""
    # model
    head: str = "partcom"
    feature_dim: int = 64
    radius: float = 0.3
    init_gain: float = 1.0
    parts_per_class: int = 4
    reduced_dim: int = 16
    embed_dim: int = 320
    fusion: str = "cat"
    similarity: str = "cosine"
    similarity_scale: float = 10.0
    use_pb: bool = True
    use_pd: bool = True
    pufs: bool = True
    # losses
    w_pl: float = 0.1
    w_pb: float = 1.0
    w_pd: float = 1.0
    w_virtual: float = 0.1    # relative weight of the synthesized-unknown CE
    tau: float = 0.1
    delta: float = 0.1
    logit_scale: float = 10.0
    epsilon: float = 0.05
    sinkhorn_iters: int = 50
    rounding: str = "argmax"
    mix_low: float = 0.6
    mix_high: float = 1.0
    # optimisation
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 16

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {sorted(PROTOCOLS)}, got {self.protocol!r}")
        self.protocol = PROTOCOLS[self.protocol]
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.fusion not in ("cat", "max"):
            raise ConfigError(f"fusion must be cat or max, got {self.fusion!r}")
        if self.similarity not in ("dot", "cosine"):
            raise ConfigError(f"similarity must be dot or cosine, got {self.similarity!r}")
        if self.rounding not in ("argmax", "balanced"):
            raise ConfigError(f"rounding must be argmax or balanced, got {self.rounding!r}")
        for name in ("known", "unknown"):
            bad = [c for c in getattr(self, name) if c not in CATALOG]
            if bad:
                raise ConfigError(f"{name}: classes not in catalog: {bad}")
        if set(self.known) & set(self.unknown):
            raise ConfigError("a class cannot be both known and unknown")
        if self.known and len(self.known) != self.n_known:
            self.n_known = len(self.known)
        if self.unknown and len(self.unknown) != self.n_unknown:
            self.n_unknown = len(self.unknown)
        positive = ("n_known", "n_train_per_class", "n_test_per_class", "n_points", "feature_dim",
                    "parts_per_class", "reduced_dim", "embed_dim", "batch_size", "sinkhorn_iters")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if min(self.lr, self.tau, self.epsilon, self.radius, self.logit_scale, self.similarity_scale) <= 0:
            raise ConfigError("lr, tau, epsilon, radius and the scales must be positive")
        if not 0.5 < self.mix_low <= self.mix_high <= 1.0:
            raise ConfigError(f"mix range must sit inside (0.5, 1.0], got [{self.mix_low}, {self.mix_high}]")
        if min(self.w_pl, self.w_pb, self.w_pd, self.w_virtual) < 0:
            raise ConfigError("loss weights must be nonnegative")

    @property
    def K(self) -> int:
        return self.n_known

    def classes(self) -> tuple[list[str], list[str]]:
        """Known and unknown class names; drawn from the catalog by seed when not given."""
        if self.known:
            known = list(self.known)
            unknown = list(self.unknown) or [c for c in sorted(CATALOG) if c not in known][:self.n_unknown]
            return known, unknown
        known, unknown = choose_classes(self.n_known, self.n_unknown, self.seed)
        return known, (list(self.unknown) or unknown)

    def task_spec(self) -> TaskSpec:
        known, unknown = self.classes()
        if self.protocol == "confusing_mixup":
            unknown = []
        return TaskSpec(self.protocol, known, unknown, self.n_train_per_class, self.n_test_per_class,
                        self.seed, self.n_points, self.mix_radius)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _coerce(name: str, kind, raw: str):
    try:
        if kind is bool or kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        if kind in (list, "list[str]"):
            return [s.strip() for s in raw.split(",") if s.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None


def parse_config(text: str, source: str = "<config>", **overrides) -> ExperimentConfig:
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, kinds[key], value)
    values.update(overrides)
    if "seed" not in values:
        raise ConfigError(f"{source}: 'seed' is mandatory")
    return ExperimentConfig(**values)


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path), **overrides)

"""Run configuration: a flat INI file with one level of sections.

Example::

    [problem]
    kind = synthetic
    d = 20
    samples = 500

    [topology]
    kind = er
    n = 10
    p = 0.8

    [compressor]
    spec = random_k:5%

    [clip]
    kind = smooth
    tau = 1.0

    [algorithm]
    option = gc
    schedule = explicit
    eta = 0.05
    gamma = 0.5

    [run]
    T = 200
    b = 1
    seed = 0

Command-line overrides use dotted paths, e.g. ``--topology.n=5``.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConfig:
    kind: str = "synthetic"
    model: str = "logreg"
    d: int = 20
    samples: int = 500
    test_samples: int = 0
    noiseless: bool = False
    lam: float = 0.2
    hidden: int = 64
    L: float | None = None
    init: str = "zeros"
    train: str | None = None
    test: str | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "er"
    n: int = 10
    p: float = 0.8
    seed: int | None = None
    resample: bool = False


@dataclass(frozen=True)
class CompressorConfig:
    spec: str = "random_k:5%"


@dataclass(frozen=True)
class ClipConfig:
    kind: str = "smooth"
    tau: float = 1.0


@dataclass(frozen=True)
class AlgorithmConfig:
    option: str = "gc"
    schedule: str = "explicit"
    eta: float | None = None
    gamma: float | None = None
    sigma_g: float | None = None
    nu: float | None = None
    tau_scale: float = 1.0


@dataclass(frozen=True)
class PrivacyConfig:
    epsilon: float | None = None
    delta: float | None = None
    sigma_p: float | None = None


@dataclass(frozen=True)
class RunSection:
    T: int | None = None
    b: int = 1
    stride: int = 1
    seed: int = 0
    out: str = "runs/out"
    check_invariants: bool = True
    workers: int = 1


SECTIONS = {
    "problem": ProblemConfig,
    "topology": TopologyConfig,
    "compressor": CompressorConfig,
    "clip": ClipConfig,
    "algorithm": AlgorithmConfig,
    "privacy": PrivacyConfig,
    "run": RunSection,
}

# INI key -> dataclass field, where they differ
_KEY_ALIASES = {("problem", "lambda"): "lam"}
_FIELD_KEYS = {("problem", "lam"): "lambda"}

SWEEP_AXES = {
    "epsilon": ("privacy", "epsilon"),
    "eta": ("algorithm", "eta"),
    "gamma": ("algorithm", "gamma"),
    "tau": ("clip", "tau"),
    "k": ("compressor", "spec"),
    "p": ("topology", "p"),
    "n": ("topology", "n"),
}


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    compressor: CompressorConfig = field(default_factory=CompressorConfig)
    clip: ClipConfig = field(default_factory=ClipConfig)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "RunConfig":
        a, c, p, r = self.algorithm, self.clip, self.privacy, self.run
        if a.option not in ("dp", "gc"):
            raise ConfigError(f"algorithm.option must be dp or gc, got {a.option!r}")
        if a.schedule not in ("explicit", "thm2", "thm3", "thm4"):
            raise ConfigError(f"algorithm.schedule must be explicit, thm2, thm3 or thm4, got {a.schedule!r}")
        if c.kind not in ("smooth", "piecewise", "none"):
            raise ConfigError(f"clip.kind must be smooth, piecewise or none, got {c.kind!r}")
        if c.kind != "none" and not c.tau > 0:
            raise ConfigError(f"clip.tau must be > 0, got {c.tau}")
        if a.option == "dp":
            if c.kind == "none":
                raise ConfigError("option=dp requires clip.kind != none (sensitivity must be bounded)")
            if p.epsilon is None or p.delta is None:
                raise ConfigError("option=dp requires privacy.epsilon and privacy.delta")
        if a.option == "gc" and p.sigma_p is not None and p.sigma_p > 0:
            raise ConfigError("option=gc forbids privacy.sigma_p > 0")
        if p.epsilon is not None and not p.epsilon > 0:
            raise ConfigError(f"privacy.epsilon must be > 0, got {p.epsilon}")
        if p.delta is not None and not 0 < p.delta < 1:
            raise ConfigError(f"privacy.delta must be in (0, 1), got {p.delta}")
        if a.schedule == "explicit":
            if a.eta is None or a.gamma is None:
                raise ConfigError("schedule=explicit requires algorithm.eta and algorithm.gamma")
            if r.T is None:
                raise ConfigError("schedule=explicit requires run.T")
        if a.schedule in ("thm2", "thm3") and (p.epsilon is None or p.delta is None):
            raise ConfigError(f"schedule={a.schedule} requires privacy.epsilon and privacy.delta")
        if a.schedule == "thm3" and a.sigma_g is None:
            raise ConfigError("schedule=thm3 requires algorithm.sigma_g")
        if a.schedule == "thm4":
            if r.T is None or a.sigma_g is None or a.nu is None:
                raise ConfigError("schedule=thm4 requires run.T, algorithm.sigma_g and algorithm.nu")
        if r.T is not None and r.T < 0:
            raise ConfigError(f"run.T must be >= 0, got {r.T}")
        if r.b < 1 or r.stride < 1 or r.workers < 1:
            raise ConfigError("run.b, run.stride and run.workers must be >= 1")
        if self.topology.n < 1:
            raise ConfigError(f"topology.n must be >= 1, got {self.topology.n}")
        return self

    def to_text(self) -> str:
        """Canonical INI text; parsing it back yields an equal config."""
        out = io.StringIO()
        for name in SECTIONS:
            section = getattr(self, name)
            out.write(f"[{name}]\n")
            for f in fields(section):
                value = getattr(section, f.name)
                if value is None:
                    continue
                out.write(f"{_FIELD_KEYS.get((name, f.name), f.name)} = {_render(value)}\n")
            out.write("\n")
        return out.getvalue()

    def hash(self) -> str:
        """Git-style blob hash of the canonical text."""
        body = self.to_text().encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    def with_value(self, path: str, value: Any) -> "RunConfig":
        section, _, key = path.partition(".")
        return parse_config(self.to_text(), [f"--{section}.{key}={_render(value)}"])


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(section: str, name: str, raw: str, default: Any, annotation: str) -> Any:
    raw = raw.strip()
    if raw.lower() in ("", "none", "auto") and "None" in annotation:
        return None
    try:
        if "bool" in annotation:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in annotation:
            as_float = float(raw)
            if as_float != int(as_float):
                raise ValueError(raw)
            return int(as_float)
        if "float" in annotation:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{section}.{name}: cannot parse {raw!r} as {annotation}") from None
    return raw


def parse_config(text: str, overrides: list[str] | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for item in overrides or []:
        body = item[2:] if item.startswith("--") else item
        path, eq, value = body.partition("=")
        section, dot, key = path.partition(".")
        if not eq or not dot:
            raise ConfigError(f"override {item!r} must look like --section.key=value")
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r} in override {item!r}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    built = {}
    for name, cls in SECTIONS.items():
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                fname = _KEY_ALIASES.get((name, key), key)
                if fname not in known:
                    raise ConfigError(f"unknown key {name}.{key}")
                f = known[fname]
                kwargs[fname] = _convert(name, key, raw, f.default, str(f.type))
        built[name] = cls(**kwargs)
    return RunConfig(**built).validate()


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


def sweep_value(config: RunConfig, axis: str, value: str) -> RunConfig:
    """Config with one sweepable scalar replaced."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}")
    section, key = SWEEP_AXES[axis]
    if axis == "k":
        kind = config.compressor.spec.partition(":")[0]
        if kind == "identity":
            raise ConfigError("cannot sweep k for the identity compressor")
        return replace(config, compressor=CompressorConfig(f"{kind}:{value}")).validate()
    return config.with_value(f"{section}.{key}", value)

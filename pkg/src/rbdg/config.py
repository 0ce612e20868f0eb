"""Flat ``key = value`` configuration files.

Top-level keys configure the instance generator and the run; a key from
``Hyperparams`` at top level is a default for every method. ``[RBD-G-rew]``
style sections override hyperparameters per method and ``[grid]`` holds
comma-separated value lists for ``gridsearch``::

    # instance
    n_nodes = 20
    pert_ratio = 0.1
    alpha = 1e-3

    [RBD-G-rew]
    gamma = 100

    [grid]
    alpha = 1e-7, 1e-6
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .experiments import GRID_KEYS, METHODS, BaseConfig
from .solver import Hyperparams

FORMAT_VERSION = 1
PROFILES = ("default", "unperturbed")
RUN_KEYS = {
    "seed": int,
    "n_realizations": int,
    "method": str,
    "methods": str,
    "grid_realizations": int,
}


class ConfigError(ValueError):
    def __init__(self, message, lineno=None, source=None):
        where = ""
        if source is not None:
            where = f"{source}:{lineno}: " if lineno is not None else f"{source}: "
        elif lineno is not None:
            where = f"line {lineno}: "
        super().__init__(where + message)
        self.lineno = lineno


@dataclass(frozen=True)
class RunConfig:
    base: BaseConfig = field(default_factory=BaseConfig)
    hp: dict = field(default_factory=dict)
    seed: int = 0
    n_realizations: int = 25
    method: str = "RBD-G-rew"
    methods: tuple = METHODS
    grids: dict = field(default_factory=dict)
    grid_realizations: int = 5

    def hyperparams(self, method: str) -> Hyperparams:
        return self.hp.get(method, Hyperparams())


def _types(cls, exemplar):
    return {f.name: type(getattr(exemplar, f.name)) for f in fields(cls)}


BASE_TYPES = _types(BaseConfig, BaseConfig())
HP_TYPES = _types(Hyperparams, Hyperparams())


def _convert(key, raw, kind):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key} expects a boolean, got {raw!r}")
    if kind is int:
        f = float(raw)
        if f != int(f):
            raise ValueError(f"{key} expects an integer, got {raw!r}")
        return int(f)
    if kind is float:
        return float(raw)
    return raw


class _Builder:
    def __init__(self):
        self.base = {}
        self.run = {}
        self.hp_common = {}
        self.hp_method = {m: {} for m in METHODS}
        self.grids = {}

    def set(self, section, key, raw):
        if section is None:
            if key in BASE_TYPES:
                self.base[key] = _convert(key, raw, BASE_TYPES[key])
            elif key in RUN_KEYS:
                self.run[key] = _convert(key, raw, RUN_KEYS[key])
            elif key in HP_TYPES:
                self.hp_common[key] = _convert(key, raw, HP_TYPES[key])
            elif key == "version":
                if int(raw) != FORMAT_VERSION:
                    raise ValueError(f"unsupported config version {raw.strip()}")
            else:
                raise KeyError(key)
        elif section == "grid":
            if key not in GRID_KEYS:
                raise KeyError(key)
            vals = [float(v) for v in raw.split(",") if v.strip()]
            if not vals:
                raise ValueError(f"grid for {key} is empty")
            self.grids[key] = tuple(vals)
        else:
            if key not in HP_TYPES:
                raise KeyError(key)
            self.hp_method[section][key] = _convert(key, raw, HP_TYPES[key])

    def build(self) -> RunConfig:
        hp = {m: Hyperparams(**{**self.hp_common, **self.hp_method[m]}) for m in METHODS}
        run = dict(self.run)
        if "methods" in run:
            ms = tuple(m.strip() for m in run["methods"].split(",") if m.strip())
            bad = [m for m in ms if m not in METHODS]
            if bad or not ms:
                raise ValueError(f"unknown methods {bad}" if bad else "methods is empty")
            run["methods"] = ms
        if "method" in run and run["method"] not in METHODS:
            raise ValueError(f"unknown method {run['method']!r}")
        return RunConfig(base=BaseConfig(**self.base), hp=hp, grids=dict(self.grids), **run)


def parse_config(text: str, source=None, overrides=()) -> RunConfig:
    """Parse config text, then apply ``KEY=VALUE`` overrides.

    Override keys are either plain (``pert_ratio``, ``alpha``) or qualified by
    method (``RBD-G.alpha``); ``grid.alpha=1e-3,1e-2`` replaces a grid.
    """
    b = _Builder()
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno, source)
            name = line[1:-1].strip()
            if name not in METHODS and name != "grid":
                raise ConfigError(f"unknown section [{name}]", lineno, source)
            section = name
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno, source)
        _apply(b, section, key, value, lineno, source)

    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override must look like KEY=VALUE, got {item!r}", source="--override")
        section, dot, name = key.rpartition(".")
        if dot and section not in METHODS and section != "grid":
            raise ConfigError(f"unknown override section {section!r}", source="--override")
        _apply(b, section or None, name, value, None, "--override")

    try:
        return b.build()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), source=source) from exc


def _apply(b, section, key, value, lineno, source):
    try:
        b.set(section, key, value)
    except KeyError:
        where = "top level" if section is None else f"[{section}]"
        raise ConfigError(f"unknown key {key!r} at {where}", lineno, source) from None
    except ValueError as exc:
        raise ConfigError(str(exc), lineno, source) from None


def load_config(path=None, overrides=(), profile: str = "default") -> RunConfig:
    """Read ``path``, or the bundled ``profile`` when no path is given, and apply overrides.

    Bundled profiles: ``default`` is tuned on 10% rewiring, ``unperturbed``
    on exact graphs.
    """
    if path is None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
        name = f"{profile}.conf"
        text = resources.files("rbdg").joinpath(name).read_text(encoding="utf-8")
        return parse_config(text, name, overrides)
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from exc
    return parse_config(text, str(path), overrides)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig, header: str | None = None) -> str:
    """Serialize ``cfg``; ``parse_config(dump_config(c)) == c``."""
    lines = [f"# rbdg configuration, format version {FORMAT_VERSION}"]
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    lines.append(f"version = {FORMAT_VERSION}")
    lines.append("")
    for k in BaseConfig.keys():
        lines.append(f"{k} = {_fmt(getattr(cfg.base, k))}")
    lines.append(f"seed = {cfg.seed}")
    lines.append(f"n_realizations = {cfg.n_realizations}")
    lines.append(f"method = {cfg.method}")
    lines.append(f"methods = {', '.join(cfg.methods)}")
    lines.append(f"grid_realizations = {cfg.grid_realizations}")
    default = Hyperparams()
    for m in METHODS:
        hp = cfg.hyperparams(m)
        diff = [k for k in Hyperparams.keys() if getattr(hp, k) != getattr(default, k)]
        lines += ["", f"[{m}]"] + [f"{k} = {_fmt(getattr(hp, k))}" for k in diff]
    if cfg.grids:
        lines += ["", "[grid]"]
        lines += [f"{k} = {', '.join(repr(float(v)) for v in vals)}" for k, vals in cfg.grids.items()]
    return "\n".join(lines) + "\n"


def with_hyperparams(cfg: RunConfig, hp: dict) -> RunConfig:
    return replace(cfg, hp={**cfg.hp, **hp})

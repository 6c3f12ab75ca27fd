"""Flat ``key=value`` run configuration with dotted sections.

Example::

    dataset.kind=blobs
    dataset.n=2000
    architecture.type=nystrom
    architecture.kernel=rbf
    architecture.m=16
    optimizer.lr=0.001

Kernel strings accept the canonical forms (``linear``, ``rbf:gamma=0.5``,
``chi2exp:gamma=1``, ``chi2paper``) plus two config-only forms resolved
against training features: ``rbf`` / ``chi2exp`` (gamma from the bandwidth
heuristic) and ``rbf:scale=10`` (sigma = 10 x heuristic sigma).
"""

import dataclasses
from dataclasses import dataclass, field

ARCH_TYPES = ("dense", "deepfried", "nystrom", "multikernel", "multinystrom")
DATA_KINDS = ("blobs", "csv", "idx")


class ConfigError(ValueError):
    def __init__(self, msg, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {msg}" if where else msg)
        self.key = key
        self.line = line


@dataclass
class DatasetSpec:
    kind: str = "blobs"
    n: int = 2000
    d: int = 32
    classes: int = 10
    sep: float = 6.0
    path: str = ""
    labels_path: str = ""
    extractor_dim: int = 64
    extractor_shift: float = 0.0
    per_class: int = 0


@dataclass
class ArchSpec:
    type: str = "nystrom"
    kernel: str = ""
    m: int = 16
    adaptive: bool = True
    D: int = 1024
    stacks: int = 1
    kernels: tuple = ()
    groups: int = 4
    landmark_pool: str = "labeled"


@dataclass
class OptimSpec:
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 200
    patience: int = 20


@dataclass
class Seeds:
    data: int = 0
    init: int = 0
    landmarks: int = 0

    def offset(self, r):
        return Seeds(self.data + r, self.init + r, self.landmarks + r)


@dataclass
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    architecture: ArchSpec = field(default_factory=ArchSpec)
    optimizer: OptimSpec = field(default_factory=OptimSpec)
    seed: Seeds = field(default_factory=Seeds)
    output: str = "out"

    def replace(self, **sections):
        """Copy with section fields overridden, e.g.
        ``cfg.replace(architecture={"m": 8})``."""
        out = dataclasses.replace(self)
        for name, updates in sections.items():
            cur = getattr(self, name)
            if isinstance(updates, dict):
                setattr(out, name, dataclasses.replace(cur, **updates))
            else:
                setattr(out, name, updates)
        return out


# keys that make sense per dataset kind / architecture type; others are not rendered
_DATA_KEYS = {
    "blobs": ("n", "d", "classes", "sep"),
    "csv": ("path",),
    "idx": ("path", "labels_path"),
}
_DATA_COMMON = ("extractor_dim", "extractor_shift", "per_class")
_ARCH_KEYS = {
    "dense": ("D",),
    "deepfried": ("stacks", "adaptive"),
    "nystrom": ("kernel", "m", "adaptive", "landmark_pool"),
    "multikernel": ("kernels", "m", "adaptive", "landmark_pool"),
    "multinystrom": ("kernel", "groups", "m", "adaptive", "landmark_pool"),
}
_REQUIRED = {"nystrom": ("kernel",), "multikernel": ("kernels",), "multinystrom": ("kernel",)}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ";".join(v)
    return str(v)


def _conv(kind, text, key, line):
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is tuple:
            return tuple(p.strip() for p in text.split(";") if p.strip())
        return kind(text)
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as {kind.__name__}", key, line) from None


def _field_types(cls):
    hints = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple}
    return {f.name: hints[f.type if isinstance(f.type, str) else f.type.__name__]
            for f in dataclasses.fields(cls)}


_SECTIONS = {"dataset": DatasetSpec, "architecture": ArchSpec, "optimizer": OptimSpec, "seed": Seeds}


def parse_config(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected key=value", line=lineno)
        key, val = (p.strip() for p in line.split("=", 1))
        if key in values:
            raise ConfigError("duplicate key", key, lineno)
        values[key] = (val, lineno)

    cfg = RunConfig()
    seen = set()
    for key, (val, lineno) in values.items():
        if key == "output.path":
            cfg.output = val
            continue
        sec, _, name = key.partition(".")
        if sec not in _SECTIONS or name not in _field_types(_SECTIONS[sec]):
            raise ConfigError("unknown key", key, lineno)
        setattr(getattr(cfg, sec), name, _conv(_field_types(_SECTIONS[sec])[name], val, key, lineno))
        seen.add(key)

    a, d = cfg.architecture, cfg.dataset
    if a.type not in ARCH_TYPES:
        raise ConfigError(f"must be one of {ARCH_TYPES}", "architecture.type", values.get("architecture.type", (0, None))[1])
    if d.kind not in DATA_KINDS:
        raise ConfigError(f"must be one of {DATA_KINDS}", "dataset.kind", values.get("dataset.kind", (0, None))[1])
    for req in _REQUIRED.get(a.type, ()):
        if f"architecture.{req}" not in seen:
            raise ConfigError(f"required for architecture {a.type}", f"architecture.{req}")
    if d.kind in ("csv", "idx") and not d.path:
        raise ConfigError("required for file datasets", "dataset.path")
    if d.kind == "idx" and not d.labels_path:
        raise ConfigError("required for idx datasets", "dataset.labels_path")
    if a.landmark_pool not in ("labeled", "all"):
        raise ConfigError("must be 'labeled' or 'all'", "architecture.landmark_pool")
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def render_config(cfg):
    d, a = cfg.dataset, cfg.architecture
    lines = [f"dataset.kind={d.kind}"]
    lines += [f"dataset.{k}={_fmt(getattr(d, k))}" for k in _DATA_KEYS[d.kind] + _DATA_COMMON]
    lines.append(f"architecture.type={a.type}")
    lines += [f"architecture.{k}={_fmt(getattr(a, k))}" for k in _ARCH_KEYS[a.type]]
    lines += [f"optimizer.{f.name}={_fmt(getattr(cfg.optimizer, f.name))}" for f in dataclasses.fields(OptimSpec)]
    lines += [f"seed.{f.name}={getattr(cfg.seed, f.name)}" for f in dataclasses.fields(Seeds)]
    lines.append(f"output.path={cfg.output}")
    return "\n".join(lines) + "\n"

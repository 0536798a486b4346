"""Flat dotted-key configuration: parsing with defaults, strict unknown-key
rejection, deterministic serialization and a content hash for provenance."""

import hashlib

__all__ = ["ConfigError", "KNOWN_KEYS", "parse_config", "serialize_config",
           "config_hash"]


class ConfigError(Exception):
    """Bad configuration; carries the offending key and line number."""

    def __init__(self, message, key=None, line=None):
        if key is not None and line is not None:
            message = "%s (key %r, line %d)" % (message, key, line)
        elif key is not None:
            message = "%s (key %r)" % (message, key)
        super().__init__(message)
        self.key = key
        self.line = line


def _bool(text):
    if text in ("true", "yes", "1", "on"):
        return True
    if text in ("false", "no", "0", "off"):
        return False
    raise ValueError("not a boolean: %r" % text)


# key -> (parser, default).  A None default means "unset".
KNOWN_KEYS = {
    "mesh.generate": (str, "16x16"),       # NXxNY; ignored if mesh.file is set
    "mesh.file": (str, None),
    "fluid.re": (float, 100.0),
    "time.k": (float, 0.01),
    "time.T": (float, 0.1),
    "run.init_mode": (str, "be"),          # "be" | "mms"
    "output.dir": (str, "out"),
    "output.snapshot_every": (int, 10),
    "output.timestamp": (_bool, True),
    "solver.rtol": (float, 1e-10),
    "solver.atol": (float, 1e-14),
    "solver.maxiter": (int, 0),
    "solver.preconditioner": (str, "diagonal"),
    "study.levels": (int, 3),
    "study.alpha": (float, 1.5),
    "verify.trials": (int, 50),
    "verify.seed": (int, 0),
}

_FORMATTERS = {float: lambda v: "%.17g" % v, int: str, _bool: lambda v: str(v).lower(),
               str: str}


def parse_config(text):
    """Parse "key = value" lines into a fully-defaulted config dict.

    Blank lines and '#' comments are allowed; keys outside the known table
    are rejected so typos cannot silently fall back to defaults.
    """
    cfg = {key: default for key, (_, default) in KNOWN_KEYS.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError("unknown configuration key", key=key, line=lineno)
        if key in seen:
            raise ConfigError("duplicate key", key=key, line=lineno)
        seen.add(key)
        parser = KNOWN_KEYS[key][0]
        try:
            cfg[key] = parser(value)
        except ValueError as exc:
            raise ConfigError("bad value %r: %s" % (value, exc),
                              key=key, line=lineno)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg["mesh.file"] is None:
        gen = cfg["mesh.generate"]
        parts = gen.lower().split("x")
        if len(parts) != 2 or not all(p.isdigit() and int(p) > 0 for p in parts):
            raise ConfigError("expected NXxNY", key="mesh.generate")
    if cfg["fluid.re"] <= 0:
        raise ConfigError("Reynolds number must be positive", key="fluid.re")
    if cfg["time.k"] <= 0 or cfg["time.T"] < cfg["time.k"]:
        raise ConfigError("need 0 < time.k <= time.T", key="time.k")
    n = round(cfg["time.T"] / cfg["time.k"])
    if abs(n * cfg["time.k"] - cfg["time.T"]) > 1e-9 * cfg["time.T"]:
        raise ConfigError("time.T must be an integer multiple of time.k",
                          key="time.T")
    if cfg["run.init_mode"] not in ("be", "mms"):
        raise ConfigError("init_mode must be 'be' or 'mms'", key="run.init_mode")
    if cfg["output.snapshot_every"] < 1:
        raise ConfigError("cadence must be at least 1",
                          key="output.snapshot_every")
    if cfg["study.levels"] < 2:
        raise ConfigError("need at least two levels", key="study.levels")
    if cfg["study.alpha"] <= 1:
        raise ConfigError("the mesh/step coupling needs alpha > 1",
                          key="study.alpha")


def serialize_config(cfg):
    """Deterministic text form of a resolved config; re-parses identically."""
    lines = []
    for key in sorted(KNOWN_KEYS):
        value = cfg[key]
        if value is None:
            continue
        fmt = _FORMATTERS[KNOWN_KEYS[key][0]]
        lines.append("%s = %s" % (key, fmt(value)))
    return "\n".join(lines) + "\n"


def config_hash(cfg):
    """Short content hash of the resolved configuration."""
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]

"""Plain-text ``key=value`` files used for specs, sidecars and run configs."""

from dataclasses import fields


def parse_kv(text):
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(mapping):
    return "".join(f"{k}={_fmt(v)}\n" for k, v in mapping.items())


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def dataclass_to_kv(obj):
    return format_kv({f.name: getattr(obj, f.name) for f in fields(obj)})


def dataclass_from_kv(cls, mapping):
    """Build ``cls`` from string values, coercing by each field's default type.

    Unknown keys raise; missing keys keep the dataclass default.
    """
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in mapping.items():
        if key not in known:
            raise ValueError(f"unknown key {key!r} for {cls.__name__}")
        kwargs[key] = _coerce(raw, type(known[key].default))
    return cls(**kwargs)


def _coerce(raw, kind):
    if not isinstance(raw, str):
        return raw
    if kind is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is tuple:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return raw


def derive_seed(root, *keys):
    """Deterministic child seed of ``root`` for a named component.

    Keys may be strings or ints; the same (root, keys) always yields the
    same 32-bit seed.
    """
    import zlib

    import numpy as np

    spawn = tuple(zlib.crc32(str(k).encode()) for k in keys)
    return int(np.random.SeedSequence(int(root), spawn_key=spawn).generate_state(1)[0])

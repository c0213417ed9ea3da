"""Scenario configuration: ``[section]`` / ``key = value`` text with typed values.

Values are integers, reals, complex numbers written ``a+bi``, strings (bare
words or double-quoted) and bracketed lists, which may nest.  Every problem
found in a file is reported together, each with its line number.
"""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

CONSTRUCTIONS = ("line", "sum", "extension", "theta_pair")
STAGES = ("canonical", "coordinate", "theta_pair")
MONITORS = ("stage", "residuals", "moser", "density", "stepwise")
SNAPSHOT_FIELDS = ("metric", "curvature", "sigma", "density")

_INT = re.compile(r"[+-]?\d+\Z")
_NUM = r"(?:\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
_REAL = re.compile(rf"[+-]?(?:{_NUM}|inf|nan)\Z")
_COMPLEX = re.compile(rf"(?:[+-]?{_NUM})?[+-]?{_NUM}i\Z")
_WORD = re.compile(r"[A-Za-z_][\w.\-/]*\Z")
_KEY = re.compile(r"[A-Za-z_]\w*\Z")


class ConfigError(ValueError):
    """All problems found in one config, as ``(line, message)`` pairs (line 0: command line)."""

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = sorted(errors)
        super().__init__("\n".join(f"line {ln}: {msg}" if ln else msg for ln, msg in self.errors))


def _split_top(body: str) -> list[str]:
    parts, depth, quote, cur = [], 0, False, []
    for ch in body:
        if ch == '"':
            quote = not quote
        elif not quote and ch == "[":
            depth += 1
        elif not quote and ch == "]":
            depth -= 1
            if depth < 0:
                raise ValueError("unbalanced ']'")
        if ch == "," and depth == 0 and not quote:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth or quote:
        raise ValueError("unterminated list or string")
    parts.append("".join(cur))
    return parts


def parse_value(text: str) -> Any:
    """Typed value from its text form; raises ``ValueError`` with a short reason."""
    s = text.strip()
    if not s:
        raise ValueError("empty value")
    if s.startswith("["):
        if not s.endswith("]"):
            raise ValueError(f"list {s!r} is not closed")
        inner = s[1:-1].strip()
        if not inner:
            return []
        return [parse_value(p) for p in _split_top(inner)]
    if s.startswith('"'):
        if len(s) < 2 or not s.endswith('"') or '"' in s[1:-1]:
            raise ValueError(f"bad string {s!r}")
        return s[1:-1]
    if _INT.match(s):
        return int(s)
    if _REAL.match(s):
        return float(s)
    if _COMPLEX.match(s):
        return complex(s.replace("i", "j"))
    if _WORD.match(s):
        return s
    raise ValueError(f"cannot read value {s!r}")


def format_value(v: Any) -> str:
    """Inverse of :func:`parse_value` for the config echo."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    if isinstance(v, complex):
        return f"{v.real!r}{'+' if v.imag >= 0 else '-'}{abs(v.imag)!r}i"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "auto"
    if isinstance(v, str) and (not _WORD.match(v) or _reads_as_other(v)):
        return f'"{v}"'
    return str(v)


def _reads_as_other(word: str) -> bool:
    """True for bare words such as ``inf`` that would not read back as strings."""
    return bool(_INT.match(word) or _REAL.match(word) or _COMPLEX.match(word))


def tokenize(text: str) -> tuple[dict, list[tuple[int, str]]]:
    """Raw entries ``{(section, key): (value, line)}`` plus syntax errors.

    Section headers are recorded under ``(section, None)`` so that problems
    with keys that are absent can point at their section.
    """
    entries: dict[tuple[str, str | None], tuple[Any, int]] = {}
    errors: list[tuple[int, str]] = []
    section = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            m = re.fullmatch(r"\[\s*([A-Za-z_]\w*)\s*\]", line)
            if not m:
                errors.append((ln, f"bad section header {line!r}"))
                section = None
                continue
            section = m.group(1)
            if section not in SCHEMA:
                errors.append((ln, f"unknown section [{section}]"))
                section = None
            else:
                entries.setdefault((section, None), (None, ln))
            continue
        if "=" not in line:
            errors.append((ln, f"expected 'key = value', got {line!r}"))
            continue
        key, val = (p.strip() for p in line.split("=", 1))
        if not _KEY.match(key):
            errors.append((ln, f"bad key {key!r}"))
            continue
        if section is None:
            errors.append((ln, f"key {key!r} outside a known section"))
            continue
        if key not in SCHEMA[section]:
            errors.append((ln, f"unknown key {section}.{key}"))
            continue
        if (section, key) in entries:
            errors.append((ln, f"duplicate key {section}.{key} (first on line {entries[section, key][1]})"))
            continue
        try:
            entries[section, key] = (parse_value(val), ln)
        except ValueError as exc:
            errors.append((ln, f"{section}.{key}: {exc}"))
    return entries, errors


def _strip_comment(line: str) -> str:
    quote = False
    for i, ch in enumerate(line):
        if ch == '"':
            quote = not quote
        elif ch == "#" and not quote:
            return line[:i]
    return line


# ---------------------------------------------------------------------------
# typed sections


@dataclass
class TorusConfig:
    n: int
    grid: list[int]
    tau: list[complex] | None = None


@dataclass
class BundleConfig:
    construction: str
    degrees: list | None = None
    metric_perturbation: float = 0.0
    class_constant: list[complex] = field(default_factory=list)
    class_exact: float = 0.0
    class_mode: int = 1
    frame_amplitude: float = 0.0
    name: str = ""


@dataclass
class FiltrationConfig:
    stages: list[str] = field(default_factory=list)
    expected_degrees: list[float] = field(default_factory=list)


@dataclass
class FlowConfig:
    t_max: float
    dt: float | None = None
    cfl: float = 0.5
    sample_every: int = 10
    snapshot_every: int = 1000
    monitors: list[str] = field(default_factory=lambda: list(MONITORS))


@dataclass
class DiagnosticsConfig:
    epsilon: float | None = None
    radii: list[float] = field(default_factory=lambda: [2.0, 3.0, 4.0])
    q: float = 8.0
    p: float = 2.0
    window: list[float] | None = None
    k_grid_max: int = 8
    fit_cap: float = 1e6
    moser_radius: float | None = None


@dataclass
class OutputConfig:
    directory: str = "out"
    precision: int = 17
    snapshot_fields: list[str] = field(default_factory=lambda: list(SNAPSHOT_FIELDS))


@dataclass
class ScenarioConfig:
    torus: TorusConfig
    bundle: BundleConfig
    filtration: FiltrationConfig
    flow: FlowConfig
    diagnostics: DiagnosticsConfig
    output: OutputConfig

    def to_dict(self) -> dict:
        return asdict(self)

    def echo(self) -> str:
        """Config text with every key, defaults included; parses back to the same config."""
        out = []
        for sec, vals in self.to_dict().items():
            out.append(f"[{sec}]")
            for k, v in vals.items():
                if v is None and (sec, k) == ("bundle", "degrees"):
                    continue
                out.append(f"{k} = {format_value(v)}")
            out.append("")
        return "\n".join(out)


# converters: value -> coerced value, raising ValueError


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {format_value(v)}")
    return v


def _real(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a real number, got {format_value(v)}")
    return float(v)


def _complex(v):
    if isinstance(v, bool) or not isinstance(v, (int, float, complex)):
        raise ValueError(f"expected a complex number, got {format_value(v)}")
    return complex(v)


def _str(v):
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {format_value(v)}")
    return v


def _auto(conv):
    def f(v):
        if v == "auto":
            return None
        return conv(v)
    return f


def _list(conv):
    def f(v):
        if not isinstance(v, list):
            v = [v]
        return [conv(x) for x in v]
    return f


def _raw(v):
    return v


_REQUIRED = object()

# section -> key -> (converter, default or _REQUIRED)
SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "torus": {"n": (_int, _REQUIRED), "grid": (_list(_int), _REQUIRED),
              "tau": (_auto(_list(_complex)), None)},
    "bundle": {"construction": (_str, _REQUIRED), "degrees": (_raw, None),
               "metric_perturbation": (_real, 0.0), "class_constant": (_list(_complex), []),
               "class_exact": (_real, 0.0), "class_mode": (_int, 1),
               "frame_amplitude": (_real, 0.0), "name": (_str, "")},
    "filtration": {"stages": (_list(_str), []), "expected_degrees": (_list(_real), [])},
    "flow": {"t_max": (_real, _REQUIRED), "dt": (_auto(_real), None), "cfl": (_real, 0.5),
             "sample_every": (_int, 10), "snapshot_every": (_int, 1000),
             "monitors": (_list(_str), list(MONITORS[:4]))},
    "diagnostics": {"epsilon": (_auto(_real), None), "radii": (_list(_real), [2.0, 3.0, 4.0]),
                    "q": (_real, 8.0), "p": (_real, 2.0), "window": (_auto(_list(_real)), None),
                    "k_grid_max": (_int, 8), "fit_cap": (_real, 1e6),
                    "moser_radius": (_auto(_real), None)},
    "output": {"directory": (_str, "out"), "precision": (_int, 17),
               "snapshot_fields": (_list(_str), list(SNAPSHOT_FIELDS))},
}

_CLASSES = {"torus": TorusConfig, "bundle": BundleConfig, "filtration": FiltrationConfig,
            "flow": FlowConfig, "diagnostics": DiagnosticsConfig, "output": OutputConfig}


def build_config(entries: dict, errors: list[tuple[int, str]] | None = None) -> ScenarioConfig:
    """Typed, validated config from raw entries; raises :class:`ConfigError` listing everything."""
    errors = list(errors or [])
    values: dict[str, dict[str, Any]] = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (conv, default) in keys.items():
            if (sec, key) in entries:
                raw, ln = entries[sec, key]
                try:
                    values[sec][key] = conv(raw)
                except ValueError as exc:
                    errors.append((ln, f"{sec}.{key}: {exc}"))
            elif default is _REQUIRED:
                ln = entries.get((sec, None), (None, 0))[1]
                errors.append((ln, f"missing required key {sec}.{key}"))
            else:
                values[sec][key] = list(default) if isinstance(default, list) else default
    line = {k: ln for k, (_, ln) in entries.items()}
    _check(values, line, errors)
    if errors:
        raise ConfigError(errors)
    if values["torus"]["tau"] is None:
        values["torus"]["tau"] = [1j] * values["torus"]["n"]
    return ScenarioConfig(**{sec: _CLASSES[sec](**vals) for sec, vals in values.items()})


def _check(values: dict, line: dict, errors: list) -> None:
    """Constraint checks; only keys that converted are inspected."""

    def err(sec, key, msg):
        errors.append((line.get((sec, key), line.get((sec, None), 0)), f"{sec}.{key}: {msg}"))

    tor, bun, fil, flo, dia, out = (values[s] for s in SCHEMA)
    n = tor.get("n")
    if n is not None and n < 1:
        err("torus", "n", "must be at least 1")
        n = None
    if n is not None and "grid" in tor:
        g = tor["grid"]
        if len(g) != 2 * n:
            err("torus", "grid", f"needs {2 * n} sizes for n={n}, got {len(g)}")
        for m in g:
            if m % 2 or m < 8:
                err("torus", "grid", f"sizes must be even and >= 8, got {m}")
                break
    if n is not None and tor.get("tau") is not None:
        if len(tor["tau"]) != n:
            err("torus", "tau", f"needs {n} moduli, got {len(tor['tau'])}")
        if any(t.imag <= 0 for t in tor["tau"]):
            err("torus", "tau", "moduli need positive imaginary part")

    con = bun.get("construction")
    if con is not None and con not in CONSTRUCTIONS:
        err("bundle", "construction", f"unknown construction {con!r}, expected one of {', '.join(CONSTRUCTIONS)}")
        con = None
    if con is not None and n is not None:
        _check_degrees(con, n, bun, err)
    if bun.get("class_constant") and n is not None and len(bun["class_constant"]) > n:
        err("bundle", "class_constant", f"at most {n} components")
    if bun.get("class_mode", 1) < 1:
        err("bundle", "class_mode", "must be at least 1")
    if con in ("line", "theta_pair") and (bun.get("class_constant") or bun.get("class_exact")):
        err("bundle", "class_constant" if bun.get("class_constant") else "class_exact",
            f"extension class given for construction {con!r}")
    if bun.get("frame_amplitude") and con not in ("sum", "extension"):
        err("bundle", "frame_amplitude", "frame change needs a two-block sum or extension")
    if abs(bun.get("metric_perturbation", 0.0)) > 1.0:
        err("bundle", "metric_perturbation", "amplitude above 1 is not supported")
    if abs(bun.get("frame_amplitude", 0.0)) >= 0.5:
        err("bundle", "frame_amplitude", "must be below 0.5 to keep the frame invertible")

    stages = fil.get("stages", [])
    for s in stages:
        if s not in STAGES:
            err("filtration", "stages", f"unknown stage {s!r}, expected one of {', '.join(STAGES)}")
        elif s == "theta_pair" and con not in (None, "theta_pair"):
            err("filtration", "stages", "stage 'theta_pair' needs construction theta_pair")
        elif s in ("canonical", "coordinate") and con not in (None, "sum", "extension"):
            err("filtration", "stages", f"stage {s!r} needs a sum or extension bundle")
        elif s == "coordinate" and con == "extension":
            err("filtration", "stages", "stage 'coordinate' is for direct sums; use 'canonical'")
    if len(stages) > 1:
        err("filtration", "stages", "only single-stage chains are supported for rank-two bundles")
    if fil.get("expected_degrees") and len(fil["expected_degrees"]) != len(stages):
        err("filtration", "expected_degrees",
            f"{len(fil['expected_degrees'])} values for {len(stages)} stages")

    if flo.get("t_max", 0.0) < 0 or flo.get("t_max", 0.0) != flo.get("t_max", 0.0):
        err("flow", "t_max", "must be >= 0")
    if flo.get("dt") is not None and not flo["dt"] > 0:
        err("flow", "dt", "must be positive or auto")
    if not flo.get("cfl", 0.5) > 0:
        err("flow", "cfl", "must be positive")
    for key in ("sample_every", "snapshot_every"):
        if key in flo and flo[key] < 1:
            err("flow", key, "must be >= 1")
    for m in flo.get("monitors", []):
        if m not in MONITORS:
            err("flow", "monitors", f"unknown monitor {m!r}, expected some of {', '.join(MONITORS)}")

    if dia.get("epsilon") is not None and dia["epsilon"] < 0:
        err("diagnostics", "epsilon", "must be >= 0")
    if any(r < 2 for r in dia.get("radii", [])):
        err("diagnostics", "radii", "radii are in grid spacings and must be >= 2")
    if n is not None and "q" in dia and not dia["q"] > n:
        err("diagnostics", "q", f"must exceed n={n}")
    if "p" in dia and not dia["p"] > 0:
        err("diagnostics", "p", "must be positive")
    w = dia.get("window")
    if w is not None and (len(w) != 2 or not w[0] < w[1]):
        err("diagnostics", "window", "needs [t_start, t_end] with t_start < t_end")
    if "k_grid_max" in dia and not 0 <= dia["k_grid_max"] <= 32:
        err("diagnostics", "k_grid_max", "must be in 0..32")
    if "fit_cap" in dia and not dia["fit_cap"] > 0:
        err("diagnostics", "fit_cap", "must be positive")
    if dia.get("moser_radius") is not None and not dia["moser_radius"] > 0:
        err("diagnostics", "moser_radius", "must be positive or auto")

    if "precision" in out and not 1 <= out["precision"] <= 17:
        err("output", "precision", "must be in 1..17")
    for f in out.get("snapshot_fields", []):
        if f not in SNAPSHOT_FIELDS:
            err("output", "snapshot_fields", f"unknown field {f!r}")
    if not out.get("directory", "out"):
        err("output", "directory", "must not be empty")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _degree_vector(v, n: int):
    """A degree vector: an integer (n = 1, or the first direction) or a list of n integers."""
    if _is_int(v):
        return [v] + [0] * (n - 1)
    if isinstance(v, list) and len(v) == n and all(_is_int(x) for x in v):
        return list(v)
    raise ValueError(f"bad degree vector {format_value(v)} for n={n}")


def _check_degrees(con: str, n: int, bun: dict, err) -> None:
    deg = bun.get("degrees")
    if con == "theta_pair":
        if deg is not None:
            err("bundle", "degrees", "theta_pair fixes its own degrees")
        if n != 2:
            err("bundle", "construction", "theta_pair needs n = 2")
        return
    if deg is None:
        err("bundle", "degrees", f"required for construction {con!r}")
        return
    try:
        if con == "line":
            if isinstance(deg, list) and len(deg) == 1 and isinstance(deg[0], list):
                deg = deg[0]
            bun["degrees"] = [_degree_vector(deg, n)]
        else:
            if not isinstance(deg, list) or len(deg) != 2:
                raise ValueError(f"{con} needs two degree vectors [sub, quot]")
            bun["degrees"] = [_degree_vector(d, n) for d in deg]
    except ValueError as exc:
        err("bundle", "degrees", str(exc))
        bun.pop("degrees", None)


def parse_config(text: str) -> ScenarioConfig:
    entries, errors = tokenize(text)
    return build_config(entries, errors)


def load_config(path: str, overrides: dict | None = None) -> ScenarioConfig:
    """Read and validate a config file; ``overrides`` maps ``(section, key)`` to values."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    entries, errors = tokenize(text)
    for k, v in (overrides or {}).items():
        entries[k] = (v, 0)
    return build_config(entries, errors)

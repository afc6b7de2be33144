"""Experiment specifications and their on-disk format.

A spec is a sectioned key-value text file::

    [experiment]
    kind = scan-epsilon
    out = scan

    [system]
    n = 9
    epsilon = 0.05
    sigma = 1.0
    dt = 0.001
    seed = 12345

    [scan-epsilon]
    eps_grid = 5,1,0.2,0.05
    horizon = 2000
    ...

Sections other than ``experiment``, ``system`` and the section named after the
kind are rejected, as are unknown keys (no silent typos).  Grids, horizons and
thresholds live here, never in run logic.  ``to_text`` produces a canonical
rendering and ``parse_text(to_text(spec)) == spec`` holds exactly.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .model import L96Config


class ConfigError(ValueError):
    """Malformed or unknown specification content."""


# key -> (type tag, default); type tags: int, float, bool, str, floats
_SYSTEM_KEYS = {
    "n": ("int", 9),
    "epsilon": ("float", 1.0),
    "sigma": ("float", 1.0),            # uniform amplitude on forced modes
    "sigma_list": ("str", ""),          # full per-coordinate list (custom mode)
    "dt": ("float", 1e-3),
    "seed": ("int", 12345),
    "mode": ("str", "degenerate"),
    "tamed": ("bool", True),
}

KIND_PARAMS: dict[str, dict[str, tuple[str, object]]] = {
    "simulate": {
        "horizon": ("float", 10.0),
        "thin": ("int", 10),
        "x0": ("str", "gaussian"),      # gaussian | zero | invariant
        "x0_scale": ("float", 1.0),
    },
    "lyapunov": {
        "horizon": ("float", 2000.0),
        "burn_in": ("float", -1.0),     # -1 = 10% of horizon, at least 10
        "batches": ("int", 20),
    },
    "scan-epsilon": {
        "eps_grid": ("floats", [5.0, 1.0, 0.2, 0.05]),
        "horizon": ("float", 2000.0),
        "burn_in": ("float", -1.0),
        "batches": ("int", 20),
    },
    "moment-lyap": {
        "p_grid": ("floats", [0.02, 0.05, 0.08]),
        "horizon": ("float", 80.0),
        "paths": ("int", 1200),
        "bootstrap": ("int", 200),
    },
    "sync-test": {
        "eps_grid": ("floats", [5.0, 0.05]),
        "pairs": ("int", 20),
        "horizon": ("float", 200.0),
        "sync_tol": ("float", 1e-6),
        "thin": ("int", 100),
    },
    "escape-time": {
        "delta_grid": ("floats", [1e-2, 1e-4, 1e-6, 1e-8]),
        "threshold": ("float", 1.0),
        "paths": ("int", 160),
        "horizon": ("float", 400.0),
        "max_censor_fraction": ("float", 0.5),
    },
    "stationary-hist": {
        "horizon": ("float", 600.0),
        "burn_in": ("float", -1.0),
        "bins": ("int", 60),
        "hist_max": ("float", 3.0),
        "small_radius": ("float", 0.01),
        "large_radius": ("float", 0.1),
        "batches": ("int", 20),
    },
    "cap-verify": {
        "depth_cap": ("int", 16),
        "generators": ("str", "all"),   # all | local
        "emit_basis": ("str", ""),
    },
    "super-lyap": {
        "eta_fraction": ("float", 0.25),  # eta = fraction * eta_star
        "radii": ("floats", [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]),
        "horizon": ("float", 1.0),
        "paths": ("int", 1000),
        "ratio_cap": ("float", 1e3),
    },
}

KINDS = tuple(KIND_PARAMS)


@dataclass
class ExperimentSpec:
    kind: str
    system: L96Config
    params: dict = field(default_factory=dict)
    out: str = ""

    def __post_init__(self):
        if self.kind not in KIND_PARAMS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; "
                              f"expected one of {', '.join(KINDS)}")
        schema = KIND_PARAMS[self.kind]
        unknown = set(self.params) - set(schema)
        if unknown:
            raise ConfigError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged = {key: default for key, (_, default) in schema.items()}
        merged.update(self.params)
        self.params = merged
        if not self.out:
            self.out = self.kind


def _parse_value(tag: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if tag == "floats":
            return [float(tok) for tok in raw.split(",") if tok.strip()]
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {where} = {raw!r} as {tag}") from exc


def _format_value(tag: str, value) -> str:
    if tag == "bool":
        return "true" if value else "false"
    if tag == "float":
        return repr(float(value))
    if tag == "floats":
        return ",".join(repr(float(x)) for x in value)
    return str(value)


def _system_from_items(items: dict[str, str]) -> L96Config:
    unknown = set(items) - set(_SYSTEM_KEYS)
    if unknown:
        raise ConfigError(f"unknown [system] keys: {sorted(unknown)}")
    vals = {}
    for key, (tag, default) in _SYSTEM_KEYS.items():
        vals[key] = _parse_value(tag, items[key], f"system.{key}") if key in items else default
    if "sigma" in items and "sigma_list" in items:
        raise ConfigError("give either system.sigma or system.sigma_list, not both")
    n = vals["n"]
    if items.get("sigma_list", "").strip():
        sigma = tuple(float(t) for t in items["sigma_list"].split(","))
        if len(sigma) != n:
            raise ConfigError(f"sigma_list must have {n} entries, got {len(sigma)}")
    else:
        sigma = tuple(vals["sigma"] if j % 3 == 0 else 0.0 for j in range(n))
    try:
        return L96Config(n=n, epsilon=vals["epsilon"], sigma=sigma, dt=vals["dt"],
                         seed=vals["seed"], mode=vals["mode"], tamed=vals["tamed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_text(text: str) -> ExperimentSpec:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse spec: {exc}") from exc
    if "experiment" not in cp:
        raise ConfigError("missing [experiment] section")
    exp = dict(cp["experiment"])
    unknown = set(exp) - {"kind", "out"}
    if unknown:
        raise ConfigError(f"unknown [experiment] keys: {sorted(unknown)}")
    kind = exp.get("kind", "").strip()
    if kind not in KIND_PARAMS:
        raise ConfigError(f"unknown experiment kind {kind!r}; "
                          f"expected one of {', '.join(KINDS)}")
    allowed_sections = {"experiment", "system", kind}
    extra = set(cp.sections()) - allowed_sections
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    system = _system_from_items(dict(cp["system"]) if "system" in cp else {})
    schema = KIND_PARAMS[kind]
    params = {}
    if kind in cp:
        for key, raw in cp[kind].items():
            if key not in schema:
                raise ConfigError(f"unknown key [{kind}] {key}")
            params[key] = _parse_value(schema[key][0], raw, f"{kind}.{key}")
    return ExperimentSpec(kind=kind, system=system, params=params,
                          out=exp.get("out", "").strip())


def parse_file(path) -> ExperimentSpec:
    with open(path) as fh:
        return parse_text(fh.read())


def to_text(spec: ExperimentSpec) -> str:
    """Canonical rendering; parses back to an equal spec."""
    cfg = spec.system
    buf = io.StringIO()
    buf.write("[experiment]\n")
    buf.write(f"kind = {spec.kind}\n")
    buf.write(f"out = {spec.out}\n\n")
    buf.write("[system]\n")
    buf.write(f"n = {cfg.n}\n")
    buf.write(f"epsilon = {repr(float(cfg.epsilon))}\n")
    forced_amps = {cfg.sigma[j] for j in cfg.indexing.forced}
    uniform = (cfg.mode == "degenerate" and len(forced_amps) == 1)
    if uniform:
        buf.write(f"sigma = {repr(float(next(iter(forced_amps))))}\n")
    else:
        buf.write(f"sigma_list = {','.join(repr(float(s)) for s in cfg.sigma)}\n")
    buf.write(f"dt = {repr(float(cfg.dt))}\n")
    buf.write(f"seed = {cfg.seed}\n")
    buf.write(f"mode = {cfg.mode}\n")
    buf.write(f"tamed = {'true' if cfg.tamed else 'false'}\n\n")
    buf.write(f"[{spec.kind}]\n")
    for key, (tag, _) in KIND_PARAMS[spec.kind].items():
        buf.write(f"{key} = {_format_value(tag, spec.params[key])}\n")
    return buf.getvalue()


def default_spec(kind: str, **system_overrides) -> ExperimentSpec:
    system = _system_from_items({k: str(v) for k, v in system_overrides.items()})
    return ExperimentSpec(kind=kind, system=system, params={})


def apply_overrides(spec: ExperimentSpec, assignments: list[str]) -> ExperimentSpec:
    """Apply ``section.key=value`` (or bare ``key=value`` for the kind section)
    overrides, reusing the file grammar for values."""
    text_items: dict[str, dict[str, str]] = {"system": {}, spec.kind: {}}
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        section = spec.kind
        if "." in key:
            section, _, key = key.partition(".")
        if section == "experiment":
            raise ConfigError("override the experiment section via CLI flags instead")
        if section not in text_items:
            raise ConfigError(f"unknown section {section!r} in override")
        text_items[section][key] = raw.strip()
    system = spec.system
    if text_items["system"]:
        base = {
            "n": str(system.n), "epsilon": repr(system.epsilon),
            "dt": repr(system.dt), "seed": str(system.seed),
            "mode": system.mode, "tamed": "true" if system.tamed else "false",
            "sigma_list": ",".join(repr(float(s)) for s in system.sigma),
        }
        overrides = text_items["system"]
        if "sigma" in overrides:
            base.pop("sigma_list", None)
        if "n" in overrides and "sigma" not in overrides and "sigma_list" not in overrides:
            forced_amps = {system.sigma[j] for j in system.indexing.forced}
            if len(forced_amps) == 1:
                base.pop("sigma_list", None)
                base["sigma"] = repr(float(next(iter(forced_amps))))
        base.update(overrides)
        system = _system_from_items(base)
    schema = KIND_PARAMS[spec.kind]
    params = dict(spec.params)
    for key, raw in text_items[spec.kind].items():
        if key not in schema:
            raise ConfigError(f"unknown key [{spec.kind}] {key}")
        params[key] = _parse_value(schema[key][0], raw, f"{spec.kind}.{key}")
    return ExperimentSpec(kind=spec.kind, system=system, params=params, out=spec.out)

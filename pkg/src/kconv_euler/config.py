"""INI run configuration: parsing, ``--set`` overrides and typed views."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from .eos import ConfigurationError, GasLaw, validate_parameters
from .solver import SchemeParams

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}
# keys of [case] that are not forwarded to the case builders
_CASE_RESERVED = {"id", "state_a", "state_b"}


def load(path=None, text: str | None = None, overrides=()) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigurationError(f"cannot read configuration: {exc}") from exc
    for item in overrides:
        apply_override(cp, item)
    return cp


def apply_override(cp: configparser.ConfigParser, item: str) -> None:
    key, sep, value = item.partition("=")
    section, dot, option = key.strip().partition(".")
    if not sep or not dot or not section or not option:
        raise ConfigurationError(f"override {item!r} must look like section.key=value")
    if not cp.has_section(section):
        cp.add_section(section)
    cp.set(section, option, value.strip())


def dump(cp: configparser.ConfigParser) -> str:
    """Resolved configuration with sections and keys sorted, for byte-stable output."""
    out = configparser.ConfigParser(interpolation=None)
    out.optionxform = str
    for s in sorted(cp.sections()):
        out.add_section(s)
        for k in sorted(cp[s]):
            out.set(s, k, cp[s][k])
    buf = io.StringIO()
    out.write(buf)
    return buf.getvalue()


def _float(cp, section, key, default=None):
    raw = cp.get(section, key, fallback=None)
    if raw is None:
        if default is None:
            raise ConfigurationError(f"missing [{section}] {key}")
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"[{section}] {key} must be a number (got {raw!r})") from exc


def _int(cp, section, key, default=None):
    v = _float(cp, section, key, None if default is None else float(default))
    if v != int(v):
        raise ConfigurationError(f"[{section}] {key} must be an integer (got {v})")
    return int(v)


def _bool(cp, section, key, default=False):
    raw = cp.get(section, key, fallback=None)
    if raw is None:
        return default
    try:
        return _BOOL[raw.strip().lower()]
    except KeyError as exc:
        raise ConfigurationError(f"[{section}] {key} must be a boolean (got {raw!r})") from exc


def _floats(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigurationError(f"expected a comma separated list of numbers (got {raw!r})") from exc


def _value(raw: str):
    vals = _floats(raw)
    return vals[0] if len(vals) == 1 else vals


def gas(cp) -> GasLaw:
    try:
        return GasLaw(_float(cp, "gas", "a", 1.0), _float(cp, "gas", "gamma", 1.5))
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def scheme(cp, gas_law: GasLaw) -> SchemeParams:
    s = "scheme"
    defaults = SchemeParams()
    try:
        params = SchemeParams(
            alpha=_float(cp, s, "alpha", defaults.alpha),
            beta=_float(cp, s, "beta", defaults.beta),
            c_t=_float(cp, s, "c_t", defaults.c_t),
            tol_nl=_float(cp, s, "tol_nl", defaults.tol_nl),
            max_nl_iter=_int(cp, s, "max_nl_iter", defaults.max_nl_iter),
            max_dt_halvings=_int(cp, s, "max_dt_halvings", defaults.max_dt_halvings),
            vacuum_shift=_bool(cp, s, "vacuum_shift", defaults.vacuum_shift),
            picard_fallback=_bool(cp, s, "picard_fallback", defaults.picard_fallback),
        )
    except ConfigurationError:
        raise
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    validate_parameters(gas_law.gamma, params.alpha, params.beta)
    return params


def mesh_shape(cp) -> tuple[int, ...]:
    dim = _int(cp, "mesh", "dim", 1)
    raw = cp.get("mesh", "n", fallback=None)
    if raw is None:
        raise ConfigurationError("missing [mesh] n")
    n = _floats(raw)
    if any(v != int(v) for v in n):
        raise ConfigurationError("[mesh] n must be integers")
    n = tuple(int(v) for v in n)
    if len(n) == 1:
        n = n * dim
    if len(n) != dim:
        raise ConfigurationError(f"[mesh] n has {len(n)} entries for dim = {dim}")
    return n


def case(cp) -> tuple[str, dict]:
    if not cp.has_section("case"):
        raise ConfigurationError("missing [case] section")
    cid = cp.get("case", "id", fallback=None)
    if cid is None:
        raise ConfigurationError("missing [case] id")
    params = {k: _value(v) for k, v in cp["case"].items() if k not in _CASE_RESERVED}
    return cid.strip(), params


def synthetic_states(cp):
    a = cp.get("case", "state_a", fallback=None)
    b = cp.get("case", "state_b", fallback=None)
    return (_floats(a) if a else None), (_floats(b) if b else None)


@dataclass(frozen=True)
class TimeSpec:
    T: float
    snapshot_times: tuple[float, ...]


def time_spec(cp, section: str = "run") -> TimeSpec:
    """[run] T and snapshot_times (falling back to [study])."""
    sec = section if cp.has_section(section) else "study"
    snaps = _floats(cp.get(sec, "snapshot_times", fallback=""))
    T = cp.get(sec, "T", fallback=None)
    if T is None:
        if not snaps:
            raise ConfigurationError(f"[{sec}] needs T or snapshot_times")
        T = max(snaps)
    T = float(T)
    if not T > 0:
        raise ConfigurationError("final time T must be positive")
    if any(s < 0 or s > T for s in snaps):
        raise ConfigurationError("snapshot times must lie in [0, T]")
    return TimeSpec(T, snaps)


def study_config(cp):
    from .kconv import StudyConfig

    if not cp.has_section("study"):
        raise ConfigurationError("missing [study] section")
    g = gas(cp)
    cid, params = case(cp)
    synthetic = cid == "two_state_synthetic"
    sp = SchemeParams() if synthetic and not cp.has_section("scheme") else scheme(cp, g)
    shape = mesh_shape(cp)
    if len(set(shape)) != 1:
        raise ConfigurationError("studies use cubic meshes (equal n on every axis)")
    if synthetic:
        # injected states carry no time; labels only
        snaps = _floats(cp.get("study", "snapshot_times", fallback="")) or (0.0,)
        ts = TimeSpec(max(max(snaps), 0.0) or 1.0, snaps)
    else:
        ts = time_spec(cp, "study")
        snaps = ts.snapshot_times or (ts.T,)
    probes = cp.get("study", "probes", fallback=None)
    probes = None if probes is None or probes.strip() in ("", "all") else tuple(int(v) for v in _floats(probes))
    window = cp.get("study", "window", fallback=None)
    a, b = synthetic_states(cp)

    def opt(key):
        return _float(cp, "study", key) if cp.has_option("study", key) else None

    return StudyConfig(
        case_id=cid,
        base_n=shape[0],
        levels=_int(cp, "study", "levels", 4),
        dim=len(shape),
        snapshot_times=tuple(snaps),
        T=ts.T,
        case_params={} if synthetic else params,
        gas=g,
        scheme=sp,
        probes=probes,
        eps_meas=opt("eps_meas"),
        tau_osc=opt("tau_osc"),
        tau_dirac=opt("tau_dirac"),
        bank_centers=_int(cp, "study", "bank_centers", 3),
        bank_radius=_float(cp, "study", "bank_radius", 1.0),
        window=None if window is None or window.strip() in ("", "none") else float(window),
        workers=_int(cp, "study", "workers", 1),
        state_a=a,
        state_b=b,
    )

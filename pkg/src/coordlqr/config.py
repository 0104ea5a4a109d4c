"""TOML run configuration.

Layout::

    horizon = 10            # optional; omit for the infinite-horizon problem
    steps = 40              # optional simulation length

    [ensemble]
    A = [[2.0]]             # matrices are row-major nested arrays; scalars allowed
    B = [[1.0]]
    Q = [[1.0]]
    R = [[1.0]]
    mu = [0.3, 0.2, 0.3, 0.1, 0.4]

    [policy]
    Fbar = [[-1.5]]         # or Fbar_schedule = [F_0, ..., F_N]

    [initial]
    x0 = [[3.0], [2.0], [1.0], [4.0], [5.0]]

    [tolerances]            # optional overrides
    tol_are = 1e-10

    [outputs]
    dir = "out"
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exceptions import ConfigError, CoordLQRError
from .model import ConstraintPolicy, Ensemble, InitialCondition, Tolerances, validate

SECTIONS = ("ensemble", "policy", "initial", "tolerances", "outputs")
TOP_LEVEL = ("horizon", "steps")


@dataclass(frozen=True, eq=False)
class RunConfig:
    ensemble: Ensemble
    policy: ConstraintPolicy
    initial: InitialCondition | None = None
    horizon: int | None = None
    steps: int | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    out_dir: str | None = None
    source: str | None = None


def _locate(text: str, section: str | None, key: str | None) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or of the header itself)."""
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[([^\]]+)\]", stripped)
        if header:
            current = header.group(1).strip()
            if key is None and current == section:
                return lineno
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return lineno
    return None


class _Reader:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def where(self, section: str | None, key: str | None = None) -> str:
        line = _locate(self.text, section, key)
        label = f"[{section}]" if section else "<top level>"
        if key:
            label += f".{key}"
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: {label}"

    def fail(self, message: str, section: str | None, key: str | None = None):
        raise ConfigError(message, self.where(section, key))

    def matrix(self, table: dict, section: str, key: str) -> np.ndarray:
        if key not in table:
            self.fail(f"missing required key '{key}'", section)
        try:
            arr = np.asarray(table[key], dtype=float)
        except (TypeError, ValueError):
            self.fail("expected a number or a rectangular array of numbers", section, key)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            self.fail(f"expected a matrix (nested array), got {arr.ndim}-D data", section, key)
        return arr

    def vector(self, table: dict, section: str, key: str) -> np.ndarray:
        if key not in table:
            self.fail(f"missing required key '{key}'", section)
        try:
            arr = np.asarray(table[key], dtype=float)
        except (TypeError, ValueError):
            self.fail("expected an array of numbers", section, key)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim != 1:
            self.fail("expected a flat array of numbers", section, key)
        return arr

    def count(self, doc: dict, key: str) -> int | None:
        value = doc.get(key)
        if value is None:
            return None
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            self.fail("expected a nonnegative integer", None, key)
        return value


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc), source) from exc
    rd = _Reader(text, source)

    for key, value in doc.items():
        if isinstance(value, dict):
            if key not in SECTIONS:
                rd.fail(f"unknown section; expected one of {', '.join(SECTIONS)}", key)
        elif key not in TOP_LEVEL:
            rd.fail("unknown top-level key", None, key)

    ens_t = doc.get("ensemble")
    if ens_t is None:
        raise ConfigError("missing required section [ensemble]", source)
    raw = Ensemble(
        A=rd.matrix(ens_t, "ensemble", "A"),
        B=rd.matrix(ens_t, "ensemble", "B"),
        Q=rd.matrix(ens_t, "ensemble", "Q"),
        R=rd.matrix(ens_t, "ensemble", "R"),
        mu=rd.vector(ens_t, "ensemble", "mu"),
    )
    tol_t = doc.get("tolerances", {})
    tol_kw = {}
    names = {f.name for f in fields(Tolerances)}
    for key, value in tol_t.items():
        if key not in names:
            rd.fail("unknown tolerance", "tolerances", key)
        if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
            rd.fail("expected a nonnegative number", "tolerances", key)
        tol_kw[key] = int(value) if key == "max_iter" else float(value)
    tolerances = Tolerances(**tol_kw)

    try:
        ens = validate(raw, tolerances.tol_psd)
    except CoordLQRError as exc:
        raise ConfigError(str(exc), rd.where("ensemble")) from exc

    pol_t = doc.get("policy")
    if pol_t is None:
        raise ConfigError("missing required section [policy]", source)
    if ("Fbar" in pol_t) == ("Fbar_schedule" in pol_t):
        rd.fail("give exactly one of 'Fbar' or 'Fbar_schedule'", "policy")
    if "Fbar" in pol_t:
        policy = ConstraintPolicy(rd.matrix(pol_t, "policy", "Fbar"))
    else:
        try:
            stack = np.asarray(pol_t["Fbar_schedule"], dtype=float)
        except (TypeError, ValueError):
            rd.fail("expected an array of equally shaped matrices", "policy", "Fbar_schedule")
        if stack.ndim == 1:
            stack = stack.reshape(-1, 1, 1)
        if stack.ndim != 3:
            rd.fail("expected an array of matrices", "policy", "Fbar_schedule")
        policy = ConstraintPolicy(stack)
    key = "Fbar" if policy.is_constant else "Fbar_schedule"
    try:
        policy.check(ens)
    except CoordLQRError as exc:
        raise ConfigError(str(exc), rd.where("policy", key)) from exc

    horizon = rd.count(doc, "horizon")
    steps = rd.count(doc, "steps")
    if not policy.is_constant:
        expected = policy.gains.shape[0] - 1
        if horizon is None:
            horizon = expected
        elif horizon != expected:
            rd.fail(f"schedule holds {expected + 1} gains but horizon is {horizon}", None, "horizon")

    initial = None
    if "initial" in doc:
        init_t = doc["initial"]
        if "x0" not in init_t:
            rd.fail("missing required key 'x0'", "initial")
        try:
            initial = InitialCondition.from_vectors(init_t["x0"]).check(ens)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), rd.where("initial", "x0")) from exc

    out_dir = doc.get("outputs", {}).get("dir")
    if out_dir is not None and not isinstance(out_dir, str):
        rd.fail("expected a string path", "outputs", "dir")

    return RunConfig(
        ensemble=ens,
        policy=policy,
        initial=initial,
        horizon=horizon,
        steps=steps,
        tolerances=tolerances,
        out_dir=out_dir,
        source=source,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from exc
    return parse_config(text, str(path))


def _tolist(arr: np.ndarray):
    return np.asarray(arr, dtype=float).tolist()


def emit_config(cfg: RunConfig) -> str:
    """Serialize ``cfg`` back to TOML; floats keep full precision."""
    doc: dict = {}
    if cfg.horizon is not None:
        doc["horizon"] = int(cfg.horizon)
    if cfg.steps is not None:
        doc["steps"] = int(cfg.steps)
    ens = cfg.ensemble
    doc["ensemble"] = {
        "A": _tolist(ens.A),
        "B": _tolist(ens.B),
        "Q": _tolist(ens.Q),
        "R": _tolist(ens.R),
        "mu": _tolist(ens.mu),
    }
    if cfg.policy.is_constant:
        doc["policy"] = {"Fbar": _tolist(cfg.policy.gains)}
    else:
        doc["policy"] = {"Fbar_schedule": _tolist(cfg.policy.gains)}
    if cfg.initial is not None:
        doc["initial"] = {"x0": _tolist(cfg.initial.x0)}
    defaults = Tolerances()
    overrides = {
        f.name: getattr(cfg.tolerances, f.name)
        for f in fields(Tolerances)
        if getattr(cfg.tolerances, f.name) != getattr(defaults, f.name)
    }
    if overrides:
        doc["tolerances"] = overrides
    if cfg.out_dir is not None:
        doc["outputs"] = {"dir": cfg.out_dir}
    return tomli_w.dumps(doc)

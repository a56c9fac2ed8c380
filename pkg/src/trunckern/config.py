"""Plain ``key = value`` experiment configuration files.

Lines are ``section.key = value``; ``#`` starts a comment.  Every key has a
declared type and default, unknown keys are rejected and constraints between
keys are checked when the file is parsed.
"""
from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .profiles import FORCING_PROFILES, INITIAL_PROFILES, parse_profile

_REQUIRED = object()


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError("expected a comma-separated list of numbers")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _opt_float(text: str):
    t = text.strip().lower()
    return None if t in ("", "auto", "none") else float(t)


def _opt_int(text: str):
    t = text.strip().lower()
    return None if t in ("", "auto", "none") else int(t)


# key -> (parser, default)
SCHEMA = {
    "name": (str, "experiment"),
    "seed": (int, 0),
    "kernel.family": (str, "truncated_fractional"),
    "kernel.user_profile": (str, "anisotropic"),
    "kernel.s": (float, _REQUIRED),
    "kernel.rho": (float, 0.0),
    "kernel.lambda": (float, 1.0),
    "kernel.Lambda": (float, 2.0),
    "kernel.scale": (_opt_float, None),
    "grid.d": (int, 1),
    "grid.L": (float, 2.0),
    "grid.n": (int, 257),
    "grid.extension": (str, "constant"),
    "grid.extension_value": (_opt_float, None),
    "op.kind": (str, "linear"),
    "op.drift_Lambda": (float, 0.0),
    "op.isaac_family": (str, ""),
    "op.near_field_mode": (str, "second_difference"),
    "time.T": (float, 1.0),
    "time.dt": (_opt_float, None),
    "time.cfl_fraction": (float, 0.5),
    "time.snapshot_stride": (int, 1),
    "problem.kind": (str, "cauchy"),
    "problem.initial": (str, "box"),
    "problem.initial_value": (float, 1.0),
    "problem.forcing": (str, "zero"),
    "problem.forcing_value": (float, 0.0),
    "problem.rho_list": (_floats, None),
    "metrics.R": (float, 1.0),
    "metrics.holder_R": (_opt_float, None),
    "metrics.alpha": (_opt_float, None),
    "metrics.levels": (_opt_int, None),
    "metrics.harnack_a": (float, 0.0),
    "out.dir": (str, "out"),
    "out.format": (str, "csv"),
    "out.snapshots": (_bool, True),
}


@dataclass(frozen=True)
class IsaacSpec:
    """One member line of an Isaac family file."""

    alpha: int
    beta: int
    scale: float
    asym: float
    drift: tuple


@dataclass
class ExperimentConfig:
    """Validated configuration; ``values`` holds every key with defaults filled."""

    values: dict
    source: Optional[str] = None
    raw: bytes = b""
    family: list = field(default_factory=list)
    family_raw: bytes = b""

    def __getitem__(self, key):
        return self.values[key]

    @property
    def initial(self):
        return parse_profile(self.values["problem.initial"], self.values["seed"])

    @property
    def extension_value(self) -> float:
        v = self.values["grid.extension_value"]
        if v is not None:
            return v
        name, _ = self.initial
        return self.values["problem.initial_value"] if name == "constant" else 0.0

    def canonical(self) -> str:
        """Sorted ``key = value`` text of the populated configuration."""
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, list):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        for m in self.family:
            lines.append(f"isaac = {m.alpha} {m.beta} {m.scale!r} {m.asym!r} "
                         + " ".join(repr(b) for b in m.drift))
        return "\n".join(lines) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def input_hash(self) -> str:
        """Git-style blob hash of the raw inputs (config plus family file)."""
        data = self.raw + self.family_raw
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

    def with_overrides(self, **updates) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(updates)
        _check(vals, self.family)
        return ExperimentConfig(vals, self.source, self.raw, self.family, self.family_raw)


def parse_isaac_family(text: str, d: int) -> list:
    """Parse lines ``alpha beta scale asym b_1 .. b_d`` (missing drift = 0)."""
    out = []
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 4 or len(parts) > 4 + d:
            raise ConfigError(f"Isaac family line {no}: expected 'alpha beta scale asym b_1..b_{d}'")
        try:
            a, b = int(parts[0]), int(parts[1])
            scale, asym = float(parts[2]), float(parts[3])
            drift = tuple(float(v) for v in parts[4:]) + (0.0,) * (4 + d - len(parts))
        except ValueError:
            raise ConfigError(f"Isaac family line {no}: type mismatch")
        if a < 0 or b < 0:
            raise ConfigError(f"Isaac family line {no}: indices must be nonnegative")
        out.append(IsaacSpec(a, b, scale, asym, drift))
    if not out:
        raise ConfigError("Isaac family must be nonempty")
    return out


def parse_text(text: str, source: Optional[str] = None, base_dir: str = ".") -> ExperimentConfig:
    """Parse configuration text; see :func:`parse_config`."""
    seen = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {no}: duplicate key {key!r}")
        seen[key] = value
    vals = {}
    for key, (parser, default) in SCHEMA.items():
        if key in seen:
            try:
                vals[key] = parser(seen[key])
            except ValueError as exc:
                raise ConfigError(f"key {key!r}: type mismatch ({exc})") from None
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            vals[key] = default
    family, family_raw = [], b""
    if vals["op.kind"] == "isaac":
        if not vals["op.isaac_family"]:
            raise ConfigError("op.kind = isaac needs op.isaac_family")
        path = os.path.join(base_dir, vals["op.isaac_family"])
        try:
            with open(path, "rb") as fh:
                family_raw = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read Isaac family file: {exc}") from None
        family = parse_isaac_family(family_raw.decode("utf-8"), vals["grid.d"])
    _check(vals, family)
    return ExperimentConfig(vals, source, text.encode("utf-8"), family, family_raw)


def parse_config(path) -> ExperimentConfig:
    """Read and validate a configuration file.

    Raises
    ------
    ConfigError
        Naming the offending key for unknown or missing keys, type
        mismatches and violated constraints.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError("config must be UTF-8") from None
    return parse_text(text, str(path), os.path.dirname(os.path.abspath(path)))


def _check(v: dict, family: list) -> None:
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"key {key!r}: {msg}")

    s = v["kernel.s"]
    need(0 < s < 1, "kernel.s", "must lie in (0, 1)")
    need(v["kernel.rho"] >= 0 and math.isfinite(v["kernel.rho"]), "kernel.rho", "must be >= 0")
    need(v["kernel.lambda"] > 0, "kernel.lambda", "must be positive")
    need(v["kernel.Lambda"] > 0, "kernel.Lambda", "must be positive")
    scale = v["kernel.scale"]
    need(scale is None or scale >= v["kernel.lambda"], "kernel.scale", "must be >= kernel.lambda")
    need(v["kernel.family"] in ("truncated_fractional", "user"), "kernel.family",
         "must be truncated_fractional or user")
    need(v["kernel.user_profile"] in ("anisotropic", "radial_wave"), "kernel.user_profile",
         "must be anisotropic or radial_wave")
    need(v["grid.d"] >= 1, "grid.d", "must be >= 1")
    need(v["grid.n"] >= 8, "grid.n", "must be >= 8")
    need(v["grid.L"] > 0, "grid.L", "must be positive")
    need(v["grid.extension"] in ("constant", "periodic"), "grid.extension",
         "must be constant or periodic")
    need(v["op.kind"] in ("linear", "pucci_minus", "pucci_plus", "isaac"), "op.kind",
         "must be linear, pucci_minus, pucci_plus or isaac")
    need(v["op.near_field_mode"] in ("second_difference", "drop"), "op.near_field_mode",
         "must be second_difference or drop")
    drift = v["op.drift_Lambda"]
    need(drift >= 0, "op.drift_Lambda", "must be >= 0")
    if drift > 0 or any(any(b != 0 for b in m.drift) for m in family):
        need(s >= 0.5, "op.drift_Lambda", "drift requires s ≥ 1/2")
    need(drift <= v["kernel.Lambda"], "op.drift_Lambda", "must not exceed kernel.Lambda")
    for m in family:
        need(m.scale >= v["kernel.lambda"], "op.isaac_family", "member scale below kernel.lambda")
        need(m.asym >= 0, "op.isaac_family", "member asymmetry must be >= 0")
        need(float(np.linalg.norm(m.drift)) <= v["kernel.Lambda"] * (1 + 1e-12),
             "op.isaac_family", "member drift exceeds kernel.Lambda")
    need(v["time.T"] > 0, "time.T", "must be positive")
    need(v["time.dt"] is None or v["time.dt"] > 0, "time.dt", "must be positive")
    need(0 < v["time.cfl_fraction"] <= 1, "time.cfl_fraction", "must lie in (0, 1]")
    need(v["time.snapshot_stride"] >= 1, "time.snapshot_stride", "must be >= 1")
    need(v["problem.kind"] in ("cauchy", "truncation_sweep", "elliptic"), "problem.kind",
         "must be cauchy, truncation_sweep or elliptic")
    name, _ = parse_profile(v["problem.initial"], v["seed"])
    need(name in INITIAL_PROFILES, "problem.initial", f"unknown profile {name!r}")
    need(v["problem.forcing"] in FORCING_PROFILES, "problem.forcing",
         f"unknown profile {v['problem.forcing']!r}")
    rl = v["problem.rho_list"]
    if rl is not None:
        need(len(rl) > 0 and all(r >= 0 for r in rl), "problem.rho_list",
             "must hold nonnegative numbers")
        need(all(b < a for a, b in zip(rl[:-1], rl[1:])), "problem.rho_list",
             "must be strictly decreasing")
    if v["problem.kind"] == "truncation_sweep":
        need(rl is not None, "problem.rho_list", "required for truncation_sweep")
        need(v["kernel.family"] == "truncated_fractional", "kernel.family",
             "truncation sweeps use the truncated_fractional family")
        need(v["op.kind"] != "isaac", "op.kind", "truncation sweeps support linear and Pucci kinds")
    need(v["metrics.R"] > 0, "metrics.R", "must be positive")
    hr = v["metrics.holder_R"]
    need(hr is None or hr > 0, "metrics.holder_R", "must be positive")
    a = v["metrics.alpha"]
    need(a is None or 0 < a <= 1, "metrics.alpha", "must lie in (0, 1]")
    need(v["metrics.levels"] is None or v["metrics.levels"] >= 2, "metrics.levels", "must be >= 2")
    need(v["metrics.harnack_a"] >= 0, "metrics.harnack_a", "must be >= 0")
    need(v["out.format"] == "csv", "out.format", "only csv is supported")

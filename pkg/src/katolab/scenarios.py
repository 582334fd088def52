"""Scenario configs: INI files describing a geometry, a regime and checks.

The format is flat key = value pairs under fixed sections; numeric
values may be sympy-readable expressions (``2*pi``).  Geometry profiles
may reference named parameters declared as ``param.<name>`` keys inside
``[geometry]``, which is also how sweeps move profile knobs.

Example::

    [scenario]
    name = dumbbell_dprime
    T = 4.0
    seed = 20260810
    checks = kato, gauge, semigroup, transformation, be, bishop_gromov, doubling
    resolutions = 256, 512

    [geometry]
    kind = warped_product
    dimension = 3
    extent = 2*pi
    endpoints = pole, pole
    profile = 2*sin(r/2)*(1 + amp*sin(r/2)**2*exp(-((r-1.2)/0.5)**2))
    param.amp = 0.26

    [regime]
    type = dprime
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import sympy as sp

from .geometry import CIRCLE, TORUS, WARPED, GeometrySpec
from .kato import KatoBoundFn
from .profiles import Profile1D, Profile2D

CHECK_NAMES = (
    "kato",
    "gauge",
    "semigroup",
    "transformation",
    "be",
    "bishop_gromov",
    "doubling",
    "gauss2d",
)

CHECK_SUMMARY = {
    "kato": "Kato constants k_t of Ric_- and the smallness conditions",
    "gauge": "gauge function via the Duhamel series, with the elliptic oracle",
    "semigroup": "spectral lower bound and L^p semigroup growth bounds",
    "transformation": "Bochner baseline and the time-change transformation rule",
    "be": "Bakry-Emery certificate margins plus the falsification control",
    "bishop_gromov": "volume ratios, the comparison bound, almost monotonicity",
    "doubling": "volume doubling with pipeline constants",
    "gauss2d": "dimension-two conformal Gauss curvature lower bound",
}


class ConfigError(ValueError):
    """Malformed scenario configuration."""


def _num(text: str, what: str) -> float:
    try:
        return float(sp.sympify(text))
    except (sp.SympifyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse {what} = {text!r} as a number") from exc


def _num_list(text: str, what: str):
    return [_num(part.strip(), what) for part in text.split(",") if part.strip()]


@dataclass
class RegimeSpec:
    kind: str  # d | dprime | dim2 | sk | manual
    gamma: Optional[float] = None
    bound: Optional[KatoBoundFn] = None
    bound_text: Optional[str] = None
    lam: Optional[float] = None
    beta: Optional[float] = None


@dataclass
class Scenario:
    """Parsed scenario: everything run_scenario needs, plus the raw text."""

    name: str
    T: float
    seed: int
    checks: list
    resolutions: list
    geometry_kind: str
    dimension: int
    extent: float
    endpoints: tuple
    profile_text: Optional[str]
    profile_params: dict
    regime: RegimeSpec
    tolerances: dict
    kato_cfg: dict
    suite_cfg: dict
    volume_cfg: dict
    raw_text: str = ""

    def geometry_spec(self, resolution: int) -> GeometrySpec:
        profile = None
        if self.geometry_kind == WARPED:
            if not self.profile_text:
                raise ConfigError("warped_product needs a profile expression")
            profile = Profile1D.from_expression(self.profile_text, var="r",
                                                params=self.profile_params)
        elif self.profile_text:
            if self.geometry_kind == TORUS:
                profile = Profile2D.from_expression(self.profile_text,
                                                    params=self.profile_params)
            else:
                profile = Profile1D.from_expression(self.profile_text, var="theta",
                                                    params=self.profile_params)
        return GeometrySpec(
            kind=self.geometry_kind,
            dimension=self.dimension,
            resolution=resolution,
            extent=self.extent,
            profile=profile,
            endpoints=self.endpoints,
        )


_DEFAULT_TOL = {
    "series_tol": 1e-9,
    "tail_tol": 1e-9,
    "residual_tol": 1e-6,
    "kappa_tol": 10.0,
    "n_time": 96,
    "mode_limit": None,
    "oracle_tol": 1e-6,
}

_DEFAULT_KATO = {"t_min_frac": 0.005, "points": 24}
_DEFAULT_SUITE = {"count": 100, "modes": 12}
_DEFAULT_VOLUME = {
    "r_min_frac": 0.1,
    "points": 32,
    "etas": [0.05, 0.1, 0.2],
    "pairs": 20,
}


def parse_scenario(text: str) -> Scenario:
    """Parse a scenario config; raises ConfigError with key diagnostics."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc

    for section in ("scenario", "geometry"):
        if not cp.has_section(section):
            raise ConfigError(f"missing [{section}] section")

    sc = cp["scenario"]
    name = sc.get("name")
    if not name:
        raise ConfigError("[scenario] name is required")
    T = _num(sc.get("T", fallback=None) or "", "[scenario] T")
    if T <= 0:
        raise ConfigError("[scenario] T must be positive")
    seed = int(sc.get("seed", "0"))
    checks = [c.strip() for c in sc.get("checks", "").split(",") if c.strip()]
    if not checks:
        raise ConfigError("[scenario] checks must be a nonempty list")
    for c in checks:
        if c not in CHECK_NAMES:
            raise ConfigError(f"unknown check {c!r}; valid: {', '.join(CHECK_NAMES)}")
    resolutions = [int(v) for v in _num_list(sc.get("resolutions", "512"),
                                             "[scenario] resolutions")]
    if not resolutions:
        raise ConfigError("[scenario] resolutions must be nonempty")

    ge = cp["geometry"]
    kind = ge.get("kind", "")
    if kind not in (WARPED, CIRCLE, TORUS):
        raise ConfigError(f"unknown geometry kind {kind!r}")
    dimension = int(ge.get("dimension", "0"))
    extent = _num(ge.get("extent", fallback=None) or "", "[geometry] extent")
    endpoints = tuple(
        e.strip() for e in ge.get("endpoints", "pole, pole").split(",")
    )
    if len(endpoints) != 2:
        raise ConfigError("[geometry] endpoints needs two entries")
    profile_text = ge.get("profile", fallback=None)
    params = {}
    for key, val in ge.items():
        if key.startswith("param."):
            params[key[len("param."):]] = _num(val, f"[geometry] {key}")

    reg_kind = "dprime"
    regime = RegimeSpec(kind=reg_kind)
    if cp.has_section("regime"):
        rg = cp["regime"]
        reg_kind = rg.get("type", "dprime").strip().lower()
        if reg_kind not in ("d", "dprime", "dim2", "sk", "manual"):
            raise ConfigError(f"unknown regime type {reg_kind!r}")
        regime = RegimeSpec(kind=reg_kind)
        if rg.get("gamma", fallback=None) is not None:
            regime.gamma = _num(rg.get("gamma"), "[regime] gamma")
        if rg.get("bound", fallback=None) is not None:
            regime.bound_text = rg.get("bound")
            regime.bound = KatoBoundFn.from_expression(regime.bound_text)
        if rg.get("lambda", fallback=None) is not None:
            regime.lam = _num(rg.get("lambda"), "[regime] lambda")
        if rg.get("beta", fallback=None) is not None:
            regime.beta = _num(rg.get("beta"), "[regime] beta")
        if reg_kind == "d" and regime.gamma is None:
            raise ConfigError("regime type d needs gamma")
        if reg_kind == "sk" and regime.bound is None:
            raise ConfigError("regime type sk needs a bound expression")
        if reg_kind == "manual" and (regime.lam is None or regime.beta is None):
            raise ConfigError("regime type manual needs lambda and beta")
    if reg_kind == "dim2" and dimension != 2:
        raise ConfigError("regime dim2 needs a two-dimensional geometry")
    if "gauss2d" in checks and kind != TORUS:
        raise ConfigError("check gauss2d needs a conformal_torus_2d geometry")
    if ("bishop_gromov" in checks or "doubling" in checks) and kind != WARPED:
        raise ConfigError("volume checks need a warped_product geometry")

    tol = dict(_DEFAULT_TOL)
    if cp.has_section("tolerances"):
        for key, val in cp["tolerances"].items():
            if key not in tol:
                raise ConfigError(f"unknown tolerance key {key!r}")
            if key == "n_time":
                tol[key] = int(val)
            elif key == "mode_limit":
                tol[key] = int(val) if val.strip() else None
            else:
                tol[key] = _num(val, f"[tolerances] {key}")

    kato_cfg = dict(_DEFAULT_KATO)
    if cp.has_section("kato"):
        for key, val in cp["kato"].items():
            if key not in kato_cfg:
                raise ConfigError(f"unknown kato key {key!r}")
            kato_cfg[key] = int(val) if key == "points" else _num(val, key)

    suite_cfg = dict(_DEFAULT_SUITE)
    if cp.has_section("suite"):
        for key, val in cp["suite"].items():
            if key not in suite_cfg:
                raise ConfigError(f"unknown suite key {key!r}")
            suite_cfg[key] = int(val)

    volume_cfg = dict(_DEFAULT_VOLUME)
    if cp.has_section("volume"):
        for key, val in cp["volume"].items():
            if key not in volume_cfg:
                raise ConfigError(f"unknown volume key {key!r}")
            if key == "etas":
                volume_cfg[key] = _num_list(val, "[volume] etas")
            elif key in ("points", "pairs"):
                volume_cfg[key] = int(val)
            else:
                volume_cfg[key] = _num(val, key)

    return Scenario(
        name=name,
        T=T,
        seed=seed,
        checks=checks,
        resolutions=resolutions,
        geometry_kind=kind,
        dimension=dimension,
        extent=extent,
        endpoints=endpoints,
        profile_text=profile_text,
        profile_params=params,
        regime=regime,
        tolerances=tol,
        kato_cfg=kato_cfg,
        suite_cfg=suite_cfg,
        volume_cfg=volume_cfg,
        raw_text=text,
    )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def override_key(text: str, dotted: str, value) -> str:
    """Return config text with ``section.key`` set to ``value``.

    Used by sweeps; the key is created when absent.
    """
    if "." not in dotted:
        raise ConfigError(f"sweep axis {dotted!r} must be section.key")
    section, key = dotted.split(".", 1)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc
    if not cp.has_section(section):
        cp.add_section(section)
    cp.set(section, key, str(value))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()

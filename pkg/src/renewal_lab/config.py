"""Flat key-value run configuration.

The file format is one ``section.key = value`` assignment per line with
``#`` comments; no nesting, no quoting.  Sections: ``model`` (coefficient
expressions and bounds), ``grid``, ``kernel``, ``init``, ``run``.  All
numeric fields are in model units.  See the README for the full schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expressions import ExpressionError, parse_expression
from .model import CoefficientModel, Grid, InitialData, MutationKernel

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_pairs"]

MODES = ("eigen", "simulate", "simulate-mutation", "decompose", "adaptive",
         "hjb", "full-report")

_BOOL = {"true": True, "yes": True, "1": True,
         "false": False, "no": False, "0": False}


class ConfigError(ValueError):
    """Bad configuration; the message carries the offending field path."""


def parse_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key or "." not in key:
            raise ConfigError(f"line {lineno}: keys are dotted section.name paths")
        pairs[key] = value.strip()
    return pairs


class _Fields:
    def __init__(self, pairs: dict[str, str]):
        self.pairs = pairs
        self.used: set[str] = set()

    def has(self, key: str) -> bool:
        return key in self.pairs

    def get(self, key: str, default=None, required: bool = False):
        if key not in self.pairs:
            if required:
                raise ConfigError(f"{key}: missing required field")
            return default
        self.used.add(key)
        return self.pairs[key]

    def get_float(self, key: str, default=None, required: bool = False):
        raw = self.get(key, None, required)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: not a number: {raw!r}") from None

    def get_int(self, key: str, default=None, required: bool = False):
        raw = self.get(key, None, required)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: not an integer: {raw!r}") from None

    def get_bool(self, key: str, default: bool = False) -> bool:
        raw = self.get(key)
        if raw is None:
            return default
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ConfigError(f"{key}: not a boolean: {raw!r}") from None

    def get_expr(self, key: str, required: bool = False):
        raw = self.get(key, None, required)
        if raw is None:
            return None
        try:
            return parse_expression(raw)
        except ExpressionError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def get_floats(self, key: str, default=None):
        raw = self.get(key)
        if raw is None:
            return default
        try:
            return [float(tok) for tok in raw.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"{key}: not a comma list of numbers") from None


@dataclass
class RunConfig:
    mode: str
    model: CoefficientModel
    grid: Grid
    kernel: MutationKernel | None
    init: InitialData | None
    T: float
    snapshot_interval: float | None
    out_dir: Path
    paper_literal_boundary: bool = False
    eps_list: list[float] = field(default_factory=list)
    hj_R: float = 4.0
    hj_dt: float | None = None
    raw: dict[str, str] = field(default_factory=dict, repr=False)


_KERNEL_REQUIRED = {"simulate-mutation", "hjb"}
_INIT_REQUIRED = {"simulate", "simulate-mutation", "decompose", "adaptive",
                  "hjb", "full-report"}
_PDE_MODES = {"simulate", "simulate-mutation", "decompose", "full-report"}


def load_config(path, mode: str | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Parse and validate a configuration file for the requested mode."""
    text = Path(path).read_text()
    pairs = parse_pairs(text)
    f = _Fields(pairs)
    overrides = overrides or {}

    mode = mode or f.get("run.mode")
    if mode is None:
        raise ConfigError("run.mode: missing (and no mode given on the command line)")
    if mode not in MODES:
        raise ConfigError(f"run.mode: unknown mode {mode!r}; choices: {', '.join(MODES)}")

    for key in ("model.A", "model.b", "model.d"):
        if not f.has(key):
            raise ConfigError(f"{key}: missing required field")
    model = CoefficientModel(
        A=f.get_expr("model.A", required=True),
        b=f.get_expr("model.b", required=True),
        d=f.get_expr("model.d", required=True),
        a_lo=f.get_float("model.a_lo", 1.0),
        a_hi=f.get_float("model.a_hi", 1.0),
        r_lo=f.get_float("model.r_lo"),
        r_hi=f.get_float("model.r_hi"),
    )

    eps = overrides.get("eps")
    if eps is None:
        eps = f.get_float("grid.eps", 1.0)
    needs_dt = mode in _PDE_MODES
    grid = Grid(
        x_max=f.get_float("grid.x_max", required=True),
        nx=f.get_int("grid.nx", required=True),
        y_min=f.get_float("grid.y_min", required=True),
        y_max=f.get_float("grid.y_max", required=True),
        ny=f.get_int("grid.ny", required=True),
        eps=eps,
        dt=f.get_float("grid.dt", required=needs_dt) if (needs_dt or f.has("grid.dt")) else None,
        a_hi=model.a_hi,
    )

    kernel = None
    family = f.get("kernel.family")
    if family is None and (mode in _KERNEL_REQUIRED):
        raise ConfigError(f"kernel.family: missing (required for mode {mode})")
    if family is not None:
        n_nodes = f.get_int("kernel.n_nodes", 241)
        p_max = f.get_float("kernel.p_max")
        if family == "gaussian":
            sigma = f.get_float("kernel.sigma", required=True)
            kernel = MutationKernel.gaussian(
                sigma, n_nodes=n_nodes, p_max=p_max,
                extent_sigmas=f.get_float("kernel.extent_sigmas", 6.0))
        elif family == "uniform":
            kernel = MutationKernel.uniform(
                f.get_float("kernel.half_width", required=True),
                n_nodes=n_nodes, p_max=p_max)
        elif family == "delta":
            kernel = MutationKernel.delta()
        elif family == "table":
            z = f.get_floats("kernel.z")
            dens = f.get_floats("kernel.density")
            if not z or not dens:
                raise ConfigError("kernel.z / kernel.density: required for family table")
            kernel = MutationKernel.tabulated(np.array(z), np.array(dens), p_max=p_max)
        else:
            raise ConfigError(f"kernel.family: unknown family {family!r}")

    init = None
    if f.has("init.u0") or mode in _INIT_REQUIRED:
        for key in ("init.u0", "init.p0", "init.k0"):
            if not f.has(key):
                raise ConfigError(f"{key}: missing required field (mode {mode})")
        init = InitialData(
            u0=f.get_expr("init.u0", required=True),
            p0=f.get_expr("init.p0", required=True),
            k0=f.get_float("init.k0", required=True),
            count=f.get_float("init.count"),
            gamma_lo=f.get_float("init.gamma_lo"),
            gamma_hi=f.get_float("init.gamma_hi"),
        )

    T = f.get_float("run.T", 0.0)
    if mode in _PDE_MODES or mode == "hjb":
        if not f.has("run.T"):
            raise ConfigError(f"run.T: missing required field (mode {mode})")

    out_dir = Path(overrides.get("out") or f.get("run.out", "out"))
    return RunConfig(
        mode=mode,
        model=model,
        grid=grid,
        kernel=kernel,
        init=init,
        T=T,
        snapshot_interval=f.get_float("run.snapshot_interval"),
        out_dir=out_dir,
        paper_literal_boundary=bool(
            overrides.get("paper_literal_boundary",
                          f.get_bool("run.paper_literal_boundary"))),
        eps_list=f.get_floats("run.eps_list", []),
        hj_R=f.get_float("run.hj_R", 4.0),
        hj_dt=f.get_float("run.hj_dt"),
        raw=pairs,
    )

"""Run configuration: a versioned TOML file validated before any computation.

Every table is closed: unknown keys are rejected with the offending key
path in the error message.  Sections are optional and default to the values
below, so an empty file containing only ``schema_version = 1`` is valid.
"""
from __future__ import annotations

import math
import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration file; ``problems`` lists ``(key_path, message)``."""

    def __init__(self, message: str, problems=()):
        super().__init__(message)
        self.problems = list(problems)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScalesSection(_Section):
    """Physical constants; the defaults are the reduced units c = kT = hbar = 1."""

    c: float = Field(1.0, gt=0)
    kT: float = Field(1.0, gt=0)
    hbar: float = Field(1.0, gt=0)


class GridSection(_Section):
    cells: list[int] = Field(default_factory=lambda: [64])
    length: list[float] = Field(default_factory=lambda: [2.0 * math.pi])
    periodic: Optional[list[bool]] = None

    @model_validator(mode="after")
    def _shape(self):
        if len(self.cells) not in (1, 2):
            raise ValueError("cells must have one or two entries")
        if len(self.length) != len(self.cells):
            raise ValueError("length must have one entry per axis")
        if self.periodic is not None and len(self.periodic) != len(self.cells):
            raise ValueError("periodic must have one entry per axis")
        if any(c < 3 for c in self.cells) or any(not L > 0 for L in self.length):
            raise ValueError("need at least 3 cells and a positive length per axis")
        return self

    @property
    def dx(self) -> tuple:
        return tuple(L / c for L, c in zip(self.length, self.cells))

    @property
    def periodic_flags(self) -> tuple:
        return tuple(self.periodic) if self.periodic is not None else (True,) * len(self.cells)


class PotentialSection(_Section):
    """Static potential V = amplitude * sin(2 pi mode x_axis / L_axis) (energy units)."""

    amplitude: float = 0.0
    mode: int = 1
    axis: int = Field(0, ge=0, le=1)


class TabulateSection(_Section):
    A_min: float = -20.0
    A_max: float = 20.0
    A_points: int = Field(81, ge=2)
    B_max: float = Field(30.0, gt=0)
    B_points: int = Field(61, ge=2)
    u_points: int = Field(101, ge=3)
    u_max: float = Field(0.999, gt=0, lt=1)
    # Distance from the critical line A = -B beyond which the asymptotic
    # isoline structure is checked.
    critical_margin: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def _range(self):
        if not self.A_min < self.A_max:
            raise ValueError("A_min must be below A_max")
        return self


class StateEntry(_Section):
    n_over_nT: float = Field(gt=0)
    u: list[float] = Field(default_factory=lambda: [0.0, 0.0], min_length=2, max_length=2)


class InvertSection(_Section):
    states: list[StateEntry] = Field(default_factory=lambda: [StateEntry(n_over_nT=math.pi ** 2 / 12)])
    random_states: int = Field(0, ge=0)
    tol: float = Field(1e-10, gt=0)


class RegimesSection(_Section):
    u: list[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 0.9, 0.99])
    small_u: list[float] = Field(default_factory=lambda: [0.02, 0.04, 0.06, 0.08])
    collimation_gap: float = Field(1e-4, gt=0, lt=1)


class HydroInitialSection(_Section):
    n_plus: float = Field(0.5, gt=0)
    n_minus: float = Field(0.3, gt=0)
    u_plus: list[float] = Field(default_factory=lambda: [0.0, 0.0], min_length=2, max_length=2)
    u_minus: list[float] = Field(default_factory=lambda: [0.0, 0.0], min_length=2, max_length=2)
    # Relative density perturbation n0 (1 + amplitude sin(2 pi mode x / L)).
    amplitude: float = Field(0.0, ge=0, lt=1)
    mode: int = 1


class HydroSection(_Section):
    grid: GridSection = Field(default_factory=GridSection)
    initial: HydroInitialSection = Field(default_factory=HydroInitialSection)
    potential: PotentialSection = Field(default_factory=PotentialSection)
    cfl: float = Field(0.4, gt=0, lt=1)
    tau0: float = Field(math.inf, gt=0)
    t_end: float = Field(1.0, gt=0)
    poisson: bool = False
    gamma: float = Field(1.0, gt=0)
    report_every: int = Field(1, ge=1)
    free_energy: bool = True


class DiffusionInitialSection(_Section):
    kind: Literal["steady", "gaussian", "uniform"] = "steady"
    # Quasi-Fermi level of the steady profile (energy units).
    level: float = 0.0
    amplitude: float = Field(1.0, gt=0)
    width: float = Field(0.5, gt=0)
    background: float = Field(0.01, gt=0)


class DiffusionSection(_Section):
    regime: Literal["general", "maxwell_boltzmann", "degenerate"] = "maxwell_boltzmann"
    tau0: float = Field(0.1, gt=0)
    species_sign: Literal[1, -1] = 1
    grid: GridSection = Field(default_factory=GridSection)
    potential: PotentialSection = Field(default_factory=PotentialSection)
    initial: DiffusionInitialSection = Field(default_factory=DiffusionInitialSection)
    t_end: float = Field(1.0, gt=0)
    dt_fraction: float = Field(0.5, gt=0, le=1)

    @model_validator(mode="after")
    def _finite(self):
        if not math.isfinite(self.tau0):
            raise ValueError("tau0 must be finite for drift-diffusion")
        return self


class WaveSection(_Section):
    grid: GridSection = Field(default_factory=GridSection)
    potential: PotentialSection = Field(default_factory=PotentialSection)
    n_background: float = Field(0.3, gt=0)
    amplitude: float = Field(1e-3, gt=0)
    mode: int = Field(1, ge=1)
    steps: int = Field(1000, ge=3)
    dt_fraction: float = Field(0.5, gt=0, le=1)
    species_sign: Literal[1, -1] = 1


class CollimationSection(_Section):
    mode: Literal["rays", "grid", "both"] = "rays"
    regime: Literal["maxwell_boltzmann", "degenerate"] = "maxwell_boltzmann"
    species_sign: Literal[1, -1] = 1
    delta_K: list[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0])
    incident_angles_deg: list[float] = Field(default_factory=lambda: [5.0, 10.0, 15.0, 20.0])
    # Nominal grid spacing of the ray protocol (step width 4 dx).
    ray_dx: float = Field(0.05, gt=0)
    # Grid run: cells along the normal, domain [-half_length, half_length].
    grid_cells: int = Field(800, ge=8)
    half_length: float = Field(4.0, gt=0)
    grid_step_width: float = Field(0.5, gt=0)
    grid_incident_deg: float = Field(10.0, gt=0, lt=90)
    grid_transits: float = Field(1.5, gt=0)
    cfl: float = Field(0.9, gt=0, le=1)


class SelftestSection(_Section):
    kernel_samples: int = Field(50, ge=1)
    inversion_samples: int = Field(20, ge=1)


class RunConfig(_Section):
    schema_version: Literal[1]
    scales: ScalesSection = Field(default_factory=ScalesSection)
    tabulate: TabulateSection = Field(default_factory=TabulateSection)
    invert: InvertSection = Field(default_factory=InvertSection)
    regimes: RegimesSection = Field(default_factory=RegimesSection)
    hydro: HydroSection = Field(default_factory=HydroSection)
    diffusion: DiffusionSection = Field(default_factory=DiffusionSection)
    wave: WaveSection = Field(default_factory=WaveSection)
    collimation: CollimationSection = Field(default_factory=CollimationSection)
    selftest: SelftestSection = Field(default_factory=SelftestSection)


def default_config() -> RunConfig:
    return RunConfig(schema_version=SCHEMA_VERSION)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse and validate TOML text.

    Raises
    ------
    ConfigError
        Malformed TOML, unknown keys, wrong types or out-of-range values.
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: malformed TOML: {exc}") from None
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        problems = [(".".join(str(p) for p in err["loc"]) or "<root>", err["msg"]) for err in exc.errors()]
        detail = "; ".join(f"{loc}: {msg}" for loc, msg in problems)
        raise ConfigError(f"{source}: invalid configuration: {detail}", problems) from None


def load_config(path) -> RunConfig:
    """Read and validate a configuration file (OSError propagates)."""
    path = Path(path)
    return parse_config(path.read_text(), str(path))

"""Run configuration: TOML input, JSON echo, and the objects built from it.

A configuration file has the sections ``plant``, ``cost``, ``ambiguity``,
``penalty``, ``terminal``, ``scenario``, ``solver`` and ``output``. Matrices
are nested row arrays. Every field except the plant and cost matrices has a
default, and :meth:`RunConfig.echo` writes all of them back out, so an
echoed file reloads (as JSON) to the same run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli

from .cutting_plane import CuttingPlaneConfig
from .errors import ConfigError
from .reformulation import TsdrProblem
from .simulator import SCENARIOS, ScenarioConfig

_REQUIRED = object()


@dataclass
class PlantSection:
    A: list = _REQUIRED
    B: list = _REQUIRED
    F0: list = _REQUIRED
    G0: list = _REQUIRED
    D: list | None = None
    u_min: float | list = -1.0
    u_max: float | list = 1.0


@dataclass
class CostSection:
    Q: list = _REQUIRED
    R: list = _REQUIRED
    N: int = 3


@dataclass
class AmbiguitySection:
    epsilon: float = 0.01
    n: int = 10
    C: list | None = None


@dataclass
class PenaltySection:
    h: float | list = 1000.0


@dataclass
class TerminalSection:
    l_c: float = 2.0


@dataclass
class ScenarioSection:
    name: str = "a"
    mu0: float | None = None
    sigma0: float | None = None
    runs: int = 20
    steps: int = 100
    seed: int = 0
    x0: list = field(default_factory=lambda: [-5.0, -2.0])
    window: int = 50
    per_step_moments: bool = True


@dataclass
class SolverSection:
    tol_cut: float = 1e-7
    tol_sep: float = 1e-6
    max_outer: int = 200
    max_master: int = 500
    multistart: bool = True
    probe_bisections: int = 4
    warm_start: bool = True


@dataclass
class OutputSection:
    dir: str = "out"


SECTIONS = {
    "plant": PlantSection, "cost": CostSection, "ambiguity": AmbiguitySection,
    "penalty": PenaltySection, "terminal": TerminalSection, "scenario": ScenarioSection,
    "solver": SolverSection, "output": OutputSection,
}


def _section(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown field {name}.{unknown[0]}")
    obj = cls(**data)
    for f in fields(cls):
        if getattr(obj, f.name) is _REQUIRED:
            raise ConfigError(f"missing required field {name}.{f.name}")
    return obj


@dataclass
class RunConfig:
    plant: PlantSection
    cost: CostSection
    ambiguity: AmbiguitySection = field(default_factory=AmbiguitySection)
    penalty: PenaltySection = field(default_factory=PenaltySection)
    terminal: TerminalSection = field(default_factory=TerminalSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    solver: SolverSection = field(default_factory=SolverSection)
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown section [{unknown[0]}]")
        for required in ("plant", "cost"):
            if required not in data:
                raise ConfigError(f"missing required section [{required}]")
        return cls(**{k: _section(k, SECTIONS[k], data.get(k, {})) for k in SECTIONS if k in data})

    def to_dict(self) -> dict:
        return asdict(self)

    def echo(self) -> str:
        """All fields, defaults included, as JSON."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def build_problem(self) -> TsdrProblem:
        """Assemble the controller problem; structural gates raise :class:`StructuralError`."""
        p, c, a = self.plant, self.cost, self.ambiguity
        D = p.D if p.D is not None else _identity(len(p.A))
        try:
            return TsdrProblem.build(
                p.A, p.B, D, p.F0, p.G0, c.Q, c.R, c.N, a.epsilon, a.n, self.penalty.h,
                self.terminal.l_c, p.u_min, p.u_max, C=a.C,
            )
        except (ValueError, TypeError, IndexError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"inconsistent plant or cost data: {exc}") from exc

    def scenario_config(self, name: str | None = None, **overrides) -> ScenarioConfig:
        """The scenario to simulate; ``name`` picks a preset, ``custom`` uses ``mu0``/``sigma0``."""
        s = self.scenario
        name = name or s.name
        base = dict(runs=s.runs, steps=s.steps, seed=s.seed, x0=tuple(s.x0), window=s.window,
                    per_step_moments=s.per_step_moments)
        base.update({k: v for k, v in overrides.items() if v is not None})
        if name == "custom":
            if s.mu0 is None or s.sigma0 is None:
                raise ConfigError("scenario 'custom' needs scenario.mu0 and scenario.sigma0")
            return ScenarioConfig(mu0=s.mu0, sigma0=s.sigma0, name="custom", **base)
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)} or custom")
        return ScenarioConfig.named(name, **base)

    def solver_config(self) -> CuttingPlaneConfig:
        s = self.solver
        return CuttingPlaneConfig(tol_cut=s.tol_cut, tol_sep=s.tol_sep, max_outer=s.max_outer,
                                  max_master=s.max_master, multistart=s.multistart,
                                  probe_bisections=s.probe_bisections)


def _identity(n):
    return [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]


def load_config(path) -> RunConfig:
    """Read a TOML file, or a JSON echo when the suffix is ``.json``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else tomli.loads(text)
    except (tomli.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig.from_dict(data)

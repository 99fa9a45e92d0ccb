"""Scenario documents: loading, cross-validation and derived objects.

A scenario is one JSON document. ``model``, ``constraints``, ``cost`` and
``omega`` may be inline objects or relative paths to JSON files holding
them. Bundled scenarios (``e1``, ``e2``, ``equilibrium``) are addressed by
name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .closedloop import DisturbanceSource
from .cost import Ross, StageCost, compute_ross, lipschitz_const
from .errors import AssumptionViolation, ScenarioError
from .geometry import Polytope
from .model import ConstraintData, LinearTubeModel
from .ocp import EqualityTerminal, OcpProblem, riccati_terminal, terminal_decrease_check
from .rci import min_rpi, rpi_certificate, tighten

SCHEMA_VERSION = 1
BUILTIN = ("e1", "e2", "equilibrium")
OMEGA_TOL = 1e-6

DEFAULT_SWEEP = {
    "N_list": [6, 10, 20, 40, 60],
    "T_list": [20, 40, 60],
    "seeds": list(range(10)),
    "points": None,
    "eps_grid": [0.02, 0.05, 0.1, 0.2],
}

DEFAULT_THRESHOLDS = {
    "monotone_slack": 1e-8,
    "final_gap": 1e-4,
    "transient_floor": -1e-6,
    "telescoping": 1e-9,
    "decrease": 1e-6,
    "corollary": 1e-9,
}


def _resolve(value, base: Path, what: str):
    if isinstance(value, str):
        path = (base / value) if not Path(value).is_absolute() else Path(value)
        if not path.is_file():
            raise ScenarioError(f"{what} file not found: {path}")
        with open(path) as fh:
            return json.load(fh)
    if not isinstance(value, dict):
        raise ScenarioError(f"{what} must be an object or a file path")
    return value


@dataclass
class Scenario:
    name: str
    model: LinearTubeModel
    Z: Polytope
    W: Polytope
    cost: StageCost
    omega_source: object = "computed"
    mode: str = "tc"
    variant: str = "nominal"
    N: int = 10
    T: int = 60
    N_inf: int = 600
    x0: object = None
    disturbance: DisturbanceSource = field(default_factory=DisturbanceSource)
    seed: int = 0
    output: str = "out"
    terminal: dict = field(default_factory=lambda: {"kind": "equality_at_ross"})
    sweep: dict = field(default_factory=lambda: dict(DEFAULT_SWEEP))
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "Scenario":
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported schema_version {version}")
        for key in ("model", "constraints", "cost"):
            if key not in doc:
                raise ScenarioError(f"scenario is missing {key!r}")
        model = LinearTubeModel.from_dict(_resolve(doc["model"], base, "model"))
        cons = _resolve(doc["constraints"], base, "constraints")
        try:
            Z = Polytope.from_dict(cons["Z"])
            W = Polytope.from_dict(cons["W"])
        except KeyError as exc:
            raise ScenarioError(f"constraints missing {exc}") from None
        cost = StageCost.from_dict(_resolve(doc["cost"], base, "cost"))
        omega = doc.get("omega", "computed")
        if omega != "computed":
            if isinstance(omega, dict) and "file" in omega:
                omega = Polytope.from_dict(_resolve(omega["file"], base, "omega"))
            else:
                omega = Polytope.from_dict(_resolve(omega, base, "omega"))
        dist = dict(doc.get("disturbance", {"kind": "zero"}))
        seed = int(doc.get("seed", 0))
        if "file" in dist:
            dist = {"kind": "explicit_sequence",
                    "sequence": _resolve(dist.pop("file"), base, "disturbance")["sequence"]}
        source = DisturbanceSource(dist.get("kind", "zero"), int(dist.get("seed", seed)),
                                   dist.get("sequence"))
        sweep = dict(DEFAULT_SWEEP)
        sweep.update(doc.get("sweep", {}))
        thresholds = dict(DEFAULT_THRESHOLDS)
        thresholds.update(doc.get("thresholds", {}))
        scn = cls(name=doc.get("name", "scenario"), model=model, Z=Z, W=W, cost=cost,
                  omega_source=omega, mode=doc.get("mode", "tc"),
                  variant=doc.get("variant", cost.variant), N=int(doc.get("N", 10)),
                  T=int(doc.get("T", 60)), N_inf=int(doc.get("N_inf", 30 * int(doc.get("N", 10)))),
                  x0=doc.get("x0"), disturbance=source, seed=seed,
                  output=doc.get("output", "out"),
                  terminal=doc.get("terminal", {"kind": "equality_at_ross"}),
                  sweep=sweep, thresholds=thresholds)
        scn.validate()
        return scn

    def validate(self):
        n, m = self.model.n, self.model.m
        ConstraintData(self.Z, self.W).validate(self.model)
        if self.mode not in ("tc", "uc"):
            raise ScenarioError(f"mode must be tc or uc, got {self.mode!r}")
        if self.N < 1 or self.T < 0 or self.N_inf < 1:
            raise ScenarioError("N, N_inf must be positive and T nonnegative")
        if isinstance(self.omega_source, Polytope) and self.omega_source.dim != n:
            raise ScenarioError("omega dimension does not match the model")
        if self.x0 is not None and self.x0 != "ross" and np.size(self.x0) != n:
            raise ScenarioError(f"x0 must have {n} entries")
        if self.cost.H.shape[0] != n + m:
            raise ScenarioError("cost dimension does not match (n + m)")
        if self.disturbance.kind == "explicit_sequence":
            seq = np.asarray(self.disturbance.sequence)
            if seq.shape[1] != n:
                raise ScenarioError("disturbance sequence has the wrong width")

    def to_dict(self) -> dict:
        omega = self.omega_source if isinstance(self.omega_source, str) else self.omega_source.to_dict()
        return {
            "schema_version": SCHEMA_VERSION, "name": self.name, "model": self.model.to_dict(),
            "constraints": {"Z": self.Z.to_dict(), "W": self.W.to_dict()},
            "cost": self.cost.to_dict(), "omega": omega, "mode": self.mode,
            "variant": self.variant, "N": self.N, "T": self.T, "N_inf": self.N_inf,
            "x0": self.x0 if self.x0 is None or isinstance(self.x0, str) else list(np.ravel(self.x0)),
            "disturbance": self.disturbance.to_dict(), "seed": self.seed, "output": self.output,
            "terminal": self.terminal, "sweep": self.sweep, "thresholds": self.thresholds,
        }


def load_scenario(ref: str) -> Scenario:
    """Load a scenario from a path or a bundled name."""
    if ref in BUILTIN:
        text = resources.files("tube_empc").joinpath("data", f"{ref}.json").read_text()
        return Scenario.from_dict(json.loads(text))
    path = Path(ref)
    if not path.is_file():
        raise ScenarioError(f"scenario not found: {ref}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {ref}: {exc}") from None
    return Scenario.from_dict(doc, base=path.parent)


@dataclass
class System:
    """Derived objects shared by every run of one scenario."""

    scenario: Scenario
    constraints: ConstraintData
    omega: Polytope
    z_bar: Polytope
    costs: dict = field(default_factory=dict)
    rosses: dict = field(default_factory=dict)
    _problems: dict = field(default_factory=dict, repr=False)

    @property
    def model(self) -> LinearTubeModel:
        return self.scenario.model

    def cost(self, variant: Optional[str] = None) -> StageCost:
        variant = variant or self.scenario.variant
        if variant not in self.costs:
            cost = self.scenario.cost.with_variant(variant)
            self.rosses[variant] = compute_ross(cost, self.model, self.z_bar, self.omega)
            # real states live in Z_pi, so the nominal cost's constant is taken there
            region = self.constraints.Z_pi if variant == "nominal" else self.z_bar
            lipschitz_const(cost, self.model, region, self.omega)
            self.costs[variant] = cost
        return self.costs[variant]

    def ross(self, variant: Optional[str] = None) -> Ross:
        self.cost(variant)
        return self.rosses[variant or self.scenario.variant]

    def problem(self, N: Optional[int] = None, mode: Optional[str] = None,
                variant: Optional[str] = None) -> OcpProblem:
        N = int(N or self.scenario.N)
        mode = mode or self.scenario.mode
        variant = variant or self.scenario.variant
        key = (N, mode, variant)
        if key not in self._problems:
            cost = self.cost(variant)
            ross = self.rosses[variant]
            prob = OcpProblem(self.model, cost, self.omega, self.z_bar, ross, N, mode)
            if mode == "tc" and self.scenario.terminal.get("kind") == "quadratic":
                term = riccati_terminal(prob, float(self.scenario.terminal["level"]))
                report = terminal_decrease_check(prob, term)
                if not report.holds:
                    raise AssumptionViolation(f"quadratic terminal ingredients fail: {report.to_dict()}")
                prob = OcpProblem(self.model, cost, self.omega, self.z_bar, ross, N, mode, term)
            elif mode == "tc":
                prob.terminal = EqualityTerminal()
            self._problems[key] = prob
        return self._problems[key]

    def x0(self, variant: Optional[str] = None) -> np.ndarray:
        x0 = self.scenario.x0
        if x0 is None or x0 == "ross":
            return self.ross(variant).zs.copy()
        return np.asarray(x0, float).ravel()

    def points(self, variant: Optional[str] = None) -> list:
        pts = self.scenario.sweep.get("points") or [self.x0(variant)]
        return [self.ross(variant).zs.copy() if p == "ross" else np.asarray(p, float).ravel()
                for p in pts]


def build_system(scn: Scenario) -> System:
    """Compute Omega, the tightened set and cross-check the containments.

    Raises:
        NonContractiveError, ConstraintQualificationError, ScenarioError.
    """
    constraints = ConstraintData.from_model(scn.Z, scn.W, scn.model)
    if isinstance(scn.omega_source, Polytope):
        omega = scn.omega_source
        if np.min(rpi_certificate(scn.model.A_K, omega, scn.W)) < -1e-9:
            raise ScenarioError("supplied Omega is not robustly invariant")
    else:
        omega = min_rpi(scn.model.A_K, scn.W, tol=OMEGA_TOL)
    z_bar = tighten(constraints.Z_pi, omega)
    constraints.Z_bar = z_bar
    return System(scn, constraints, omega, z_bar)

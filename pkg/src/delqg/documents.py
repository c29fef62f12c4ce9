"""Result documents: gain bundles and verification run records.

Documents are JSON with matrices as nested row-major lists.  Python's
float repr is the shortest string that reads back to the same double, so
every schedule round-trips bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimation import EstimatorSchedule
from .model import Mode, Pattern, PlantModel
from .policy import ControllerPolicy, Synthesis, assemble_policy
from .riccati import LqrSolution, NestedGains

BUNDLE_FORMAT = "delqg-gains/1"
RECORD_FORMAT = "delqg-run/1"


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def scenario_hash(doc: dict) -> str:
    """SHA-256 of the canonicalized scenario document."""
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _lists(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def _arr(a):
    return None if a is None else np.array(a, dtype=float)


def gain_bundle(syn: Synthesis, scenario_doc: dict | None = None) -> dict:
    """All synthesized schedules plus the optimal cost."""
    est = syn.est
    sched = {
        "C": _lists(est.C), "W": _lists(est.W), "q1": est.q1,
        "Tbar": _lists(est.Tbar), "T": _lists(est.T), "Theta": _lists(est.Theta),
        "Rg": _lists(est.Rg), "Rbar": _lists(est.Rbar),
        "psi_given_phi": _lists(est.psi_given_phi),
    }
    g = syn.gains
    if isinstance(g, NestedGains):
        sched.update(K=_lists(g.K), J=_lists(g.J), P_lqr=_lists(g.P), P22=_lists(g.P22))
    else:
        sched.update(H=_lists(g.H), P_lqr=_lists(g.P))
    if syn.gainopt is not None:
        sched.update(F=_lists(syn.gainopt.F), Sigma=_lists(syn.gainopt.Sigma),
                     P=_lists(syn.gainopt.Pcost), jf=syn.gainopt.jf)
    doc = {"format": BUNDLE_FORMAT, "pattern": syn.pattern.value, "mode": syn.mode.value,
           "horizon": syn.model.N, "cost": syn.cost, "schedules": sched}
    if scenario_doc is not None:
        doc["scenario_hash"] = scenario_hash(scenario_doc)
    return doc


def policy_from_bundle(model: PlantModel, bundle: dict) -> ControllerPolicy:
    """Rebuild the executable law recorded in a gain bundle."""
    if bundle.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"not a gain bundle: format {bundle.get('format')!r}")
    pattern, mode = Pattern(bundle["pattern"]), Mode(bundle["mode"])
    s = bundle["schedules"]
    est = EstimatorSchedule(pattern, mode, _arr(s["C"]), _arr(s["W"]), int(s["q1"]),
                            _arr(s["Tbar"]), _arr(s["T"]), _arr(s["Theta"]), _arr(s["Rg"]),
                            _arr(s["Rbar"]), _arr(s["psi_given_phi"]))
    if "K" in s:
        d = model.dims
        gains = NestedGains(_arr(s["K"]), _arr(s["J"]), _arr(s["P_lqr"]), _arr(s["P22"]),
                            d.n1, d.m1)
    else:
        gains = LqrSolution(_arr(s["H"]), _arr(s["P_lqr"]))
    return assemble_policy(model, pattern, mode, gains, _arr(s.get("F")), est)


@dataclass
class RunRecord:
    """Outcome of one verification run.

    Everything except ``timing`` is a deterministic function of the
    scenario and the command-line flags.
    """

    scenario_hash: str
    command: str
    pattern: str
    mode: str
    cost: float
    exact_cost: float
    mc_mean: float | None = None
    mc_se: float | None = None
    rollouts: int | None = None
    seed: int | None = None
    oracle_cost: float | None = None
    checks: dict[str, bool] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)
    version: str = ""

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_document(self) -> dict:
        doc = asdict(self)
        doc["format"] = RECORD_FORMAT
        return doc

"""Problem data model, scenario ingestion and structural validation."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

#: PSD/PD slack, relative to the largest absolute eigenvalue.
TAU_PSD = 1e-9
#: Zero-block slack (Frobenius), relative to the norm of the parent matrix.
TAU_ZERO = 1e-10
#: Relative singular-value cutoff for pseudoinverses of innovation covariances.
TAU_PINV = 1e-10


class ScenarioError(ValueError):
    """Base class for scenario ingestion failures."""


class ParseError(ScenarioError):
    pass


class ShapeError(ScenarioError):
    pass


class UnknownFieldError(ScenarioError):
    pass


class Pattern(enum.Enum):
    """Information sharing pattern.

    ``ONE_ZERO`` and ``ONE_INF`` are the delayed patterns a scenario may
    request.  ``NO_DELAY`` and ``CENTRALIZED`` are baselines used for cost
    comparisons and by the oracle; they are not accepted in scenarios.
    """

    ONE_ZERO = "one_zero"
    ONE_INF = "one_inf"
    NO_DELAY = "no_delay"
    CENTRALIZED = "centralized"


class Mode(enum.Enum):
    STATE = "state"
    OUTPUT = "output"
    PARTIAL_OUTPUT = "partial_output"
    CONSTRAINED_OUTPUT = "constrained_output"

    @property
    def observes_output(self) -> bool:
        return self is not Mode.STATE


SCENARIO_PATTERNS = (Pattern.ONE_ZERO, Pattern.ONE_INF)

_COMPATIBLE = {
    Mode.STATE: {Pattern.ONE_ZERO, Pattern.ONE_INF, Pattern.NO_DELAY, Pattern.CENTRALIZED},
    Mode.OUTPUT: {Pattern.ONE_ZERO, Pattern.CENTRALIZED},
    Mode.PARTIAL_OUTPUT: {Pattern.ONE_INF},
    Mode.CONSTRAINED_OUTPUT: {Pattern.ONE_INF},
}


@dataclass(frozen=True)
class Dims:
    n1: int
    n2: int
    m1: int
    m2: int
    p1: int = 0
    p2: int = 0

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    @property
    def p(self) -> int:
        return self.p1 + self.p2


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Two-player linear plant, noise statistics and quadratic cost.

    Matrices are stored as read-only float arrays.  ``C`` and ``W`` are
    ``None`` for state feedback; the observation used by every downstream
    routine is then ``y = x`` (see :meth:`observation`).
    """

    dims: Dims
    A: np.ndarray
    B: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    Rw: np.ndarray
    S: np.ndarray
    cov0: np.ndarray
    N: int
    C: np.ndarray | None = None
    W: np.ndarray | None = None
    mean0: np.ndarray | None = None

    def __post_init__(self):
        for name in ("A", "B", "V", "Q", "Rw", "S", "cov0", "C", "W", "mean0"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val))
        if self.mean0 is None:
            object.__setattr__(self, "mean0", _frozen(np.zeros(self.dims.n)))
        _check_shapes(self)

    @property
    def n(self) -> int:
        return self.dims.n

    @property
    def m(self) -> int:
        return self.dims.m

    def blocks(self, M: np.ndarray, rows: str, cols: str):
        """Split ``M`` into 2x2 blocks along the named partitions ('n', 'm', 'p')."""
        r = {"n": self.dims.n1, "m": self.dims.m1, "p": self.dims.p1}[rows]
        c = {"n": self.dims.n1, "m": self.dims.m1, "p": self.dims.p1}[cols]
        return M[:r, :c], M[:r, c:], M[r:, :c], M[r:, c:]

    def observation(self, mode: "Mode") -> tuple[np.ndarray, np.ndarray, int]:
        """Return ``(C, W, p1)`` for the observation model in force.

        Under state feedback the observation is the state itself with no
        measurement noise, partitioned like the state.
        """
        if mode is Mode.STATE:
            n = self.n
            return np.eye(n), np.zeros((n, n)), self.dims.n1
        if self.C is None or self.W is None:
            raise ShapeError(f"mode {mode.value} requires C and W")
        return np.asarray(self.C), np.asarray(self.W), self.dims.p1

    def replace(self, **changes) -> "PlantModel":
        kw = dict(dims=self.dims, A=self.A, B=self.B, V=self.V, Q=self.Q, Rw=self.Rw,
                  S=self.S, cov0=self.cov0, N=self.N, C=self.C, W=self.W, mean0=self.mean0)
        kw.update(changes)
        return PlantModel(**kw)

    def scaled_noise(self, scale: float) -> "PlantModel":
        """Scale V, W and cov0 together."""
        return self.replace(V=scale * self.V, cov0=scale * self.cov0,
                            W=None if self.W is None else scale * self.W)


def _check_shapes(model: PlantModel) -> None:
    d = model.dims
    n, m, p = d.n, d.m, d.p
    if not isinstance(model.N, (int, np.integer)) or model.N < 1:
        raise ShapeError(f"horizon must be a positive integer, got {model.N!r}")
    expect = {"A": (n, n), "B": (n, m), "V": (n, n), "Q": (n, n), "Rw": (m, m),
              "S": (n, n), "cov0": (n, n), "mean0": (n,)}
    if model.C is not None:
        expect["C"] = (p, n)
    if model.W is not None:
        expect["W"] = (p, p)
    for name, shape in expect.items():
        got = getattr(model, name).shape
        if got != shape:
            raise ShapeError(f"{name} has shape {got}, expected {shape}")


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 5000
    grad_tol: float = 1e-9
    mc_rollouts: int = 100_000
    seed: int = 0


@dataclass(frozen=True)
class Violation:
    check: str
    quantity: str
    magnitude: float


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def names(self) -> list[str]:
        return [v.check for v in self.violations]

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        lines = ["violations:"]
        lines += [f"  {v.check}: {v.quantity} (magnitude {v.magnitude:.3e})"
                  for v in self.violations]
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# scenario documents

_TOP_KEYS = {"name", "description", "dims", "horizon", "pattern", "mode", "A", "B", "C",
             "V", "W", "Q", "R", "S", "cov0", "mean0", "solver"}
_DIM_KEYS = {"n1", "n2", "m1", "m2", "p1", "p2"}
_SOLVER_KEYS = {"max_iters", "grad_tol", "mc_rollouts", "seed"}


@dataclass(frozen=True)
class Scenario:
    model: PlantModel
    pattern: Pattern
    mode: Mode
    options: SolverOptions
    name: str = ""
    document: dict = field(default_factory=dict, compare=False, repr=False)


def _matrix(doc: dict, key: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        arr = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{key}: not a numeric array ({exc})") from None
    if arr.ndim == 0 and shape == (1, 1):
        arr = arr.reshape(1, 1)
    if arr.shape != shape:
        raise ShapeError(f"{key} has shape {arr.shape}, expected {shape}")
    return arr


def parse_scenario(doc: dict) -> Scenario:
    """Materialize a scenario from an already-decoded document."""
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise UnknownFieldError(f"unknown field(s): {', '.join(sorted(unknown))}")
    for key in ("dims", "horizon", "pattern", "mode", "A", "B", "V", "Q", "R", "S", "cov0"):
        if key not in doc:
            raise ParseError(f"missing required field {key!r}")

    raw_dims = doc["dims"]
    if not isinstance(raw_dims, dict):
        raise ParseError("dims must be a mapping")
    unknown = set(raw_dims) - _DIM_KEYS
    if unknown:
        raise UnknownFieldError(f"unknown dims field(s): {', '.join(sorted(unknown))}")
    try:
        dims = Dims(**{k: int(v) for k, v in raw_dims.items()})
    except TypeError as exc:
        raise ParseError(f"dims: {exc}") from None
    if min(dims.n1, dims.n2, dims.m1, dims.m2) < 1:
        raise ShapeError("block dimensions n1, n2, m1, m2 must be positive")

    try:
        pattern = Pattern(doc["pattern"])
        mode = Mode(doc["mode"])
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if pattern not in SCENARIO_PATTERNS:
        raise ParseError(f"pattern {pattern.value!r} is not allowed in scenarios")

    horizon = doc["horizon"]
    if isinstance(horizon, bool) or not isinstance(horizon, int) or horizon < 1:
        raise ParseError(f"horizon must be a positive integer, got {horizon!r}")

    n, m, p = dims.n, dims.m, dims.p
    mats = {k: _matrix(doc, k, (n, n)) for k in ("A", "V", "Q", "S", "cov0")}
    mats["B"] = _matrix(doc, "B", (n, m))
    mats["Rw"] = _matrix(doc, "R", (m, m))
    C = W = None
    if mode.observes_output:
        if "C" not in doc or "W" not in doc:
            raise ParseError(f"mode {mode.value!r} requires C and W")
        if p == 0:
            raise ShapeError("output modes require p1, p2 in dims")
        C = _matrix(doc, "C", (p, n))
        W = _matrix(doc, "W", (p, p))
    mean0 = None
    if "mean0" in doc:
        mean0 = np.array(doc["mean0"], dtype=float).reshape(-1)
        if mean0.shape != (n,):
            raise ShapeError(f"mean0 has shape {mean0.shape}, expected {(n,)}")

    solver = doc.get("solver", {})
    if not isinstance(solver, dict):
        raise ParseError("solver must be a mapping")
    unknown = set(solver) - _SOLVER_KEYS
    if unknown:
        raise UnknownFieldError(f"unknown solver field(s): {', '.join(sorted(unknown))}")
    defaults = SolverOptions()
    options = SolverOptions(
        max_iters=int(solver.get("max_iters", defaults.max_iters)),
        grad_tol=float(solver.get("grad_tol", defaults.grad_tol)),
        mc_rollouts=int(solver.get("mc_rollouts", defaults.mc_rollouts)),
        seed=int(solver.get("seed", defaults.seed)),
    )
    model = PlantModel(dims=dims, N=horizon, C=C, W=W, mean0=mean0, **mats)
    return Scenario(model, pattern, mode, options, name=str(doc.get("name", "")), document=doc)


def load_scenario(text: str) -> Scenario:
    """Parse a scenario document (JSON text)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed scenario document: {exc}") from None
    return parse_scenario(doc)


def scenario_document(model: PlantModel, pattern: Pattern, mode: Mode,
                      options: SolverOptions | None = None, name: str = "") -> dict:
    """Inverse of :func:`parse_scenario`."""
    d = model.dims
    dims = {"n1": d.n1, "n2": d.n2, "m1": d.m1, "m2": d.m2}
    if d.p:
        dims.update(p1=d.p1, p2=d.p2)
    doc = {"dims": dims, "horizon": int(model.N), "pattern": pattern.value, "mode": mode.value}
    if name:
        doc["name"] = name
    for key, val in (("A", model.A), ("B", model.B), ("C", model.C), ("V", model.V),
                     ("W", model.W), ("Q", model.Q), ("R", model.Rw), ("S", model.S),
                     ("cov0", model.cov0)):
        if val is not None:
            doc[key] = np.asarray(val).tolist()
    if np.any(model.mean0 != 0):
        doc["mean0"] = np.asarray(model.mean0).tolist()
    if options is not None:
        doc["solver"] = {"max_iters": options.max_iters, "grad_tol": options.grad_tol,
                         "mc_rollouts": options.mc_rollouts, "seed": options.seed}
    return doc


# ---------------------------------------------------------------------------
# validation

def _rel(x: float, ref: float) -> float:
    return x / ref if ref > 0 else x


def _psd_violation(M: np.ndarray, definite: bool = False) -> float | None:
    asym = np.linalg.norm(M - M.T)
    scale = np.linalg.norm(M)
    if _rel(asym, scale) > TAU_ZERO:
        return float(asym)
    eig = np.linalg.eigvalsh((M + M.T) / 2)
    top = np.max(np.abs(eig)) if eig.size else 0.0
    floor = TAU_PSD * top
    lo = eig.min() if eig.size else 0.0
    if definite:
        return None if lo > floor and top > 0 else float(lo)
    return None if lo >= -floor else float(lo)


def validate(model: PlantModel, pattern: Pattern, mode: Mode) -> ValidationReport:
    """Check definiteness, nestedness and mode-specific observation structure.

    Violations are returned as data; nothing is raised.
    """
    out: list[Violation] = []

    def psd(name, M, definite=False, label=None):
        bad = _psd_violation(np.asarray(M), definite)
        if bad is not None:
            check = label or (f"{name} not PD" if definite else f"{name} not PSD")
            out.append(Violation(check, name, abs(bad)))

    psd("Q", model.Q)
    psd("S", model.S)
    psd("V", model.V)
    psd("cov0", model.cov0)
    psd("Rw", model.Rw, definite=True)

    mean_norm = float(np.linalg.norm(model.mean0))
    if mean_norm > 0:
        out.append(Violation("mean0 nonzero", "mean0", mean_norm))

    if mode not in _COMPATIBLE or pattern not in _COMPATIBLE[mode]:
        out.append(Violation("mode/pattern compatibility", f"{pattern.value}/{mode.value}", 1.0))

    needs_nested = pattern in (Pattern.ONE_INF, Pattern.NO_DELAY)
    if needs_nested:
        for name, M, rows, cols in (("A12", model.A, "n", "n"), ("B12", model.B, "n", "m")):
            blk = model.blocks(M, rows, cols)[1]
            mag = float(np.linalg.norm(blk))
            if _rel(mag, float(np.linalg.norm(M))) > TAU_ZERO:
                out.append(Violation("nestedness", name, mag))

    if mode.observes_output:
        if model.C is None or model.W is None:
            out.append(Violation("observation model", "C/W missing", 1.0))
        else:
            out.extend(_observation_checks(model, mode, needs_nested or mode in (
                Mode.PARTIAL_OUTPUT, Mode.CONSTRAINED_OUTPUT)))
    return ValidationReport(tuple(out))


def _observation_checks(model: PlantModel, mode: Mode, nested: bool) -> list[Violation]:
    out = []
    d = model.dims
    C, W = np.asarray(model.C), np.asarray(model.W)
    C11, C12, C21, C22 = model.blocks(C, "p", "n")
    W11, W12, W21, W22 = model.blocks(W, "p", "p")
    cnorm = float(np.linalg.norm(C))
    if nested:
        mag = float(np.linalg.norm(C12))
        if _rel(mag, cnorm) > TAU_ZERO:
            out.append(Violation("nestedness", "C12", mag))

    if mode is Mode.OUTPUT:
        bad = _psd_violation(W, definite=True)
        if bad is not None:
            out.append(Violation("W not PD", "W", abs(bad)))
    elif mode is Mode.PARTIAL_OUTPUT:
        if d.p1 != d.n1:
            out.append(Violation("partial output", "p1 != n1", float(abs(d.p1 - d.n1))))
        else:
            mag = float(np.linalg.norm(C11 - np.eye(d.n1)))
            if mag > TAU_ZERO:
                out.append(Violation("partial output", "C11 != I", mag))
            mag = float(np.linalg.norm(W11) + np.linalg.norm(W12) + np.linalg.norm(W21))
            if _rel(mag, float(np.linalg.norm(W))) > TAU_ZERO:
                out.append(Violation("partial output", "y1 measurement noise", mag))
        bad = _psd_violation(W22, definite=True)
        if bad is not None:
            out.append(Violation("W22 not PD", "W22", abs(bad)))
    elif mode is Mode.CONSTRAINED_OUTPUT:
        bad = _psd_violation(W, definite=True)
        if bad is not None:
            out.append(Violation("W not PD", "W", abs(bad)))
        resid = row_space_residual(C11, C21)
        if resid > TAU_ZERO:
            out.append(Violation("row space", "C21 not in row space of C11", resid))
    return out


def row_space_residual(C11: np.ndarray, C21: np.ndarray) -> float:
    """Relative residual of ``C21 = M C11`` with ``M`` the minimum-norm solution."""
    M = C21 @ np.linalg.pinv(C11)
    resid = float(np.linalg.norm(C21 - M @ C11))
    return _rel(resid, float(np.linalg.norm(C21)))

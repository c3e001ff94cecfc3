"""Shared domain types, parameter validation and the simulation time grid.

Everything downstream (models, integrator, estimators, CLI) works in scaled
time tau = Gamma*t, where Gamma is a reference damping constant with units of
inverse time.  All simulation quantities are dimensionless; Gamma and the
homodyne parameters only re-dimensionalize the external detection-window
moments at output time.

All types here are immutable after construction and safe to share across
parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidParam",
    "UnequalDamping",
    "NonFiniteError",
    "DegenerateEnsemble",
    "WindowOutOfRange",
    "GridMismatch",
    "SystemParams",
    "PhaseAngles",
    "TimeGrid",
    "HomodyneParams",
    "PositivePPoint",
    "SedPoint",
    "PhasePoint",
    "ValidationReport",
    "validate_params",
    "GRID_TOL",
]

# Relative tolerance for "the grid span is an integer number of steps".
GRID_TOL = 1e-9


class InvalidParam(ValueError):
    """A required parameter is non-finite, non-positive or inconsistent."""


class UnequalDamping(ValueError):
    """An equal-damping closed form was requested with gamma1/2/3 unequal."""


class NonFiniteError(FloatingPointError):
    """A trajectory left the finite domain (overflow / NaN).

    Usually signals a parameter regime outside the validity of the
    phase-space equations.  Carries enough context to reproduce the
    failing path.
    """

    def __init__(self, message, *, step=None, path_index=None, seed=None):
        super().__init__(message)
        self.step = step
        self.path_index = path_index
        self.seed = seed


class DegenerateEnsemble(ValueError):
    """Too few paths/batches for the requested estimate."""


class WindowOutOfRange(ValueError):
    """An integration window does not lie on the trajectory's grid."""


class GridMismatch(ValueError):
    """Two result sets were compared on different time grids."""


def _require_finite(name, value):
    if not math.isfinite(value):
        raise InvalidParam(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class SystemParams:
    """Physical configuration of the three-mode parametric oscillator.

    g        -- dimensionless nonlinear coupling (interaction strength over
                the reference damping constant)
    gamma1-3 -- dimensionless damping ratios of signal, idler, pump
    epsilon  -- initial pump amplitude (dimensionless; the mean initial pump
                photon number is N = |epsilon|^2).  Stored complex, though
                all shipped experiments use a real pump.
    Gamma    -- reference damping constant in s^-1; only used to restore
                units in external (detection) moments.
    """

    g: float
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 1.0
    epsilon: complex = 1.0
    Gamma: float = 1.0

    def __post_init__(self):
        for name in ("g", "gamma1", "gamma2", "gamma3", "Gamma"):
            _require_finite(name, float(getattr(self, name)))
        if self.g < 0:
            raise InvalidParam(f"g must be >= 0, got {self.g}")
        for name in ("gamma1", "gamma2", "gamma3", "Gamma"):
            if getattr(self, name) <= 0:
                raise InvalidParam(f"{name} must be > 0, got {getattr(self, name)}")
        eps = complex(self.epsilon)
        if not (math.isfinite(eps.real) and math.isfinite(eps.imag)):
            raise InvalidParam(f"epsilon must be finite, got {eps!r}")
        object.__setattr__(self, "epsilon", eps)

    @property
    def N(self) -> float:
        """Mean initial pump photon number |epsilon|^2."""
        return abs(self.epsilon) ** 2

    @property
    def gammas(self):
        return (self.gamma1, self.gamma2, self.gamma3)

    @property
    def gamma_min(self) -> float:
        return min(self.gammas)

    @property
    def equal_damping(self) -> bool:
        return self.gamma1 == self.gamma2 == self.gamma3

    def require_equal_damping(self) -> float:
        """Return the common damping ratio, or raise UnequalDamping."""
        if not self.equal_damping:
            raise UnequalDamping(
                f"equal-damping form requested with gammas={self.gammas}"
            )
        return self.gamma1


@dataclass(frozen=True)
class PhaseAngles:
    """Intracavity quadrature phases theta_i and external LO phases theta_bar_i."""

    theta1: float = 0.0
    theta2: float = 0.0
    theta3: float = 0.0
    theta_bar1: float = 0.0
    theta_bar2: float = 0.0
    theta_bar3: float = 0.0

    def __post_init__(self):
        for name in (
            "theta1", "theta2", "theta3",
            "theta_bar1", "theta_bar2", "theta_bar3",
        ):
            _require_finite(name, float(getattr(self, name)))

    @property
    def Theta(self) -> float:
        """Sum phase theta1 + theta2 + theta3 (controls the quantum moment)."""
        return self.theta1 + self.theta2 + self.theta3

    @property
    def Phi(self) -> float:
        """Difference phase theta1 + theta2 - theta3 (controls the SED moment)."""
        return self.theta1 + self.theta2 - self.theta3

    @property
    def thetas(self):
        return (self.theta1, self.theta2, self.theta3)

    @property
    def theta_bars(self):
        return (self.theta_bar1, self.theta_bar2, self.theta_bar3)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid tau_s + k*dt, k = 0..n_steps, in scaled time."""

    t_start: float
    t_end: float
    dt: float = 0.0025

    def __post_init__(self):
        for name in ("t_start", "t_end", "dt"):
            _require_finite(name, float(getattr(self, name)))
        if self.dt <= 0:
            raise InvalidParam(f"dt must be > 0, got {self.dt}")
        if self.t_start < 0:
            raise InvalidParam(f"t_start must be >= 0, got {self.t_start}")
        span = self.t_end - self.t_start
        if span <= 0:
            raise InvalidParam(f"t_end must exceed t_start, got span {span}")
        ratio = span / self.dt
        if abs(ratio - round(ratio)) > GRID_TOL * max(1.0, ratio):
            raise InvalidParam(
                f"(t_end - t_start)/dt = {ratio} is not an integer within {GRID_TOL}"
            )

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_nodes)

    def index_of(self, tau: float) -> int:
        """Index of the grid node at tau; raises if tau is not a node."""
        k = (tau - self.t_start) / self.dt
        if abs(k - round(k)) > GRID_TOL * max(1.0, abs(k)) or not (
            -0.5 < round(k) < self.n_nodes - 0.5
        ):
            raise WindowOutOfRange(f"tau={tau} is not a node of {self}")
        return int(round(k))


@dataclass(frozen=True)
class HomodyneParams:
    """Balanced-homodyne chain constants for external moments.

    e_charge -- electron charge magnitude (C)
    amp_A    -- electronic amplification factor (dimensionless)
    eta      -- detector efficiency in (0, 1]
    E_lo     -- local-oscillator amplitude (s^-1/2)
    """

    e_charge: float = 1.602176634e-19
    amp_A: float = 1.0 / 1.602176634e-19
    eta: float = 1.0
    E_lo: float = 1.0

    def __post_init__(self):
        for name in ("e_charge", "amp_A", "eta", "E_lo"):
            _require_finite(name, float(getattr(self, name)))
        if not (0 < self.eta <= 1):
            raise InvalidParam(f"eta must be in (0, 1], got {self.eta}")
        if self.E_lo <= 0:
            raise InvalidParam(f"E_lo must be > 0, got {self.E_lo}")
        if self.e_charge <= 0 or self.amp_A <= 0:
            raise InvalidParam("e_charge and amp_A must be > 0")

    @property
    def gain(self) -> float:
        """Combined per-mode factor e*A*eta*E entering external moments."""
        return self.e_charge * self.amp_A * self.eta * self.E_lo


def _finite_complex(name, z):
    z = complex(z)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise InvalidParam(f"{name} must be finite, got {z!r}")
    return z


@dataclass(frozen=True)
class PositivePPoint:
    """One quantum trajectory state: six independent complex amplitudes.

    a_i and a_ip describe the same mode but are independent variables;
    a_ip == conj(a_i) is NOT required per path (their independence is the
    point of the doubled phase space), only in ensemble mean.
    """

    a1: complex
    a1p: complex
    a2: complex
    a2p: complex
    a3: complex
    a3p: complex

    def __post_init__(self):
        for name in ("a1", "a1p", "a2", "a2p", "a3", "a3p"):
            object.__setattr__(self, name, _finite_complex(name, getattr(self, name)))

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.a1, self.a1p, self.a2, self.a2p, self.a3, self.a3p],
            dtype=np.complex128,
        )

    @classmethod
    def from_array(cls, arr) -> "PositivePPoint":
        return cls(*(complex(z) for z in np.asarray(arr).reshape(6)))


@dataclass(frozen=True)
class SedPoint:
    """One semiclassical trajectory state: three complex field amplitudes."""

    b1: complex
    b2: complex
    b3: complex

    def __post_init__(self):
        for name in ("b1", "b2", "b3"):
            object.__setattr__(self, name, _finite_complex(name, getattr(self, name)))

    def to_array(self) -> np.ndarray:
        return np.array([self.b1, self.b2, self.b3], dtype=np.complex128)

    @classmethod
    def from_array(cls, arr) -> "SedPoint":
        return cls(*(complex(z) for z in np.asarray(arr).reshape(3)))


PhasePoint = PositivePPoint | SedPoint


@dataclass
class ValidationReport:
    """Outcome of validate_params: hard errors and non-fatal warnings."""

    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def status(self) -> str:
        if self.errors:
            return "error"
        return "warn" if self.warnings else "ok"


def validate_params(p: SystemParams, grid: TimeGrid) -> ValidationReport:
    """Check a parameter set against a time grid.

    Hard invariant violations go to report.errors.  The phase-space equations
    used for the quantum theory rely on neglecting boundary terms, which is
    safe for short times or large damping; the heuristic g >= 1 or
    g*|epsilon|*t_end/gamma_min >= 1 triggers a non-fatal warning and never
    aborts a run.
    """
    report = ValidationReport()
    try:
        SystemParams(
            g=p.g, gamma1=p.gamma1, gamma2=p.gamma2, gamma3=p.gamma3,
            epsilon=p.epsilon, Gamma=p.Gamma,
        )
    except InvalidParam as exc:
        report.errors.append(str(exc))
    try:
        TimeGrid(grid.t_start, grid.t_end, grid.dt)
    except InvalidParam as exc:
        report.errors.append(str(exc))
    if report.errors:
        return report

    if p.g >= 1:
        report.warnings.append(
            f"g={p.g} >= 1: phase-space boundary terms may not be negligible"
        )
    drive = p.g * abs(p.epsilon) * grid.t_end / p.gamma_min
    if drive >= 1:
        report.warnings.append(
            "g*|epsilon|*t_end/gamma_min = "
            f"{drive:.3g} >= 1: long/strongly driven run, boundary-term caution"
        )
    return report

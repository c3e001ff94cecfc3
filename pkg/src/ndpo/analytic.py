"""Closed-form leading-order predictions for both theories, the
signal-to-noise endpoint, and the crystal-to-coupling calculator.

Intracavity, equal damping gamma, sum phase Theta, difference phase Phi:

    quantum:        <M(tau)>   ~ 1/4 cos(Theta) * T3(tau)
        T3(tau) = -eps^2 g^3 exp(-3 gamma tau)/gamma^2
                  * [exp(gamma tau)/gamma - 2 tau - exp(-gamma tau)/gamma]
    semiclassical:  <M(tau)>   ~ 1/4 cos(Phi) * (g/12 gamma)(1 - exp(-3 gamma tau))

so the quantum moment is cubic in the coupling g while the semiclassical
one is linear — the observable difference this toolkit quantifies.

External (time-integrated homodyne currents over [0, tau_f], LO phases 0,
small windows g, tau_f << 1):

    quantum:        -(sqrt2/48) g^3 eps^2 (e A eta E)^3 Gamma^(-3/2) tau_f^6
    semiclassical:  +(sqrt2/16) g       (e A eta E)^3 Gamma^(-3/2) tau_f^4

qm_external_time_exact refines the quantum result to all orders in
gamma*tau_f (still leading order in g); the small-window formula above is
its tau_f -> 0 limit.

All functions here are pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import HomodyneParams, InvalidParam, PhaseAngles, SystemParams

__all__ = [
    "HBAR",
    "EPSILON_0",
    "SPEED_OF_LIGHT",
    "ELECTRON_CHARGE",
    "CrystalSpec",
    "AnalyticPrediction",
    "qm_triple_intracavity",
    "qm_moment_M",
    "sed_triple_intracavity",
    "sed_moment_M",
    "qm_external",
    "qm_external_time_exact",
    "sed_external",
    "signal_to_noise",
    "snr_unity_sample_size",
    "crystal_to_coupling",
    "load_crystal_presets",
]

# Physical constants (CODATA, 10 significant digits; c and e are exact).
HBAR = 1.054571817e-34          # J s
EPSILON_0 = 8.854187813e-12     # F / m
SPEED_OF_LIGHT = 299792458.0    # m / s
ELECTRON_CHARGE = 1.602176634e-19  # C

# Switchover for the series evaluation of the damped-bracket kernel.
SERIES_SWITCH = 1e-3

_SINHM_COEFFS = (
    1.0 / 6.0,            # x^3 / 3!
    1.0 / 120.0,          # x^5 / 5!
    1.0 / 5040.0,         # x^7 / 7!
    1.0 / 362880.0,       # x^9 / 9!
    1.0 / 39916800.0,     # x^11 / 11!
)


def _sinhm_series(x: float) -> float:
    """5-term odd Taylor polynomial for sinh(x) - x."""
    x2 = x * x
    acc = 0.0
    for c in reversed(_SINHM_COEFFS):
        acc = (acc + c) * x2
    return acc * x


def _sinhm_closed(x: float) -> float:
    # Extended precision: in double arithmetic the subtraction loses
    # ~eps*6/x^2 relative accuracy, which near the series switchover would
    # leave only ~9 significant digits.
    xl = np.longdouble(x)
    return float(np.sinh(xl) - xl)


def _sinh_minus_x(x: float) -> float:
    if x < SERIES_SWITCH:
        return _sinhm_series(x)
    return _sinhm_closed(x)


def qm_triple_intracavity(tau: float, p: SystemParams) -> complex:
    """Leading quantum triple correlation <a1 a2 (a3 - <a3>)> at equal time tau.

    Equal damping only; cubic in g.  Accurate for g << 1 (not enforced).
    """
    gamma = p.require_equal_damping()
    if tau < 0:
        raise InvalidParam(f"tau must be >= 0, got {tau}")
    x = gamma * tau
    bracket = 2.0 * _sinh_minus_x(x) / gamma
    eps2 = p.epsilon * p.epsilon
    return -eps2 * p.g**3 * math.exp(-3.0 * x) / gamma**2 * bracket


def qm_moment_M(tau: float, p: SystemParams, angles: PhaseAngles) -> float:
    """Quantum triple quadrature moment <dX1 dX2 dX3> at equal time tau.

    Requires a real pump amplitude (then the leading correlation is real)
    and equal damping.  Cubic in g.
    """
    if p.epsilon.imag != 0.0:
        raise InvalidParam("qm_moment_M requires a real pump amplitude")
    triple = qm_triple_intracavity(tau, p)
    return 0.25 * math.cos(angles.Theta) * triple.real


def sed_triple_intracavity(tau: float, p: SystemParams) -> complex:
    """Leading semiclassical correlation <db1 db2 conj(db3)> at equal time tau.

    Equal damping only; linear in g and independent of the pump amplitude
    (it is driven purely by the vacuum-scale fluctuations).
    """
    gamma = p.require_equal_damping()
    if tau < 0:
        raise InvalidParam(f"tau must be >= 0, got {tau}")
    return complex(-p.g / (12.0 * gamma) * math.expm1(-3.0 * gamma * tau))


def sed_moment_M(tau: float, p: SystemParams, angles: PhaseAngles) -> float:
    """Semiclassical triple quadrature moment at equal time tau; linear in g."""
    triple = sed_triple_intracavity(tau, p)
    return 0.25 * math.cos(angles.Phi) * triple.real


def qm_external(tau_f: float, p: SystemParams, h: HomodyneParams) -> float:
    """Quantum external moment, lowest nonzero order in g and tau_f.

    Detection window [0, tau_f], zero LO phases; p.Gamma restores units.
    """
    if tau_f < 0:
        raise InvalidParam(f"tau_f must be >= 0, got {tau_f}")
    eps2 = (p.epsilon * p.epsilon).real
    return (
        -math.sqrt(2.0) / 48.0 * p.g**3 * eps2
        * h.gain**3 * p.Gamma**-1.5 * tau_f**6
    )


# Taylor coefficients of the window kernel K(X) below, X^6 .. X^13.
_K_SERIES = (
    1.0 / 24.0,
    -73.0 / 840.0,
    53.0 / 560.0,
    -719.0 / 10080.0,
    8401.0 / 201600.0,
    -44489.0 / 2217600.0,
    330037.0 / 39916800.0,
    -70613.0 / 23587200.0,
)


def _window_kernel(x: float) -> float:
    """K(X) = triple window integral of the quantum correlation kernel.

    K(X) -> X^6/24 as X -> 0.  The closed form is a difference of O(1)
    exponentials, so a Taylor polynomial takes over at small X where the
    cancellation would swamp double precision.
    """
    if x < 0.15:
        acc = 0.0
        for c in reversed(_K_SERIES):
            acc = acc * x + c
        return acc * x**6
    e1 = math.exp(x)
    e2 = e1 * e1
    e3 = e2 * e1
    e4 = e2 * e2
    poly = (
        6.0 * x * x * e2 + 18.0 * x * e2 + 12.0 * x * e1
        + e4 - 14.0 * e3 - 3.0 * e2 + 14.0 * e1 + 2.0
    )
    return poly / (4.0 * e4)


def qm_external_time_exact(tau_f: float, p: SystemParams, h: HomodyneParams) -> float:
    """Quantum external moment, leading order in g but exact in gamma*tau_f.

    Refines qm_external: the two agree as gamma*tau_f -> 0, and this form
    tracks the simulated estimator at finite windows (at gamma*tau_f = 0.1
    the small-window formula already overshoots by ~19%).
    Equal damping only.
    """
    gamma = p.require_equal_damping()
    if tau_f < 0:
        raise InvalidParam(f"tau_f must be >= 0, got {tau_f}")
    eps2 = (p.epsilon * p.epsilon).real
    window = -p.g**3 * eps2 / gamma**6 * _window_kernel(gamma * tau_f)
    return math.sqrt(2.0) / 2.0 * window * h.gain**3 * p.Gamma**-1.5


def sed_external(tau_f: float, p: SystemParams, h: HomodyneParams) -> float:
    """Semiclassical external moment, lowest nonzero order in g and tau_f."""
    if tau_f < 0:
        raise InvalidParam(f"tau_f must be >= 0, got {tau_f}")
    return (
        math.sqrt(2.0) / 16.0 * p.g * tau_f**4
        * h.gain**3 * p.Gamma**-1.5
    )


def signal_to_noise(n: float, eta: float, g: float, tau_f: float) -> float:
    """Signal-to-noise of the two theories' external sample-moment difference
    for a finite sample of n observations:  S = sqrt(n-1) eta^(3/2) g tau_f^(5/2) / 16.
    """
    if n < 2:
        raise InvalidParam(f"sample size must be >= 2, got {n}")
    return math.sqrt(n - 1.0) * eta**1.5 * g * tau_f**2.5 / 16.0


def snr_unity_sample_size(eta: float, g: float, tau_f: float) -> float:
    """Sample size at which the signal-to-noise ratio reaches one."""
    return 1.0 + (16.0 / (eta**1.5 * g * tau_f**2.5)) ** 2


@dataclass(frozen=True)
class CrystalSpec:
    """Nonlinear crystal and cavity geometry.

    d_eff in pm/V; lambda_pump is the pump wavelength in metres (signal and
    idler at twice that); lengths in metres; spot_volume in m^3 (or give
    spot_size Omega instead, with V = pi Omega^2 L); transmission is the
    mirror power transmission coefficient.
    """

    name: str
    d_eff: float
    lambda_pump: float
    cavity_length: float
    crystal_length: float
    spot_volume: float
    transmission: float

    def __post_init__(self):
        for fname in (
            "d_eff", "lambda_pump", "cavity_length",
            "crystal_length", "spot_volume", "transmission",
        ):
            v = float(getattr(self, fname))
            if not (math.isfinite(v) and v > 0):
                raise InvalidParam(f"{fname} must be finite and > 0, got {v}")
        if self.crystal_length > self.cavity_length:
            raise InvalidParam("crystal_length must not exceed cavity_length")

    @classmethod
    def from_spot_size(cls, *, spot_size: float, cavity_length: float, **kw):
        volume = math.pi * spot_size**2 * cavity_length
        return cls(spot_volume=volume, cavity_length=cavity_length, **kw)


def crystal_to_coupling(c: CrystalSpec):
    """Derive (G, Gamma, g) in SI from a crystal/cavity description.

    G      = d_eff sqrt(2 hbar w1 w2 w3 / (eps0 V)) l / L   (s^-1)
    Gamma  = T c_light / (2 L)                              (s^-1)
    g      = G / Gamma
    with w3 the pump angular frequency and w1 = w2 = w3/2.
    """
    w3 = 2.0 * math.pi * SPEED_OF_LIGHT / c.lambda_pump
    w1 = w2 = 0.5 * w3
    d_eff_si = c.d_eff * 1e-12  # pm/V -> m/V
    G = (
        d_eff_si
        * math.sqrt(2.0 * HBAR * w1 * w2 * w3 / (EPSILON_0 * c.spot_volume))
        * c.crystal_length / c.cavity_length
    )
    Gamma = c.transmission * SPEED_OF_LIGHT / (2.0 * c.cavity_length)
    return G, Gamma, G / Gamma


@dataclass(frozen=True)
class AnalyticPrediction:
    """A tagged closed-form value; leading_order_in_g is 3 for the quantum
    theory and 1 for the semiclassical one."""

    value: float
    theory: str
    scope: str
    leading_order_in_g: int

    def __post_init__(self):
        expected = {"qm": 3, "sed": 1}
        if self.theory not in expected:
            raise InvalidParam(f"theory must be 'qm' or 'sed', got {self.theory!r}")
        if self.scope not in ("intracavity", "external"):
            raise InvalidParam(f"bad scope {self.scope!r}")
        if self.leading_order_in_g != expected[self.theory]:
            raise InvalidParam(
                f"{self.theory} predictions are order g^{expected[self.theory]}, "
                f"got {self.leading_order_in_g}"
            )


def predict_intracavity(theory: str, tau, p: SystemParams, angles: PhaseAngles) -> AnalyticPrediction:
    if theory == "qm":
        return AnalyticPrediction(qm_moment_M(tau, p, angles), "qm", "intracavity", 3)
    if theory == "sed":
        return AnalyticPrediction(sed_moment_M(tau, p, angles), "sed", "intracavity", 1)
    raise InvalidParam(f"unknown theory {theory!r}")


def load_crystal_presets():
    """Shipped crystal presets with their published reference values.

    Returns (crystals, external_run): a dict keyed by crystal name with the
    CrystalSpec and its published (G, Gamma, g) and external-moment values,
    plus the homodyne run constants those external values assume.
    """
    text = resources.files("ndpo.data").joinpath("crystals.json").read_text()
    raw = json.loads(text)
    out = {}
    for entry in raw["crystals"]:
        spec = CrystalSpec(
            name=entry["name"],
            d_eff=entry["d_eff_pm_per_V"],
            lambda_pump=entry["lambda_pump_m"],
            cavity_length=entry["cavity_length_m"],
            crystal_length=entry["crystal_length_m"],
            spot_volume=entry["spot_volume_m3"],
            transmission=entry["transmission"],
        )
        out[entry["name"]] = {
            "spec": spec,
            "published": entry["published"],
            "external_published": entry["external_published"],
        }
    return out, raw["external_run"]

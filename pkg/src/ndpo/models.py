"""Drift, diffusion and initial conditions for the two rival theories.

Quantum theory (doubled phase space, state order a1, a1+, a2, a2+, a3, a3+):

    da1/dtau  = -gamma1 a1  + g a2+ a3  + sqrt(g a3)  xi1
    da1+/dtau = -gamma1 a1+ + g a2  a3+ + sqrt(g a3+) xi1+
    da2/dtau  = -gamma2 a2  + g a1+ a3  + sqrt(g a3)  xi2
    da2+/dtau = -gamma2 a2+ + g a1  a3+ + sqrt(g a3+) xi2+
    da3/dtau  = -gamma3 a3  - g a1 a2
    da3+/dtau = -gamma3 a3+ - g a1+ a2+

with <xi1 xi2> = <xi1+ xi2+> = delta(tau - tau'), all other pair
correlations zero, and the deterministic start (0, 0, 0, 0, eps, eps*).
The pump equations carry no noise.  The square root is the principal
complex branch, which is continuous near the initial condition a3 = eps > 0
where the simulation lives.

Semiclassical theory (SED; classical fields plus vacuum noise, state order
b1, b2, b3):

    db1/dtau = -gamma1 b1 + g conj(b2) b3 + sqrt(gamma1) xi1
    db2/dtau = -gamma2 b2 + g conj(b1) b3 + sqrt(gamma2) xi2
    db3/dtau = -gamma3 b3 - g b1 b2       + sqrt(gamma3) xi3

with independent complex noises, <xi_i conj(xi_j)> = delta_ij delta(tau-tau'),
and every mode seeded with Gaussian fluctuations of variance 1/4 in each of
its real and imaginary parts about the means (0, 0, eps).

Model objects are immutable; drift/diffusion are pure and callable
concurrently.  States are complex arrays of shape (dim,) or (dim, n).
"""

from __future__ import annotations

import numpy as np

from .core import SystemParams
from .engine import NoiseBlock, SdeModel, pp_noise_from_reals, sed_noise_from_reals

__all__ = [
    "PositivePModel",
    "SedModel",
    "PP_NOISE_ORDER",
    "pp_drift",
    "pp_diffusion",
    "sed_drift",
    "sed_diffusion",
    "sed_sample_initial",
    "model_for",
]

# Quantum noise column order; xi1 drives a1, xi2 drives a2, and the
# correlated pair <xi1 xi2> = dt is what builds the signal-idler coupling.
PP_NOISE_ORDER = ("xi1", "xi1+", "xi2", "xi2+")


def _principal_sqrt(z: np.ndarray) -> np.ndarray:
    """Principal branch sqrt of a complex array via real arithmetic.

    Matches np.sqrt's branch (cut on the negative real axis, sign of the
    imaginary zero decides the side) but runs several times faster; the
    smaller component can differ from the correctly rounded value by
    ~sqrt(|z| eps) absolute near the real axis, immaterial against the
    Monte Carlo noise it scales.
    """
    a = z.real
    b = z.imag
    r = np.hypot(a, b)
    re = np.sqrt(0.5 * (r + a))
    im = np.sqrt(0.5 * (r - a))
    return re + 1j * np.copysign(im, b)


def pp_drift(x: np.ndarray, p: SystemParams) -> np.ndarray:
    """Deterministic part of the quantum equations, state order as above."""
    a1, a1p, a2, a2p, a3, a3p = x
    g = p.g
    out = np.empty_like(x)
    out[0] = -p.gamma1 * a1 + g * a2p * a3
    out[1] = -p.gamma1 * a1p + g * a2 * a3p
    out[2] = -p.gamma2 * a2 + g * a1p * a3
    out[3] = -p.gamma2 * a2p + g * a1 * a3p
    out[4] = -p.gamma3 * a3 - g * a1 * a2
    out[5] = -p.gamma3 * a3p - g * a1p * a2p
    return out


def pp_diffusion(x: np.ndarray, p: SystemParams) -> np.ndarray:
    """Noise matrix (6 x 4): sqrt(g a3) on the xi1/xi2 columns of the
    undaggered signal/idler rows, sqrt(g a3+) on the xi1+/xi2+ columns of
    the daggered rows; pump rows are zero."""
    a3 = np.asarray(x[4], dtype=np.complex128)
    a3p = np.asarray(x[5], dtype=np.complex128)
    amp = np.sqrt(p.g * a3)
    amp_p = np.sqrt(p.g * a3p)
    b = np.zeros((6, 4) + np.shape(a3), dtype=np.complex128)
    b[0, 0] = amp
    b[1, 1] = amp_p
    b[2, 2] = amp
    b[3, 3] = amp_p
    return b


def sed_drift(x: np.ndarray, p: SystemParams) -> np.ndarray:
    """Deterministic part of the semiclassical equations."""
    b1, b2, b3 = x
    g = p.g
    out = np.empty_like(x)
    out[0] = -p.gamma1 * b1 + g * np.conj(b2) * b3
    out[1] = -p.gamma2 * b2 + g * np.conj(b1) * b3
    out[2] = -p.gamma3 * b3 - g * b1 * b2
    return out


def sed_diffusion(x: np.ndarray, p: SystemParams) -> np.ndarray:
    """Additive, state-independent noise matrix diag(sqrt(gamma_i))."""
    diag = np.sqrt(np.array(p.gammas, dtype=np.complex128))
    b = np.zeros((3, 3) + np.shape(np.asarray(x[0])), dtype=np.complex128)
    for i in range(3):
        b[i, i] = diag[i]
    return b


def sed_sample_initial(rng: np.random.Generator, p: SystemParams, n: int = 1) -> np.ndarray:
    """Sample (3, n) initial fields: means (0, 0, eps), each component with
    independent N(0, 1/4) real and imaginary fluctuations, hence
    <db db*> = 1/2 and <db db> = 0."""
    reals = rng.standard_normal((6, n))
    return _sed_initial_from_reals(reals, p)


def _sed_initial_from_reals(reals: np.ndarray, p: SystemParams) -> np.ndarray:
    out = 0.5 * (reals[0::2] + 1j * reals[1::2])
    out = out.astype(np.complex128, copy=False)
    out[2] += p.epsilon
    return out


class PositivePModel(SdeModel):
    """Quantum theory in the doubled phase space (6 complex components).

    drift/apply_diffusion are allocation-lean equivalents of pp_drift /
    pp_diffusion (unit tests pin them equal).
    """

    dimension = 6
    noise_dim = 4
    reals_per_step = 4
    init_reals = 0
    label = "qm"

    def __init__(self, params: SystemParams):
        self.params = params
        self._neg_gammas = -np.array(
            [params.gamma1, params.gamma1, params.gamma2,
             params.gamma2, params.gamma3, params.gamma3]
        )[:, None]

    def drift(self, x):
        if x.ndim == 1:
            return pp_drift(x, self.params)
        g = self.params.g
        out = x * self._neg_gammas
        if g:
            t = x[3] * x[4]
            t *= g
            out[0] += t
            t = x[2] * x[5]
            t *= g
            out[1] += t
            t = x[1] * x[4]
            t *= g
            out[2] += t
            t = x[0] * x[5]
            t *= g
            out[3] += t
            t = x[0] * x[2]
            t *= g
            out[4] -= t
            t = x[1] * x[3]
            t *= g
            out[5] -= t
        return out

    def diffusion(self, x):
        return pp_diffusion(x, self.params)

    def apply_diffusion(self, x, dw):
        amp = _principal_sqrt(self.params.g * x[4])
        amp_p = _principal_sqrt(self.params.g * x[5])
        out = np.zeros_like(x)
        np.multiply(amp, dw[0], out=out[0])
        np.multiply(amp_p, dw[1], out=out[1])
        np.multiply(amp, dw[2], out=out[2])
        np.multiply(amp_p, dw[3], out=out[3])
        return out

    def noise_from_reals(self, reals, dt) -> NoiseBlock:
        return pp_noise_from_reals(reals, dt)

    def initial_state(self, reals, n: int) -> np.ndarray:
        eps = self.params.epsilon
        x = np.zeros((6, n), dtype=np.complex128)
        x[4] = eps
        x[5] = np.conj(eps)
        return x


class SedModel(SdeModel):
    """Semiclassical theory (3 complex components, stochastic start)."""

    dimension = 3
    noise_dim = 3
    reals_per_step = 6
    init_reals = 6
    additive_noise = True
    label = "sed"

    def __init__(self, params: SystemParams):
        self.params = params
        self._sqrt_gammas = np.sqrt(np.array(params.gammas))
        self._neg_gammas = -np.array(params.gammas)[:, None]

    def drift(self, x):
        if x.ndim == 1:
            return sed_drift(x, self.params)
        g = self.params.g
        out = x * self._neg_gammas
        if g:
            t = np.conj(x[1])
            t *= x[2]
            t *= g
            out[0] += t
            t = np.conj(x[0])
            t *= x[2]
            t *= g
            out[1] += t
            t = x[0] * x[1]
            t *= g
            out[2] -= t
        return out

    def diffusion(self, x):
        return sed_diffusion(x, self.params)

    def apply_diffusion(self, x, dw):
        return self._sqrt_gammas.reshape((3,) + (1,) * (dw.ndim - 1)) * dw

    def noise_from_reals(self, reals, dt) -> NoiseBlock:
        return sed_noise_from_reals(reals, dt)

    def initial_state(self, reals, n: int) -> np.ndarray:
        if reals is None:
            raise ValueError("SedModel needs 6 initial draws per path")
        return _sed_initial_from_reals(reals, self.params)


def model_for(theory: str, params: SystemParams) -> SdeModel:
    """Build the model for a theory tag ('qm' or 'sed')."""
    tag = theory.lower()
    if tag in ("qm", "positive-p", "quantum"):
        return PositivePModel(params)
    if tag == "sed":
        return SedModel(params)
    raise ValueError(f"unknown theory {theory!r}")

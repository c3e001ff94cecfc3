"""Ensemble statistics: third-order central quadrature moments with batch-means
standard errors, and time-integrated external homodyne moments.

The quadrature of mode i at phase theta is (a_i e^{-i theta} + a_i+ e^{+i theta})/2
for the quantum theory (generally complex per path, real in ensemble mean)
and (b_i e^{-i theta} + conj(b_i) e^{+i theta})/2 = Re(b_i e^{-i theta}) for the
semiclassical one.

Estimator conventions:
  * central moments subtract grand means (full-ensemble), not per-batch
    means, so the Delta terms carry no O(1/batch) bias; batches are used
    only for the error bar;
  * the estimate itself is the full-ensemble mean of the central products,
    which for equal batch sizes equals the mean of the batch means and is
    bit-independent of the batch count;
  * std_error = std(batch means, ddof=1)/sqrt(n_batches), with complex
    spread |b_k - mean|^2 so one number covers both components;
  * reduction runs in path-index order, so a rerun with the same seed and
    block size reproduces every digit.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    DegenerateEnsemble,
    GridMismatch,
    HomodyneParams,
    InvalidParam,
    PhaseAngles,
    PositivePPoint,
    SedPoint,
    SystemParams,
    TimeGrid,
    WindowOutOfRange,
    validate_params,
)
from .engine import IntegratorConfig, Trajectory, run_ensemble
from .models import model_for

__all__ = [
    "MomentEstimate",
    "EnsembleResult",
    "quadrature",
    "triple_central_moment",
    "amplitude_triple_moment",
    "run_intracavity_experiment",
    "sample_states_at",
    "integrated_quadrature",
    "external_moment_estimate",
    "run_external_experiment",
    "read_result_csv",
    "CSV_COLUMNS",
]

COS_THETA_DEGENERATE = 1e-6

CSV_COLUMNS = (
    "tau", "mean_re", "mean_im", "std_error",
    "n_paths", "theory", "g", "N", "gamma", "seed",
)


@dataclass(frozen=True)
class MomentEstimate:
    """Value +/- standard error for one third-order central moment.

    imag_diagnostic = |Im(mean)| / std_error flags estimates whose imaginary
    part is statistically distinguishable from zero (the dominant moments of
    both theories are real for a real pump).
    """

    mean: complex
    std_error: float
    n_paths: int
    n_batches: int
    imag_diagnostic: float

    def __post_init__(self):
        if self.std_error < 0:
            raise DegenerateEnsemble(f"std_error must be >= 0, got {self.std_error}")
        if self.n_batches < 2:
            raise DegenerateEnsemble(f"need >= 2 batches, got {self.n_batches}")
        if self.n_paths % self.n_batches:
            raise DegenerateEnsemble(
                f"n_paths={self.n_paths} not divisible by n_batches={self.n_batches}"
            )

    def scaled(self, factor: float) -> "MomentEstimate":
        return MomentEstimate(
            mean=self.mean * factor,
            std_error=self.std_error * abs(factor),
            n_paths=self.n_paths,
            n_batches=self.n_batches,
            imag_diagnostic=self.imag_diagnostic,
        )


def quadrature(x, i: int, theta_i: float) -> complex:
    """Quadrature phase amplitude of mode i in {1, 2, 3} for one phase point."""
    if i not in (1, 2, 3):
        raise InvalidParam(f"mode must be 1, 2 or 3, got {i}")
    em = math.cos(theta_i) - 1j * math.sin(theta_i)
    if isinstance(x, PositivePPoint):
        arr = x.to_array()
        return 0.5 * (arr[2 * (i - 1)] * em + arr[2 * i - 1] * np.conj(em))
    if isinstance(x, SedPoint):
        b = x.to_array()[i - 1]
        return 0.5 * (b * em + np.conj(b) * np.conj(em))
    raise InvalidParam(f"not a phase point: {x!r}")


def _check_batching(n_paths: int, n_batches: int) -> int:
    if n_batches < 2:
        raise DegenerateEnsemble(f"need >= 2 batches, got {n_batches}")
    if n_paths % n_batches:
        raise DegenerateEnsemble(
            f"n_paths={n_paths} not divisible by n_batches={n_batches}"
        )
    nb = n_paths // n_batches
    if nb < 2:
        raise DegenerateEnsemble(f"batches of {nb} path(s); need >= 2 per batch")
    return nb


_SUM_KEYS = ("s1", "s2", "s3", "s12", "s13", "s23", "s123")


def _monomials(v1, v2, v3):
    p12 = v1 * v2
    return {
        "s1": v1, "s2": v2, "s3": v3,
        "s12": p12, "s13": v1 * v3, "s23": v2 * v3,
        "s123": p12 * v3,
    }


def _estimate_from_sums(totals: dict, batch_sums: dict, n: int, nb: int) -> MomentEstimate:
    """Assemble the central-moment estimate from raw monomial sums.

    totals[key] are full-ensemble sums (fixed reduction order, independent of
    the batch structure); batch_sums[key] have shape (n_batches,).
    """
    m1 = totals["s1"] / n
    m2 = totals["s2"] / n
    m3 = totals["s3"] / n
    k3 = (
        totals["s123"] / n
        - m1 * totals["s23"] / n
        - m2 * totals["s13"] / n
        - m3 * totals["s12"] / n
        + 2.0 * m1 * m2 * m3
    )
    cb = (
        batch_sums["s123"]
        - m1 * batch_sums["s23"]
        - m2 * batch_sums["s13"]
        - m3 * batch_sums["s12"]
        + m1 * m2 * batch_sums["s3"]
        + m1 * m3 * batch_sums["s2"]
        + m2 * m3 * batch_sums["s1"]
    ) / nb - m1 * m2 * m3
    n_batches = cb.shape[0]
    spread = cb - cb.mean()
    var = float(np.sum(spread.real**2 + spread.imag**2)) / (n_batches - 1)
    se = math.sqrt(var / n_batches)
    if se > 0:
        imag_diag = abs(k3.imag) / se
    else:
        imag_diag = 0.0 if k3.imag == 0 else math.inf
    return MomentEstimate(
        mean=complex(k3),
        std_error=se,
        n_paths=n,
        n_batches=n_batches,
        imag_diagnostic=imag_diag,
    )


def triple_central_moment(v1, v2, v3, n_batches: int) -> MomentEstimate:
    """Third-order central moment <(v1 - m1)(v2 - m2)(v3 - m3)> of per-path
    values, with a batch-means standard error.

    Means m_i are grand means over the whole ensemble; the estimate is
    bit-independent of n_batches (only std_error changes with it).
    """
    v1 = np.asarray(v1, dtype=np.complex128).ravel()
    v2 = np.asarray(v2, dtype=np.complex128).ravel()
    v3 = np.asarray(v3, dtype=np.complex128).ravel()
    if not (v1.size == v2.size == v3.size):
        raise DegenerateEnsemble("v1, v2, v3 must have equal lengths")
    n = v1.size
    nb = _check_batching(n, n_batches)
    mono = _monomials(v1, v2, v3)
    totals = {k: np.sum(a) for k, a in mono.items()}
    batch_sums = {k: a.reshape(n_batches, nb).sum(axis=1) for k, a in mono.items()}
    return _estimate_from_sums(totals, batch_sums, n, nb)


_AMPLITUDE_ROWS = {"a1": 0, "a1p": 1, "a2": 2, "a2p": 3, "a3": 4, "a3p": 5,
                   "b1": 0, "b2": 1, "b3": 2}


def amplitude_triple_moment(states: np.ndarray, labels, n_batches: int) -> MomentEstimate:
    """Central triple moment of raw amplitudes at one time.

    states is (dim, n_paths); labels picks one amplitude per slot, e.g.
    ("a1", "a2", "a3p") for the quantum variables or ("b1", "b2", "b3") with
    a trailing "*" for conjugation, e.g. "b3*".
    """
    rows = []
    for lab in labels:
        conj = lab.endswith("*")
        key = lab[:-1] if conj else lab
        v = states[_AMPLITUDE_ROWS[key]]
        rows.append(np.conj(v) if conj else v)
    return triple_central_moment(rows[0], rows[1], rows[2], n_batches)


def _phase_factors(angles: PhaseAngles):
    return [complex(math.cos(t), -math.sin(t)) for t in angles.thetas]


def _quadratures_from_states(theory: str, states: np.ndarray, ems) -> list:
    """Per-path quadratures (v1, v2, v3) for a block of states (dim, m)."""
    if theory == "qm":
        return [
            0.5 * (states[2 * i] * ems[i] + states[2 * i + 1] * np.conj(ems[i]))
            for i in range(3)
        ]
    return [
        0.5 * (states[i] * ems[i] + np.conj(states[i] * ems[i]))
        for i in range(3)
    ]


class _TripleAccumulator:
    """Streaming monomial sums per observed node, split by batch."""

    def __init__(self, n_obs: int, n_paths: int, n_batches: int):
        self.n = n_paths
        self.n_batches = n_batches
        self.nb = _check_batching(n_paths, n_batches)
        self.totals = {
            k: np.zeros(n_obs, dtype=np.complex128) for k in _SUM_KEYS
        }
        self.batch_sums = {
            k: np.zeros((n_obs, n_batches), dtype=np.complex128) for k in _SUM_KEYS
        }

    def add(self, obs_idx: int, i0: int, v1, v2, v3):
        m = v1.shape[0]
        # segment boundaries where a new batch starts inside this block
        first = i0 // self.nb
        last = (i0 + m - 1) // self.nb
        cuts = [0] + [
            b * self.nb - i0 for b in range(first + 1, last + 1)
        ]
        for key, arr in _monomials(v1, v2, v3).items():
            self.totals[key][obs_idx] += arr.sum()
            if len(cuts) == 1:
                self.batch_sums[key][obs_idx, first] += arr.sum()
            else:
                segs = np.add.reduceat(arr, cuts)
                self.batch_sums[key][obs_idx, first:last + 1] += segs

    def estimate(self, obs_idx: int) -> MomentEstimate:
        totals = {k: self.totals[k][obs_idx] for k in _SUM_KEYS}
        bsums = {k: self.batch_sums[k][obs_idx] for k in _SUM_KEYS}
        return _estimate_from_sums(totals, bsums, self.n, self.nb)


@dataclass
class EnsembleResult:
    """Per-time moment estimates for one theory and parameter set."""

    times: np.ndarray
    estimates: list
    theory: str
    params: SystemParams
    angles: PhaseAngles
    grid: TimeGrid
    n_paths: int
    n_batches: int
    seed: int
    cos_theta_degenerate: bool = False
    warnings_issued: list = field(default_factory=list)

    def real_values(self) -> np.ndarray:
        return np.array([e.mean.real for e in self.estimates])

    def imag_values(self) -> np.ndarray:
        return np.array([e.mean.imag for e in self.estimates])

    def std_errors(self) -> np.ndarray:
        return np.array([e.std_error for e in self.estimates])

    def rows(self):
        for tau, est in zip(self.times, self.estimates):
            yield {
                "tau": repr(float(tau)),
                "mean_re": repr(est.mean.real),
                "mean_im": repr(est.mean.imag),
                "std_error": repr(est.std_error),
                "n_paths": est.n_paths,
                "theory": self.theory,
                "g": repr(self.params.g),
                "N": repr(self.params.N),
                "gamma": repr(self.params.gamma1),
                "seed": self.seed,
            }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(CSV_COLUMNS))
            writer.writeheader()
            for row in self.rows():
                writer.writerow(row)


def read_result_csv(path):
    """Read a result CSV back: (times, means, std_errors, metadata)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        taus, means, ses = [], [], []
        meta = None
        for row in reader:
            taus.append(float(row["tau"]))
            means.append(complex(float(row["mean_re"]), float(row["mean_im"])))
            ses.append(float(row["std_error"]))
            if meta is None:
                meta = {
                    "theory": row["theory"],
                    "g": float(row["g"]),
                    "N": float(row["N"]),
                    "gamma": float(row["gamma"]),
                    "seed": int(row["seed"]),
                    "n_paths": int(row["n_paths"]),
                }
    if meta is None:
        raise InvalidParam(f"{path} holds no result rows")
    return np.array(taus), np.array(means), np.array(ses), meta


def _validated(params: SystemParams, grid: TimeGrid):
    report = validate_params(params, grid)
    if report.errors:
        raise InvalidParam("; ".join(report.errors))
    for w in report.warnings:
        warnings.warn(w, stacklevel=3)
    return report


def _theory_tag(theory: str) -> str:
    tag = theory.lower()
    if tag not in ("qm", "sed"):
        raise InvalidParam(f"theory must be 'qm' or 'sed', got {theory!r}")
    return tag


def run_intracavity_experiment(
    theory: str,
    params: SystemParams,
    angles: PhaseAngles,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    n_batches: int = 100,
    observe_times: Optional[Sequence[float]] = None,
    cfg: Optional[IntegratorConfig] = None,
    block_size: int = 4096,
) -> EnsembleResult:
    """Monte Carlo estimate of <dX1 dX2 dX3>(tau) at the requested grid nodes.

    Integrates n_paths trajectories of the chosen theory and forms the
    triple central quadrature moment with batch-means errors at every
    observation time (default: every grid node).  Non-finite trajectories
    abort with the path index and seed needed to reproduce them.
    """
    tag = _theory_tag(theory)
    report = _validated(params, grid)
    cfg = cfg or IntegratorConfig()
    if observe_times is None:
        obs_idx = np.arange(grid.n_nodes)
    else:
        obs_idx = np.array(sorted({grid.index_of(t) for t in observe_times}), dtype=int)
    times = grid.times()[obs_idx]
    slot_of = {int(k): i for i, k in enumerate(obs_idx)}

    model = model_for(tag, params)
    ems = _phase_factors(angles)
    acc = _TripleAccumulator(len(obs_idx), n_paths, n_batches)

    def on_state(i0, k, tau, states):
        slot = slot_of.get(k)
        if slot is None:
            return
        v1, v2, v3 = _quadratures_from_states(tag, states, ems)
        acc.add(slot, i0, v1, v2, v3)

    run_ensemble(model, grid, cfg, seed, n_paths, on_state, block_size=block_size)
    estimates = [acc.estimate(i) for i in range(len(obs_idx))]
    return EnsembleResult(
        times=times,
        estimates=estimates,
        theory=tag,
        params=params,
        angles=angles,
        grid=grid,
        n_paths=n_paths,
        n_batches=n_batches,
        seed=seed,
        cos_theta_degenerate=abs(math.cos(angles.Theta)) < COS_THETA_DEGENERATE,
        warnings_issued=list(report.warnings),
    )


def sample_states_at(
    theory: str,
    params: SystemParams,
    grid: TimeGrid,
    tau: float,
    n_paths: int,
    seed: int,
    *,
    cfg: Optional[IntegratorConfig] = None,
    block_size: int = 4096,
) -> np.ndarray:
    """Materialize the ensemble state (dim, n_paths) at one grid node."""
    tag = _theory_tag(theory)
    _validated(params, grid)
    cfg = cfg or IntegratorConfig()
    k_target = grid.index_of(tau)
    model = model_for(tag, params)
    out = np.empty((model.dimension, n_paths), dtype=np.complex128)

    def on_state(i0, k, t, states):
        if k == k_target:
            out[:, i0:i0 + states.shape[1]] = states

    run_ensemble(model, grid, cfg, seed, n_paths, on_state, block_size=block_size)
    return out


def _trapezoid_weights(n_nodes: int, dt: float) -> np.ndarray:
    w = np.full(n_nodes, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def integrated_quadrature(
    traj: Trajectory, i: int, theta_bar_i: float, window=(0.0, None)
) -> complex:
    """Trapezoid-rule integral K_i = int X_i(tau) dtau over a grid-aligned window."""
    times = traj.times
    if len(times) < 2:
        raise WindowOutOfRange("trajectory has fewer than two nodes")
    dt = times[1] - times[0]
    start, stop = window
    if stop is None:
        stop = times[-1]
    tol = 1e-9 * max(1.0, abs(stop))
    if start < times[0] - tol or stop > times[-1] + tol or stop <= start:
        raise WindowOutOfRange(f"window {window} outside grid [{times[0]}, {times[-1]}]")
    k0 = int(round((start - times[0]) / dt))
    k1 = int(round((stop - times[0]) / dt))
    if abs(times[0] + k0 * dt - start) > tol or abs(times[0] + k1 * dt - stop) > tol:
        raise WindowOutOfRange(f"window {window} does not lie on grid nodes")
    em = complex(math.cos(theta_bar_i), -math.sin(theta_bar_i))
    if traj.dimension == 6:
        x = 0.5 * (
            traj.states[2 * (i - 1), k0:k1 + 1] * em
            + traj.states[2 * i - 1, k0:k1 + 1] * np.conj(em)
        )
    elif traj.dimension == 3:
        z = traj.states[i - 1, k0:k1 + 1] * em
        x = 0.5 * (z + np.conj(z))
    else:
        raise InvalidParam(f"unexpected state dimension {traj.dimension}")
    w = _trapezoid_weights(k1 - k0 + 1, dt)
    return complex(np.sum(w * x))


def _external_scale(h: HomodyneParams, Gamma: float) -> float:
    # (sqrt(2 Gamma))^3 per mode from the cavity output coupling, times the
    # Gamma^-3 of the time-integral normalization.
    return 2.0**1.5 * h.gain**3 * Gamma**-1.5


def external_moment_estimate(
    trajectories: Sequence[Trajectory],
    p: SystemParams,
    h: HomodyneParams,
    tau_f: float,
    n_batches: int,
    angles: Optional[PhaseAngles] = None,
) -> MomentEstimate:
    """External homodyne moment from materialized trajectories.

    Per path, K_i integrates the intracavity quadrature of mode i at the LO
    phase over [0, tau_f]; the vacuum input fields drop from third-order
    cross central moments (independent and zero-mean), so the estimate is
    the scaled triple central moment of (K1, K2, K3).
    """
    angles = angles or PhaseAngles()
    trajs = list(trajectories)
    if not trajs:
        raise DegenerateEnsemble("no trajectories")
    if abs(trajs[0].times[0]) > 1e-12:
        raise WindowOutOfRange("external windows start at tau = 0")
    ks = np.empty((3, len(trajs)), dtype=np.complex128)
    for j, traj in enumerate(trajs):
        for i in (1, 2, 3):
            ks[i - 1, j] = integrated_quadrature(
                traj, i, angles.theta_bars[i - 1], window=(0.0, tau_f)
            )
    est = triple_central_moment(ks[0], ks[1], ks[2], n_batches)
    return est.scaled(_external_scale(h, p.Gamma))


def run_external_experiment(
    theory: str,
    params: SystemParams,
    h: HomodyneParams,
    tau_f: float,
    dt: float,
    n_paths: int,
    seed: int,
    *,
    n_batches: int = 100,
    angles: Optional[PhaseAngles] = None,
    cfg: Optional[IntegratorConfig] = None,
    block_size: int = 4096,
) -> MomentEstimate:
    """Monte Carlo estimate of the external moment over the window [0, tau_f].

    Streams the trapezoid accumulation of K_i per path, then forms the same
    scaled triple central moment as external_moment_estimate.
    """
    tag = _theory_tag(theory)
    angles = angles or PhaseAngles()
    grid = TimeGrid(0.0, tau_f, dt)
    _validated(params, grid)
    cfg = cfg or IntegratorConfig()
    model = model_for(tag, params)
    ems = [
        complex(math.cos(t), -math.sin(t)) for t in angles.theta_bars
    ]
    weights = _trapezoid_weights(grid.n_nodes, dt)
    ks = np.zeros((3, n_paths), dtype=np.complex128)

    def on_state(i0, k, tau, states):
        w = weights[k]
        sl = slice(i0, i0 + states.shape[1])
        if tag == "qm":
            for i in range(3):
                ks[i, sl] += w * 0.5 * (
                    states[2 * i] * ems[i] + states[2 * i + 1] * np.conj(ems[i])
                )
        else:
            for i in range(3):
                z = states[i] * ems[i]
                ks[i, sl] += w * 0.5 * (z + np.conj(z))

    run_ensemble(model, grid, cfg, seed, n_paths, on_state, block_size=block_size)
    est = triple_central_moment(ks[0], ks[1], ks[2], n_batches)
    return est.scaled(_external_scale(h, params.Gamma))

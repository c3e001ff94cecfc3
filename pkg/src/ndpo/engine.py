"""Correlated complex Wiener increments and the semi-implicit SDE integrator.

The integrator advances dx/dtau = A(x) + B(x) xi(tau) with a fixed-point
midpoint scheme: the interval-midpoint state is estimated by iterating

    xbar^(p) = x + 1/2 [ dtau * A(xbar^(p-1)) + B(xbar^(p-1)) dW ],

starting from xbar^(0) = x, and the update is x + A(xbar) dtau + B(xbar) dW.
This is robust for multiplicative noise, where explicit one-step schemes
misbehave.  An Euler-Maruyama scheme is included purely as a cross-check.

Randomness is counter-based: the stream for path i of a run seeded with s is
Philox keyed by (s, i).  Ensemble results therefore do not depend on block
size, path order, or how paths are distributed over workers, and path i of an
ensemble is bit-identical to integrate_path(..., seed=s, path_index=i).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import InvalidParam, NonFiniteError, TimeGrid

__all__ = [
    "NoiseBlock",
    "SdeModel",
    "IntegratorConfig",
    "Trajectory",
    "path_rng",
    "gen_pp_noise",
    "gen_sed_noise",
    "pp_noise_from_reals",
    "sed_noise_from_reals",
    "step_semi_implicit",
    "step_euler",
    "integrate_path",
    "run_ensemble",
    "dump_paths",
    "load_dump",
]

_SQRT_HALF = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class NoiseBlock:
    """Complex Wiener increments for one step.

    increments has shape (noise_dim,) for a single path or (noise_dim, n) for
    a batch of paths; the quantum column order is fixed as
    (xi1, xi1+, xi2, xi2+) and the semiclassical order as (xi1, xi2, xi3).
    """

    increments: np.ndarray
    dt: float


class SdeModel:
    """Drift/diffusion/initial-condition bundle consumed by the integrator.

    Subclasses provide
        dimension   -- number of complex state components
        noise_dim   -- number of complex Wiener increments per step
        reals_per_step, init_reals -- how many N(0,1) draws a path consumes
        drift(x)          -> array like x
        diffusion(x)      -> (dimension, noise_dim[, n]) complex matrix
        noise_from_reals(reals, dt) -> NoiseBlock
        initial_state(reals_or_none, n) -> (dimension, n) complex
    and may override apply_diffusion(x, dw) with a sparse fast path
    (the default multiplies by the full diffusion matrix).  Models whose
    diffusion does not depend on the state set additive_noise = True, which
    lets the integrator evaluate the noise term once per step instead of
    once per midpoint iteration.
    Drift and diffusion must be pure functions, finite for finite input.
    """

    dimension: int
    noise_dim: int
    reals_per_step: int
    init_reals: int = 0
    additive_noise: bool = False
    label: str = "model"

    def drift(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def diffusion(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def noise_from_reals(self, reals: np.ndarray, dt: float) -> NoiseBlock:
        raise NotImplementedError

    def initial_state(self, reals, n: int) -> np.ndarray:
        raise NotImplementedError

    def apply_diffusion(self, x: np.ndarray, dw: np.ndarray) -> np.ndarray:
        b = self.diffusion(x)
        if b.ndim == 2:
            return b @ dw
        return np.einsum("ijn,jn->in", b, dw)


@dataclass(frozen=True)
class IntegratorConfig:
    """Scheme selection; midpoint_iterations fixes the fixed-point cost."""

    midpoint_iterations: int = 3
    scheme: str = "semi-implicit"

    def __post_init__(self):
        if self.midpoint_iterations < 1:
            raise InvalidParam(
                f"midpoint_iterations must be >= 1, got {self.midpoint_iterations}"
            )
        if self.scheme not in ("semi-implicit", "euler"):
            raise InvalidParam(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class Trajectory:
    """One time-gridded path: states[:, k] is the state at times[k]."""

    times: np.ndarray
    states: np.ndarray

    @property
    def dimension(self) -> int:
        return self.states.shape[0]


def path_rng(seed: int, path_index: int = 0) -> np.random.Generator:
    """Counter-based per-path stream: Philox keyed by (seed, path_index)."""
    if seed < 0:
        raise InvalidParam(f"seed must be >= 0, got {seed}")
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def pp_noise_from_reals(reals: np.ndarray, dt: float) -> NoiseBlock:
    """Quantum increments from 4 standard-normal draws (x, y, u, v) per path.

    With x, y, u, v ~ N(0, dt):
        dxi1  = (x + iy)/sqrt2      dxi2  = (x - iy)/sqrt2
        dxi1+ = (u + iv)/sqrt2      dxi2+ = (u - iv)/sqrt2
    realizing <dxi1 dxi2> = <dxi1+ dxi2+> = dt, <dxi_i dxi_i> = 0 and no
    correlation between daggered and undaggered increments.  Column order
    of the returned increments: (xi1, xi1+, xi2, xi2+).
    """
    reals = np.asarray(reals, dtype=np.float64)
    if reals.ndim == 1:
        return NoiseBlock(pp_noise_from_reals(reals[:, None], dt).increments[:, 0], dt)
    s = np.sqrt(dt) * _SQRT_HALF
    inc = np.empty((4,) + reals.shape[1:], dtype=np.complex128)
    np.multiply(reals[0], s, out=inc[0].real)
    np.multiply(reals[1], s, out=inc[0].imag)
    np.multiply(reals[2], s, out=inc[1].real)
    np.multiply(reals[3], s, out=inc[1].imag)
    np.conjugate(inc[0], out=inc[2])
    np.conjugate(inc[1], out=inc[3])
    return NoiseBlock(increments=inc, dt=dt)


def sed_noise_from_reals(reals: np.ndarray, dt: float) -> NoiseBlock:
    """Three independent complex increments with <dxi_i conj(dxi_j)> = delta_ij dt."""
    reals = np.asarray(reals, dtype=np.float64)
    if reals.ndim == 1:
        return NoiseBlock(sed_noise_from_reals(reals[:, None], dt).increments[:, 0], dt)
    s = np.sqrt(dt) * _SQRT_HALF
    inc = np.empty((3,) + reals.shape[1:], dtype=np.complex128)
    np.multiply(reals[0::2], s, out=inc.real)
    np.multiply(reals[1::2], s, out=inc.imag)
    return NoiseBlock(increments=inc, dt=dt)


def gen_pp_noise(rng: np.random.Generator, dt: float, n: Optional[int] = None) -> NoiseBlock:
    """Draw one step of quantum noise for one path (or a batch of n paths)."""
    if dt <= 0:
        raise InvalidParam(f"dt must be > 0, got {dt}")
    shape = (4,) if n is None else (4, n)
    return pp_noise_from_reals(rng.standard_normal(shape), dt)


def gen_sed_noise(rng: np.random.Generator, dt: float, n: Optional[int] = None) -> NoiseBlock:
    """Draw one step of semiclassical noise for one path (or a batch)."""
    if dt <= 0:
        raise InvalidParam(f"dt must be > 0, got {dt}")
    shape = (6,) if n is None else (6, n)
    return sed_noise_from_reals(rng.standard_normal(shape), dt)


def _midpoint_update(model, x, noise, cfg):
    # in-place accumulation onto arrays this function owns; algebraically
    # xbar_p = x + (dt/2) A(xbar_{p-1}) + (1/2) B(xbar_{p-1}) dW, then
    # x_next = x + dt A(xbar) + B(xbar) dW
    dt = noise.dt
    half_dt = 0.5 * dt
    dw = noise.increments
    xbar = x
    if model.additive_noise:
        bdw = model.apply_diffusion(x, dw)
        half = x + 0.5 * bdw
        for _ in range(cfg.midpoint_iterations):
            a = model.drift(xbar)
            a *= half_dt
            a += half
            xbar = a
        a = model.drift(xbar)
        a *= dt
        a += x
        a += bdw
        return a
    for _ in range(cfg.midpoint_iterations):
        a = model.drift(xbar)
        a *= half_dt
        b = model.apply_diffusion(xbar, dw)
        b *= 0.5
        a += b
        a += x
        xbar = a
    a = model.drift(xbar)
    a *= dt
    a += model.apply_diffusion(xbar, dw)
    a += x
    return a


def _euler_update(model, x, noise):
    return x + noise.dt * model.drift(x) + model.apply_diffusion(x, noise.increments)


def step_semi_implicit(
    model: SdeModel, x: np.ndarray, noise: NoiseBlock, cfg: IntegratorConfig
) -> np.ndarray:
    """One midpoint step; raises NonFiniteError if the update leaves the finite domain."""
    out = _midpoint_update(model, x, noise, cfg)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("semi-implicit step produced a non-finite state")
    return out


def step_euler(model: SdeModel, x: np.ndarray, noise: NoiseBlock) -> np.ndarray:
    """Explicit Euler-Maruyama step (cross-check scheme only)."""
    out = _euler_update(model, x, noise)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("euler step produced a non-finite state")
    return out


def _advance_unchecked(model, x, noise, cfg):
    if cfg.scheme == "euler":
        return _euler_update(model, x, noise)
    return _midpoint_update(model, x, noise, cfg)


def _advance(model, x, noise, cfg):
    if cfg.scheme == "euler":
        return step_euler(model, x, noise)
    return step_semi_implicit(model, x, noise, cfg)


def _draw_path_reals(model: SdeModel, rng, n_steps: int):
    """All standard-normal draws one path consumes, in a fixed order."""
    init = rng.standard_normal(model.init_reals) if model.init_reals else None
    steps = rng.standard_normal((n_steps, model.reals_per_step))
    return init, steps


class _BlockDraws:
    """Per-path noise draws for a block of paths, filled via state-swapped
    counter-based streams.

    Row j holds path (i0 + j)'s entire draw sequence, so the values are
    identical to _draw_path_reals for the same (seed, path index); swapping
    the key on one reusable bit generator just avoids constructing millions
    of generator objects.
    """

    def __init__(self, model: SdeModel, seed: int):
        if not 0 <= seed < 2**64:
            raise InvalidParam(f"seed must be a uint64, got {seed}")
        self._bitgen = np.random.Philox(key=0)
        self._gen = np.random.Generator(self._bitgen)
        self._key = np.array([seed, 0, 0, 0], dtype=np.uint64)
        zeros = np.zeros(4, dtype=np.uint64)
        self._state = {
            "bit_generator": "Philox",
            "state": {"counter": zeros, "key": self._key},
            "buffer": zeros,
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        self.init_reals = model.init_reals
        self.reals_per_step = model.reals_per_step

    _CHUNK = 128  # paths per transpose chunk; keeps the gather L2-resident

    def fill(self, i0: int, m: int, n_steps: int):
        """Draws for paths [i0, i0+m): init block (init_reals, m) or None,
        plus step draws as a contiguous (n_steps, reals_per_step, m) array."""
        r = self.reals_per_step
        total = self.init_reals + n_steps * r
        init = np.empty((self.init_reals, m)) if self.init_reals else None
        steps = np.empty((n_steps, r, m))
        chunk = np.empty((self._CHUNK, total))
        for c0 in range(0, m, self._CHUNK):
            c1 = min(c0 + self._CHUNK, m)
            for j in range(c0, c1):
                self._key[1] = i0 + j
                self._bitgen.state = self._state
                self._gen.standard_normal(out=chunk[j - c0])
            part = chunk[: c1 - c0]
            if init is not None:
                init[:, c0:c1] = part[:, : self.init_reals].T
            steps[:, :, c0:c1] = (
                part[:, self.init_reals :].reshape(c1 - c0, n_steps, r).transpose(1, 2, 0)
            )
        return init, steps


def integrate_path(
    model: SdeModel,
    grid: TimeGrid,
    cfg: IntegratorConfig,
    seed: int,
    path_index: int = 0,
) -> Trajectory:
    """Integrate a single path; bit-reproducible given (model, grid, cfg, seed)."""
    rng = path_rng(seed, path_index)
    init_reals, step_reals = _draw_path_reals(model, rng, grid.n_steps)
    x = model.initial_state(
        None if init_reals is None else init_reals[:, None], 1
    )
    states = np.empty((model.dimension, grid.n_nodes), dtype=np.complex128)
    states[:, 0] = x[:, 0]
    for k in range(grid.n_steps):
        noise = model.noise_from_reals(step_reals[k][:, None], grid.dt)
        try:
            x = _advance(model, x, noise, cfg)
        except NonFiniteError as exc:
            raise NonFiniteError(
                f"non-finite state at step {k + 1} (path {path_index}, seed {seed})",
                step=k + 1,
                path_index=path_index,
                seed=seed,
            ) from exc
        states[:, k + 1] = x[:, 0]
    return Trajectory(times=grid.times(), states=states)


def run_ensemble(
    model: SdeModel,
    grid: TimeGrid,
    cfg: IntegratorConfig,
    seed: int,
    n_paths: int,
    on_state: Callable[[int, int, float, np.ndarray], None],
    block_size: int = 4096,
) -> None:
    """Integrate n_paths trajectories, streaming states to a consumer.

    on_state(i0, k, tau, states) is called for every step index k = 0..n_steps
    (k = 0 is the initial condition) with states of shape (dimension, m) for
    the block of paths [i0, i0 + m).  Calls arrive in increasing (i0, k)
    order; consumers accumulating in that order get bit-reproducible results
    regardless of block_size, because each path owns its noise stream.

    Paths are integrated in vectorized blocks; distinct blocks share no
    mutable state and could equally be dispatched to concurrent workers as
    long as the consumer merges them in block order.
    """
    if n_paths <= 0:
        raise InvalidParam(f"n_paths must be > 0, got {n_paths}")
    n_steps = grid.n_steps
    dt = grid.dt
    times = grid.times()
    draws = _BlockDraws(model, seed)
    # cap the pre-drawn noise block at ~512 MB
    per_path = (model.init_reals + n_steps * model.reals_per_step) * 8
    block_size = max(1, min(block_size, (512 << 20) // per_path))
    for i0 in range(0, n_paths, block_size):
        m = min(block_size, n_paths - i0)
        init_block, step_block = draws.fill(i0, m, n_steps)
        x = model.initial_state(init_block, m)
        on_state(i0, 0, times[0], x)
        for k in range(n_steps):
            noise = model.noise_from_reals(step_block[k], dt)
            out = _advance_unchecked(model, x, noise, cfg)
            finite_cols = np.isfinite(out).all(axis=0)
            if not finite_cols.all():
                j = int(np.argmin(finite_cols))
                raise NonFiniteError(
                    f"non-finite state at step {k + 1} "
                    f"(path {i0 + j}, seed {seed})",
                    step=k + 1,
                    path_index=i0 + j,
                    seed=seed,
                )
            x = out
            on_state(i0, k + 1, times[k + 1], x)


def dump_paths(
    path,
    model: SdeModel,
    grid: TimeGrid,
    cfg: IntegratorConfig,
    seed: int,
    n_paths: int,
) -> None:
    """Write trajectories to a raw binary dump.

    Layout: path-major; for each path, node-major; for each node, the state
    components in model order; each complex number as a little-endian
    float64 (re, im) pair.
    """
    with open(path, "wb") as fh:
        for i in range(n_paths):
            traj = integrate_path(model, grid, cfg, seed, path_index=i)
            flat = np.ascontiguousarray(traj.states.T).view(np.float64)
            fh.write(flat.astype("<f8", copy=False).tobytes())


def load_dump(path, dimension: int, n_nodes: int) -> np.ndarray:
    """Read a dump_paths file back as (n_paths, dimension, n_nodes) complex."""
    raw = np.fromfile(path, dtype="<f8")
    per_path = 2 * dimension * n_nodes
    if raw.size % per_path:
        raise InvalidParam(
            f"dump size {raw.size} doubles is not a multiple of {per_path}"
        )
    n = raw.size // per_path
    z = raw.view(np.complex128).reshape(n, n_nodes, dimension)
    return np.transpose(z, (0, 2, 1))

"""Brownian increment grids for coupled-path strong-error experiments.

A BrownianGrid holds the N x m increments of one discretised Brownian path.
Strong-error measurement needs every resolution of a path, plus the
reference, to be driven by the *same* underlying Brownian motion, so grids
are always generated at the finest level and coarsened by block summation.

Reproducibility contract: a path is addressed by (master_seed, path_index).
The pair is mixed into a single stream seed by a SplitMix64-style finalizer,
and the increments are drawn from numpy's PCG64 generator with its default
(ziggurat) normal sampler.  Results are bitwise stable for a fixed numpy
build and independent of the order in which paths are generated; bit
equality across numpy versions or platforms is not promised.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Dense storage keeps the whole grid in one row-major block; step counts
# beyond 2**17 are out of scope.
MAX_STEPS = 1 << 17

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_MULT_1 = 0xBF58476D1CE4E5B9
_MIX_MULT_2 = 0x94D049BB133111EB


@dataclass(frozen=True, eq=False)
class BrownianGrid:
    """Increments of one m-dimensional Brownian path on a uniform mesh.

    Attributes:
      horizon: final time T; the mesh width is T divided by the row count.
      increments: (steps, noise_dim) float array, row n holding the
        increment W(t_{n+1}) - W(t_n) for each noise component.
      master_seed: experiment-level seed this path was derived from.
      path_index: index of this path under master_seed.
    """

    horizon: float
    increments: np.ndarray
    master_seed: int
    path_index: int

    @property
    def steps(self):
        return self.increments.shape[0]

    @property
    def noise_dim(self):
        return self.increments.shape[1]

    @property
    def mesh_width(self):
        return self.horizon / self.steps

    def total_increment(self):
        """Return W(T) - W(0) per component.

        Summed by halving the row count while it is even, then adding any
        odd-length remainder left to right.  The halving tree makes the
        total bitwise invariant under coarsen() with power-of-two factors.
        """
        return _block_reduce(self.increments, self.steps)[0]


def _block_reduce(rows, factor):
    # Pairwise-halving sum of groups of `factor` consecutive rows.  Using
    # the same reduction here and in total_increment() is what makes
    # nested coarsenings and endpoint conservation exact in floating point
    # (for power-of-two factors), not just up to rounding.
    out = rows
    while factor % 2 == 0:
        out = out[0::2] + out[1::2]
        factor //= 2
    if factor > 1:
        blocks = out.reshape(out.shape[0] // factor, factor, out.shape[1])
        acc = blocks[:, 0, :].copy()
        for k in range(1, factor):
            acc += blocks[:, k, :]
        out = acc
    if out is rows:
        out = rows.copy()
    return out


def _mix64(z):
    # SplitMix64 output finalizer (fixed-point avalanche over 64 bits).
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_MULT_1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_MULT_2) & _MASK64
    return z ^ (z >> 31)


def derive_path_seed(master_seed, path_index):
    """Mix an experiment seed and a path index into one stream seed.

    The result equals output number path_index + 1 of the SplitMix64
    stream seeded with master_seed, so distinct indices land on well
    separated generator states and paths may be generated in any order
    or in parallel.

    Args:
      master_seed: integer, reduced modulo 2**64.
      path_index: nonnegative integer.

    Returns:
      A 64-bit integer seed.
    """
    if not isinstance(path_index, (int, np.integer)) or isinstance(path_index, bool):
        raise ValidationError("path_index must be an integer")
    if path_index < 0:
        raise ValidationError("path_index must be nonnegative")
    if not isinstance(master_seed, (int, np.integer)) or isinstance(master_seed, bool):
        raise ValidationError("master_seed must be an integer")
    z = (int(master_seed) + (int(path_index) + 1) * _GOLDEN_GAMMA) & _MASK64
    return _mix64(z)


def generate_increments(seed, steps, noise_dim, horizon, master_seed=None, path_index=0):
    """Draw the increments of one Brownian path.

    Args:
      seed: stream seed for the generator.
      steps: number of mesh intervals N, 1 <= N <= MAX_STEPS.
      noise_dim: number of independent Brownian components m >= 1.
      horizon: final time T > 0.
      master_seed: recorded provenance; defaults to `seed`.
      path_index: recorded provenance, defaults to 0.

    Returns:
      A BrownianGrid with N x m draws from Normal(0, T/N).

    Raises:
      ValidationError: on a nonpositive or oversized argument.
    """
    if not isinstance(steps, (int, np.integer)) or isinstance(steps, bool) or steps < 1:
        raise ValidationError("steps must be a positive integer")
    if steps > MAX_STEPS:
        raise ValidationError(f"steps must be at most {MAX_STEPS}")
    if not isinstance(noise_dim, (int, np.integer)) or isinstance(noise_dim, bool) or noise_dim < 1:
        raise ValidationError("noise_dim must be a positive integer")
    horizon = float(horizon)
    if not math.isfinite(horizon) or horizon <= 0.0:
        raise ValidationError("horizon must be positive and finite")
    rng = np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
    scale = math.sqrt(horizon / steps)
    increments = rng.standard_normal((int(steps), int(noise_dim))) * scale
    if master_seed is None:
        master_seed = int(seed) & _MASK64
    return BrownianGrid(
        horizon=horizon,
        increments=increments,
        master_seed=int(master_seed) & _MASK64,
        path_index=int(path_index),
    )


def sample_path(master_seed, path_index, steps, noise_dim, horizon):
    """Generate path number `path_index` of the experiment `master_seed`.

    Convenience composition of derive_path_seed and generate_increments
    that records both provenance fields.
    """
    stream = derive_path_seed(master_seed, path_index)
    return generate_increments(
        stream,
        steps,
        noise_dim,
        horizon,
        master_seed=int(master_seed) & _MASK64,
        path_index=int(path_index),
    )


def coarsen(grid, factor):
    """Merge consecutive increment rows into a coarser grid.

    Row k of the result is the sum of fine rows k*factor .. (k+1)*factor-1,
    so the coarse grid is the same Brownian path observed on a mesh that is
    `factor` times wider.  Horizon and seed provenance are preserved.

    Power-of-two factors are reduced by repeated halving, which makes
    nested coarsenings exact: coarsen(coarsen(g, 2), 2) is bitwise equal
    to coarsen(g, 4), and the total increment is conserved bitwise.  Any
    odd part of the factor is summed left to right inside each block.

    Args:
      grid: a BrownianGrid.
      factor: positive integer dividing grid.steps.

    Returns:
      A BrownianGrid with grid.steps // factor rows.

    Raises:
      ValidationError: if factor does not divide the row count.
    """
    if not isinstance(factor, (int, np.integer)) or isinstance(factor, bool) or factor < 1:
        raise ValidationError("factor must be a positive integer")
    factor = int(factor)
    if grid.steps % factor != 0:
        raise ValidationError(
            f"factor {factor} does not divide the step count {grid.steps}"
        )
    if factor == 1:
        return grid
    merged = _block_reduce(grid.increments, factor)
    return BrownianGrid(
        horizon=grid.horizon,
        increments=merged,
        master_seed=grid.master_seed,
        path_index=grid.path_index,
    )


def pair_products(dw, h):
    """Half-products of one step's increments, diagonal Ito-corrected.

    Entry (j1, j2) is (dw[j1]*dw[j2] - delta_{j1,j2}*h) / 2, the value that
    replaces the iterated integral pair I_{j1,j2} + I_{j2,j1} for
    commutative noise.  The output is bitwise symmetric because both
    orderings compute the same product.

    Args:
      dw: increment vector of length m.
      h: mesh width, > 0.

    Returns:
      An (m, m) float array.
    """
    h = float(h)
    if not math.isfinite(h) or h <= 0.0:
        raise ValidationError("h must be positive and finite")
    dw = np.asarray(dw, dtype=float)
    if dw.ndim != 1 or dw.size == 0:
        raise ValidationError("dw must be a nonempty 1-d vector")
    out = np.outer(dw, dw)
    idx = np.arange(dw.size)
    out[idx, idx] -= h
    out *= 0.5
    return out

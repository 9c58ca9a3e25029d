"""One-step methods and the path integrator.

Four explicit schemes on a uniform mesh: Euler, tamed Euler, Milstein and
tamed Milstein.  Taming divides the drift increment by 1 + h*||mu(y)||,
which bounds the per-step drift displacement by 1 and is what keeps the
explicit update stable under superlinearly growing drift.  The Milstein
correction uses the single-increment replacement of the iterated integrals,
valid only for commutative noise, so the integrator checks commutativity
once per model before using a Milstein-family scheme.

States whose magnitude leaves [0, 1e300] (or turn non-finite) mark the
trajectory as blown up and integration halts; stopping before float
overflow keeps the diagnostics readable instead of producing NaN storms.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .brownian import pair_products
from .errors import NonCommutativeError, ValidationError
from .model import check_commutativity

BLOW_LIMIT = 1e300


class SchemeKind(enum.Enum):
    """The four integration schemes, named as on the command line."""

    EULER = "euler"
    TAMED_EULER = "tamed-euler"
    MILSTEIN = "milstein"
    TAMED_MILSTEIN = "tamed-milstein"

    @property
    def is_tamed(self):
        return self in (SchemeKind.TAMED_EULER, SchemeKind.TAMED_MILSTEIN)

    @property
    def has_correction(self):
        return self in (SchemeKind.MILSTEIN, SchemeKind.TAMED_MILSTEIN)

    @property
    def code(self):
        # Bit 0: tamed drift, bit 1: Milstein correction.  Must match the
        # dispatch in _kernels.pyx.
        return (1 if self.is_tamed else 0) | (2 if self.has_correction else 0)

    @classmethod
    def parse(cls, name):
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(kind.value for kind in cls)
            raise ValidationError(f"unknown scheme {name!r}; choose from {valid}") from None


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Result of integrating one path.

    Attributes:
      scheme: the SchemeKind that produced it.
      states: (n+1, d) array of visited states.  With record_full this is
        the whole trajectory (truncated at the first blown state if any);
        otherwise only the initial and terminal states are retained.
      mesh_width: the step size h.
      blew_up: whether a state left the finite range.
      blow_index: index of the first blown state, or None.
    """

    scheme: SchemeKind
    states: np.ndarray
    mesh_width: float
    blew_up: bool
    blow_index: object

    @property
    def endpoint(self):
        return self.states[-1]


def tame(drift_value, h):
    """Damp a drift value so the increment h * tame(v, h) stays below 1.

    Returns v / (1 + h * ||v||).  The norm of the result is at most
    min(||v||, 1/h), so the per-step drift displacement h * ||tame(v, h)||
    never exceeds min(1, h * ||v||).

    Args:
      drift_value: finite vector (or scalar array) mu(y).
      h: mesh width, > 0.
    """
    h = float(h)
    if not h > 0.0:
        raise ValidationError("h must be positive")
    value = np.asarray(drift_value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise ValidationError("drift_value must be finite")
    return value / (1.0 + h * float(np.linalg.norm(value)))


def step(scheme, model, y, h, dw):
    """Advance one state by one mesh interval.

    euler:          y + h*mu(y) + sigma(y) dW
    tamed_euler:    y + h*tame(mu(y), h) + sigma(y) dW
    milstein:       euler plus sum_{j1,j2} L^{j1}sigma_{j2}(y) * pp[j1, j2]
    tamed_milstein: tamed_euler plus the same correction,

    where pp = pair_products(dW, h).  The correction is assembled from one
    pair-product matrix and one Jacobian evaluation per noise component
    (sigma'_{j2} applied to sigma @ pp column j2), not one per (j1, j2)
    pair.  Jacobians come from the model, analytically or by its finite
    difference fallback.

    The result is returned as computed; callers detect blow-up by checking
    magnitudes against BLOW_LIMIT (see integrate_path).

    Args:
      scheme: a SchemeKind.
      model: an SdeModel.
      y: current state, (d,) array.
      h: mesh width, > 0.
      dw: Brownian increment, (m,) array.

    Returns:
      The next state as a (d,) float array.
    """
    h = float(h)
    if not h > 0.0:
        raise ValidationError("h must be positive")
    y = np.asarray(y, dtype=float)
    dw = np.asarray(dw, dtype=float)
    mu = np.asarray(model.drift(y), dtype=float)
    if scheme.is_tamed:
        increment = h * tame(mu, h)
    else:
        increment = h * mu
    sig = model.diffusion_matrix(y)
    out = y + increment + sig @ dw
    if scheme.has_correction:
        products = pair_products(dw, h)
        weighted = sig @ products
        for j2 in range(model.noise_dim):
            out = out + model.diffusion_jacobian(j2, y) @ weighted[:, j2]
    return out


def _is_blown(state):
    # NaN compares false, so this catches non-finite entries as well as
    # magnitude overflow.
    return not np.all(np.abs(state) <= BLOW_LIMIT)


def _commutativity_gate(model, allow_noncommutative):
    check = model._commutativity_cache
    if check is None:
        check = check_commutativity(model)
        model._commutativity_cache = check
    if not check.commutative and not allow_noncommutative:
        raise NonCommutativeError(
            f"model {model.name!r} fails the commutativity condition "
            f"(max violation {check.max_violation:.6g}); the Milstein "
            "correction would be wrong.  Pass allow_noncommutative=True "
            "(--allow-noncommutative) only for negative tests."
        )


def integrate_path(scheme, model, grid, record_full=False,
                   allow_noncommutative=False, backend=None):
    """Integrate the model over one Brownian grid.

    Applies `step` N times with h = T/N and the rows of the grid.  For
    Milstein-family schemes the model must pass check_commutativity (the
    verdict is cached on the model); `allow_noncommutative` overrides the
    gate for negative tests, producing a scheme that is simply wrong for
    such models.

    Args:
      scheme: a SchemeKind.
      model: an SdeModel matching the grid's dimensions.
      grid: a BrownianGrid with grid.noise_dim == model.noise_dim and
        grid.horizon == model.horizon.
      record_full: keep every visited state instead of only the endpoints.
      allow_noncommutative: skip the commutativity gate.
      backend: "pure", "compiled" or None for the module default; compiled
        kernels exist only for the builtin models and endpoint-only runs.

    Returns:
      A Trajectory.

    Raises:
      ValidationError: on dimension or horizon mismatch.
      NonCommutativeError: Milstein scheme on a non-commutative model.
    """
    if not isinstance(scheme, SchemeKind):
        scheme = SchemeKind.parse(scheme)
    if grid.noise_dim != model.noise_dim:
        raise ValidationError(
            f"grid has {grid.noise_dim} noise components, model needs {model.noise_dim}"
        )
    if not math.isclose(grid.horizon, model.horizon, rel_tol=1e-12, abs_tol=0.0):
        raise ValidationError(
            f"grid horizon {grid.horizon!r} does not match model horizon {model.horizon!r}"
        )
    if scheme.has_correction:
        _commutativity_gate(model, allow_noncommutative)

    h = grid.mesh_width
    which = _backend.resolve(backend, model, record_full)
    if which == "compiled":
        endpoint, blow_index = _backend.kernels().run_endpoint(
            scheme.code,
            model.kernel_code,
            np.asarray(model.kernel_params, dtype=float),
            np.ascontiguousarray(model.initial_state, dtype=float),
            np.ascontiguousarray(grid.increments, dtype=float),
            h,
            BLOW_LIMIT,
        )
        states = np.stack([model.initial_state.astype(float), endpoint])
    else:
        states, blow_index = _integrate_pure(scheme, model, grid, record_full)
    return Trajectory(
        scheme=scheme,
        states=states,
        mesh_width=h,
        blew_up=blow_index is not None,
        blow_index=blow_index,
    )


def _integrate_pure(scheme, model, grid, record_full):
    h = grid.mesh_width
    increments = grid.increments
    y = model.initial_state.astype(float, copy=True)
    recorded = None
    if record_full:
        recorded = np.empty((grid.steps + 1, model.state_dim))
        recorded[0] = y
    blow_index = None
    last = grid.steps
    # Overflow to inf is how blow-ups surface; the state check below is the
    # detector, so the arithmetic warnings are noise here.
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(grid.steps):
            y = step(scheme, model, y, h, increments[n])
            if record_full:
                recorded[n + 1] = y
            if _is_blown(y):
                blow_index = n + 1
                last = n + 1
                break
    if record_full:
        states = recorded[: last + 1]
    else:
        states = np.stack([model.initial_state.astype(float), np.asarray(y, dtype=float)])
    return states, blow_index

"""SDE problem definitions and coefficient diagnostics.

A model is the autonomous Ito equation

    dX_t = mu(X_t) dt + sum_i sigma_i(X_t) dW^i_t,      X_0 = xi,

described by its drift, its diffusion columns sigma_i with their Jacobians,
a deterministic initial state and a time horizon.  The module also computes
the Milstein coefficient L^{j1} sigma_{j2} = sigma'_{j2} sigma_{j1}, checks
the noise commutativity condition that the single-increment Milstein
correction relies on, and offers probe-based estimates of the one-sided
Lipschitz and Lipschitz constants that the convergence theory assumes.

Assumption probes are advisory: they report empirical maxima over random
points and never refuse integration.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Dispatch codes for the compiled loop in _kernels; params documented at
# the factories below.
KERNEL_POLY5 = 1
KERNEL_GBM = 2
KERNEL_DIAG2 = 3

_FD_STEP = 1e-5
DEFAULT_COMMUTATIVITY_TOL = 1e-8


@dataclass(eq=False)
class SdeModel:
    """An SDE problem with callable coefficients.

    Attributes:
      name: label used by the CLI and in tables.
      state_dim: dimension d of the state.
      noise_dim: number m of independent Brownian components.
      drift: callable, (d,) array -> (d,) array.
      diffusion_columns: tuple of m callables, each (d,) -> (d,); column i
        is the coefficient of dW^i.
      diffusion_jacobians: tuple of m callables, each (d,) -> (d, d), or
        None to fall back on central finite differences.
      initial_state: (d,) array, deterministic.
      horizon: final time T > 0.
      exact_endpoint: optional callable mapping a BrownianGrid for this
        model to the exact terminal state (closed-form oracle).
      kernel_code: optional dispatch code for the compiled path loop.
      kernel_params: float parameters consumed by the compiled loop.

    Treat instances as immutable after construction; all methods are pure
    and safe for concurrent use.
    """

    name: str
    state_dim: int
    noise_dim: int
    drift: object
    diffusion_columns: tuple
    diffusion_jacobians: object
    initial_state: np.ndarray
    horizon: float
    exact_endpoint: object = None
    kernel_code: object = None
    kernel_params: tuple = ()
    _commutativity_cache: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.state_dim < 1 or self.noise_dim < 1:
            raise ValidationError("state_dim and noise_dim must be positive")
        self.horizon = float(self.horizon)
        if not math.isfinite(self.horizon) or self.horizon <= 0.0:
            raise ValidationError("horizon must be positive and finite")
        self.initial_state = np.asarray(self.initial_state, dtype=float).reshape(-1).copy()
        if self.initial_state.shape != (self.state_dim,):
            raise ValidationError(
                f"initial_state must have shape ({self.state_dim},)"
            )
        if not np.all(np.isfinite(self.initial_state)):
            raise ValidationError("initial_state must be finite")
        self.diffusion_columns = tuple(self.diffusion_columns)
        if len(self.diffusion_columns) != self.noise_dim:
            raise ValidationError("one diffusion column per noise component required")
        if self.diffusion_jacobians is not None:
            self.diffusion_jacobians = tuple(self.diffusion_jacobians)
            if len(self.diffusion_jacobians) != self.noise_dim:
                raise ValidationError("one Jacobian per noise component required")
        self.kernel_params = tuple(float(p) for p in self.kernel_params)

    def diffusion_matrix(self, x):
        """Stack the diffusion columns into a (d, m) matrix at x."""
        cols = [np.asarray(c(x), dtype=float).reshape(self.state_dim)
                for c in self.diffusion_columns]
        return np.stack(cols, axis=1)

    def diffusion_jacobian(self, i, x):
        """Jacobian of column i at x, analytic if supplied, else central
        finite differences with step 1e-5 * (1 + ||x||)."""
        if self.diffusion_jacobians is not None:
            return np.asarray(self.diffusion_jacobians[i](x), dtype=float).reshape(
                self.state_dim, self.state_dim
            )
        return _fd_jacobian(self.diffusion_columns[i], x, self.state_dim)


@dataclass(frozen=True)
class CommutativityCheck:
    """Outcome of check_commutativity: verdict, worst raw violation and
    the probe point where it occurred (None when trivially commutative)."""

    commutative: bool
    max_violation: float
    worst_point: object


@dataclass(frozen=True)
class AssumptionReport:
    """Empirical maxima of the regularity quotients over random pairs.

    one_sided_lipschitz_estimate maximises <x-y, mu(x)-mu(y)> / ||x-y||^2
    (negative for dissipative drifts; reported raw, not clamped), the other
    two maximise the corresponding Lipschitz ratios for the diffusion
    matrix (Frobenius norm) and the Milstein coefficients."""

    one_sided_lipschitz_estimate: float
    diffusion_lipschitz_estimate: float
    l_coefficient_lipschitz_estimate: float
    probe_count: int
    probe_box: float


def _fd_jacobian(column, x, d):
    x = np.asarray(x, dtype=float)
    step = _FD_STEP * (1.0 + float(np.linalg.norm(x)))
    jac = np.empty((d, d))
    for k in range(d):
        bump = np.zeros(d)
        bump[k] = step
        upper = np.asarray(column(x + bump), dtype=float)
        lower = np.asarray(column(x - bump), dtype=float)
        jac[:, k] = (upper - lower) / (2.0 * step)
    return jac


def l_operator(model, x):
    """Milstein coefficients L^{j1} sigma_{j2}(x) = sigma'_{j2}(x) sigma_{j1}(x).

    Args:
      model: an SdeModel.
      x: finite (d,) state.

    Returns:
      Array of shape (m, m, d); entry [j1, j2] is the d-vector
      L^{j1} sigma_{j2}(x).
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError("x must be finite")
    sig = model.diffusion_matrix(x)
    m = model.noise_dim
    out = np.empty((m, m, model.state_dim))
    for j2 in range(m):
        jac = model.diffusion_jacobian(j2, x)
        # (d, m) product: column j1 is sigma'_{j2} sigma_{j1}; one Jacobian
        # evaluation covers all j1 pairs.
        prod = jac @ sig
        out[:, j2, :] = prod.T
    return out


def _default_probes(model, count=16, seed=1234):
    radius = 1.0 + float(np.linalg.norm(model.initial_state))
    rng = np.random.Generator(np.random.PCG64(seed))
    offsets = rng.uniform(-radius, radius, size=(count, model.state_dim))
    return [model.initial_state] + [model.initial_state + row for row in offsets]


def check_commutativity(model, probes=None, tol=DEFAULT_COMMUTATIVITY_TOL):
    """Test L^{j1} sigma_{k,j2} = L^{j2} sigma_{k,j1} at probe points.

    The verdict compares the worst entrywise violation per probe x against
    tol * (1 + ||x||); the relative scaling keeps polynomially growing
    coefficients from tripping the check through rounding alone.

    Args:
      model: an SdeModel.
      probes: iterable of states; defaults to the initial state plus a
        fixed-seed batch of points in a box around it.
      tol: positive scale for the violation threshold.

    Returns:
      CommutativityCheck(commutative, max_violation, worst_point); the
      violation is the raw maximum of |L^{j1} sigma_{k,j2} - L^{j2} sigma_{k,j1}|.
    """
    if tol <= 0.0:
        raise ValidationError("tol must be positive")
    if model.noise_dim == 1:
        # j1 = j2 is forced, nothing to compare.
        return CommutativityCheck(True, 0.0, None)
    if probes is None:
        probes = _default_probes(model)
    probes = [np.asarray(p, dtype=float).reshape(model.state_dim) for p in probes]
    if not probes:
        raise ValidationError("probes must be nonempty")
    commutative = True
    max_violation = 0.0
    worst = None
    for x in probes:
        coeffs = l_operator(model, x)
        gap = float(np.max(np.abs(coeffs - coeffs.transpose(1, 0, 2))))
        if gap > max_violation:
            max_violation = gap
            worst = x
        if gap > tol * (1.0 + float(np.linalg.norm(x))):
            commutative = False
    return CommutativityCheck(commutative, max_violation, worst)


def probe_assumptions(model, sample_count=256, box_radius=2.0, seed=0):
    """Estimate the regularity constants by random sampling.

    Draws sample_count pairs (x, y) uniformly in the centred box
    [-box_radius, box_radius]^d and reports the maxima of the three
    quotients.  The base sample depends only on the seed and is scaled by
    the radius, so reports with a shared seed are nested in box_radius.
    Diagnostic only; nothing here gates integration.

    Args:
      model: an SdeModel.
      sample_count: number of pairs, >= 2.
      box_radius: positive half-width of the sampling box.
      seed: generator seed.

    Returns:
      An AssumptionReport.
    """
    if sample_count < 2:
        raise ValidationError("sample_count must be at least 2")
    if box_radius <= 0.0:
        raise ValidationError("box_radius must be positive")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    base = rng.uniform(-1.0, 1.0, size=(int(sample_count), 2, model.state_dim))
    pairs = base * float(box_radius)
    one_sided = -math.inf
    diffusion = 0.0
    l_coeff = 0.0
    for x, y in pairs:
        gap = x - y
        gap_sq = float(np.dot(gap, gap))
        if gap_sq < 1e-24:
            continue
        dmu = np.asarray(model.drift(x), dtype=float) - np.asarray(model.drift(y), dtype=float)
        one_sided = max(one_sided, float(np.dot(gap, dmu)) / gap_sq)
        gap_norm = math.sqrt(gap_sq)
        dsig = model.diffusion_matrix(x) - model.diffusion_matrix(y)
        diffusion = max(diffusion, float(np.linalg.norm(dsig)) / gap_norm)
        dl = l_operator(model, x) - l_operator(model, y)
        l_coeff = max(l_coeff, float(np.max(np.linalg.norm(dl, axis=2))) / gap_norm)
    return AssumptionReport(
        one_sided_lipschitz_estimate=one_sided,
        diffusion_lipschitz_estimate=diffusion,
        l_coefficient_lipschitz_estimate=l_coeff,
        probe_count=int(sample_count),
        probe_box=float(box_radius),
    )


def gbm_exact_endpoint(a, b, xi, horizon, w_t):
    """Closed-form geometric Brownian motion endpoint.

    Solves dX = a X dt + b X dW exactly:
    X_T = xi * exp((a - b^2/2) T + b W_T).

    Args:
      a: drift coefficient.
      b: diffusion coefficient.
      xi: positive initial value.
      horizon: final time T.
      w_t: terminal value of the driving Brownian motion.

    Returns:
      The exact X_T as a float.
    """
    if xi <= 0.0:
        raise ValidationError("xi must be positive")
    return float(xi) * math.exp((a - 0.5 * b * b) * horizon + b * w_t)


def _poly5_model():
    # dX = -X^5 dt + X dW, X_0 = 1, T = 1.  Superlinear dissipative drift,
    # the standard explicit-Euler-breaking test problem.
    def drift(x):
        x2 = x * x
        return -(x2 * x2 * x)

    def column(x):
        return np.array([x[0]])

    def jacobian(x):
        return np.array([[1.0]])

    return SdeModel(
        name="poly5",
        state_dim=1,
        noise_dim=1,
        drift=drift,
        diffusion_columns=(column,),
        diffusion_jacobians=(jacobian,),
        initial_state=np.array([1.0]),
        horizon=1.0,
        kernel_code=KERNEL_POLY5,
    )


def _gbm_model(a=-0.5, b=0.5):
    # dX = a X dt + b X dW with a closed-form oracle; the only builtin
    # whose strong error can be measured without a fine-grid reference.
    def drift(x):
        return a * x

    def column(x):
        return b * x

    def jacobian(x):
        return np.array([[b]])

    def exact(grid):
        w_t = float(grid.total_increment()[0])
        return np.array([gbm_exact_endpoint(a, b, 1.0, grid.horizon, w_t)])

    return SdeModel(
        name="gbm",
        state_dim=1,
        noise_dim=1,
        drift=drift,
        diffusion_columns=(column,),
        diffusion_jacobians=(jacobian,),
        initial_state=np.array([1.0]),
        horizon=1.0,
        exact_endpoint=exact,
        kernel_code=KERNEL_GBM,
        kernel_params=(a, b),
    )


def _diag2_model(c=0.5):
    # Two-dimensional diagonal noise with a cubically dissipative drift:
    # mu(x) = -x - x ||x||^2, sigma_i(x) = c x_i e_i.  Commutative but
    # genuinely multi-noise, exercising the m > 1 code paths.
    def drift(x):
        s = x[0] * x[0] + x[1] * x[1]
        return -x - x * s

    def column0(x):
        return np.array([c * x[0], 0.0])

    def column1(x):
        return np.array([0.0, c * x[1]])

    def jacobian0(x):
        return np.array([[c, 0.0], [0.0, 0.0]])

    def jacobian1(x):
        return np.array([[0.0, 0.0], [0.0, c]])

    return SdeModel(
        name="diag2",
        state_dim=2,
        noise_dim=2,
        drift=drift,
        diffusion_columns=(column0, column1),
        diffusion_jacobians=(jacobian0, jacobian1),
        initial_state=np.array([1.0, 0.5]),
        horizon=1.0,
        kernel_code=KERNEL_DIAG2,
        kernel_params=(c,),
    )


def _noncomm2_model():
    # sigma_1 = (x_2, 0), sigma_2 = (0, x_1): the textbook failure of the
    # commutativity condition.  Exists for negative tests only.
    def drift(x):
        return -x

    def column0(x):
        return np.array([x[1], 0.0])

    def column1(x):
        return np.array([0.0, x[0]])

    def jacobian0(x):
        return np.array([[0.0, 1.0], [0.0, 0.0]])

    def jacobian1(x):
        return np.array([[0.0, 0.0], [1.0, 0.0]])

    return SdeModel(
        name="noncomm2",
        state_dim=2,
        noise_dim=2,
        drift=drift,
        diffusion_columns=(column0, column1),
        diffusion_jacobians=(jacobian0, jacobian1),
        initial_state=np.array([1.0, 2.0]),
        horizon=1.0,
    )


def builtin_models():
    """Catalog of built-in test problems, keyed by CLI name."""
    models = [_poly5_model(), _gbm_model(), _diag2_model(), _noncomm2_model()]
    return {m.name: m for m in models}


def get_model(name):
    """Look up a built-in model by name.

    Raises:
      ValidationError: naming the available models if `name` is unknown.
    """
    catalog = builtin_models()
    if name not in catalog:
        raise ValidationError(
            f"unknown model {name!r}; available models: {', '.join(sorted(catalog))}"
        )
    return catalog[name]

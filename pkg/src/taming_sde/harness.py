"""Coupled-path Monte Carlo measurement of strong error.

The strong error of a scheme at mesh width h is (E ||X_T - Y_N||^2)^(1/2),
so every tested resolution of a path, and the reference it is compared
against, must be driven by the same Brownian motion.  Each path is
generated once at the finest level (ref_multiplier times the finest tested
N) and coarsened down; the reference endpoint is the model's closed-form
oracle when it has one, otherwise tamed Milstein on the fine grid.

Determinism: path i always uses the stream derived from
(master_seed, i), per-path results land in preallocated slots indexed by
i, and the reductions run over fixed-shape arrays, so serial and parallel
runs with the same master seed produce identical tables (runtime excluded).
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import brownian
from .brownian import coarsen, sample_path
from .errors import PathExplosionError, ReferenceBlowUpError, ValidationError
from .schemes import SchemeKind, integrate_path

DEFAULT_REF_MULTIPLIER = 16
# A tamed scheme that loses more than this fraction of paths to blow-up is
# treated as a bug in the run, not a statistic.
TAMED_BLOWUP_FRACTION = 0.01


@dataclass(frozen=True)
class ErrorRow:
    """One (scheme, N) cell of a strong-error experiment."""

    steps: int
    mesh_width: float
    mse: float
    mse_stderr: float
    rmse: float
    runtime_ms: float
    paths: int
    blown_paths: int


@dataclass(eq=False)
class ErrorTable:
    """Strong errors of one scheme across step counts, one shared seed.

    Rows are sorted by decreasing mesh width (increasing N).  rmse is
    sqrt(mse) and mse_stderr is the sample standard deviation of the
    per-path squared errors divided by sqrt(paths).
    """

    scheme: SchemeKind
    model_name: str
    reference: str
    master_seed: int
    rows: list

    def row_values(self, include_runtime=False):
        """Rows as plain tuples, for comparisons; runtime is informational
        and excluded from determinism checks by default."""
        out = []
        for r in self.rows:
            vals = (r.steps, r.mesh_width, r.mse, r.mse_stderr, r.rmse,
                    r.paths, r.blown_paths)
            if include_runtime:
                vals = vals + (r.runtime_ms,)
            out.append(vals)
        return out


@dataclass(frozen=True)
class ConvergenceReport:
    """Least-squares fit of log(rmse) against log(h)."""

    slope: float
    intercept: float
    r_squared: float
    points_used: int


@dataclass(frozen=True)
class MomentRow:
    """Monte Carlo estimate of E ||Y_N||^p at one step count."""

    steps: int
    mesh_width: float
    estimate: float
    stderr: float
    paths: int
    blown_paths: int


@dataclass(frozen=True)
class EfficiencyRow:
    """Smallest step count at which a scheme met the target, if any."""

    scheme: SchemeKind
    met_steps: object
    rmse: object
    runtime_ms: object


@dataclass(eq=False)
class EfficiencyReport:
    """Per-scheme outcome of an error-versus-cost run, with the underlying
    error tables for inspection."""

    target_eps: float
    rows: list
    tables: list


def _validate_step_counts(step_counts):
    steps = [int(n) for n in step_counts]
    if not steps:
        raise ValidationError("step_counts must be nonempty")
    for n in steps:
        if n < 1:
            raise ValidationError("step counts must be positive")
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValidationError("step counts must be strictly increasing")
    return steps


def _path_map(worker, count, workers):
    # Workers write into preallocated per-index slots, so execution order
    # cannot affect the result; list() surfaces worker exceptions.
    if workers is None or workers <= 1:
        for i in range(count):
            worker(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(worker, range(count)))


def reference_endpoint(model, fine_grid, prefer_oracle=True,
                       allow_noncommutative=False, backend=None):
    """Terminal state the tested schemes are compared against.

    Uses the model's closed-form oracle when it has one (and prefer_oracle
    is left on); otherwise integrates tamed Milstein over the fine grid,
    which converges at order one and stays stable under superlinear drift.
    The fine grid must be strictly finer than every tested resolution
    (the table builders enforce a factor of at least 4).

    Raises:
      ReferenceBlowUpError: the fine-grid trajectory blew up, so this path
        cannot anchor a strong-error measurement.
    """
    if prefer_oracle and model.exact_endpoint is not None:
        exact = np.asarray(model.exact_endpoint(fine_grid), dtype=float)
        return exact.reshape(model.state_dim)
    traj = integrate_path(SchemeKind.TAMED_MILSTEIN, model, fine_grid,
                          allow_noncommutative=allow_noncommutative,
                          backend=backend)
    if traj.blew_up:
        raise ReferenceBlowUpError(
            f"reference trajectory blew up at step {traj.blow_index} of "
            f"{fine_grid.steps} (master_seed={fine_grid.master_seed}, "
            f"path_index={fine_grid.path_index})"
        )
    return traj.endpoint


def strong_error_tables(model, schemes, step_counts, paths, master_seed,
                        ref_multiplier=DEFAULT_REF_MULTIPLIER, workers=1,
                        allow_noncommutative=False, backend=None,
                        prefer_oracle=True):
    """Strong-error tables for several schemes over shared paths.

    All schemes and all step counts see the same Brownian paths and the
    same reference endpoints, which removes sampling noise from
    between-scheme comparisons.  See strong_error_table for the
    single-scheme contract.

    Returns:
      One ErrorTable per scheme, in input order.
    """
    kinds = [s if isinstance(s, SchemeKind) else SchemeKind.parse(s) for s in schemes]
    if not kinds:
        raise ValidationError("at least one scheme is required")
    steps = _validate_step_counts(step_counts)
    paths = int(paths)
    if paths < 2:
        raise ValidationError("paths must be at least 2")
    ref_multiplier = int(ref_multiplier)
    if ref_multiplier < 4:
        raise ValidationError(
            "ref_multiplier must be at least 4 so the reference grid is strictly finer"
        )
    n_ref = ref_multiplier * steps[-1]
    if n_ref > brownian.MAX_STEPS:
        raise ValidationError(
            f"reference grid needs {n_ref} steps, above the supported "
            f"maximum {brownian.MAX_STEPS}"
        )
    for n in steps:
        if n_ref % n != 0:
            raise ValidationError(
                f"step count {n} does not divide the reference count {n_ref}"
            )

    use_oracle = prefer_oracle and model.exact_endpoint is not None
    master_seed = int(master_seed)
    n_schemes = len(kinds)
    n_levels = len(steps)
    sq_errors = np.empty((paths, n_schemes, n_levels))
    blown = np.zeros((paths, n_schemes, n_levels), dtype=bool)
    runtimes = np.zeros((paths, n_schemes, n_levels))

    def worker(i):
        grid = sample_path(master_seed, i, n_ref, model.noise_dim, model.horizon)
        ref = reference_endpoint(model, grid, prefer_oracle=prefer_oracle,
                                 allow_noncommutative=allow_noncommutative,
                                 backend=backend)
        for k, n in enumerate(steps):
            sub = coarsen(grid, n_ref // n)
            for j, kind in enumerate(kinds):
                begin = time.perf_counter()
                traj = integrate_path(kind, model, sub,
                                      allow_noncommutative=allow_noncommutative,
                                      backend=backend)
                runtimes[i, j, k] = time.perf_counter() - begin
                if traj.blew_up:
                    blown[i, j, k] = True
                    sq_errors[i, j, k] = math.inf
                else:
                    gap = traj.endpoint - ref
                    sq_errors[i, j, k] = float(gap @ gap)

    _path_map(worker, paths, workers)

    reference = "oracle" if use_oracle else f"tamed-milstein@{n_ref}"
    tables = []
    for j, kind in enumerate(kinds):
        rows = []
        for k, n in enumerate(steps):
            per_path = sq_errors[:, j, k]
            blown_count = int(blown[:, j, k].sum())
            if kind.is_tamed and blown_count > TAMED_BLOWUP_FRACTION * paths:
                raise PathExplosionError(
                    f"{blown_count} of {paths} paths blew up under {kind.value} "
                    f"at N={n}; a tamed scheme should not explode"
                )
            mse = float(np.mean(per_path))
            if math.isfinite(mse):
                stderr = float(np.std(per_path, ddof=1) / math.sqrt(paths))
                rmse = math.sqrt(mse)
            else:
                stderr = math.inf
                rmse = math.inf
            rows.append(ErrorRow(
                steps=n,
                mesh_width=model.horizon / n,
                mse=mse,
                mse_stderr=stderr,
                rmse=rmse,
                runtime_ms=float(runtimes[:, j, k].sum() * 1000.0),
                paths=paths,
                blown_paths=blown_count,
            ))
        tables.append(ErrorTable(
            scheme=kind,
            model_name=model.name,
            reference=reference,
            master_seed=master_seed,
            rows=rows,
        ))
    return tables


def strong_error_table(model, scheme, step_counts, paths, master_seed,
                       ref_multiplier=DEFAULT_REF_MULTIPLIER, workers=1,
                       allow_noncommutative=False, backend=None,
                       prefer_oracle=True):
    """Strong-error table for one scheme.

    For each path i: derive the stream for (master_seed, i), draw the fine
    grid with ref_multiplier * max(step_counts) steps, compute the
    reference endpoint, then coarsen to every tested N, integrate, and
    accumulate squared endpoint errors.  Results are deterministic given
    master_seed, whatever the worker count.

    Blow-ups contribute an infinite squared error and are counted per row;
    a tamed scheme losing more than 1% of paths fails the run with
    PathExplosionError, while Euler blow-ups are expected and simply leave
    infinite rows.

    Returns:
      An ErrorTable with one row per step count.
    """
    return strong_error_tables(
        model, [scheme], step_counts, paths, master_seed,
        ref_multiplier=ref_multiplier, workers=workers,
        allow_noncommutative=allow_noncommutative, backend=backend,
        prefer_oracle=prefer_oracle,
    )[0]


def fit_order(table):
    """Empirical convergence order: OLS slope of log(rmse) vs log(h).

    Rows with zero or non-finite rmse are excluded; at least two usable
    rows are required.
    """
    points = [(r.mesh_width, r.rmse) for r in table.rows
              if math.isfinite(r.rmse) and r.rmse > 0.0]
    if len(points) < 2:
        raise ValidationError("need at least 2 rows with positive finite rmse")
    log_h = np.log([p[0] for p in points])
    log_rmse = np.log([p[1] for p in points])
    slope, intercept = np.polyfit(log_h, log_rmse, 1)
    residual = log_rmse - (slope * log_h + intercept)
    ss_res = float(residual @ residual)
    centered = log_rmse - log_rmse.mean()
    ss_tot = float(centered @ centered)
    if ss_tot > 0.0:
        r_squared = 1.0 - ss_res / ss_tot
    else:
        r_squared = 1.0 if ss_res == 0.0 else 0.0
    return ConvergenceReport(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        points_used=len(points),
    )


def moment_probe(model, scheme, moment_p, step_counts, paths, master_seed,
                 workers=1, allow_noncommutative=False, backend=None):
    """Estimate E ||Y_N||^p at each step count.

    Paths are independent across indices and reuse the per-index streams,
    so the estimates are deterministic given the master seed.  A blown
    path contributes infinity; the estimate is reported as computed, never
    masked.

    Returns:
      A list of MomentRow, one per step count in increasing order.
    """
    kind = scheme if isinstance(scheme, SchemeKind) else SchemeKind.parse(scheme)
    moment_p = float(moment_p)
    if moment_p < 1.0:
        raise ValidationError("moment_p must be at least 1")
    steps = _validate_step_counts(step_counts)
    paths = int(paths)
    if paths < 2:
        raise ValidationError("paths must be at least 2")
    for n in steps:
        if n > brownian.MAX_STEPS:
            raise ValidationError(
                f"step count {n} is above the supported maximum {brownian.MAX_STEPS}"
            )
    master_seed = int(master_seed)
    values = np.empty((paths, len(steps)))
    blown = np.zeros((paths, len(steps)), dtype=bool)

    def worker(i):
        for k, n in enumerate(steps):
            grid = sample_path(master_seed, i, n, model.noise_dim, model.horizon)
            traj = integrate_path(kind, model, grid,
                                  allow_noncommutative=allow_noncommutative,
                                  backend=backend)
            if traj.blew_up:
                blown[i, k] = True
                values[i, k] = math.inf
            else:
                values[i, k] = float(np.linalg.norm(traj.endpoint)) ** moment_p

    _path_map(worker, paths, workers)

    rows = []
    for k, n in enumerate(steps):
        column = values[:, k]
        estimate = float(np.mean(column))
        if math.isfinite(estimate):
            stderr = float(np.std(column, ddof=1) / math.sqrt(paths))
        else:
            stderr = math.inf
        rows.append(MomentRow(
            steps=n,
            mesh_width=model.horizon / n,
            estimate=estimate,
            stderr=stderr,
            paths=paths,
            blown_paths=int(blown[:, k].sum()),
        ))
    return rows


def efficiency_benchmark(model, schemes, target_eps, step_counts, paths,
                         master_seed, ref_multiplier=DEFAULT_REF_MULTIPLIER,
                         workers=1, allow_noncommutative=False, backend=None,
                         prefer_oracle=True):
    """Smallest step count per scheme with rmse below a target.

    Runs one shared-path strong-error experiment for all schemes, then
    reports the first N (rows are in increasing N) whose rmse is strictly
    below target_eps.  Runtime at that N is informational; the step-count
    gap between schemes is the quantity worth comparing across machines.
    Schemes that never meet the target get met_steps None.
    """
    target_eps = float(target_eps)
    if not target_eps > 0.0:
        raise ValidationError("target_eps must be positive")
    tables = strong_error_tables(
        model, schemes, step_counts, paths, master_seed,
        ref_multiplier=ref_multiplier, workers=workers,
        allow_noncommutative=allow_noncommutative, backend=backend,
        prefer_oracle=prefer_oracle,
    )
    rows = []
    for table in tables:
        met = next((r for r in table.rows if r.rmse < target_eps), None)
        rows.append(EfficiencyRow(
            scheme=table.scheme,
            met_steps=None if met is None else met.steps,
            rmse=None if met is None else met.rmse,
            runtime_ms=None if met is None else met.runtime_ms,
        ))
    return EfficiencyReport(target_eps=target_eps, rows=rows, tables=tables)

"""Command-line entry point.

Subcommands: `convergence` (strong-error table plus fitted order per
scheme), `efficiency` (smallest step count meeting a target rmse),
`moments` (E ||Y_N||^p across step counts) and `check` (commutativity and
assumption diagnostics for a model).

Configuration may come from flags or from a flat `key = value` config file
(`--config`); flags override the file.  The master seed falls back to the
TAMING_SDE_SEED environment variable when --seed is absent; an explicit
flag beats the environment, which beats the config file.  Step counts must
be strictly increasing powers of two, which guarantees they divide the
reference grid exactly.

Exit codes: 0 success, 1 usage error, 2 runtime failure (reference
blow-up, unstable tamed run, unwritable output).
"""

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import Error, UsageError, ValidationError
from .harness import (
    ErrorTable,
    efficiency_benchmark,
    fit_order,
    moment_probe,
    strong_error_tables,
)
from .model import (
    _fd_jacobian,
    builtin_models,
    check_commutativity,
    get_model,
    probe_assumptions,
)
from .schemes import SchemeKind

SEED_ENV = "TAMING_SDE_SEED"
CSV_HEADER = "scheme,model,N,h,mse,mse_stderr,rmse,paths,runtime_ms"
MOMENT_CSV_HEADER = "scheme,model,N,h,p,estimate,stderr,paths,blown_paths"

_MASK64 = (1 << 64) - 1

_DEFAULTS = {
    "model": None,
    "schemes": (SchemeKind.TAMED_EULER, SchemeKind.TAMED_MILSTEIN),
    "steps": (16, 32, 64, 128, 256, 512),
    "paths": 1000,
    "seed": 0,
    "ref_multiplier": 16,
    "workers": 1,
    "backend": "auto",
    "output": None,
    "no_runtime": False,
    "allow_noncommutative": False,
    "target_eps": None,
    "moment_p": 4.0,
    "probes": 256,
    "box_radius": 2.0,
    "tol": 1e-8,
}

_COMMON_KEYS = ("model", "schemes", "steps", "paths", "seed", "workers",
                "backend", "output", "no_runtime", "allow_noncommutative")
_COMMAND_KEYS = {
    "convergence": _COMMON_KEYS + ("ref_multiplier",),
    "efficiency": _COMMON_KEYS + ("ref_multiplier", "target_eps"),
    "moments": _COMMON_KEYS + ("moment_p",),
    "check": ("model", "seed", "probes", "box_radius", "tol"),
}


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run: subcommand plus every knob it understands.

    Fields that a subcommand does not use keep their defaults, so configs
    compare equal across parse/render round trips.
    """

    command: str
    model: str
    schemes: tuple
    steps: tuple
    paths: int
    seed: int
    ref_multiplier: int
    workers: int
    backend: str
    output: object
    no_runtime: bool
    allow_noncommutative: bool
    target_eps: object
    moment_p: float
    probes: int
    box_radius: float
    tol: float


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _is_power_of_two(n):
    return n > 0 and (n & (n - 1)) == 0


def _parse_int(key, raw):
    try:
        return int(str(raw).strip())
    except ValueError:
        raise UsageError(f"invalid integer for --{key.replace('_', '-')}: {raw!r}") from None


def _parse_float(key, raw):
    try:
        value = float(str(raw).strip())
    except ValueError:
        raise UsageError(f"invalid number for --{key.replace('_', '-')}: {raw!r}") from None
    if value != value:
        raise UsageError(f"--{key.replace('_', '-')} must not be NaN")
    return value


def _parse_bool(key, raw):
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"invalid boolean for {key}: {raw!r}")


def _coerce(key, raw):
    """Turn one raw flag or config-file value into its typed form."""
    if isinstance(raw, bool):
        return raw
    if key in ("no_runtime", "allow_noncommutative"):
        return _parse_bool(key, raw)
    if key == "model":
        name = str(raw).strip()
        catalog = builtin_models()
        if name not in catalog:
            raise UsageError(
                f"unknown model {name!r}; available models: {', '.join(sorted(catalog))}"
            )
        return name
    if key == "schemes":
        names = [tok.strip() for tok in str(raw).split(",") if tok.strip()]
        if not names:
            raise UsageError("at least one scheme is required")
        try:
            return tuple(SchemeKind.parse(name) for name in names)
        except ValidationError as exc:
            raise UsageError(str(exc)) from None
    if key == "steps":
        tokens = [tok.strip() for tok in str(raw).split(",") if tok.strip()]
        if not tokens:
            raise UsageError("at least one step count is required")
        counts = []
        for tok in tokens:
            try:
                n = int(tok)
            except ValueError:
                raise UsageError(f"invalid step count {tok!r}: not an integer") from None
            if not _is_power_of_two(n):
                raise UsageError(f"step count {n} is not a power of two")
            counts.append(n)
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise UsageError("step counts must be strictly increasing")
        return tuple(counts)
    if key == "paths":
        n = _parse_int(key, raw)
        if n < 2:
            raise UsageError("--paths must be at least 2")
        return n
    if key == "seed":
        return _parse_int(key, raw) & _MASK64
    if key == "ref_multiplier":
        n = _parse_int(key, raw)
        if n < 4 or not _is_power_of_two(n):
            raise UsageError("--ref-multiplier must be a power of two, at least 4")
        return n
    if key == "workers":
        n = _parse_int(key, raw)
        if n < 1:
            raise UsageError("--workers must be at least 1")
        return n
    if key == "backend":
        name = str(raw).strip()
        if name not in ("auto", "pure", "compiled"):
            raise UsageError("--backend must be auto, pure or compiled")
        return name
    if key == "target_eps":
        value = _parse_float(key, raw)
        if not value > 0.0:
            raise UsageError("--target-eps must be positive")
        return value
    if key == "moment_p":
        value = _parse_float(key, raw)
        if value < 1.0:
            raise UsageError("--moment-p must be at least 1")
        return value
    if key == "probes":
        n = _parse_int(key, raw)
        if n < 2:
            raise UsageError("--probes must be at least 2")
        return n
    if key == "box_radius":
        value = _parse_float(key, raw)
        if not value > 0.0:
            raise UsageError("--box-radius must be positive")
        return value
    if key == "tol":
        value = _parse_float(key, raw)
        if not value > 0.0:
            raise UsageError("--tol must be positive")
        return value
    if key == "output":
        return str(raw)
    raise UsageError(f"unknown config key {key!r}")


def _build_parser():
    parser = _Parser(
        prog="taming-sde",
        description="Strong-error experiments for tamed SDE schemes.",
        epilog=(
            "The master seed resolves as: --seed flag, then the "
            f"{SEED_ENV} environment variable, then the config file, "
            "then 0."
        ),
    )
    commands = parser.add_subparsers(dest="command", parser_class=_Parser,
                                     metavar="{convergence,efficiency,moments,check}")

    def add_common(sub, with_ref=False):
        sub.add_argument("--model", default=argparse.SUPPRESS,
                         help="builtin model name (poly5, gbm, diag2, noncomm2)")
        sub.add_argument("--schemes", default=argparse.SUPPRESS,
                         help="comma-separated scheme names "
                              "(euler, tamed-euler, milstein, tamed-milstein)")
        sub.add_argument("--steps", default=argparse.SUPPRESS,
                         help="comma-separated step counts, strictly increasing "
                              "powers of two (default 16,...,512)")
        sub.add_argument("--paths", default=argparse.SUPPRESS,
                         help="Monte Carlo paths (default 1000)")
        sub.add_argument("--seed", default=argparse.SUPPRESS,
                         help="master seed (default: env, config file, then 0)")
        if with_ref:
            sub.add_argument("--ref-multiplier", dest="ref_multiplier",
                             default=argparse.SUPPRESS,
                             help="reference grid refinement over the finest "
                                  "tested N (default 16)")
        sub.add_argument("--workers", default=argparse.SUPPRESS,
                         help="concurrent path workers (default 1); results "
                              "do not depend on this")
        sub.add_argument("--backend", default=argparse.SUPPRESS,
                         help="auto, pure or compiled (default auto)")
        sub.add_argument("--output", default=argparse.SUPPRESS,
                         help="write a CSV of the results to this path")
        sub.add_argument("--no-runtime", dest="no_runtime", action="store_true",
                         default=argparse.SUPPRESS,
                         help="write 0 for runtime columns (byte-stable output)")
        sub.add_argument("--allow-noncommutative", dest="allow_noncommutative",
                         action="store_true", default=argparse.SUPPRESS,
                         help="run Milstein schemes despite a failed "
                              "commutativity check (negative tests only)")
        sub.add_argument("--config", default=argparse.SUPPRESS,
                         help="flat key = value config file; flags override it")

    sub = commands.add_parser("convergence", help="strong-error table and fitted order")
    add_common(sub, with_ref=True)

    sub = commands.add_parser("efficiency", help="smallest N meeting a target rmse")
    add_common(sub, with_ref=True)
    sub.add_argument("--target-eps", dest="target_eps", default=argparse.SUPPRESS,
                     help="target rmse (required)")

    sub = commands.add_parser("moments", help="E ||Y_N||^p across step counts")
    add_common(sub)
    sub.add_argument("--moment-p", dest="moment_p", default=argparse.SUPPRESS,
                     help="moment exponent p >= 1 (default 4)")

    sub = commands.add_parser("check", help="commutativity and assumption diagnostics")
    sub.add_argument("--model", default=argparse.SUPPRESS,
                     help="builtin model name (poly5, gbm, diag2, noncomm2)")
    sub.add_argument("--seed", default=argparse.SUPPRESS,
                     help="seed for the probe sampler")
    sub.add_argument("--probes", default=argparse.SUPPRESS,
                     help="number of probe pairs (default 256)")
    sub.add_argument("--box-radius", dest="box_radius", default=argparse.SUPPRESS,
                     help="half-width of the probe box (default 2)")
    sub.add_argument("--tol", default=argparse.SUPPRESS,
                     help="commutativity tolerance scale (default 1e-8)")
    sub.add_argument("--config", default=argparse.SUPPRESS,
                     help="flat key = value config file; flags override it")

    return parser


def _read_config_file(path, valid_keys):
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in valid_keys:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        entries[key] = value
    return entries


def parse_config(argv):
    """Resolve argv (plus config file and environment) into a RunConfig.

    Raises:
      UsageError: for any malformed or missing input, with a message
        specific to the offending value.
    """
    argv = list(argv)
    parser = _build_parser()
    if not argv:
        raise UsageError(parser.format_usage().rstrip() + "\na subcommand is required")
    namespace = parser.parse_args(argv)
    command = getattr(namespace, "command", None)
    if command is None:
        raise UsageError(parser.format_usage().rstrip() + "\na subcommand is required")

    provided = dict(vars(namespace))
    provided.pop("command", None)
    config_path = provided.pop("config", None)
    keys = _COMMAND_KEYS[command]

    merged = dict(_DEFAULTS)
    if config_path is not None:
        for key, raw in _read_config_file(config_path, keys).items():
            merged[key] = _coerce(key, raw)
    if "seed" in keys and "seed" not in provided:
        env_seed = os.environ.get(SEED_ENV)
        if env_seed is not None and env_seed.strip() != "":
            try:
                merged["seed"] = int(env_seed.strip()) & _MASK64
            except ValueError:
                raise UsageError(
                    f"invalid integer in {SEED_ENV}: {env_seed!r}"
                ) from None
    for key, raw in provided.items():
        merged[key] = _coerce(key, raw)

    if merged["model"] is None:
        raise UsageError("a model name is required (--model or config file)")
    if command == "efficiency" and merged["target_eps"] is None:
        raise UsageError("efficiency requires --target-eps")
    return RunConfig(command=command, **merged)


def render_config(config):
    """Turn a RunConfig back into the argv that reproduces it.

    parse_config(render_config(c)) == c for every valid config (with the
    seed environment variable unset).
    """
    args = [config.command, "--model", config.model]
    keys = _COMMAND_KEYS[config.command]
    if "schemes" in keys:
        args += ["--schemes", ",".join(s.value for s in config.schemes)]
    if "steps" in keys:
        args += ["--steps", ",".join(str(n) for n in config.steps)]
    if "paths" in keys:
        args += ["--paths", str(config.paths)]
    if "seed" in keys:
        args += ["--seed", str(config.seed)]
    if "ref_multiplier" in keys:
        args += ["--ref-multiplier", str(config.ref_multiplier)]
    if "workers" in keys:
        args += ["--workers", str(config.workers)]
    if "backend" in keys:
        args += ["--backend", config.backend]
    if "target_eps" in keys and config.target_eps is not None:
        args += ["--target-eps", repr(config.target_eps)]
    if "moment_p" in keys:
        args += ["--moment-p", repr(config.moment_p)]
    if "probes" in keys:
        args += ["--probes", str(config.probes)]
    if "box_radius" in keys:
        args += ["--box-radius", repr(config.box_radius)]
    if "tol" in keys:
        args += ["--tol", repr(config.tol)]
    if "output" in keys and config.output is not None:
        args += ["--output", config.output]
    if "no_runtime" in keys and config.no_runtime:
        args += ["--no-runtime"]
    if "allow_noncommutative" in keys and config.allow_noncommutative:
        args += ["--allow-noncommutative"]
    return args


def _format_number(value):
    return format(float(value), ".17g")


def emit_csv(tables, path, include_runtime=True):
    """Write error tables as CSV with a pinned header and layout.

    One row per (scheme, N), numbers in decimal with 17 significant
    digits, lines terminated by a single newline.  With include_runtime
    False the runtime column is written as 0 so that repeated runs with
    one seed produce byte-identical files.

    Args:
      tables: an ErrorTable or a sequence of them.
      path: output file path.
      include_runtime: write measured runtimes (True) or zeros.

    Returns:
      The path written.
    """
    if isinstance(tables, ErrorTable):
        tables = [tables]
    tables = list(tables)
    if not tables or any(not t.rows for t in tables):
        raise ValidationError("emit_csv needs at least one nonempty table")
    lines = [CSV_HEADER]
    for table in tables:
        for row in table.rows:
            runtime = row.runtime_ms if include_runtime else 0.0
            lines.append(",".join((
                table.scheme.value,
                table.model_name,
                str(row.steps),
                _format_number(row.mesh_width),
                _format_number(row.mse),
                _format_number(row.mse_stderr),
                _format_number(row.rmse),
                str(row.paths),
                _format_number(runtime),
            )))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _print_error_table(table):
    first = table.rows[0]
    print(f"{table.scheme.value} on {table.model_name} "
          f"(reference {table.reference}, paths {first.paths}, "
          f"seed {table.master_seed})")
    for r in table.rows:
        print(f"  N={r.steps:>7d}  h={r.mesh_width:<12.6g} rmse={r.rmse:<14.8g} "
              f"mse={r.mse:<14.8g} stderr={r.mse_stderr:<12.4g} blown={r.blown_paths}")
    try:
        fit = fit_order(table)
        print(f"  fitted order {fit.slope:.4f} "
              f"(r^2 {fit.r_squared:.5f}, {fit.points_used} points)")
    except ValidationError:
        print("  fitted order unavailable: fewer than 2 usable rows")


def _cmd_convergence(config, model):
    tables = strong_error_tables(
        model, list(config.schemes), list(config.steps), config.paths,
        config.seed, ref_multiplier=config.ref_multiplier,
        workers=config.workers,
        allow_noncommutative=config.allow_noncommutative,
        backend=config.backend,
    )
    for table in tables:
        _print_error_table(table)
    if config.output is not None:
        emit_csv(tables, config.output, include_runtime=not config.no_runtime)
        print(f"wrote {config.output}")


def _cmd_efficiency(config, model):
    report = efficiency_benchmark(
        model, list(config.schemes), config.target_eps, list(config.steps),
        config.paths, config.seed, ref_multiplier=config.ref_multiplier,
        workers=config.workers,
        allow_noncommutative=config.allow_noncommutative,
        backend=config.backend,
    )
    print(f"target rmse < {report.target_eps:g} on {model.name} "
          f"(paths {config.paths}, seed {config.seed})")
    for row in report.rows:
        if row.met_steps is None:
            print(f"  {row.scheme.value}: target not met within tested step counts")
        else:
            print(f"  {row.scheme.value}: N={row.met_steps} "
                  f"(rmse {row.rmse:.6g}, runtime {row.runtime_ms:.1f} ms)")
    if config.output is not None:
        emit_csv(report.tables, config.output, include_runtime=not config.no_runtime)
        print(f"wrote {config.output}")


def _cmd_moments(config, model):
    all_rows = []
    for scheme in config.schemes:
        rows = moment_probe(
            model, scheme, config.moment_p, list(config.steps), config.paths,
            config.seed, workers=config.workers,
            allow_noncommutative=config.allow_noncommutative,
            backend=config.backend,
        )
        all_rows.append((scheme, rows))
        print(f"{scheme.value} on {model.name}: E||Y_N||^{config.moment_p:g} "
              f"(paths {config.paths}, seed {config.seed})")
        for r in rows:
            print(f"  N={r.steps:>7d}  estimate={r.estimate:<14.8g} "
                  f"stderr={r.stderr:<12.4g} blown={r.blown_paths}")
    if config.output is not None:
        lines = [MOMENT_CSV_HEADER]
        for scheme, rows in all_rows:
            for r in rows:
                lines.append(",".join((
                    scheme.value, model.name, str(r.steps),
                    _format_number(r.mesh_width),
                    _format_number(config.moment_p),
                    _format_number(r.estimate),
                    _format_number(r.stderr),
                    str(r.paths), str(r.blown_paths),
                )))
        with open(config.output, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {config.output}")


def _cmd_check(config, model):
    state = np.array2string(model.initial_state, separator=", ")
    print(f"model {model.name}: d={model.state_dim}, m={model.noise_dim}, "
          f"T={model.horizon:g}, initial state {state}")
    print(f"backend: {'compiled' if _backend.HAVE_COMPILED else 'pure'} available, "
          f"default {_backend.default_backend()!r}, "
          f"kernel {'yes' if model.kernel_code is not None else 'no'}")
    verdict = check_commutativity(model, tol=config.tol)
    status = "pass" if verdict.commutative else "FAIL"
    print(f"  commutativity: {status} (max violation {verdict.max_violation:.6g})")
    if not verdict.commutative:
        worst = np.array2string(verdict.worst_point, separator=", ")
        print(f"    worst probe point {worst}; Milstein schemes will refuse "
              "this model without --allow-noncommutative")
    report = probe_assumptions(model, sample_count=config.probes,
                               box_radius=config.box_radius, seed=config.seed)
    print(f"  one-sided Lipschitz estimate: {report.one_sided_lipschitz_estimate:.6g}")
    print(f"  diffusion Lipschitz estimate: {report.diffusion_lipschitz_estimate:.6g}")
    print(f"  Milstein coefficient Lipschitz estimate: "
          f"{report.l_coefficient_lipschitz_estimate:.6g}")
    print(f"  ({report.probe_count} probe pairs in a box of radius "
          f"{report.probe_box:g})")
    if model.diffusion_jacobians is not None:
        rng = np.random.Generator(np.random.PCG64(config.seed))
        worst_gap = 0.0
        for _ in range(8):
            x = rng.uniform(-config.box_radius, config.box_radius,
                            size=model.state_dim)
            for i in range(model.noise_dim):
                analytic = model.diffusion_jacobian(i, x)
                numeric = _fd_jacobian(model.diffusion_columns[i], x,
                                       model.state_dim)
                worst_gap = max(worst_gap, float(np.max(np.abs(analytic - numeric))))
        print(f"  Jacobian vs finite differences: max gap {worst_gap:.3g}")
    else:
        print("  Jacobians: finite-difference fallback in use")


def main(argv=None):
    """Console entry point; returns the process exit code."""
    raw_argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = parse_config(raw_argv)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    model = get_model(config.model)
    handlers = {
        "convergence": _cmd_convergence,
        "efficiency": _cmd_efficiency,
        "moments": _cmd_moments,
        "check": _cmd_check,
    }
    try:
        handlers[config.command](config, model)
    except (Error, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0

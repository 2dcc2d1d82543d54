"""Batch command line driver.

Every subcommand writes its tables as RFC-4180 CSV and its summaries as JSON
into ``--out``, followed by a ``manifest_<command>.json`` run manifest.

Exit codes: 0 success, 1 validation / assertion failure, 2 numerical
non-convergence, 3 I/O or configuration error (including bad usage).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance as AC
from . import homotopy as H
from . import stats_lab as S
from . import thermo as T
from . import tower as TW
from ._kernels import orbit as _orbit
from .cone_dynamics import local_manifold, lyapunov_exponent, potential_field
from .maps import (
    AlmostAnosovMap, InverseFailure, MapSpec, TorusPoint, check_cone_invariance, check_nondegeneracy,
    smoothness_check, sweep_hyperbolicity, validate_spec,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NONCONVERGENCE, EXIT_IO = 0, 1, 2, 3

COMMANDS = ("validate", "certify", "homotopy", "orbit", "lyapunov", "manifold", "returns", "distortion",
            "pressure", "srb", "correlations", "clt", "all")


class ConfigError(Exception):
    pass


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --------------------------------------------------------------------------
# output helpers


class Run:
    """Output directory, manifest bookkeeping and timing for one invocation."""

    def __init__(self, command: str, out: Path, config: dict, seed: int):
        self.command, self.out, self.config, self.seed = command, out, config, seed
        self.files: list[str] = []
        self.stages: dict[str, float] = {}
        self.assertions: dict[str, bool] = {}
        self._t = time.perf_counter()

    def stage(self, name: str):
        now = time.perf_counter()
        self.stages[name] = round(now - self._t, 3)
        self._t = now

    def write_csv(self, name: str, header, rows):
        path = self.out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
        self.files.append(name)

    def write_json(self, name: str, data):
        (self.out / name).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
        self.files.append(name)

    def manifest(self, status: int):
        data = {
            "command": self.command,
            "tool_version": __version__,
            "seed": self.seed,
            "config": self.config,
            "wall_clock_seconds": self.stages,
            "outputs": self.files,
            "assertions": self.assertions,
            "exit_code": status,
        }
        (self.out / f"manifest_{self.command}.json").write_text(json.dumps(_jsonable(data), indent=2) + "\n")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(f, run, args):
    return EXIT_OK


def cmd_certify(f, run, args):
    sweep = sweep_hyperbolicity(f, args.grid, args.exclusion)
    run.stage("sweep")
    nondeg = check_nondegeneracy(f)
    cone = check_cone_invariance(f)
    smooth = smoothness_check(f)
    run.stage("local checks")
    results = [AC.ac1(f), AC.ac2(f), AC.ac11(f)]
    summary = {
        "sweep": {"passed": sweep.passed, "checked": sweep.checked, "failures": sweep.failures,
                  "min_det": sweep.min_det,
                  "first_failure": None if sweep.first_failure is None else list(sweep.first_failure)},
        "nondegeneracy": {"kappa_u": nondeg.kappa_u, "kappa_s": nondeg.kappa_s, "degenerate": nondeg.degenerate,
                          "samples": nondeg.sample_count},
        "cone": {"passed": cone.passed, "half_angle_deg": math.degrees(cone.half_angle),
                 "worst_margin": cone.worst_margin},
        "smoothness": smooth.max_deviation,
        "acceptance": {r.id: AC.as_dict(r) for r in results},
    }
    run.write_json("certify.json", summary)
    run.assertions.update({"sweep": sweep.passed, "cone": cone.passed, "nondegenerate": not nondeg.degenerate})
    run.assertions.update({r.id: r.passed for r in results})
    return EXIT_OK if all(run.assertions.values()) else EXIT_VALIDATION


def cmd_homotopy(f, run, args):
    fr = args.fractions or [0.2, 0.5, 1.0]
    checks = H.homotopy_sweep(f, fr, args.grid)
    run.write_csv("homotopy.csv", ["epsilon", "c0_distance", "all_hyperbolic"],
                  [(c.epsilon, c.c0_distance, c.all_hyperbolic) for c in checks])
    run.assertions["all_hyperbolic"] = all(c.all_hyperbolic for c in checks)
    return EXIT_OK if run.assertions["all_hyperbolic"] else EXIT_VALIDATION


def _start(f, args):
    if args.x0 is not None and args.y0 is not None:
        return TorusPoint(args.x0, args.y0)
    return TorusPoint(*f.rng(1).random(2))


def cmd_orbit(f, run, args):
    p = _start(f, args)
    xs, ys = _orbit(p.x, p.y, f.params, args.length)
    run.write_csv("orbit.csv", ["k", "x", "y"], zip(range(args.length), xs, ys))
    return EXIT_OK


def cmd_lyapunov(f, run, args):
    p = _start(f, args)
    lam = lyapunov_exponent(f, p, args.length, args.burn_in)
    rel = abs(lam - f.log_lambda_u) / f.log_lambda_u
    run.write_json("lyapunov.json", {"x0": p.x, "y0": p.y, "length": args.length, "lambda_u": lam,
                                     "log_lambda_A": f.log_lambda_u, "relative_error": rel})
    return EXIT_OK


def cmd_manifold(f, run, args):
    p = _start(f, args)
    sides = ["unstable", "stable"] if args.side == "both" else [args.side]
    rows = []
    for side in sides:
        poly = local_manifold(f, p, side, args.arc, args.points)
        s = np.linspace(-args.arc, args.arc, len(poly))
        rows += [(x % 1.0, y % 1.0, v) for (x, y), v in zip(poly, s)]
        run.write_csv(f"manifold_{side}.csv", ["x", "y", "value"], [(x % 1.0, y % 1.0, v) for (x, y), v in zip(poly, s)])
    if args.potential_grid:
        xs, ys, phi = potential_field(f, args.potential_grid, args.t)
        run.write_csv("potential.csv", ["x", "y", "value"], zip(xs, ys, phi))
    return EXIT_OK


def cmd_returns(f, run, args):
    rect = TW.Rectangle.default(f, u_half=args.half, s_half=args.half)
    hist = TW.return_time_histogram(f, rect, args.samples, args.n_max, run.seed)
    run.stage("histogram")
    run.write_csv("returns.csv", ["n", "S_n", "cumulative_fraction"], hist.rows())
    fit = TW.fit_tail_rate(hist, f.log_lambda_u)
    summary = {"h_fit": fit.h_fit, "r_squared": fit.r_squared, "gcd": TW.check_arithmetic_condition(hist),
               "timeout_fraction": hist.timeout_fraction, "worst_a": None, "worst_K": None,
               "raw_decay_rate": fit.decay_rate, "n_range": list(fit.n_range), "mean_return": hist.mean_return,
               "min_return": min(hist.counts) if hist.counts else None, "samples": hist.samples}
    run.write_json("returns.json", summary)
    run.assertions.update({"h_fit<log_lambda": fit.r_squared < 0.8 or fit.h_fit < f.log_lambda_u,
                           "gcd==1": summary["gcd"] == 1})
    return EXIT_OK


def cmd_distortion(f, run, args):
    rect = TW.Rectangle.default(f)
    sp = TW.stable_pairs(f, rect, args.pairs, run.seed)
    con = TW.check_contraction(f, rect, sp)
    dis = TW.check_distortion(f, rect, sp, args.compositions)
    inter = TW.check_intermediate_bound(f, rect, sp)
    run.write_csv("distortion.csv", ["n", "sup_log_ratio"], enumerate(dis.suprema.tolist()))
    run.write_json("distortion.json", {"worst_a": con.worst_a, "worst_K": inter.worst_K, "c": dis.c,
                                       "kappa": dis.kappa, "theta_used": dis.theta_used,
                                       "pairs": dis.pairs_used, "skipped_timeouts": dis.skipped_timeouts})
    run.assertions.update({"a<1": con.worst_a < 1, "kappa<1": bool(dis.fit_ok)})
    return EXIT_OK if all(run.assertions.values()) else EXIT_VALIDATION


def cmd_pressure(f, run, args):
    ts = sorted(args.t or [-0.5, 0.0, 0.5, 1.0, 1.5])
    curve = T.pressure_curve(f, ts, args.grid, args.samples_per_cell, run.seed, method=args.method)
    run.write_csv("pressure.csv", ["t", "pressure", "lambda", "residual", "iterations", "grid_n"], curve.rows())
    table = {repr(p.t): T.mass_near_singularity(p.left, f.spec.r0) for p in curve.points}
    run.write_json("pressure.json", {"grid_n": args.grid, "samples_per_cell": args.samples_per_cell,
                                     "dirac_mass_r0": table, "r0": f.spec.r0})
    return EXIT_OK


def cmd_srb(f, run, args):
    res = T.srb_density(f, args.grid, args.samples_per_cell, run.seed, cross_check_len=args.orbit or None)
    n = args.grid
    run.write_csv("srb.csv", ["i", "j", "weight"],
                  ((i, j, res.density[i, j]) for i in range(n) for j in range(n)))
    run.write_json("srb.json", {"grid_n": n, "punctured_lambda": res.punctured_lambda,
                                "full_lambda": res.full_lambda, "full_branch": res.full_branch,
                                "density_source": res.source,
                                "birkhoff_tv": res.birkhoff_tv,
                                "mass_r0": T.mass_near_singularity(res.density, f.spec.r0),
                                "mass_r1": T.mass_near_singularity(res.density, f.spec.r1)})
    return EXIT_OK


def cmd_correlations(f, run, args):
    h1 = S.parse_observable(args.observable)
    h2 = S.parse_observable(args.observable2 or args.observable)
    c = S.correlation_series(f, args.measure, h1, h2, args.n_max, args.orbit_len, run.seed)
    run.write_csv("correlations.csv", ["n", "C_n"], c.rows())
    fit = S.fit_exponential_decay(c, (1, args.n_max))
    run.write_json("correlations.json", {"C": fit.C, "kappa": fit.kappa, "r_squared": fit.r_squared,
                                         "status": fit.status, "noise_floor": c.noise_floor,
                                         "first_noise_crossing": S.first_noise_crossing(c)})
    return EXIT_OK


def cmd_clt(f, run, args):
    r = S.clt_experiment(f, args.measure, S.parse_observable(args.observable), args.n, args.trials, run.seed)
    run.write_json("clt.json", {"sigma": r.sigma, "ks_distance": r.ks_distance, "n": r.n, "trials": r.trials,
                                "coboundary_candidate": r.coboundary_candidate})
    run.write_csv("clt_hist.csv", ["bin_center", "density"], zip(r.hist_centers, r.hist_density))
    return EXIT_OK


def cmd_all(f, run, args):
    results = []
    for key in ("certify", "homotopy", "lyapunov", "returns", "distortion", "pressure", "srb", "correlations",
                "clt"):
        ids = _STAGE_IDS[key]
        if not ids:
            continue
        res = AC.run_acceptance(f, only=set(ids), log=(print if not args.quiet else None))
        results += res
        run.stage(key)
        if any(not r.passed for r in res) and key == "certify":
            break  # the map itself is not certified: later stages are meaningless
    results.sort(key=lambda r: int(r.id.split("-")[1]))
    run.write_csv("acceptance.csv", ["criterion", "status", "seconds"],
                  ((r.id, "pass" if r.passed else "fail", round(r.seconds, 3)) for r in results))
    run.write_json("acceptance.json", {r.id: AC.as_dict(r) for r in results})
    run.assertions.update({r.id: r.passed for r in results})
    for i in range(1, 14):
        run.assertions.setdefault(f"AC-{i}", False)
    return EXIT_OK if all(run.assertions.values()) else EXIT_VALIDATION


_STAGE_IDS = {
    "certify": ["AC-1", "AC-2", "AC-3", "AC-11"],
    "homotopy": ["AC-12"],
    "lyapunov": ["AC-4"],
    "returns": ["AC-6", "AC-7"],
    "distortion": ["AC-8"],
    "pressure": ["AC-5"],
    "srb": ["AC-13"],
    "correlations": ["AC-10"],
    "clt": ["AC-9"],
}

HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file: map fields, optionally under 'map', "
                        "plus a 'params' block with per-command defaults")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default ./out)")
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    common.add_argument("--threads", type=int, default=None, help="numba worker threads")

    p = _Parser(prog="almost-anosov", description="Almost Anosov torus maps: certification and statistics.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    add("validate", "check the map specification")
    c = add("certify", "hyperbolicity sweep, cones, nondegeneracy, smoothness, AC-1/2/11")
    c.add_argument("--grid", type=int, default=512)
    c.add_argument("--exclusion", type=float, default=1e-3)
    c = add("homotopy", "Anosov approximants H_eps")
    c.add_argument("--fractions", type=_floats, default=None, help="eps / r0 values (default 0.2,0.5,1.0)")
    c.add_argument("--grid", type=int, default=256)
    for name, length in (("orbit", 10**4), ("lyapunov", 10**6)):
        c = add(name, f"{name} from a starting point")
        c.add_argument("--x0", type=float)
        c.add_argument("--y0", type=float)
        c.add_argument("--length", type=int, default=length)
        if name == "lyapunov":
            c.add_argument("--burn-in", type=int, default=1000)
    c = add("manifold", "local stable/unstable manifold polylines and the potential field")
    c.add_argument("--x0", type=float)
    c.add_argument("--y0", type=float)
    c.add_argument("--side", choices=["stable", "unstable", "both"], default="both")
    c.add_argument("--arc", type=float, default=0.02)
    c.add_argument("--points", type=int, default=101)
    c.add_argument("--potential-grid", type=int, default=0)
    c.add_argument("--t", type=float, default=1.0)
    c = add("returns", "first-return histogram over the default rectangle")
    c.add_argument("--samples", type=int, default=10**5)
    c.add_argument("--n-max", type=int, default=10**4)
    c.add_argument("--half", type=float, default=0.05)
    c = add("distortion", "(Y3)/(Y4) contraction and distortion on stable pairs")
    c.add_argument("--pairs", type=int, default=1000)
    c.add_argument("--compositions", type=int, default=8)
    c = add("pressure", "pressure curve of the geometric potentials")
    c.add_argument("--t", type=_floats, default=None)
    c.add_argument("--grid", type=int, default=256)
    c.add_argument("--samples-per-cell", type=int, default=64)
    c.add_argument("--method", choices=["arpack", "power"], default="arpack")
    c = add("srb", "SRB density on the Ulam grid")
    c.add_argument("--grid", type=int, default=128)
    c.add_argument("--samples-per-cell", type=int, default=64)
    c.add_argument("--orbit", type=int, default=0, help="Birkhoff cross-check length (0 = skip)")
    c = add("correlations", "correlation series C_n")
    c.add_argument("--observable", default="cos_x")
    c.add_argument("--observable2", default=None)
    c.add_argument("--measure", choices=["srb", "dirac"], default="srb")
    c.add_argument("--n-max", type=int, default=30)
    c.add_argument("--orbit-len", type=int, default=10**6)
    c = add("clt", "central limit theorem experiment")
    c.add_argument("--observable", default="cos_x")
    c.add_argument("--measure", choices=["srb", "dirac"], default="srb")
    c.add_argument("--n", type=int, default=1000)
    c.add_argument("--trials", type=int, default=10**4)
    c = add("all", "full acceptance pipeline AC-1..AC-13")
    c.add_argument("--quiet", action="store_true")
    return p


def load_config(path: Path | None) -> tuple[dict, dict]:
    """(map fields, params block) from a JSON config; empty when no file is given."""
    if path is None:
        return {}, {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    spec = data.get("map", {k: v for k, v in data.items() if k != "params"})
    unknown = set(spec) - set(MapSpec.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown map fields: {sorted(unknown)}")
    return spec, data.get("params", {})


def _glue_negative_values(argv: list[str]) -> list[str]:
    """Rewrite ``--t -0.5,0`` as ``--t=-0.5,0`` so argparse does not read it as a flag."""
    out: list[str] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "=" not in tok and i + 1 < len(argv) and _NEGATIVE.match(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


_NEGATIVE = re.compile(r"^-\d|^-\.\d")


def dispatch(argv=None) -> int:
    parser = build_parser()
    argv = _glue_negative_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        spec_fields, params = load_config(args.config)
        for k, v in params.items():
            dest = k.replace("-", "_")
            if hasattr(args, dest) and dest not in ("config", "out", "command"):
                if getattr(args, dest) == parser_default(parser, args.command, dest):
                    setattr(args, dest, v)
        if args.seed is not None:
            spec_fields["seed"] = args.seed
        try:
            spec = MapSpec.from_dict(spec_fields)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad map specification: {exc}") from exc
        args.out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.threads:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    run = Run(args.command, args.out, {"map": spec.to_dict(), "params": _params_echo(args)}, spec.seed)
    errors = validate_spec(spec)
    if errors:
        run.write_json("validate.json", {"valid": False, "errors": errors})
        for e in errors:
            print(f"invalid: {e}", file=sys.stderr)
        run.assertions["valid_spec"] = False
        run.manifest(EXIT_VALIDATION)
        return EXIT_VALIDATION
    run.assertions["valid_spec"] = True
    if args.command == "validate":
        run.write_json("validate.json", {"valid": True, "errors": []})
    f = AlmostAnosovMap(spec)
    try:
        status = HANDLERS[args.command](f, run, args)
    except (T.NonConvergence, InverseFailure) as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        status = EXIT_NONCONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_IO
    run.stage("done")
    run.manifest(status)
    return status


def parser_default(parser, command, dest):
    for action in parser._subparsers._group_actions:
        sub = action.choices.get(command)
        if sub is not None:
            return sub.get_default(dest)
    return None


def _params_echo(args) -> dict:
    skip = {"config", "out", "command", "threads"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

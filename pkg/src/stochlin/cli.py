"""Command line runner: ``stochlin <subcommand> --config FILE --out DIR [--seed N]``.

Exit codes: 0 success, 1 verification failed, 2 non-hyperbolic fixed point,
3 degenerate importance weights, 64 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import datetime
import os
import sys
import time

import jsonschema
import numpy as np
import yaml

from . import __version__, io, kernels, presets
from .errors import ConfigError, DegenerateWeights, StochLinError
from .girsanov import CorrectionField, equivalence_experiment, novikov_estimate
from .linearization import Classification, find_fixed_point, linearize, quadratic_ratios
from .regularity import (
    brownian_sobolev_study,
    make_mollifier,
    occupation_refinement,
    regularization_convergence_study,
)
from .sde import TimeGrid
from .slowfast import (
    check_uniform_stability,
    concentration_statistics,
    nondegeneracy_check,
    simulate_slowfast,
    stability_dt,
    trace_slow_manifold,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_NON_HYPERBOLIC = 2
EXIT_DEGENERATE = 3
EXIT_CONFIG = 64

# --- schema -----------------------------------------------------------------

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_vec = {"type": "array", "items": _num, "minItems": 1}
_str_list = {"type": "array", "items": {"type": "string"}, "minItems": 1}
_str_matrix = {"type": "array", "items": _str_list, "minItems": 1}

GRID = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"t0": _num, "t_end": _pos, "dt": _pos, "n_steps": _int_pos},
    "required": ["t_end"],
    "oneOf": [{"required": ["dt"]}, {"required": ["n_steps"]}],
}

PLAIN_SYSTEM = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"type": "string", "enum": sorted(presets.PLAIN)},
        "params": {"type": "object"},
        "drift": _str_list,
        "diffusion": _str_matrix,
        "name": {"type": "string"},
    },
    "oneOf": [{"required": ["preset"]}, {"required": ["drift", "diffusion"]}],
}

SLOWFAST_SYSTEM = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"type": "string", "enum": sorted(presets.SLOWFAST)},
        "fast": _str_list,
        "slow": _str_list,
        "F": _str_matrix,
        "G": _str_matrix,
        "name": {"type": "string"},
    },
    "oneOf": [{"required": ["preset"]}, {"required": ["fast", "slow", "F", "G"]}],
}

_common = {"seed": {"type": "integer", "minimum": 0}, "workers": _int_pos, "description": {"type": "string"}}


def _schema(props, required):
    return {"type": "object", "additionalProperties": False, "properties": {**_common, **props},
            "required": required}


SCHEMAS = {
    "linearize": _schema({
        "system": PLAIN_SYSTEM,
        "initial_guess": _vec,
        "tol": _pos,
        "max_iter": _int_pos,
        "hyperbolicity_tol": _pos,
        "radii": _vec,
    }, ["system", "initial_guess"]),
    "girsanov-verify": _schema({
        "system": PLAIN_SYSTEM,
        "initial_guess": _vec,
        "eps": _pos,
        "grid": GRID,
        "M": _int_pos,
        "z0": _vec,
        "observables": _str_list,
        "mode": {"enum": ["invertible", "range_project"]},
        "u_scale": _num,
        "radius_R": _pos,
        "confidence_k": _pos,
        "calibrate": {"type": "boolean"},
        "calibration_M": _int_pos,
        "novikov": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"x_start": _vec, "radius_R": _pos, "M": _int_pos, "grid": GRID},
            "required": ["x_start", "radius_R"],
        },
    }, ["system", "initial_guess", "eps", "grid", "M", "z0", "observables"]),
    "slowfast": _schema({
        "system": SLOWFAST_SYSTEM,
        "eps": _pos,
        "sigma": {"type": "number", "minimum": 0},
        "rho": {"type": "number", "minimum": 0},
        "x0": _vec,
        "y0": _vec,
        "grid": GRID,
        "M": _int_pos,
        "manifold": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"y_min": _num, "y_max": _num, "n_points": {"type": "integer", "minimum": 2},
                           "x_init": _vec, "fold_tol": _pos},
            "required": ["y_min", "y_max", "n_points", "x_init"],
        },
        "h_values": _vec,
        "burn_in": {"type": "number", "minimum": 0},
        "stability_margin": {"type": "number", "minimum": 0},
        "stability_c": _pos,
        "min_r_squared": _num,
    }, ["system", "eps", "sigma", "x0", "y0", "grid", "M", "manifold", "h_values", "burn_in"]),
    "regularity": _schema({
        "experiment": {"enum": ["mollifier", "sobolev", "occupation", "convergence"]},
        "system": PLAIN_SYSTEM,
        "eps": _pos,
        # mollifier
        "dim": _int_pos,
        "scales": _vec,
        "quadrature_res": {"type": "integer", "minimum": 32},
        # sobolev
        "s_values": _vec,
        "p": _pos,
        "resolutions": {"type": "array", "items": _int_pos, "minItems": 2},
        "n_paths": _int_pos,
        "T": _pos,
        # occupation
        "t": _pos,
        "start_box": {"type": "array", "items": _vec, "minItems": 2, "maxItems": 2},
        "start_grid_res": _int_pos,
        "partition": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"lo": _vec, "hi": _vec, "counts": {"type": "array", "items": _int_pos}},
            "required": ["lo", "hi", "counts"],
        },
        "M_per_start": _int_pos,
        "n_steps": _int_pos,
        # convergence
        "x0": _vec,
        "grid": GRID,
        "M": _int_pos,
        "box": {"type": "array", "items": _vec, "minItems": 2, "maxItems": 2},
        "observables": _str_list,
        "min_weak_slope": _num,
    }, ["experiment"]),
}


def load_config(path, command):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return cfg


def _grid(g):
    t0 = float(g.get("t0", 0.0))
    if "n_steps" in g:
        return TimeGrid(t0, float(g["t_end"]), int(g["n_steps"]))
    return TimeGrid.from_dt(float(g["t_end"]), float(g["dt"]), t0)


def _plain(sys_cfg):
    if "preset" in sys_cfg:
        return presets.plain_system(sys_cfg["preset"], **sys_cfg.get("params", {})), sys_cfg["preset"]
    name = sys_cfg.get("name", "custom")
    return presets.system_from_expressions(sys_cfg["drift"], sys_cfg["diffusion"], name), name


def _slowfast(cfg):
    s = cfg["system"]
    eps, sigma, rho = float(cfg["eps"]), float(cfg["sigma"]), float(cfg.get("rho", 0.0))
    if "preset" in s:
        return presets.slowfast_system(s["preset"], eps=eps, sigma=sigma, rho=rho)
    return presets.slowfast_from_expressions(s["fast"], s["slow"], s["F"], s["G"], eps, sigma, rho,
                                             s.get("name", "custom"))


# --- runners ------------------------------------------------------------------
# Each returns (exit_code, report_payload, {csv_name: (header, rows)}).

def run_linearize(cfg, seed, workers):
    (f, sigma), sid = _plain(cfg["system"])
    fp = find_fixed_point(f, cfg["initial_guess"], tol=cfg.get("tol", 1e-12), max_iter=cfg.get("max_iter", 50),
                          hyperbolicity_tol=cfg.get("hyperbolicity_tol", 1e-8))
    lin = linearize(f, sigma, fp)
    radii = cfg.get("radii", [1e-1, 1e-2, 1e-3])
    ratios = quadratic_ratios(lin, radii, seed=seed)
    report = {
        "command": "linearize",
        "system_id": sid,
        "fixed_point": fp.to_dict(),
        "remainder_at_origin": float(np.linalg.norm(lin.remainder(lin.origin))),
        "quadratic_ratios": {"radii": radii, "ratios": ratios},
    }
    code = EXIT_NON_HYPERBOLIC if fp.classification == Classification.NON_HYPERBOLIC else EXIT_OK
    ev = np.asarray(fp.eigenvalues)
    csvs = {"eigenvalues.csv": (["re", "im"], np.column_stack([np.real(ev), np.imag(ev)]))}
    return code, report, csvs


def run_girsanov_verify(cfg, seed, workers):
    (f, sigma), sid = _plain(cfg["system"])
    fp = find_fixed_point(f, cfg["initial_guess"])
    lin = linearize(f, sigma, fp)
    grid = _grid(cfg["grid"])
    eps = float(cfg["eps"])
    exp = equivalence_experiment(
        f, sigma, lin, eps, cfg["z0"], grid, int(cfg["M"]), seed,
        observable_names=cfg["observables"], mode=cfg.get("mode", "invertible"),
        u_scale=float(cfg.get("u_scale", 1.0)), radius=cfg.get("radius_R"),
        confidence_k=float(cfg.get("confidence_k", 3.0)), calibrate=bool(cfg.get("calibrate", True)),
        calibration_M=cfg.get("calibration_M"), workers=workers,
    )
    report = {"command": "girsanov-verify", "system_id": sid, "seed": seed, "grid": grid.to_dict(), "eps": eps,
              "origin": fp.location, **exp.to_dict()}
    if "novikov" in cfg:
        nv = cfg["novikov"]
        corr = CorrectionField(lin, sigma, eps, cfg.get("mode", "invertible"))
        ngrid = _grid(nv["grid"]) if "grid" in nv else grid
        rep = novikov_estimate(f, sigma, corr, eps, nv["x_start"], ngrid, int(nv.get("M", cfg["M"])), seed,
                               float(nv["radius_R"]), workers=workers)
        report["novikov"] = rep.to_dict()
    hist = exp.report.histogram_rows()
    mart = [[m.node, m.mean, m.std_error] for m in exp.martingale]
    csvs = {
        "weights_histogram.csv": (["lo", "hi", "count"], hist),
        "martingale.csv": (["node", "mean_D", "se"], mart),
    }
    return (EXIT_OK if exp.report.passed else EXIT_FAIL), report, csvs


def run_slowfast(cfg, seed, workers):
    sys_ = _slowfast(cfg)
    mcfg = cfg["manifold"]
    y_grid = np.linspace(mcfg["y_min"], mcfg["y_max"], int(mcfg["n_points"]))
    manifold = trace_slow_manifold(sys_, y_grid, mcfg["x_init"], fold_tol=mcfg.get("fold_tol", 1e-3))
    margin = float(cfg.get("stability_margin", 0.0))
    stab = check_uniform_stability(manifold, margin)
    grid = _grid(cfg["grid"])
    c = float(cfg.get("stability_c", 0.1))
    ens = simulate_slowfast(sys_, cfg["x0"], cfg["y0"], grid, int(cfg["M"]), seed, manifold=manifold,
                            stability_c=c, workers=workers)
    conc = concentration_statistics(ens, manifold, cfg["h_values"], float(cfg["burn_in"]), require_fit=False)
    Fm = np.stack([sys_.F(manifold.x_star[i][None, :], manifold.y_grid[i][None, :])[0]
                   for i in range(manifold.size)])
    nondeg = nondegeneracy_check(manifold, Fm)
    min_r2 = float(cfg.get("min_r_squared", 0.9))
    fit_ok = conc.r_squared is None or conc.r_squared >= min_r2
    ok = bool(stab) and conc.monotone and fit_ok
    report = {
        "command": "slowfast",
        "system_id": sys_.name,
        "params": sys_.params(),
        "seed": seed,
        "grid": grid.to_dict(),
        "stability_dt": stability_dt(sys_, cfg["x0"], cfg["y0"], manifold, c),
        "uniform_stability": stab.to_dict(),
        "bifurcations": manifold.bifurcations,
        "concentration": conc.to_dict(),
        "nondegeneracy": [d.to_dict() for d in nondeg],
        "pass": ok,
    }
    csvs = {
        "manifold.csv": ([f"y_{j + 1}" for j in range(sys_.m)] + [f"x_star_{i + 1}" for i in range(sys_.n)]
                         + ["max_real_part"], manifold.rows()),
        "exit_fractions.csv": (["h", "exit_fraction", "ci_low", "ci_high"], conc.rows()),
    }
    return (EXIT_OK if ok else EXIT_FAIL), report, csvs


REG_OBSERVABLES = {
    "mean": lambda x: x[:, 0],
    "second_moment": lambda x: np.sum(x * x, axis=1),
}


def run_regularity(cfg, seed, workers):
    kind = cfg["experiment"]
    report = {"command": "regularity", "experiment": kind, "seed": seed}
    csvs = {}
    if kind == "mollifier":
        dim = int(cfg.get("dim", 1))
        rows = []
        for sc in cfg.get("scales", [0.1, 0.01]):
            m = make_mollifier(dim, sc, int(cfg.get("quadrature_res", 128)))
            mass = float(np.sum(m.weights))
            rows.append([sc, mass, m.norm_const])
        report["mass"] = [{"scale": r[0], "mass": r[1], "norm_const": r[2]} for r in rows]
        ok = all(abs(r[1] - 1.0) <= 1e-6 for r in rows)
        csvs["mollifier.csv"] = (["scale", "mass", "norm_const"], rows)
        report["pass"] = ok
        return (EXIT_OK if ok else EXIT_FAIL), report, csvs

    if kind == "sobolev":
        reps = brownian_sobolev_study(cfg.get("s_values", [0.4, 0.6]), float(cfg.get("p", 4.0)),
                                      cfg.get("resolutions", [256, 512, 1024, 2048]), int(cfg.get("n_paths", 200)),
                                      float(cfg.get("T", 1.0)), seed)
        # s below 1/2 should stay bounded, above 1/2 should grow
        ok = all(r.bounded if r.s < 0.5 else r.growing for r in reps)
        report["studies"] = [r.to_dict() for r in reps]
        report["pass"] = ok
        rows = [[r.s, res, nv, pv] for r in reps for res, nv, pv in
                zip(r.resolutions, r.norm_estimates, r.power_estimates)]
        csvs["sobolev.csv"] = (["s", "resolution", "mean_norm", "mean_power"], rows)
        return (EXIT_OK if ok else EXIT_FAIL), report, csvs

    if kind == "occupation":
        (f, sigma), sid = _plain(cfg.get("system", {"preset": "brownian"}))
        part = cfg["partition"]
        ref = occupation_refinement(f, sigma, float(cfg.get("eps", 1.0)), float(cfg["t"]), cfg["start_box"],
                                    int(cfg.get("start_grid_res", 4)), (part["lo"], part["hi"], part["counts"]),
                                    int(cfg["M_per_start"]), seed, int(cfg.get("n_steps", 100)), workers=workers)
        report.update({"system_id": sid, "start_box": cfg["start_box"], **ref.to_dict()})
        hdr = [f"lo_{i + 1}" for i in range(len(part["lo"]))] + ["hits", "density", "ci_low", "ci_high"]
        csvs["occupation_coarse.csv"] = (hdr, ref.coarse.rows())
        csvs["occupation_fine.csv"] = (hdr, ref.fine.rows())
        # a failing occupation condition is a valid outcome, not an error
        return EXIT_OK, report, csvs

    if kind == "convergence":
        (f, sigma), sid = _plain(cfg.get("system", {"preset": "w2inf"}))
        grid = _grid(cfg["grid"])
        names = cfg.get("observables", ["mean"])
        unknown = [n for n in names if n not in REG_OBSERVABLES]
        if unknown:
            raise ConfigError(f"unknown observables {unknown}; known: {sorted(REG_OBSERVABLES)}")
        rep = regularization_convergence_study((f, sigma), cfg["x0"], cfg["scales"],
                                               {n: REG_OBSERVABLES[n] for n in names}, grid, int(cfg["M"]), seed,
                                               cfg["box"], eps=float(cfg.get("eps", 1.0)), workers=workers)
        min_slope = float(cfg.get("min_weak_slope", 0.8))
        slopes_ok = all(v >= min_slope for v in rep.weak_slopes.values())
        ok = rep.converged and slopes_ok
        report.update({"system_id": sid, "grid": grid.to_dict(), **rep.to_dict(), "pass": ok})
        csvs["convergence.csv"] = (["scale", "strong"] + [f"weak_{n}" for n in sorted(rep.weak)], rep.rows())
        return (EXIT_OK if ok else EXIT_FAIL), report, csvs

    raise ConfigError(f"unknown experiment {kind!r}")


RUNNERS = {
    "linearize": run_linearize,
    "girsanov-verify": run_girsanov_verify,
    "slowfast": run_slowfast,
    "regularity": run_regularity,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="stochlin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")
        p.add_argument("--workers", type=int, default=None, help="threads for path chunks")
    return parser


def execute(command, config_path, out_dir, seed=None, workers=None):
    """Run one subcommand and write its outputs; returns the exit code."""
    cfg = load_config(config_path, command)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer")
    workers = int(cfg.get("workers", 1) if workers is None else workers)
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    code = EXIT_OK
    try:
        code, report, csvs = RUNNERS[command](copy.deepcopy(cfg), seed, workers)
    except DegenerateWeights as exc:
        code, report, csvs = EXIT_DEGENERATE, {"command": command, "error": "DegenerateWeights",
                                              "ess": exc.ess, "M": exc.m}, {}
    report["exit_code"] = code
    files = []
    path = os.path.join(out_dir, "report.json")
    io.write_json(path, report)
    files.append(path)
    for name, (header, rows) in csvs.items():
        p = os.path.join(out_dir, name)
        io.write_csv(p, header, rows)
        files.append(p)
    grid = _grid(cfg["grid"]).to_dict() if "grid" in cfg else None
    io.write_manifest(out_dir, seed, grid, report.get("system_id", ""), files)
    meta = {
        "started": datetime.datetime.fromtimestamp(started, datetime.timezone.utc).isoformat(),
        "elapsed_s": time.time() - started,
        "version": __version__,
        "backend": kernels.BACKEND,
        "workers": workers,
        "config": os.path.abspath(config_path),
    }
    io.write_json(os.path.join(out_dir, "meta.json"), meta)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        code = execute(args.command, args.config, args.out, args.seed, args.workers)
    except ConfigError as exc:
        print(f"stochlin: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StochLinError as exc:
        print(f"stochlin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    with open(os.path.join(args.out, "report.json"), encoding="utf-8") as fh:
        status = "ok" if code == EXIT_OK else f"exit {code}"
        print(f"{args.command}: {status} ({os.path.abspath(fh.name)})")
    return code


if __name__ == "__main__":
    sys.exit(main())

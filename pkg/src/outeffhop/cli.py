"""Command line for the retrieval experiments and bound calculators (``oeh``).

Sweeps write CSV (``#`` metadata header, then data); calculators print JSON.
Exit codes: 0 success, 1 runtime error, 2 domain or configuration error.
"""

import argparse
import json
import math
import sys
from importlib import resources

import jsonschema

from . import theory
from .errors import DomainError, NumericalError
from .experiments import (
    ExperimentConfig,
    config_from_table,
    generate_sphere_patterns,
    run_experiment,
    with_overrides,
)
from .patternio import save_patterns, write_patterns_csv

EXPERIMENTS = {
    "capacity": "capacity",
    "noise": "noise",
    "error-compare": "error-compare",
    "convergence": "convergence",
    "outlier-trace": "outlier-trace",
}

# flag name -> type, per calculator
CALC_FLAGS = {
    "calc-capacity-bound": {"d": int, "m": float, "R": float, "beta": float, "delta": float, "p": float},
    "calc-separation": {"M": int, "m": float, "R": float, "beta": float, "delta": float},
    "calc-error-bound": {"variant": str, "m": float, "M": int, "delta_mu_tilde": float, "beta": float,
                         "delta": float},
    "calc-gen-bound": {"B_Y": float, "B_K": float, "B_K21": float, "B_V": float, "B_V21": float,
                       "beta": float, "d": int, "M": int, "N": int, "delta_prob": float},
    "calc-lambert-w": {"y": float},
}


class ConfigError(Exception):
    pass


def load_schema():
    text = resources.files("outeffhop").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def validate(data, section="experiment"):
    schema = load_schema()
    sub = {"$ref": f"#/$defs/{section}", "$defs": schema["$defs"]}
    try:
        jsonschema.validate(data, sub)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="oeh", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True,
                       help="JSON config, or a result CSV whose embedded config is re-run")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="CSV output path (default: config 'output' or stdout)")
        p.add_argument("--jobs", type=int, help="worker processes for independent trials")
        p.add_argument("--figure", action="store_true", help="also write a PNG next to the CSV")
    p = sub.add_parser("gen-patterns", help="write random sphere patterns (CSV, or binary for .bin/.oehp)")
    p.add_argument("--config")
    p.add_argument("--M", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    for name, spec in CALC_FLAGS.items():
        p = sub.add_parser(name, help=f"evaluate {name[5:].replace('-', ' ')}")
        p.add_argument("--config", help="JSON object with the parameters")
        p.add_argument("--out", help="also write the JSON result here")
        for flag, typ in spec.items():
            p.add_argument(f"--{flag}", type=typ)
    return parser


def _version():
    from . import __version__

    return __version__


def _params(args, section):
    data = _read_json(args.config) if args.config else {}
    for flag in CALC_FLAGS.get(section, {"M": 0, "d": 0, "radius": 0, "seed": 0}):
        value = getattr(args, flag, None)
        if value is not None:
            data[flag] = value
    if section == "gen-patterns" and getattr(args, "out", None):
        data["output"] = args.out
    validate(data, section)
    return data


def _experiment_config(args):
    if args.config.endswith(".csv"):
        try:
            cfg = config_from_table(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: cannot read embedded config ({exc})") from exc
    else:
        data = _read_json(args.config)
        validate(data)
        if data.get("experiment") != EXPERIMENTS[args.command]:
            raise ConfigError(f"config is for {data.get('experiment')!r}, not {args.command!r}")
        cfg = ExperimentConfig.from_dict(data)
    if cfg.experiment != EXPERIMENTS[args.command]:
        raise ConfigError(f"embedded config is for {cfg.experiment!r}, not {args.command!r}")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ConfigError("--seed must be a 64-bit unsigned value")
    return with_overrides(cfg, seed=args.seed, jobs=args.jobs)


def run_sweep(args):
    cfg = _experiment_config(args)
    out = args.out or cfg.output
    if args.figure and not out:
        raise ConfigError("--figure needs an output path (--out or config 'output')")
    tables = run_experiment(cfg)
    paths = [out]
    if out and len(tables) > 1:
        stem = out[:-4] if out.endswith(".csv") else out
        paths += [f"{stem}_loss.csv"]
    for table, path in zip(tables, paths):
        _emit(table.to_csv(), path)
        if args.figure:
            from .plotting import figure_path, render

            render(table, figure_path(path))
    return 0


def run_gen_patterns(args):
    data = _params(args, "gen-patterns")
    radius = data.get("radius", 1.0)
    seed = data.get("seed", 0)
    xi = generate_sphere_patterns(data["M"], data["d"], radius, seed)
    out = data.get("output")
    summary = {"M": data["M"], "d": data["d"], "radius": radius, "seed": seed, "output": out}
    if out:
        save_patterns(out, xi)
        sys.stdout.write(_dump(summary))
    else:
        write_patterns_csv(sys.stdout, xi)
    return 0


def run_calc(args):
    data = _params(args, args.command)
    name = args.command
    if name == "calc-capacity-bound":
        params = theory.CapacityParams(**data)
        a, b = theory.capacity_coefficients(params)
        c = theory.solve_abc(a, b)
        result = {"a": a, "b": b, "C": c,
                  "capacity_lower_bound": theory.capacity_from_coefficients(a, b, params.d, params.p)}
    elif name == "calc-separation":
        result = {"threshold": theory.well_separation_threshold(**data)}
    elif name == "calc-error-bound":
        result = {"bound": theory.retrieval_error_upper_bound(**data)}
    elif name == "calc-gen-bound":
        result = {"bound": theory.generalization_bound(theory.GenBoundParams(**data)),
                  "note": "hidden constants set to 1; bound shape only"}
    else:
        result = {"w": theory.lambert_w0(data["y"])}
    for key, value in result.items():
        if isinstance(value, float) and not math.isfinite(value):
            result[key] = repr(value)
    text = _dump({"command": name, "inputs": data, "result": result})
    sys.stdout.write(text)
    if args.out:
        _emit(text, args.out)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in EXPERIMENTS:
            return run_sweep(args)
        if args.command == "gen-patterns":
            return run_gen_patterns(args)
        return run_calc(args)
    except DomainError as exc:
        sys.stdout.write(_dump(exc.to_dict()))
        return 2
    except (ConfigError, jsonschema.ValidationError) as exc:
        print(f"oeh: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"oeh: numerical failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # argument-level violations raised by the library
        print(f"oeh: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"oeh: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

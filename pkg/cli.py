#!/usr/bin/env python3
"""Command line: optimize, feasibility, simulate, sweep and plot.

    python cli.py feasibility --airframe airframes/tilted_unit.toml
    python cli.py simulate --scenario transition_ablation --seed 3 --out runs/abl --check
    python cli.py sweep --scenario circle_unit --seeds 10 --grid noise.position_sigma=0.0,0.01
"""
import argparse
import copy
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import pandas as pd
import yaml

from config_opt import PROBLEM_SCHEMA, OptProblem, optimize, optimized_airframe
from feasibility import feasibility_report
from model import AIRFRAME_SCHEMA, AirframeDescription, combined_model, default_mounting, reference_description
from motion import Tolerances
from plots import plot_csv
from scenarios import get_scenario
from sim import FLOAT_FORMAT, SCENARIO_SCHEMA, run_scenario, validate_scenario
from workbench import (
    DEFAULTS,
    SCHEMA_VERSION,
    CheckFailed,
    ConfigError,
    TiltdockError,
    check_schema,
    load_config,
    log,
    read_structured,
    write_structured,
)

# acceptance floors for --check
ASSEMBLED_F_MIN = 6.75
ASSEMBLED_TAU_MIN = 2.52
YAW_RATIO_TARGET = 4.0


def _schema_from_defaults(defaults):
    return {key: _schema_from_defaults(value) if isinstance(value, dict) else None
            for key, value in defaults.items()}


CONFIG_SCHEMA = _schema_from_defaults(DEFAULTS)
TARGET_SCHEMAS = {
    'optimize': PROBLEM_SCHEMA,
    'feasibility': AIRFRAME_SCHEMA,
    'simulate': dict(SCENARIO_SCHEMA, config=CONFIG_SCHEMA),
    'sweep': dict(SCENARIO_SCHEMA, config=CONFIG_SCHEMA),
    'plot': {},
}


@dataclass
class CommandSpec:
    subcommand: str
    inputs: dict = field(default_factory=dict)
    output_dir: str = '.'
    seed: int = 0
    overrides: dict = field(default_factory=dict)
    scenario: str = None
    check: bool = False
    plots: bool = False
    workers: int = 1
    document: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    seeds: int = 1
    min_success: float = 1.0


# --- overrides -----------------------------------------------------------------

def parse_overrides(pairs, option='--set'):
    """'a.b=1' pairs -> {'a.b': 1}; values are parsed as YAML scalars/lists."""
    overrides = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition('=')
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{option} expects key=value, got '{pair}'")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"{option} {key}: cannot parse '{raw}'") from e
        if key in overrides and overrides[key] != value:
            raise ConfigError(f"conflicting overrides for '{key}': {overrides[key]!r} vs {value!r}")
        overrides[key] = value
    return overrides


def validate_key(key, schema):
    """Walk a dotted key through `schema`; numeric segments index lists."""
    node = schema
    walked = []
    for part in key.split('.'):
        if part.isdigit() and walked:
            continue
        walked.append(part)
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown key '{'.'.join(walked)}'")
        node = node[part]


def apply_override(document, key, value):
    parts = key.split('.')
    node = document
    for i, part in enumerate(parts[:-1]):
        nxt = parts[i + 1]
        if isinstance(node, list):
            idx = int(part)
            if idx >= len(node):
                raise ConfigError(f"index {idx} out of range in '{key}'")
            node = node[idx]
            continue
        if part not in node or node[part] is None:
            node[part] = [] if nxt.isdigit() else {}
        node = node[part]
    last = parts[-1]
    if isinstance(node, list):
        idx = int(last)
        if idx >= len(node):
            raise ConfigError(f"index {idx} out of range in '{key}'")
        node[idx] = value
    else:
        node[last] = value
    return document


def apply_overrides(document, overrides, schema):
    document = copy.deepcopy(document)
    for key, value in overrides.items():
        validate_key(key, schema)
        apply_override(document, key, value)
    return document


# --- parsing -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they share the one-line diagnostic."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog='tiltdock', description='Werkbank für kippbare Rotor-Einheiten')
    sub = parser.add_subparsers(dest='subcommand', required=True)

    def common(p):
        p.add_argument('--out', '-o', default='.', help='Ausgabeverzeichnis (default: .)')
        p.add_argument('--seed', type=int, default=None, help='Zufalls-Seed (default: 0)')
        p.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                       help='Wert im Eingabedokument überschreiben (punktierter Schlüssel)')
        p.add_argument('--check', action='store_true', help='Exit 4, wenn eine Abnahmeschwelle verfehlt wird')

    p = sub.add_parser('optimize', help='Rotorwinkel optimieren')
    p.add_argument('--problem', help='Optimierungsproblem (JSON/TOML/YAML)')
    common(p)

    p = sub.add_parser('feasibility', help='Garantierte Kraft/Moment-Reserven')
    p.add_argument('--airframe', help='Airframe-Beschreibung (default: Referenz-Einheit)')
    common(p)

    for name, help_text in (('simulate', 'Szenario simulieren'), ('sweep', 'Szenario über Seeds/Werte variieren')):
        p = sub.add_parser(name, help=help_text)
        source = p.add_mutually_exclusive_group(required=True)
        source.add_argument('--scenario', help='registriertes Szenario')
        source.add_argument('--spec', help='Szenario-Datei (JSON/TOML/YAML)')
        common(p)
        if name == 'simulate':
            p.add_argument('--plots', action='store_true', help='SVG-Plots schreiben')
        else:
            p.add_argument('--seeds', type=int, default=10, help='Anzahl Seeds ab --seed (default: 10)')
            p.add_argument('--grid', action='append', default=[], metavar='KEY=V1,V2',
                           help='Werteliste für einen Schlüssel')
            p.add_argument('--workers', type=int, default=1, help='parallele Prozesse (default: 1)')
            p.add_argument('--min-success', type=float, default=1.0,
                           help='Mindestanteil erfolgreicher Läufe für --check (default: 1.0)')

    p = sub.add_parser('plot', help='SVG-Plots aus einer Telemetrie-CSV')
    p.add_argument('csv', help='telemetry.csv eines simulate-Laufs')
    p.add_argument('--out', '-o', default='.', help='Ausgabeverzeichnis (default: .)')
    p.add_argument('--name', help='Dateipräfix (default: CSV-Name)')
    return parser


def _parse_grid(pairs, schema):
    grid = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition('=')
        if not sep or not raw:
            raise ConfigError(f"--grid expects key=v1,v2, got '{pair}'")
        validate_key(key, schema)
        if key in grid:
            raise ConfigError(f"--grid given twice for '{key}'")
        grid[key] = [yaml.safe_load(v) for v in raw.split(',')]
    return grid


def _base_document(args):
    if args.subcommand == 'optimize':
        document = OptProblem.from_config(load_config()).to_dict()
        if args.problem:
            loaded = read_structured(args.problem)
            check_schema(loaded, PROBLEM_SCHEMA)
            document.update(loaded)
        return document, {'problem': args.problem}
    if args.subcommand == 'feasibility':
        if args.airframe:
            return read_structured(args.airframe), {'airframe': args.airframe}
        return reference_description().to_dict(), {'airframe': None}
    if args.spec:
        return read_structured(args.spec), {'spec': args.spec}
    return {'scenario': args.scenario}, {'spec': None}


def _check_output_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {path}: {e}") from e
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")


def parse_and_validate(argv=None):
    """argv -> validated CommandSpec with the resolved input document."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.subcommand == 'plot':
        if not os.path.exists(args.csv):
            raise ConfigError(f"file not found: {args.csv}")
        _check_output_dir(args.out)
        return CommandSpec('plot', inputs={'csv': args.csv, 'name': args.name}, output_dir=args.out)

    schema = TARGET_SCHEMAS[args.subcommand]
    overrides = parse_overrides(args.set)
    document, inputs = _base_document(args)
    document = apply_overrides(document, overrides, schema)

    try:
        seed = args.seed if args.seed is not None else int(document.get('seed', 0) or 0)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid seed {document.get('seed')!r}") from e
    document['seed'] = seed
    spec = CommandSpec(args.subcommand, inputs=inputs, output_dir=args.out, seed=seed,
                       overrides=overrides, check=args.check, document=document)

    if args.subcommand == 'optimize':
        OptProblem.from_dict(document)
    elif args.subcommand == 'feasibility':
        document.pop('seed')
        AirframeDescription.from_dict(document, inputs['airframe'] or 'airframe')
    else:
        validate_scenario(document)
        spec.scenario = document['scenario']
        get_scenario(spec.scenario)
        if args.subcommand == 'simulate':
            spec.plots = args.plots
        else:
            if args.seeds < 1:
                raise ConfigError(f"--seeds must be at least 1, got {args.seeds}")
            if args.workers < 1:
                raise ConfigError(f"--workers must be at least 1, got {args.workers}")
            if not 0.0 <= args.min_success <= 1.0:
                raise ConfigError(f"--min-success must be in [0, 1], got {args.min_success}")
            spec.grid = _parse_grid(args.grid, schema)
            for key, values in spec.grid.items():
                for value in values:
                    validate_scenario(apply_overrides(document, {key: value}, schema))
            spec.seeds = args.seeds
            spec.workers = args.workers
            spec.min_success = args.min_success
            conflict = set(spec.grid) & set(overrides)
            if conflict:
                raise ConfigError(f"key(s) {sorted(conflict)} given in both --set and --grid")

    _check_output_dir(spec.output_dir)
    log(f"{spec.subcommand}: {json.dumps(document, sort_keys=True, default=str)}", 'DEBUG')
    return spec


# --- execution -----------------------------------------------------------------

def _emit(data):
    sys.stdout.write(json.dumps(data, indent=2) + '\n')


def _execute_optimize(spec):
    prob = OptProblem.from_dict(spec.document)
    result = optimize(prob)
    result_path = write_structured(os.path.join(spec.output_dir, 'opt_result.json'), result.to_dict())
    airframe_path = os.path.join(spec.output_dir, 'airframe.toml')
    write_structured(airframe_path, optimized_airframe(result, prob).to_dict())
    log(f"optimize: wrote {result_path} and {airframe_path}")
    _emit(result.to_dict())
    if spec.check:
        failed = []
        if not result.feasible:
            failed.append('constraints violated')
        if result.assembled['f_min'] < ASSEMBLED_F_MIN:
            failed.append(f"assembled f_min {result.assembled['f_min']:.3f} < {ASSEMBLED_F_MIN}")
        if result.assembled['tau_min'] < ASSEMBLED_TAU_MIN:
            failed.append(f"assembled tau_min {result.assembled['tau_min']:.3f} < {ASSEMBLED_TAU_MIN}")
        if failed:
            raise CheckFailed('; '.join(failed))


def feasibility_document(description, config=None):
    """Unit and assembled reports plus the yaw capability ratio."""
    unit = description.to_model()
    separation = Tolerances.from_config(config).x_dock
    assembled = combined_model(unit, unit, default_mounting(separation))
    unit_report = feasibility_report(unit)
    assembled_report = feasibility_report(assembled)
    ratio = (assembled_report.yaw_capability / unit_report.yaw_capability
             if unit_report.yaw_capability > 0.0 else float('inf'))
    return {
        'schema_version': SCHEMA_VERSION,
        'airframe': description.name,
        'separation': separation,
        'unit': unit_report.to_dict(),
        'assembled': assembled_report.to_dict(),
        'yaw_ratio': ratio,
    }


def _execute_feasibility(spec):
    description = AirframeDescription.from_dict(spec.document, spec.inputs.get('airframe') or 'airframe')
    report = feasibility_document(description, load_config())
    write_structured(os.path.join(spec.output_dir, 'feasibility.json'), report)
    _emit(report)
    if spec.check:
        failed = []
        if report['assembled']['f_min'] <= 0.0 or report['assembled']['tau_min'] <= 0.0:
            failed.append('assembled polytope does not contain the origin')
        if report['yaw_ratio'] < YAW_RATIO_TARGET:
            failed.append(f"yaw ratio {report['yaw_ratio']:.2f} < {YAW_RATIO_TARGET}")
        if failed:
            raise CheckFailed('; '.join(failed))


def scenario_passed(summary):
    if 'meets_target' in summary:
        return bool(summary['meets_target'])
    return bool(summary.get('success'))


def _execute_simulate(spec):
    run = run_scenario(spec.document, spec.seed, spec.output_dir, plots=spec.plots)
    _emit(run.summary)
    if spec.check and not scenario_passed(run.summary):
        raise CheckFailed(f"scenario '{spec.scenario}' failed its acceptance check "
                          f"(cause: {run.summary.get('cause')})")


def _sweep_run(job):
    index, document, seed, values = job
    run = run_scenario(document, seed)
    row = {'run': index, 'seed': seed}
    row.update(values)
    for key, value in run.summary.items():
        if key in ('schema_version', 'scenario', 'seed'):
            continue
        if value is None or isinstance(value, (bool, int, float, str)):
            row[key] = value
    row['passed'] = scenario_passed(run.summary)
    return row


def sweep_jobs(spec):
    keys = list(spec.grid)
    combos = list(itertools.product(*(spec.grid[k] for k in keys))) or [()]
    jobs = []
    for combo in combos:
        values = dict(zip(keys, combo))
        document = apply_overrides(spec.document, values, TARGET_SCHEMAS['sweep'])
        for k in range(spec.seeds):
            jobs.append((len(jobs), document, spec.seed + k, values))
    return jobs


def _execute_sweep(spec):
    jobs = sweep_jobs(spec)
    log(f"sweep '{spec.scenario}': {len(jobs)} run(s), {spec.workers} worker(s)")
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_sweep_run, jobs))
    else:
        rows = [_sweep_run(job) for job in jobs]
    rows.sort(key=lambda r: r['run'])
    table = pd.DataFrame(rows)
    path = os.path.join(spec.output_dir, 'sweep.csv')
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    rate = float(table['passed'].mean()) if len(table) else 0.0
    summary = {'schema_version': SCHEMA_VERSION, 'scenario': spec.scenario, 'runs': len(rows),
               'success_rate': rate, 'grid': spec.grid}
    write_structured(os.path.join(spec.output_dir, 'sweep_summary.json'), summary)
    _emit(summary)
    if spec.check and rate < spec.min_success:
        raise CheckFailed(f"success rate {rate:.2%} below {spec.min_success:.2%}")


def _execute_plot(spec):
    written = plot_csv(spec.inputs['csv'], spec.output_dir, spec.inputs.get('name'))
    _emit({'written': written})


EXECUTORS = {
    'optimize': _execute_optimize,
    'feasibility': _execute_feasibility,
    'simulate': _execute_simulate,
    'sweep': _execute_sweep,
    'plot': _execute_plot,
}


def execute(spec):
    if spec.subcommand not in EXECUTORS:
        raise ConfigError(f"unknown subcommand '{spec.subcommand}'")
    EXECUTORS[spec.subcommand](spec)
    return 0


def format_error(error):
    message = str(error).replace('\\', '\\\\').replace('"', '\\"').replace('\n', ' ')
    return f'error code={error.exit_code} kind={type(error).__name__} message="{message}"'


def main(argv=None):
    try:
        return execute(parse_and_validate(argv))
    except TiltdockError as e:
        print(format_error(e), file=sys.stderr)
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())

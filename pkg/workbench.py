"""Shared plumbing: configuration, logging, errors and structured file IO."""
import copy
import json
import logging
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from datetime import datetime
from logging.handlers import TimedRotatingFileHandler

import pytz
import tomli_w
import yaml
from dotenv import load_dotenv

SCHEMA_VERSION = 1

PROJECT_DIR = os.path.dirname(os.path.abspath(__file__))

DEFAULTS = {
    'airframe': {
        'mass': 1.1,
        'gravity': 9.8,
        'body_size': [0.24, 0.24, 0.08],
        'max_thrust': 7.0,
        'sigma': 0.011,
        'separation': 0.6,
        'mechanism_mass': 0.0,
    },
    'allocation': {
        'hover_tolerance': 3e-3,
        'counter_torque': False,
    },
    'feasibility': {
        'oracle_samples': 100000,
    },
    'optimizer': {
        'w1': 1.0,
        'w2': 1.0,
        'population': 60,
        'max_evals': 20000,
        'desired_accel': 1.0,
        'hover_tolerance': 1e-3,
        'frame_tolerance': 1e-2,
        'alpha_bounds': [0.0, 0.9],
        'beta_bounds': [-3.141592653589793, 3.141592653589793],
    },
    'control': {
        'rate_hz': 40.0,
        'lqi_m': [10.0, 1.0, 10.0, 1.0, 10.0, 1.0, 20.0, 20.0, 20.0],
        'lqi_w1': 4.0,
        'lqi_w2': 0.5,
        'lqi_integral_limit': 0.5,
        'unit_position': {'kp': [2.0, 2.0, 4.0], 'ki': [0.4, 0.4, 2.0],
                          'kd': [2.5, 2.5, 3.0], 'integral_limit': [2.0, 2.0, 10.0]},
        'assembled_position': {'kp': [3.0, 3.0, 4.0], 'ki': [0.6, 0.6, 2.0],
                               'kd': [3.0, 3.0, 3.0], 'integral_limit': [2.0, 2.0, 10.0]},
        'assembled_attitude': {'kp': [36.0, 36.0, 75.0], 'ki': [8.0, 8.0, 125.0],
                               'kd': [12.0, 12.0, 15.0], 'integral_limit': [0.5, 0.5, 0.5]},
    },
    'switching': {
        'a': 0.9,
        'done_weight': 0.995,
    },
    'motion': {
        'e1_y': 0.02, 'e1_z': 0.02, 'e1_psi': 0.13,
        'e2_x': 0.005, 'e2_y': 0.01, 'e2_z': 0.01, 'e2_psi': 0.01,
        'd_st': 0.9,
        'fsm_rate_hz': 10.0,
        'approach_speed': 0.1,
        'dock_timeout': 5.0,
        'dock_actuation_time': 1.0,
        'x_dock': None,
        'filter_alpha': 0.1,
    },
    'sim': {
        'dt': 0.001,
        'capture_radius': 0.025,
        'orthonormalize_every': 1000,
        'disturbance_peak': 0.3,
        'disturbance_range': 0.3,
    },
    'logging': {
        'timezone': 'Europe/Berlin',
    },
}


class TiltdockError(Exception):
    """Base class; `exit_code` is what the CLI returns."""
    exit_code = 1


class ConfigError(TiltdockError):
    exit_code = 2


class NumericalError(TiltdockError):
    exit_code = 3


class GeometryError(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class NoStaticHover(NumericalError):
    pass


class SingularFrame(NumericalError):
    pass


class SingularAllocation(NumericalError):
    pass


class DegenerateForcePolytope(NumericalError):
    pass


class DegenerateTorquePolytope(NumericalError):
    pass


class WeightError(NumericalError):
    pass


class RiccatiError(NumericalError):
    pass


class ThrustTooLow(NumericalError):
    pass


class SwitchError(NumericalError):
    pass


class SimDiverged(NumericalError):
    pass


class CaptureMiss(NumericalError):
    pass


class OptimizerError(NumericalError):
    pass


class CheckFailed(TiltdockError):
    exit_code = 4


_env_loaded = False


def load_env_file():
    """Load .env once (python-dotenv); existing environment wins."""
    global _env_loaded
    if _env_loaded:
        return
    env_path = os.path.join(PROJECT_DIR, '.env')
    if os.path.exists(env_path):
        load_dotenv(env_path, override=False)
    _env_loaded = True


def load_config(path=None):
    """Load configuration from YAML file"""
    load_env_file()
    config_path = path or os.getenv('TILTDOCK_CONFIG') or os.path.join(PROJECT_DIR, 'config.yaml')
    if not os.path.exists(config_path):
        return {}
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            return yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {config_path}: {e}") from e


def deep_merge(base, override):
    """Recursive dict merge; returns a new dict."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _as_number(value, path):
    try:
        if isinstance(value, (list, tuple)):
            return [_as_number(v, path) for v in value]
        return float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value for '{path}': {value!r}") from e


def check_numeric_overlay(overlay, defaults=None, where='config'):
    """Reject non-numeric values where the defaults hold numbers."""
    defaults = DEFAULTS if defaults is None else defaults
    for key, value in (overlay or {}).items():
        path = f"{where}.{key}"
        default = defaults.get(key)
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{path}' must be a mapping, got {value!r}")
            check_numeric_overlay(value, default, path)
        elif isinstance(default, (int, float, list)) and not isinstance(default, bool):
            _as_number(value, path)


def load_section(name, config=None):
    """Defaults for `name` overlaid with the matching config.yaml section."""
    if config is None:
        config = load_config()
    return deep_merge(DEFAULTS.get(name, {}), config.get(name) or {})


_logger = None


class TimezoneFormatter(logging.Formatter):
    def __init__(self, fmt, tz_name='Europe/Berlin'):
        super().__init__(fmt)
        self.tz = pytz.timezone(tz_name)

    def formatTime(self, record, datefmt=None):
        dt = datetime.fromtimestamp(record.created, tz=self.tz)
        if datefmt:
            return dt.strftime(datefmt)
        return dt.strftime('%Y-%m-%d %H:%M:%S %Z')


def setup_logger(name='tiltdock'):
    """Setup logger with file rotation and console output"""
    global _logger

    if _logger is not None:
        return _logger

    load_env_file()
    level_name = os.getenv('TILTDOCK_LOG_LEVEL', 'INFO').upper()
    tz_name = load_section('logging').get('timezone', 'Europe/Berlin')

    _logger = logging.getLogger(name)
    _logger.setLevel(getattr(logging, level_name, logging.INFO))
    _logger.handlers.clear()
    _logger.propagate = False

    formatter = TimezoneFormatter('%(asctime)s - %(levelname)s - %(message)s', tz_name)

    # Logdatei nur, wenn das Verzeichnis angelegt werden kann
    log_dir = os.getenv('TILTDOCK_LOG_DIR', os.path.join(PROJECT_DIR, 'data'))
    try:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = TimedRotatingFileHandler(
            os.path.join(log_dir, 'tiltdock.log'),
            when='midnight',
            interval=1,
            backupCount=30,
            encoding='utf-8',
        )
        file_handler.setFormatter(formatter)
        _logger.addHandler(file_handler)
    except OSError as e:
        print(f"Error setting up log file: {e}", file=sys.stderr)

    # stdout bleibt frei für JSON-Ausgaben
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    _logger.addHandler(console_handler)

    return _logger


def log(message, level='INFO'):
    """Log a message with timestamp"""
    logger = setup_logger()
    logger.log(getattr(logging, level.upper(), logging.INFO), message)


def _format_of(path):
    ext = os.path.splitext(path)[1].lower()
    if ext == '.json':
        return 'json'
    if ext == '.toml':
        return 'toml'
    if ext in ('.yaml', '.yml'):
        return 'yaml'
    raise ConfigError(f"unsupported file type '{ext}' for {path} (use .json, .toml or .yaml)")


def read_structured(path):
    """Read a JSON/TOML/YAML document into a dict."""
    fmt = _format_of(path)
    if not os.path.exists(path):
        raise ConfigError(f"file not found: {path}")
    try:
        if fmt == 'toml':
            with open(path, 'rb') as f:
                data = tomllib.load(f)
        else:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f) if fmt == 'json' else yaml.safe_load(f)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def dumps_structured(data, fmt):
    if fmt == 'json':
        return json.dumps(data, indent=2, sort_keys=False) + '\n'
    if fmt == 'toml':
        return tomli_w.dumps(data)
    return yaml.safe_dump(data, sort_keys=False)


def write_structured(path, data):
    """Write a mapping; the format follows the extension."""
    fmt = _format_of(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(dumps_structured(data, fmt))
    return path


def check_schema(data, allowed, where=''):
    """Reject keys not present in `allowed` (nested dicts are checked recursively).

    `allowed` maps key -> None (leaf) or a nested allowed-dict.
    """
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}'")
        sub = allowed[key]
        if isinstance(sub, dict) and isinstance(value, dict):
            check_schema(value, sub, path)
        elif isinstance(sub, dict) and isinstance(value, list):
            for i, item in enumerate(value):
                if isinstance(item, dict):
                    check_schema(item, sub, f"{path}[{i}]")


def require_schema_version(data, path=''):
    version = data.get('schema_version', SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path or 'document'}: schema_version {version} not supported (expected {SCHEMA_VERSION})")

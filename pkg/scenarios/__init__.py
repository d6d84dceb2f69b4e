"""Scenario registry; every module in this package registers itself on import."""
import importlib
import pkgutil

from workbench import ConfigError

_REGISTRY = {}
_loaded = False


def register_scenario(module_name, name=None, title=''):
    key = name or module_name.rsplit('.', 1)[-1]
    _REGISTRY[key] = {'module': module_name, 'title': title}


def load_scenarios():
    global _loaded
    if _loaded:
        return
    for info in pkgutil.iter_modules(__path__):
        if info.name != 'common':
            importlib.import_module(f"{__name__}.{info.name}")
    _loaded = True


def scenario_names():
    load_scenarios()
    return sorted(_REGISTRY)


def get_scenario(name):
    load_scenarios()
    entry = _REGISTRY.get(name)
    if entry is None:
        raise ConfigError(f"unknown scenario '{name}' (known: {', '.join(sorted(_REGISTRY))})")
    return importlib.import_module(entry['module'])

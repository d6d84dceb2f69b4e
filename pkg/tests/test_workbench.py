import pytest

from workbench import (
    DEFAULTS,
    CheckFailed,
    ConfigError,
    NumericalError,
    RiccatiError,
    TiltdockError,
    check_schema,
    deep_merge,
    load_config,
    load_section,
    read_structured,
    require_schema_version,
    write_structured,
)


def test_exit_codes():
    assert TiltdockError.exit_code == 1
    assert ConfigError.exit_code == 2
    assert NumericalError.exit_code == 3
    assert RiccatiError.exit_code == 3
    assert CheckFailed.exit_code == 4


def test_missing_config_gives_defaults():
    assert load_config() == {}
    assert load_section('switching')['a'] == DEFAULTS['switching']['a']


def test_load_section_overlays_file(tmp_path, monkeypatch):
    path = tmp_path / 'config.yaml'
    path.write_text("switching:\n  a: 0.5\ncontrol:\n  unit_position:\n    kp: [1, 1, 1]\n")
    monkeypatch.setenv('TILTDOCK_CONFIG', str(path))
    assert load_section('switching')['a'] == 0.5
    control = load_section('control')
    assert control['unit_position']['kp'] == [1, 1, 1]
    # Geschwister-Schlüssel bleiben erhalten
    assert control['unit_position']['ki'] == DEFAULTS['control']['unit_position']['ki']


def test_broken_yaml_is_config_error(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text("switching: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_deep_merge_does_not_mutate():
    base = {'a': {'b': 1, 'c': 2}}
    merged = deep_merge(base, {'a': {'b': 5}})
    assert merged == {'a': {'b': 5, 'c': 2}}
    assert base == {'a': {'b': 1, 'c': 2}}


@pytest.mark.parametrize('suffix', ['.json', '.toml', '.yaml'])
def test_structured_files(tmp_path, suffix):
    data = {'schema_version': 1, 'name': 'x', 'values': [1.5, 2.5], 'nested': {'k': 3}}
    path = write_structured(str(tmp_path / f'doc{suffix}'), data)
    assert read_structured(path) == data


def test_unknown_extension(tmp_path):
    with pytest.raises(ConfigError, match='unsupported'):
        write_structured(str(tmp_path / 'doc.ini'), {})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match='not found'):
        read_structured(str(tmp_path / 'absent.json'))


def test_check_schema_names_dotted_path():
    schema = {'rotor': {'alpha': None, 'beta': None}, 'mass': None}
    check_schema({'mass': 1.0, 'rotor': [{'alpha': 0.1}]}, schema)
    with pytest.raises(ConfigError, match=r"rotor\[0\]\.alhpa"):
        check_schema({'rotor': [{'alhpa': 0.1}]}, schema)
    with pytest.raises(ConfigError, match="'rotr'"):
        check_schema({'rotr': {}}, schema)


def test_schema_version():
    require_schema_version({'schema_version': 1})
    require_schema_version({})
    with pytest.raises(ConfigError, match='schema_version 2'):
        require_schema_version({'schema_version': 2})

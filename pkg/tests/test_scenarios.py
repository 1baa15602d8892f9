import json
from pathlib import Path

import numpy as np
import pytest

from projflow.app import runner
from projflow.engine.errors import ConeViolationError, ConfigError
from projflow.engine.scenarios import BUILTINS, Scenario, builtin, materialize, materialize_z0

RUNS = Path(__file__).parent.parent / "runs"


def minimal(**scenario):
    data = {
        "scenario": {
            "name": "t",
            "m": 8,
            "a": {"kind": "sine", "amplitude": 1.0},
            "n": 1.0,
            "y0": 1.0,
        }
    }
    data["scenario"].update(scenario)
    return data


# ---------- builtins ----------

@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_load_and_materialize(name):
    scenario = builtin(name)
    sys, y0 = materialize(scenario)

    assert scenario.name == name
    assert sys.partition.m == 512
    assert np.all(y0.values > 0)


def test_unknown_builtin():
    with pytest.raises(ConfigError):
        builtin("sine-max")


def test_builtin_initial_value_override():
    scenario = builtin("sine-mean", c=0.4)
    assert scenario.y0 == {"kind": "constant", "value": 0.4}


def test_bare_file_name_resolves_to_packaged_configs():
    assert Scenario.from_file("flat.json").name == "flat"
    with pytest.raises(FileNotFoundError):
        Scenario.from_file("missing.json")


# ---------- parsing ----------

def test_numbers_become_constants():
    scenario = Scenario.from_dict(minimal())
    assert scenario.n == {"kind": "constant", "value": 1.0}
    assert scenario.integration.method == "log_rk4"
    assert scenario.output.phi_grid == 41


@pytest.mark.parametrize(
    "data",
    [
        {"scenario": minimal()["scenario"], "plots": {}},
        {"scenario": {**minimal()["scenario"], "dt": 0.1}},
        {"scenario": minimal()["scenario"], "integration": {"steps": 10}},
        minimal(a={"kind": "square"}),
        minimal(a={"kind": "sine", "amp": 1.0}),
        minimal(a={"kind": "constant"}),
        minimal(a="sine"),
        minimal(y0={"kind": "scaled", "factor": 0.5}),
        minimal(z0={"kind": "a_plus_K_n", "K": 1.0}),
        minimal(y0={"kind": "sine"}, c=2.0),
        minimal(m=0),
        minimal(weights=[0.5, 0.5], m=3),
        {"integration": {"T": 1.0}},
        [],
    ],
)
def test_invalid_configs_raise(data):
    with pytest.raises(ConfigError):
        Scenario.from_dict(data)


@pytest.mark.parametrize("missing", ["name", "a", "n", "y0"])
def test_missing_scenario_key(missing):
    data = minimal()
    data["scenario"].pop(missing)
    with pytest.raises(ConfigError):
        Scenario.from_dict(data)


@pytest.mark.parametrize(
    "integration",
    [
        {"method": "euler"},
        {"T": 1.0, "h": 2.0},
        {"T": -1.0},
        {"stride": 0},
    ],
)
def test_invalid_integration(integration):
    with pytest.raises(ConfigError):
        Scenario.from_dict({**minimal(), "integration": integration})


def test_explicit_values_must_match_cells():
    scenario = Scenario.from_dict(minimal(a={"kind": "explicit", "values": [1.0, -1.0]}))
    with pytest.raises(ConfigError):
        materialize(scenario)


def test_non_positive_initial_data():
    scenario = Scenario.from_dict(minimal(y0={"kind": "linear", "slope": 1.0, "intercept": -0.5}))
    with pytest.raises(ConeViolationError) as info:
        materialize(scenario)
    assert info.value.label == "y0"
    assert info.value.cells == [0, 1, 2, 3]


def test_non_positive_direction():
    scenario = Scenario.from_dict(minimal(n={"kind": "cosine"}))
    with pytest.raises(ConeViolationError):
        materialize(scenario)


# ---------- serialization ----------

def test_round_trip_is_exact():
    with open(RUNS / "weighted_cells.json") as f:
        scenario = Scenario.from_dict(json.load(f))

    again = Scenario.from_dict(json.loads(scenario.to_json()))
    assert again == scenario
    assert again.hash == scenario.hash

    (sys, y0), (sys2, y02) = materialize(scenario), materialize(again)
    np.testing.assert_array_equal(y0.values, y02.values)
    np.testing.assert_array_equal(sys.a.values, sys2.a.values)


def test_hash_tracks_content():
    scenario = builtin("sine-mean")
    assert scenario.hash == builtin("sine-mean").hash
    assert scenario.with_overrides(T=5.0).hash != scenario.hash
    assert len(scenario.hash) == 64


# ---------- overrides ----------

def test_overrides():
    scenario = builtin("sine-mean").with_overrides(m=64, T=2.0, h=0.5, stride=2, method="direct_rk4", out="elsewhere")

    assert scenario.m == 64
    assert scenario.integration.T == 2.0
    assert scenario.integration.h == 0.5
    assert scenario.integration.stride == 2
    assert scenario.integration.method == "direct_rk4"
    assert scenario.output.dir == "elsewhere"


def test_cell_count_override_needs_closed_forms():
    with open(RUNS / "weighted_cells.json") as f:
        scenario = Scenario.from_dict(json.load(f))
    with pytest.raises(ConfigError):
        scenario.with_overrides(m=16)
    with pytest.raises(ConfigError):
        Scenario.from_dict(minimal(a={"kind": "explicit", "values": [0.0] * 8})).with_overrides(m=16)


def test_override_rejects_bad_step():
    with pytest.raises(ConfigError):
        builtin("flat").with_overrides(h=500.0)


# ---------- materialization ----------

def test_weighted_cells():
    with open(RUNS / "weighted_cells.json") as f:
        scenario = Scenario.from_dict(json.load(f))

    sys, y0 = materialize(scenario)
    z0 = materialize_z0(scenario, sys, y0)

    np.testing.assert_allclose(sys.partition.centers, [0.05, 0.2, 0.45, 0.8])
    np.testing.assert_array_equal(y0.values, sys.a.values + 3.0 * sys.n.values)
    np.testing.assert_array_equal(z0.values, 0.5 * y0.values)
    assert scenario.output.states


def test_scenario_without_lower_data():
    scenario = builtin("sine-mean")
    sys, y0 = materialize(scenario)
    assert materialize_z0(scenario, sys, y0) is None

    z0 = materialize_z0(scenario.with_z0(0.25), sys, y0)
    np.testing.assert_array_equal(z0.values, np.full(512, 0.25))


# ---------- constants ----------

def test_constants_are_resolved_with_their_types():
    scenario = runner.load_scenario(config_file=RUNS / "sine_fine.json", constants_file=RUNS / "constants.json")

    assert scenario.m == 512
    assert scenario.integration.T == 5.0
    assert scenario.integration.h == 0.001
    assert scenario.a["amplitude"] == 1.0


def test_constants_inside_strings():
    resolved = runner._resolve_refs({"name": "grid-${grid.m}", "keep": "${other}-x"}, {"grid.m": 64})
    assert resolved == {"name": "grid-64", "keep": "${other}-x"}


def test_undefined_constant(tmp_path):
    config = tmp_path / "scenario.json"
    config.write_text(json.dumps(minimal(m="${grid.cells}")))

    with pytest.raises(ConfigError):
        runner.load_scenario(config_file=config, constants_file=RUNS / "constants.json")


def test_missing_constants_file_is_optional(tmp_path):
    config = tmp_path / "scenario.json"
    config.write_text(json.dumps(minimal()))

    assert runner.load_scenario(config_file=config, constants_file=tmp_path / "none.json").m == 8


@pytest.mark.parametrize("kwargs", [{}, {"builtin_name": "flat", "config_file": RUNS / "sine_fine.json"}])
def test_load_needs_exactly_one_source(kwargs):
    with pytest.raises(ConfigError):
        runner.load_scenario(**kwargs)

import json

import pytest

from enrichbench.config import (
    ParseError,
    RateSpec,
    RunConfig,
    ValidationError,
    dump_config,
    env_overrides,
    load_config,
    loads_config,
)
from enrichbench.engine import FailureSpec, Run

MINIMAL = '{"horizon_s": 10.0, "rate": 500.0}'


# --- parsing ----------------------------------------------------------------

def test_minimal_document_gets_defaults():
    cfg = loads_config(MINIMAL, env={})
    assert cfg.horizon_s == 10.0
    assert cfg.rate == RateSpec.constant(500.0)
    assert cfg.seed == 1
    assert cfg.parallelism == 8
    assert cfg.strategy == "sync"
    assert cfg.failures == ()


def test_rejects_malformed_json():
    with pytest.raises(ParseError):
        loads_config("{not json", env={})
    with pytest.raises(ParseError):
        loads_config("[1, 2]", env={})


def test_rejects_unknown_key():
    doc = '{"horizon_s": 10.0, "rate": 500.0, "paralellism": 4}'
    with pytest.raises(ValidationError, match="paralellism"):
        loads_config(doc, env={})


def test_rejects_missing_required_keys():
    with pytest.raises(ValidationError, match="horizon_s"):
        loads_config('{"rate": 500.0}', env={})
    with pytest.raises(ValidationError, match="rate"):
        loads_config('{"horizon_s": 10.0}', env={})


@pytest.mark.parametrize(
    "patch",
    [
        {"seed": "one"},
        {"seed": 1.5},
        {"seed": True},
        {"parallelism": 0},
        {"horizon_s": 0},
        {"emit_sink": 1},
        {"strategy": "telepathy"},
        {"workload": "clickstream"},
        {"arrival_mode": "bursty"},
        {"routing": "broadcast"},
        {"known_receiver_prob": 1.2},
        {"queue_capacity": 0},
        {"model_name": 7},
    ],
)
def test_rejects_bad_values(patch):
    doc = {"horizon_s": 10.0, "rate": 500.0, **patch}
    with pytest.raises(ValidationError):
        loads_config(json.dumps(doc), env={})


# --- rate forms -------------------------------------------------------------

def test_rate_forms_build_matching_schedules():
    bare = loads_config('{"horizon_s": 1, "rate": 250}', env={})
    obj = loads_config('{"horizon_s": 1, "rate": {"constant": 250}}', env={})
    assert bare.rate == obj.rate
    assert bare.rate.to_schedule().breakpoints == [(0, 250.0)]

    ramp = loads_config(
        '{"horizon_s": 1, "rate": {"ramp":'
        ' {"initial": 100, "increment": 50, "step_s": 2.0, "steps": 3}}}',
        env={},
    )
    assert ramp.rate.to_schedule().breakpoints == [
        (0, 100.0),
        (2_000_000, 150.0),
        (4_000_000, 200.0),
    ]

    steps = loads_config(
        '{"horizon_s": 1, "rate": {"steps": [[0, 100], [1.5, 80]]}}', env={}
    )
    assert steps.rate.to_schedule().breakpoints == [(0, 100.0), (1_500_000, 80.0)]


@pytest.mark.parametrize(
    "rate",
    [
        '"fast"',
        "{}",
        '{"constant": 100, "ramp": {}}',
        '{"constant": -5}',
        '{"ramp": {"initial": 100, "increment": 1, "step_s": 1}}',
        '{"ramp": {"initial": 100, "increment": 1, "step_s": 1, "steps": 2, "x": 1}}',
        '{"ramp": {"initial": 10, "increment": -20, "step_s": 1, "steps": 3}}',
        '{"steps": []}',
        '{"steps": [[1.0, 100]]}',
        '{"steps": [[0, 100], [0, 200]]}',
        '{"steps": [[0, 100], [2, 200], [1, 300]]}',
        '{"steps": [[0]]}',
    ],
)
def test_rejects_bad_rate_forms(rate):
    with pytest.raises(ValidationError):
        loads_config('{"horizon_s": 1, "rate": %s}' % rate, env={})


# --- failures ---------------------------------------------------------------

def test_parses_failure_list():
    doc = (
        '{"horizon_s": 100, "rate": 50, "failures":'
        ' [{"fail_at_s": 20, "restart_delay_s": 5},'
        '  {"fail_at_s": 60, "restart_delay_s": 2}]}'
    )
    cfg = loads_config(doc, env={})
    assert cfg.failures == (FailureSpec(20.0, 5.0), FailureSpec(60.0, 2.0))


@pytest.mark.parametrize(
    "failures",
    [
        '{"fail_at_s": 20, "restart_delay_s": 5}',
        '[{"fail_at_s": 20}]',
        '[{"fail_at_s": 20, "restart_delay_s": 5, "mode": "hard"}]',
        '[{"fail_at_s": -1, "restart_delay_s": 5}]',
    ],
)
def test_rejects_bad_failures(failures):
    doc = '{"horizon_s": 100, "rate": 50, "failures": %s}' % failures
    with pytest.raises(ValidationError):
        loads_config(doc, env={})


# --- environment overrides --------------------------------------------------

def test_env_overrides_scalars_and_nested_paths():
    env = {
        "ENRICHBENCH_SEED": "7",
        "ENRICHBENCH_STRATEGY": "async",
        "ENRICHBENCH_RATE__CONSTANT": "2000",
        "PATH": "/usr/bin",
    }
    assert env_overrides(env) == {
        "rate": {"constant": 2000},
        "seed": 7,
        "strategy": "async",
    }
    cfg = loads_config(MINIMAL, env=env)
    assert cfg.seed == 7
    assert cfg.strategy == "async"
    assert cfg.rate == RateSpec.constant(2000.0)


def test_env_override_can_replace_whole_subtrees():
    env = {
        "ENRICHBENCH_RATE": '{"ramp": {"initial": 10, "increment": 5, "step_s": 1, "steps": 2}}',
        "ENRICHBENCH_FAILURES": '[{"fail_at_s": 3, "restart_delay_s": 1}]',
    }
    cfg = loads_config(MINIMAL, env=env)
    assert cfg.rate.kind == "ramp"
    assert cfg.failures == (FailureSpec(3.0, 1.0),)


def test_env_override_values_are_validated():
    with pytest.raises(ValidationError):
        loads_config(MINIMAL, env={"ENRICHBENCH_SEED": "soon"})
    with pytest.raises(ValidationError, match="unknown key"):
        loads_config(MINIMAL, env={"ENRICHBENCH_SPEED": "3"})
    # overriding one rate form on top of another leaves two forms: rejected
    ramp_doc = json.dumps(
        {
            "horizon_s": 1,
            "rate": {"ramp": {"initial": 1, "increment": 1, "step_s": 1, "steps": 2}},
        }
    )
    with pytest.raises(ValidationError):
        loads_config(ramp_doc, env={"ENRICHBENCH_RATE__CONSTANT": "100"})


# --- round trips ------------------------------------------------------------

def test_dump_then_load_round_trips():
    doc = json.dumps(
        {
            "horizon_s": 30,
            "rate": {"ramp": {"initial": 100, "increment": 25, "step_s": 5, "steps": 4}},
            "seed": 3,
            "strategy": "external_cache",
            "failures": [{"fail_at_s": 12, "restart_delay_s": 2}],
            "emit_sink": True,
        }
    )
    cfg = loads_config(doc, env={})
    text = dump_config(cfg)
    again = loads_config(text, env={})
    assert again == cfg
    assert dump_config(again) == text


def test_load_config_reads_files(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(MINIMAL)
    assert load_config(path, env={}) == loads_config(MINIMAL, env={})
    with pytest.raises(ParseError):
        load_config(tmp_path / "absent.json", env={})


# --- handoff to the engine --------------------------------------------------

def test_engine_params_round_trip_runs():
    cfg = loads_config(
        '{"horizon_s": 6.0, "rate": 200, "seed": 2, "strategy": "local_cache"}',
        env={},
    )
    params = cfg.engine_params()
    assert params.horizon_s == 6.0
    assert params.strategy == "local_cache"
    assert params.schedule.rate_at(0) == 200.0
    result = Run(params).run()
    assert result.consumed_total > 0


def test_config_defaults_match_engine_defaults():
    from dataclasses import MISSING, fields

    from enrichbench.engine import EngineParams

    engine_defaults = {
        f.name: f.default for f in fields(EngineParams) if f.default is not MISSING
    }
    for f in fields(RunConfig):
        if f.name in ("horizon_s", "rate") or f.default is MISSING:
            continue
        assert engine_defaults[f.name] == f.default, f.name

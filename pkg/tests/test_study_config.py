import pytest

from tbiq.config_utils import resolve_study_config, resolve_study_filename
from tbiq.study_config import ConfigError, config_dict, default_config, emit_config, parse_config


def test_empty_config_gives_defaults():
    study, task = parse_config("")
    assert study.kind == "signal_length_sweep"
    assert study.name == "rayleigh_length"
    assert study.seed == 20240101
    assert study.sweep == (5, 6, 7, 8, 9)
    assert study.observers == ("rho", "cho", "resnet")
    assert task.kind == "rayleigh"
    assert task.image_size == (128, 128)
    assert task.rayleigh.length == 7
    assert task.degradation.noise.sigma_p == pytest.approx(0.013)
    assert study.sr_training.loss == "mse"
    assert study.observer_training.loss == "bce"


def test_capacity_defaults_follow_the_mc_task():
    study, task = parse_config("study:\n  kind: observer_capacity\n")
    assert task.kind == "mc_cluster"
    assert task.degradation.downsample_factor == 2
    assert study.observers == ("resnet",)
    assert study.resnet.blocks == (2, 4, 6, 8)
    assert study.observer_training.learning_rate == pytest.approx(5e-5)


def test_signal_length_four_is_accepted():
    study, _ = parse_config("study:\n  sweep: [4]\n")
    assert study.sweep == (4,)


def test_signal_length_two_is_rejected_with_its_line():
    with pytest.raises(ConfigError) as excinfo:
        parse_config("study:\n  sweep: [2, 5]\n")
    assert excinfo.value.problems == ["line 2: study.sweep: signal lengths must be >= 3, got [2]"]


def test_unknown_keys_report_their_line():
    text = "study:\n  kind: signal_length_sweep\n  colour: red\nextras: 1\n"
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text)
    problems = excinfo.value.problems
    assert "line 3: study.colour: unknown key" in problems
    assert "line 4: extras: unknown key" in problems
    assert str(excinfo.value).startswith("Invalid config:\n  - ")


def test_all_problems_are_collected():
    text = "study:\n  kind: depth_sweep\n  sweep: [1, 3]\nsizes:\n  test_per_class: 1\nevaluation:\n  ci_level: 1.5\n"
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text)
    problems = excinfo.value.problems
    assert any(p.startswith("line 3: study.sweep: SRCNN depths must lie in [2, 8]") for p in problems)
    assert any(p.startswith("line 5: sizes.test_per_class: must be >= 2") for p in problems)
    assert any(p.startswith("line 7: evaluation.ci_level") for p in problems)


def test_capacity_study_only_runs_the_resnet_observer():
    with pytest.raises(ConfigError, match="only the resnet observer"):
        parse_config("study:\n  kind: observer_capacity\n  observers: [rho, resnet]\n")


def test_bad_types_are_reported():
    with pytest.raises(ConfigError, match="line 2: srcnn.n_layers: expected an integer"):
        parse_config("srcnn:\n  n_layers: three\n")


def test_yaml_syntax_error_has_a_line():
    with pytest.raises(ConfigError, match="YAML syntax error"):
        parse_config("study:\n  sweep: [5, 6\n")


def test_emitted_config_parses_back_to_the_same_specs():
    original = parse_config("study:\n  kind: depth_sweep\n  sweep: [2, 4]\n")
    assert parse_config(emit_config(*original)) == original
    assert config_dict(*original)["study"]["sweep"] == [2, 4]


def test_default_tree_matches_parsed_defaults():
    study, task = parse_config("")
    tree = config_dict(study, task)
    expected = default_config()
    expected["study"]["name"] = "rayleigh_length"
    assert tree == expected


def test_clb_support_radius_and_background_cache_are_configurable():
    study, task = parse_config("study:\n  background_cache_mb: 0\ntask:\n  clb:\n    support_radius: 12.5\n")
    assert study.background_cache_mb == 0
    assert task.clb.blob_radius() == 12.5
    with pytest.raises(ConfigError, match="line 2: study.background_cache_mb: must be >= 0"):
        parse_config("study:\n  background_cache_mb: -1\n")
    with pytest.raises(ConfigError, match="support_radius must be > 0"):
        parse_config("task:\n  clb:\n    support_radius: 0\n")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="config file not found"):
        parse_config(tmp_path / "missing.yml")


@pytest.mark.parametrize(
    ("ref", "kind"),
    [
        ("rayleigh-length", "signal_length_sweep"),
        ("srcnn_depth", "depth_sweep"),
        ("mc_capacity.yml", "observer_capacity"),
        (None, "signal_length_sweep"),
    ],
)
def test_packaged_configs_parse(ref, kind):
    study, _ = resolve_study_config(ref).parse()
    assert study.kind == kind


def test_resolve_study_config_prefers_files(tmp_path):
    path = tmp_path / "mine.yml"
    path.write_text("study:\n  seed: 5\n", encoding="utf-8")
    resolved = resolve_study_config(str(path))
    assert resolved.path == path
    assert resolved.parse()[0].seed == 5


def test_unknown_builtin_name():
    with pytest.raises(SystemExit, match="Unknown built-in config name"):
        resolve_study_filename("nope")
    assert resolve_study_filename("mc-capacity") == "mc_capacity.yml"

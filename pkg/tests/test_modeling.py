import pytest

from tbiq.learned import LearnedObserverSpec
from tbiq.modeling import (
    build_model,
    build_model_from_config,
    normalize_model_type,
    resolve_model_spec,
)
from tbiq.sr_models import SrcnnSpec


def test_resolve_model_spec_defaults_to_srcnn():
    model_type, spec = resolve_model_spec(None)
    assert model_type == "srcnn"
    assert spec == SrcnnSpec()


def test_resolve_model_spec_accepts_alias():
    model_type, spec = resolve_model_spec({"type": "resnet", "params": {"n_residual_blocks": 4}})
    assert model_type == "resnet_observer"
    assert spec == LearnedObserverSpec(n_residual_blocks=4)


@pytest.mark.parametrize("alias", ["SR", "sr-cnn", "srcnn"])
def test_normalize_model_type_aliases(alias):
    assert normalize_model_type(alias) == "srcnn"


def test_resolve_model_spec_rejects_unknown_type():
    with pytest.raises(ValueError, match="Unsupported model.type"):
        resolve_model_spec({"type": "unet", "params": {}})


def test_resolve_model_spec_rejects_unknown_params():
    with pytest.raises(ValueError, match="Unknown srcnn params: dropout"):
        resolve_model_spec({"type": "srcnn", "params": {"dropout": 0.1}})


def test_resolve_model_spec_validates_values():
    with pytest.raises(ValueError, match=r"\[2, 8\]"):
        resolve_model_spec({"type": "srcnn", "params": {"n_layers": 12}})


@pytest.mark.parametrize(
    ("model_type", "spec", "expected_params"),
    [
        ("srcnn", SrcnnSpec(n_layers=2, hidden_filters=2), 81 * 2 + 2 + 25 * 2 + 1),
        ("resnet_observer", LearnedObserverSpec(n_residual_blocks=2, filters=2), (9 * 2 + 2) + 2 * 2 * (9 * 4 + 2) + 3),
    ],
)
def test_build_model_supported_types(model_type, spec, expected_params):
    net = build_model(model_type, spec, seed=0)
    assert net.parameter_count() == expected_params


def test_build_model_from_config():
    net, model_type, spec = build_model_from_config(
        {"type": "learned_observer", "params": {"filters": 4}}, seed=1
    )
    assert model_type == "resnet_observer"
    assert spec.filters == 4
    assert net.ends_with_sigmoid

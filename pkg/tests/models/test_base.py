import numpy as np
import pytest

from coop_diffusion.exceptions import NumericalDomainError, ParameterError, ShapeError
from coop_diffusion.models.base import (
    UNCONDITIONAL,
    BaseDenoiser,
    Condition,
    StageDenoiser,
    query_wrapper,
    resolve_shape,
)


class ConstantDenoiser(BaseDenoiser):
    def __init__(self, value=0.0, shape=None, name="constant"):
        self.value = value
        self.shape = shape
        self.name = name

    def _predict_eps(self, z, t, cond):
        return np.full(z.shape, self.value)


class BrokenDenoiser(BaseDenoiser):
    shape = (2,)

    def __init__(self, output):
        self.output = output

    def _predict_eps(self, z, t, cond):
        return self.output


@pytest.mark.parametrize(
    "key, expected",
    [
        ("unconditional", UNCONDITIONAL),
        ("", UNCONDITIONAL),
        ("class:cat", Condition("class", "cat")),
        ("style:ink", Condition("style", "ink")),
    ],
)
def test_condition_parse(key, expected):
    assert Condition.parse(key) == expected


def test_condition_key_round_trips():
    for cond in (UNCONDITIONAL, Condition.class_label(3), Condition.style_label("ink")):
        assert Condition.parse(cond.key) == cond
    assert str(Condition.class_label(3)) == "class:3"


@pytest.mark.parametrize("key", ["cat", "label:cat", "class"])
def test_condition_parse_rejects_bad_keys(key):
    with pytest.raises(ParameterError):
        Condition.parse(key)


def test_condition_invariants():
    with pytest.raises(ParameterError):
        Condition("class")
    with pytest.raises(ParameterError):
        Condition("unconditional", "x")
    with pytest.raises(ParameterError):
        Condition("prompt", "x")


def test_predict_eps_checks_shapes():
    model = ConstantDenoiser(shape=(2,))
    assert model.predict_eps(np.zeros((5, 2)), 3).shape == (5, 2)
    with pytest.raises(ShapeError):
        model.predict_eps(np.zeros((5, 3)), 3)

    any_grid = ConstantDenoiser()
    assert any_grid.predict_eps(np.zeros((4, 6)), 3).shape == (4, 6)
    with pytest.raises(ShapeError):
        any_grid.predict_eps(np.zeros(4), 3)


def test_predict_eps_checks_outputs():
    with pytest.raises(ShapeError):
        BrokenDenoiser(np.zeros(3)).predict_eps(np.zeros(2), 1)
    with pytest.raises(NumericalDomainError, match="non-finite prediction at t=1"):
        BrokenDenoiser(np.array([0.0, np.nan])).predict_eps(np.zeros(2), 1)


def test_query_wrappers_nest():
    calls = []

    def make_wrapper(tag):
        def wrapper(execute, model, z, t, cond):
            calls.append((tag, model.name, t, cond.key))
            return execute(model, z, t, cond)

        return wrapper

    model = ConstantDenoiser(1.0, shape=(2,))
    with query_wrapper(make_wrapper("outer")):
        with query_wrapper(make_wrapper("inner")):
            model.predict_eps(np.zeros(2), 7, Condition.class_label("a"))
        model.predict_eps(np.zeros(2), 6)
    model.predict_eps(np.zeros(2), 5)

    assert calls == [
        ("outer", "constant", 7, "class:a"),
        ("inner", "constant", 7, "class:a"),
        ("outer", "constant", 6, "unconditional"),
    ]


def test_stage_denoiser_delegates():
    inner = ConstantDenoiser(0.5, shape=(3,))
    stage = StageDenoiser(inner, "structure")
    assert stage.name == "structure"
    assert stage.shape == (3,)
    np.testing.assert_array_equal(stage.predict_eps(np.zeros(3), 1), [0.5, 0.5, 0.5])


def test_resolve_shape():
    assert resolve_shape(ConstantDenoiser(shape=(2,)), None) == (2,)
    assert resolve_shape(ConstantDenoiser(), [4, 4]) == (4, 4)
    with pytest.raises(ShapeError):
        resolve_shape(ConstantDenoiser(), None)

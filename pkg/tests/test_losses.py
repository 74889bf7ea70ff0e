import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_differences, relative_error
from labelfuse.errors import InvalidInputError
from labelfuse.losses import (
    LossConfig, cluster_loss, instance_loss, log_softmax, semantic_loss, weighted_total,
)
from labelfuse.raster_io import INSTANCE, UNKNOWN, LabelRaster


def test_log_softmax_is_stable():
    out = log_softmax(np.array([[1000.0, 0.0], [-1000.0, -1000.0]]))
    np.testing.assert_allclose(out, [[0.0, -1000.0], [-math.log(2), -math.log(2)]])


def test_cluster_loss_examples():
    labels = np.array([3, 0])
    x = np.zeros((6, 21))
    value, grad = cluster_loss(labels, x)
    assert value == pytest.approx(math.log(21), abs=1e-15)
    peaked = np.zeros((6, 21))
    peaked[:3, 3] = 30
    peaked[3:, 0] = 30
    assert cluster_loss(labels, peaked)[0] < 1e-9
    with pytest.raises(InvalidInputError):
        cluster_loss(labels, np.zeros((5, 21)))
    with pytest.raises(InvalidInputError):
        cluster_loss([UNKNOWN], np.zeros((2, 21)))


def test_semantic_loss_examples():
    target = LabelRaster(np.array([[1, 2], [UNKNOWN, 0]]))
    x = np.zeros((2, 2, 4))
    assert semantic_loss(target, x)[0] == pytest.approx(math.log(4))
    peaked = np.zeros((2, 2, 4))
    peaked[0, 0, 1] = peaked[0, 1, 2] = peaked[1, 1, 0] = 40
    assert semantic_loss(target, peaked)[0] < 1e-12
    value, grad = semantic_loss(LabelRaster.unknown(2, 2), x)
    assert value == 0.0 and not grad.any()
    with pytest.raises(InvalidInputError):
        semantic_loss(LabelRaster(np.array([[5]])), np.zeros((1, 1, 4)))


def test_instance_loss_examples():
    a = LabelRaster(np.array([[0, 1, UNKNOWN]]), INSTANCE)
    x = np.zeros((1, 3, 5))
    x[0, 0, 0] = x[0, 1, 1] = 40
    assert instance_loss(a, a, x)[0] < 1e-12
    both_unknown = LabelRaster.unknown(3, 1, INSTANCE)
    value, grad = instance_loss(both_unknown, both_unknown, np.random.default_rng(0).normal(size=(1, 3, 5)))
    assert value == 0.0 and not grad.any()
    # agreeing sources double the weight in sum mode
    one = LabelRaster(np.array([[2]]), INSTANCE)
    flat = np.zeros((1, 1, 5))
    assert instance_loss(one, one, flat)[0] == pytest.approx(2 * math.log(5))
    assert instance_loss(one, one, flat, "mean")[0] == pytest.approx(math.log(5))
    assert instance_loss(one, LabelRaster.unknown(1, 1, INSTANCE), flat)[0] == pytest.approx(math.log(5))
    with pytest.raises(InvalidInputError):
        instance_loss(one, one, flat, "max")


def _random_case(seed, kind):
    rng = np.random.default_rng(seed)
    if kind == "cluster":
        labels = rng.integers(0, 21, 5)
        x = rng.normal(0, 2, (20, 21))
        return (lambda z: cluster_loss(labels, z)), x
    if kind == "semantic":
        t = rng.integers(0, 6, (4, 5))
        t[rng.random((4, 5)) < 0.3] = UNKNOWN
        x = rng.normal(0, 2, (4, 5, 6))
        return (lambda z: semantic_loss(LabelRaster(t), z)), x
    a = rng.integers(0, 7, (4, 5))
    b = rng.integers(0, 7, (4, 5))
    a[rng.random((4, 5)) < 0.3] = UNKNOWN
    b[rng.random((4, 5)) < 0.3] = UNKNOWN
    x = rng.normal(0, 2, (4, 5, 7))
    mode = "sum" if seed % 2 == 0 else "mean"
    return (lambda z: instance_loss(LabelRaster(a, INSTANCE), LabelRaster(b, INSTANCE), z, mode)), x


@pytest.mark.parametrize("kind", ["cluster", "semantic", "instance"])
@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(kind, seed):
    f, x = _random_case(seed, kind)
    _, grad = f(x)
    fd = central_differences(lambda z: f(z)[0], x)
    assert relative_error(grad, fd) < 1e-4


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["cluster", "semantic", "instance"]),
       st.floats(-50, 50))
def test_loss_invariants(seed, kind, shift):
    f, x = _random_case(seed, kind)
    value, grad = f(x)
    assert value >= 0
    np.testing.assert_allclose(grad.sum(-1), 0, atol=1e-10)
    shifted = x + shift
    assert abs(f(shifted)[0] - value) < 1e-9 * max(1, value)


def test_instance_loss_bound():
    rng = np.random.default_rng(0)
    a = LabelRaster(rng.integers(0, 3, (3, 3)), INSTANCE)
    x = rng.normal(0, 3, (3, 3, 3))
    value, _ = instance_loss(a, a, x)
    per_pixel = -log_softmax(x.reshape(-1, 3))[np.arange(9), a.labels.ravel()]
    assert value == pytest.approx(2 * per_pixel.mean())


def test_weighted_total():
    assert weighted_total(1.0, 2.0) == pytest.approx(0.2 + 0.4)
    assert weighted_total(1.0, 1.0, LossConfig(lambda_sem=1.0, lambda_ins=0.0)) == 1.0

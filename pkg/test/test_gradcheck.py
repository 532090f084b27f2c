from __future__ import annotations

from dataclasses import replace
from typing import Callable

import numpy as np
import pytest

from conftest import TINY, unit_rows
from locktune.config.models import LabConfig
from locktune.contrastive.loss import contrastive_step_loss
from locktune.encoders.vision import POS_EMBED, embed_image, init_vision_weights
from locktune.errors import GraphError
from locktune.tensor import Tensor, grad_check, ops

SEEDS = range(10)


def _weighted_sum(y: Tensor, seed: int) -> Tensor:
    """Random projection to a scalar so every output entry matters."""
    w = np.random.default_rng(seed + 100).normal(size=y.shape)
    return ops.sum(ops.mul(y, w))


def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _normal(rng, shape):
    return rng.normal(size=shape)


MASK = np.array([[True, True, False], [True, False, True]])

# name -> (input shape, sampler, f)
PRIMITIVES: dict[str, tuple[tuple[int, ...], Callable, Callable[[Tensor], Tensor]]] = {
    "gelu": ((3, 4), _normal, ops.gelu),
    "exp": ((3, 4), _normal, ops.exp),
    "log": ((3, 4), _positive, ops.log),
    "l2_normalize": ((3, 4), _normal, ops.l2_normalize),
    "softmax": ((3, 4), _normal, ops.softmax),
    "softmax_masked": ((2, 3), _normal, lambda x: ops.softmax(x, mask=MASK)),
    "log_softmax_rows": ((3, 4), _normal, lambda x: ops.log_softmax(x, axis=1)),
    "log_softmax_cols": ((3, 4), _normal, lambda x: ops.log_softmax(x, axis=0)),
    "layer_norm": ((2, 3, 5), _normal, lambda x: ops.layer_norm(x, np.linspace(0.5, 1.5, 5), np.arange(5.0))),
    "matmul_left": ((2, 3, 4), _normal, lambda x: ops.matmul(x, np.arange(20.0).reshape(4, 5) / 10.0)),
    "matmul_right": ((4, 5), _normal, lambda x: ops.matmul(np.arange(24.0).reshape(2, 3, 4) / 10.0, x)),
    "transpose_reshape": ((2, 3, 4), _normal, lambda x: ops.reshape(ops.transpose(x, (2, 0, 1)), (4, 6))),
    "concat": ((2, 3), _normal, lambda x: ops.concat([x, ops.scale(x, 2.0)], axis=1)),
    "slice_axis": ((3, 5), _normal, lambda x: ops.slice_axis(x, 1, 1, 4)),
    "broadcast_to": ((4,), _normal, lambda x: ops.broadcast_to(x, (2, 3, 4))),
    "row_mul": ((4,), _normal, lambda x: ops.mul(np.arange(12.0).reshape(3, 4), x)),
    "sub": ((3, 4), _normal, lambda x: ops.sub(ops.mul(x, x), x)),
    "mean": ((3, 4), _normal, lambda x: ops.mean(x, axis=0)),
    "embedding": ((5, 3), _normal, lambda x: ops.embedding(x, np.array([[0, 4, 4], [2, 1, 0]]))),
    "masked_mean": ((2, 3, 4), _normal, lambda x: ops.masked_mean(x, MASK)),
}


# -------------------------------------------------------------------------------------------------
# primitives
# -------------------------------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_central_differences(name: str):
    shape, sample, fn = PRIMITIVES[name]
    for seed in SEEDS:
        x = sample(np.random.default_rng(seed), shape)
        report = grad_check(lambda t: _weighted_sum(fn(t), seed), x)
        assert report.passed, f"{name} seed={seed}: {report.max_rel_error:.2e} at {report.worst_index}"


def test_layer_norm_gain_and_bias_gradients(rng):
    x = rng.normal(size=(3, 6))
    beta = rng.normal(size=6)
    report = grad_check(lambda g: _weighted_sum(ops.layer_norm(x, g, beta), 0), rng.uniform(0.5, 1.5, 6))
    assert report.passed
    gamma = rng.uniform(0.5, 1.5, 6)
    report = grad_check(lambda b: _weighted_sum(ops.layer_norm(x, gamma, b), 1), beta)
    assert report.passed


def test_linear_function_is_exact_even_with_coarse_step():
    w = np.random.default_rng(7).uniform(1.0, 2.0, size=(3, 4))
    report = grad_check(lambda x: ops.sum(ops.mul(x, w)), np.ones((3, 4)), step=1e-2)
    np.testing.assert_allclose(report.analytic, w)
    assert report.max_rel_error < 1e-10


def test_corrupted_backward_is_reported():
    def doubled(x: Tensor) -> Tensor:
        return ops.custom_op("bad_identity", [x], x.data, lambda g: (2.0 * g,))

    report = grad_check(lambda x: ops.sum(doubled(x)), np.array([0.3, -1.2, 2.0]))
    assert not report.passed
    assert report.max_rel_error == pytest.approx(0.5)
    np.testing.assert_allclose(report.analytic, 2.0)
    np.testing.assert_allclose(report.numeric, 1.0, atol=1e-8)


def test_denominator_floor_keeps_zero_gradients_quiet():
    report = grad_check(lambda x: ops.sum(ops.scale(x, 0.0)), np.ones(4))
    assert report.max_rel_error == 0.0
    assert report.passed


def test_grad_check_needs_scalar_output():
    with pytest.raises(GraphError):
        grad_check(lambda x: ops.scale(x, 2.0), np.ones(3))


# -------------------------------------------------------------------------------------------------
# composite: ViT forward + contrastive loss
# -------------------------------------------------------------------------------------------------

@pytest.mark.parametrize("pooling,param", [("map", "vision.pool.probe"), ("cls_token", "vision.pool.cls_token"), ("mean", POS_EMBED)])
def test_vit_contrastive_loss_gradient(pooling: str, param: str):
    vcfg = replace(LabConfig.from_obj(TINY).vision, pooling=pooling).validate()
    weights = init_vision_weights(replace(vcfg, init_std=0.5), seed=3)
    rng = np.random.default_rng(5)
    images = rng.normal(size=(2, 3, vcfg.image_size, vcfg.image_size))
    txt = Tensor(unit_rows(rng, 2, vcfg.output_dim))

    def loss(p: Tensor) -> Tensor:
        weights.params[param] = p
        return contrastive_step_loss(embed_image(images, weights, vcfg), txt, 2.0)

    report = grad_check(loss, weights[param].data, tol=1e-3)
    assert report.passed, f"{pooling}: {report.max_rel_error:.2e} at {report.worst_index}"

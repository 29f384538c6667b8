"""Hyperbolic feature encodings: geometry identities and gradients."""
import numpy as np
import pytest

import graphcd.tensor as tz
from graphcd.encoding import (EncodingConfig, apply_encoding, concat_encoding,
                              encoded_dim, lorentz_project, minkowski_inner,
                              poincare_project, tangent_logmap)
from graphcd.tensor import Tensor


def test_encoding_config_validation():
    with pytest.raises(ValueError):
        EncodingConfig(kind="spherical")
    with pytest.raises(ValueError):
        EncodingConfig(curvature=-1.0)
    EncodingConfig(kind="none", curvature=0.0)


def test_disk_projection_norm_identity():
    # closed form: output row norm is 1 / (1 + sqrt(1 + c ||x||^2))
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 6)) * 3.0
    c = 0.7
    out = poincare_project(Tensor(x), c).data
    n = np.linalg.norm(x, axis=1)
    expected = 1.0 / (1.0 + np.sqrt(1.0 + c * n * n))
    assert np.allclose(np.linalg.norm(out, axis=1), expected)
    assert np.all(np.linalg.norm(out, axis=1) < 0.5 + 1e-12)


def test_disk_projection_preserves_direction():
    x = np.array([[3.0, 4.0]])
    out = poincare_project(Tensor(x), 1.0).data
    assert np.allclose(out / np.linalg.norm(out), x / np.linalg.norm(x))


def test_disk_projection_gradient():
    rng = np.random.default_rng(1)
    xt = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
    coef = Tensor(rng.standard_normal((6, 4)))

    def f():
        return tz.sum_all(tz.mul(poincare_project(xt, 0.3), coef))

    rep = tz.finite_diff_check(f, {"x": xt})
    assert rep.ok, str(rep)


def test_disk_projection_zero_row_convention():
    # the map is discontinuous at the origin; zero rows are pinned to
    # zero and their (sub)gradient is defined as zero
    x = np.zeros((2, 3))
    x[1] = [1.0, 0.0, 0.0]
    xt = Tensor(x, requires_grad=True)
    with tz.Tape() as tape:
        out = poincare_project(xt, 0.3)
        assert np.all(out.data[0] == 0.0)
        tape.backward(tz.sum_all(out))
    assert np.all(xt.grad[0] == 0.0)
    assert np.all(np.isfinite(xt.grad))


def test_disk_projection_rejects_nonfinite():
    with pytest.raises(ValueError):
        poincare_project(Tensor([[np.inf, 0.0]]), 0.1)


def test_hyperboloid_lift_constraint_and_gradient():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((8, 3)) * 2.0
    xt = Tensor(x, requires_grad=True)
    out = lorentz_project(xt)
    # every lifted row satisfies <y, y>_L = -1
    assert np.allclose(minkowski_inner(out.data, out.data), -1.0)
    assert np.allclose(out.data[:, 1:], x)
    coef = Tensor(rng.standard_normal((8, 4)))
    rep = tz.finite_diff_check(
        lambda: tz.sum_all(tz.mul(lorentz_project(xt), coef)), {"x": xt})
    assert rep.ok, str(rep)


def test_logmap_inverts_geodesic_distance():
    # the log map at the origin has length equal to the hyperbolic
    # distance arcosh(-<o, y>_L) = arcosh(t)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((10, 4))
    lifted = lorentz_project(Tensor(x))
    tan = tangent_logmap(lifted).data
    t = lifted.data[:, 0]
    assert np.allclose(np.linalg.norm(tan, axis=1), np.arccosh(t))
    # and it preserves the spatial direction
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    assert np.allclose(tan / np.linalg.norm(tan, axis=1, keepdims=True), unit)


def test_logmap_origin_row_maps_to_zero():
    x = np.zeros((1, 3))
    tan = tangent_logmap(lorentz_project(Tensor(x)))
    assert np.all(tan.data == 0.0)


def test_logmap_rejects_off_hyperboloid_rows():
    with pytest.raises(ValueError):
        tangent_logmap(Tensor([[1.0, 1.0, 1.0]]))


def test_logmap_gradient():
    rng = np.random.default_rng(4)
    xt = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
    coef = Tensor(rng.standard_normal((6, 3)))
    rep = tz.finite_diff_check(
        lambda: tz.sum_all(tz.mul(tangent_logmap(lorentz_project(xt)), coef)),
        {"x": xt})
    assert rep.ok, str(rep)


def test_apply_encoding_shapes_and_passthrough():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((7, 5)))
    for kind in ("poincare", "lorentz", "tangent", "none"):
        cfg = EncodingConfig(kind=kind, curvature=0.2)
        out = apply_encoding(x, cfg)
        assert out.shape == (7, encoded_dim(5, cfg))
        if kind == "none":
            assert out is x
        else:
            # original features occupy the leading columns
            assert np.allclose(out.data[:, :5], x.data)


def test_concat_encoding_gradient_splits():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    with tz.Tape() as tape:
        out = concat_encoding(a, b)
        tape.backward(tz.sum_all(tz.scale(out, 2.0)))
    assert np.allclose(a.grad, 2.0) and np.allclose(b.grad, 2.0)

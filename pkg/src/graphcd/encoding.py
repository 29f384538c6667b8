"""Hyperbolic positional encodings applied to node features.

Three projections of Euclidean rows into hyperbolic coordinates: the
curvature-scaled disk projection, the hyperboloid lift, and the log map
into the tangent space at the hyperboloid origin. All are differentiable
through the tape and handle the zero-row singular limit explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _accum, _result, concat_cols

ENCODING_KINDS = ("poincare", "lorentz", "tangent", "none")


@dataclass(frozen=True)
class EncodingConfig:
    """Which positional encoding to concatenate onto the features."""

    kind: str = "poincare"
    curvature: float = 0.1

    def __post_init__(self):
        if self.kind not in ENCODING_KINDS:
            raise ValueError(f"unknown encoding kind '{self.kind}'")
        if self.curvature < 0:
            raise ValueError("curvature must be non-negative")


def poincare_project(x: Tensor, c: float) -> Tensor:
    """Disk projection x / (||x|| (1 + sqrt(1 + c||x||^2))) per row.

    Output row norms equal 1/(1 + sqrt(1 + c||x||^2)) <= 1/2; zero rows map
    to zero rows (the analytic limit of the expression as ||x|| -> 0).
    """
    if not np.all(np.isfinite(x.data)):
        raise ValueError("non-finite input to disk projection")
    if c < 0:
        raise ValueError("curvature must be non-negative")
    xd = x.data
    sq = (xd * xd).sum(axis=1, keepdims=True)
    norm = np.sqrt(sq)
    root = np.sqrt(1.0 + c * sq)
    denom = norm * (1.0 + root)
    zero = norm[:, 0] == 0.0
    safe = np.where(zero[:, None], 1.0, denom)
    out = np.where(zero[:, None], 0.0, xd / safe)

    def backward(g):
        # d out / d x = I/denom - x x^T * d(denom)/d||x|| / (denom^2 ||x||)
        # with d(denom)/d||x|| = (1 + root) + c ||x||^2 / root.
        ddenom = (1.0 + root) + c * sq / root
        coef = ddenom / (safe * safe * np.where(zero[:, None], 1.0, norm))
        gx = g / safe - xd * ((g * xd).sum(axis=1, keepdims=True)) * coef
        gx[zero] = 0.0
        _accum(x, gx)

    return _result(out, (x,), backward)


def lorentz_project(x: Tensor) -> Tensor:
    """Hyperboloid lift [sqrt(1 + ||x||^2) || x]; rows satisfy <y,y>_L = -1."""
    if not np.all(np.isfinite(x.data)):
        raise ValueError("non-finite input to hyperboloid lift")
    xd = x.data
    t = np.sqrt(1.0 + (xd * xd).sum(axis=1, keepdims=True))
    out = np.concatenate([t, xd], axis=1)

    def backward(g):
        _accum(x, g[:, 1:] + g[:, :1] * xd / t)

    return _result(out, (x,), backward)


def minkowski_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise inner product with signature (-, +, ..., +)."""
    return (a[:, 1:] * b[:, 1:]).sum(axis=1) - a[:, 0] * b[:, 0]


def tangent_logmap(x_l: Tensor, tol: float = 1e-6) -> Tensor:
    """Log map at the origin o = [1, 0, ..., 0] of the hyperboloid.

    Input rows must lie on the hyperboloid (Minkowski self-inner -1 within
    `tol`). For a lifted row [t || x] the map reduces to
    (arcosh(t)/sqrt(t^2 - 1)) * x, returning the spatial d columns; the
    origin itself maps to the zero row without dividing by zero.
    """
    xd = x_l.data
    inner = minkowski_inner(xd, xd)
    if np.any(np.abs(inner + 1.0) > tol):
        bad = int(np.argmax(np.abs(inner + 1.0)))
        raise ValueError(f"row {bad} is off the hyperboloid "
                         f"(self inner product {inner[bad]:.3e})")
    t = xd[:, :1]
    spatial = xd[:, 1:]
    rad = t * t - 1.0
    origin = rad[:, 0] <= 0.0
    safe = np.where(origin[:, None], 1.0, rad)
    coef = np.where(origin[:, None], 1.0, np.arccosh(np.maximum(t, 1.0))
                    / np.sqrt(safe))
    out = coef * spatial

    def backward(g):
        gs = g * coef
        # d coef / d t = 1/(t^2-1) - t arcosh(t)/(t^2-1)^{3/2}
        dcoef = np.where(origin[:, None], 0.0,
                         1.0 / safe - t * np.arccosh(np.maximum(t, 1.0))
                         / np.power(safe, 1.5))
        gt = (g * spatial).sum(axis=1, keepdims=True) * dcoef
        _accum(x_l, np.concatenate([gt, gs], axis=1))

    return _result(out, (x_l,), backward)


def concat_encoding(x: Tensor, x_enc: Tensor) -> Tensor:
    """[x || encoding]; columns 0..d are x, the rest the encoding."""
    return concat_cols(x, x_enc)


def apply_encoding(x: Tensor, cfg: EncodingConfig) -> Tensor:
    """Feature matrix with the configured encoding concatenated.

    `none` returns x unchanged; every other kind returns the column
    concatenation of x with its projection.
    """
    if cfg.kind == "none":
        return x
    if cfg.kind == "poincare":
        enc = poincare_project(x, cfg.curvature)
    elif cfg.kind == "lorentz":
        enc = lorentz_project(x)
    else:
        enc = tangent_logmap(lorentz_project(x))
    return concat_encoding(x, enc)


def encoded_dim(d: int, cfg: EncodingConfig) -> int:
    """Column count of apply_encoding output for d input columns."""
    if cfg.kind == "none":
        return d
    if cfg.kind == "lorentz":
        return 2 * d + 1
    return 2 * d

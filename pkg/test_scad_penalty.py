#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
SCAD 惩罚测试脚本
分段取值、导数、fSCAD 数值积分与子区间近似、LQA 权重矩阵
"""

import os
import sys

import numpy as np
from numpy.testing import assert_allclose

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from bspline_basis import SplineFunction, make_basis
from scad_penalty import (ScadParams, fscad_approx, fscad_value, lqa_matrix, lqa_quadratic, scad, scad_deriv,
                          subinterval_scale)
from suite_runner import run_suite

UNIT = ScadParams(1.0)


def linear_spline(M, slope, intercept=0.0):
    """在 [0,1] 上精确表示 intercept + slope·t 的三次样条"""
    basis = make_basis(1.0, M, 3)
    knots = basis.full_knots
    greville = np.array([knots[k + 1:k + 4].mean() for k in range(basis.size)])
    return SplineFunction(basis, intercept + slope * greville)


def constant_spline(M, value):
    basis = make_basis(1.0, M, 3)
    return SplineFunction(basis, np.full(basis.size, float(value)))


def expect_error(func, *args):
    try:
        func(*args)
    except ValueError:
        return
    raise AssertionError(f"{func.__name__} 应当抛出 ValueError")


def test_scad_branch_values():
    assert scad(0.0, UNIT) == 0.0
    assert abs(scad(0.5, UNIT) - 0.5) < 1e-15
    assert abs(scad(5.0, UNIT) - 2.35) < 1e-12
    assert abs(scad(2.0, UNIT) - 9.8 / 5.4) < 1e-12
    # 分段点处连续
    for point in (1.0, 3.7):
        assert abs(scad(point - 1e-10, UNIT) - scad(point + 1e-10, UNIT)) < 1e-8
    assert_allclose(scad(np.array([3.7, 10.0, 100.0]), UNIT), 2.35, rtol=1e-12)
    assert np.all(scad(np.linspace(0, 3, 7), ScadParams(0.0)) == 0.0)


def test_scad_is_non_decreasing():
    u = np.linspace(0, 10, 10001)
    for lam in (0.1, 1.0, 2.5):
        values = scad(u, ScadParams(lam))
        assert np.all(np.diff(values) >= -1e-14)


def test_scad_deriv_values():
    assert scad_deriv(0.5, UNIT) == 1.0
    assert abs(scad_deriv(2.0, UNIT) - 1.7 / 2.7) < 1e-12
    assert scad_deriv(3.7, UNIT) == 0.0
    assert np.all(scad_deriv(np.array([4.0, 50.0]), UNIT) == 0.0)
    u = np.linspace(0, 5, 501)
    assert np.all(np.diff(scad_deriv(u, UNIT)) <= 1e-15)


def test_scad_deriv_matches_finite_differences():
    rng = np.random.default_rng(7)
    h = 1e-6
    for lam in (0.3, 1.0):
        params = ScadParams(lam)
        u = rng.uniform(2e-4, 5 * lam, 500)
        away = (np.abs(u - lam) >= 1e-4) & (np.abs(u - params.a * lam) >= 1e-4)
        u = u[away]
        numeric = (scad(u + h, params) - scad(u - h, params)) / (2 * h)
        assert np.max(np.abs(numeric - scad_deriv(u, params))) < 1e-6


def test_invalid_arguments():
    expect_error(scad, -0.1, UNIT)
    expect_error(scad_deriv, -1.0, UNIT)
    expect_error(ScadParams, -1.0)
    expect_error(ScadParams, 1.0, 2.0)
    expect_error(lqa_quadratic, 1.0, 0.0, UNIT)
    expect_error(fscad_value, constant_spline(4, 1.0), UNIT, 50)


def test_fscad_value():
    assert fscad_value(constant_spline(5, 0.0), UNIT) == 0.0
    assert abs(fscad_value(constant_spline(5, 4.0), UNIT) - 2.35) < 1e-10
    # ∫₀¹ p₁(5t) dt 的分段闭式解
    assert abs(fscad_value(linear_spline(10, 5.0), UNIT, 1_000_000) - 1.7370) < 1e-4


def test_fscad_approx():
    assert fscad_approx(constant_spline(20, 0.0), UNIT) == 0.0
    assert abs(fscad_approx(constant_spline(20, 4.0), UNIT) - 20 * 2.35) < 1e-9
    beta = linear_spline(500, 5.0)
    ratio = fscad_approx(beta, UNIT) / 500
    exact = fscad_value(beta, UNIT)
    assert abs(ratio - exact) / exact < 0.01
    expect_error(fscad_approx, beta, UNIT, 0)


def test_subinterval_average_converges_to_fscad():
    rng = np.random.default_rng(42)
    basis = make_basis(1.0, 10, 3)
    for _ in range(10):
        beta = SplineFunction(basis, rng.standard_normal(basis.size))
        for lam in (0.1, 1.0):
            params = ScadParams(lam)
            exact = fscad_value(beta, params)
            averages = [fscad_approx(beta, params, m) / m for m in (50, 200, 1000)]
            gaps = [abs(value - exact) for value in averages]
            assert gaps[2] / exact < 0.02
            assert abs(averages[2] - averages[1]) <= abs(averages[1] - averages[0]) + 1e-6


def test_lqa_quadratic_tangency():
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(200):
        lam = rng.uniform(0.1, 2.0)
        params = ScadParams(lam)
        u0 = rng.uniform(1e-3, 5 * lam)
        if min(abs(u0 - lam), abs(u0 - params.a * lam)) < 1e-4:
            continue
        assert lqa_quadratic(u0, u0, params) == scad(u0, params)
        slope = (lqa_quadratic(u0 + h, u0, params) - lqa_quadratic(u0 - h, u0, params)) / (2 * h)
        assert abs(slope - scad_deriv(u0, params)) < 1e-6


def test_lqa_matrix_trivial_cases():
    beta = constant_spline(10, 0.5)
    W, dead = lqa_matrix(beta, ScadParams(0.0), 1e-10)
    assert np.all(W == 0.0) and dead == set()
    W, dead = lqa_matrix(constant_spline(10, 5.0), UNIT, 1e-10)
    assert np.all(W == 0.0) and dead == set()


def test_lqa_matrix_first_branch_weights():
    beta = constant_spline(10, 0.5)
    W, dead = lqa_matrix(beta, UNIT, 1e-10)
    assert dead == set()
    b = beta.coefficients
    # ½ Σ_j (λ/c_j)(M/T)∫_j β² = 10 · ½ · (1/0.5) · 10 · 0.025
    assert abs(b @ W @ b - 2.5) < 1e-12
    assert_allclose(subinterval_scale(beta), 0.5, rtol=1e-12)


def test_lqa_matrix_dead_subintervals():
    basis = make_basis(1.0, 10, 3)
    coefficients = np.ones(basis.size)
    coefficients[:5] = 0.0
    beta = SplineFunction(basis, coefficients)
    W, dead = lqa_matrix(beta, UNIT, 1e-10)
    assert dead == {1, 2}
    # 死区间不贡献权重, 只与死区间相连的系数所在行为零
    assert np.all(W[:2] == 0.0)


def test_lqa_matrix_is_positive_semidefinite():
    rng = np.random.default_rng(9)
    basis = make_basis(1.0, 15, 3)
    for _ in range(20):
        beta = SplineFunction(basis, 2 * rng.standard_normal(basis.size))
        W, _ = lqa_matrix(beta, ScadParams(rng.uniform(0.1, 2.0)), 1e-10)
        assert_allclose(W, W.T, atol=1e-14)
        eigenvalues = np.linalg.eigvalsh(W)
        assert eigenvalues.min() >= -1e-10 * max(eigenvalues.max(), 1.0)


def run_all_tests():
    return run_suite("SCAD惩罚", globals())


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)

#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
B样条基函数测试脚本
基函数个数、单位分解、紧支撑、Gram / 惩罚 / 子区间矩阵与设计矩阵
"""

import os
import sys

import numpy as np
from numpy.testing import assert_allclose

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from bspline_basis import (PiecewiseSpline, SplineFunction, basis_matrix, design_matrix, eval_basis,
                           gram_matrix, l2_norm_on_subinterval, make_basis, penalty_matrix, subinterval_gram)
from suite_runner import run_suite


def greville(basis):
    """Greville 横坐标: 线性函数 a+bt 的样条系数恰为 a+bξ_k"""
    knots = basis.full_knots
    d = basis.degree
    return np.array([knots[k + 1:k + d + 1].mean() for k in range(basis.size)])


def expect_error(func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except ValueError:
        return
    raise AssertionError(f"{func.__name__} 应当抛出 ValueError")


def test_make_basis_sizes():
    assert make_basis(1.0, 20, 3).size == 23
    single = make_basis(1.0, 1, 0)
    assert single.size == 1
    assert_allclose(basis_matrix(single, np.linspace(0, 1, 11)), np.ones((11, 1)))
    weather = make_basis(365.0, 50, 3)
    assert weather.size == 53
    assert abs(weather.spacing - 7.3) < 1e-12
    assert_allclose(np.diff(weather.knots), 7.3, rtol=1e-12)


def test_make_basis_invalid_arguments():
    expect_error(make_basis, 1.0, 0, 3)
    expect_error(make_basis, 0.0, 10, 3)
    expect_error(make_basis, -1.0, 10, 3)


def test_partition_of_unity():
    rng = np.random.default_rng(11)
    for T, M, d in [(1.0, 20, 3), (365.0, 50, 3), (2.0, 7, 5)]:
        basis = make_basis(T, M, d)
        t = rng.uniform(0, T, 1000)
        values = basis_matrix(basis, t)
        assert np.all(values >= -1e-14)
        assert np.max(np.abs(values.sum(axis=1) - 1.0)) < 1e-10


def test_eval_basis_endpoints_and_support():
    basis = make_basis(1.0, 20, 3)
    at_zero = eval_basis(basis, 0.0)
    assert abs(at_zero[0] - 1.0) < 1e-14 and np.all(np.abs(at_zero[1:]) < 1e-14)
    at_end = eval_basis(basis, 1.0)
    assert abs(at_end[-1] - 1.0) < 1e-14

    values = eval_basis(basis, 0.2)
    assert np.count_nonzero(values) <= basis.degree + 1
    # 第 6 个基函数 (0 起始下标 5) 只在 [0.1, 0.3] 上非零
    t = np.linspace(0, 1, 2001)
    column = basis_matrix(basis, t)[:, 5]
    outside = (t < 0.1 - 1e-12) | (t > 0.3 + 1e-12)
    assert np.all(column[outside] == 0.0)
    assert values[5] > 0
    assert basis.coefficient_support(5) == (2, 5)


def test_eval_basis_invalid_arguments():
    basis = make_basis(1.0, 20, 3)
    expect_error(eval_basis, basis, 1.5)
    expect_error(eval_basis, basis, -0.1)
    expect_error(eval_basis, basis, 0.5, 4)


def test_compact_support():
    basis = make_basis(1.0, 12, 3)
    knots = basis.full_knots
    t = np.linspace(0, 1, 4001)
    values = basis_matrix(basis, t)
    for k in range(basis.size):
        outside = (t < knots[k]) | (t > knots[k + basis.degree + 1])
        assert np.all(values[outside, k] == 0.0), f"基函数 {k} 在支撑外非零"


def test_derivative_matches_finite_differences():
    basis = make_basis(1.0, 10, 3)
    rng = np.random.default_rng(5)
    h = 1e-6
    j = rng.integers(0, basis.num_subintervals, 50)
    t = basis.knots[j] + basis.spacing * rng.uniform(0.1, 0.9, 50)
    analytic = basis_matrix(basis, t, 1)
    numeric = (basis_matrix(basis, t + h) - basis_matrix(basis, t - h)) / (2 * h)
    assert np.max(np.abs(analytic - numeric)) < 1e-5


def test_penalty_matrix_properties():
    basis = make_basis(1.0, 10, 3)
    V = penalty_matrix(basis, 2)
    assert_allclose(V, V.T, rtol=1e-12, atol=1e-12 * np.abs(V).max())
    linear = 0.7 - 1.3 * greville(basis)
    assert abs(linear @ V @ linear) < 1e-8
    eigenvalues = np.linalg.eigvalsh(V)
    assert np.all(eigenvalues > -1e-9 * eigenvalues.max())
    assert np.sum(np.abs(eigenvalues) < 1e-9 * eigenvalues.max()) == 2
    expect_error(penalty_matrix, basis, 4)
    expect_error(penalty_matrix, basis, 0)


def test_penalty_matrix_sine_roughness():
    basis = make_basis(1.0, 50, 3)
    spline = SplineFunction.least_squares(basis, lambda t: np.sin(2 * np.pi * t))
    roughness = spline.coefficients @ penalty_matrix(basis, 2) @ spline.coefficients
    expected = (2 * np.pi) ** 4 / 2
    assert abs(roughness - expected) / expected < 0.005


def test_subinterval_grams_sum_to_gram():
    basis = make_basis(1.0, 8, 3)
    total = sum(subinterval_gram(basis, j) for j in range(1, basis.num_subintervals + 1))
    assert_allclose(total, gram_matrix(basis), rtol=1e-12, atol=1e-15)
    ones = np.ones(basis.size)
    for j in range(1, basis.num_subintervals + 1):
        W = subinterval_gram(basis, j)
        assert abs(ones @ W @ ones - basis.length / basis.num_subintervals) < 1e-12
        nonzero = np.argwhere(W != 0)
        assert nonzero.min() >= j - 1 and nonzero.max() <= j - 1 + basis.degree
    expect_error(subinterval_gram, basis, 0)
    expect_error(subinterval_gram, basis, 9)


def test_piecewise_constant_subinterval_gram():
    basis = make_basis(1.0, 4, 0)
    for j in range(1, 5):
        W = subinterval_gram(basis, j)
        expected = np.zeros((4, 4))
        expected[j - 1, j - 1] = 0.25
        assert_allclose(W, expected, atol=1e-15)


def test_quadrature_exactness():
    basis = make_basis(1.0, 9, 3)
    for low, high in [(gram_matrix(basis), gram_matrix(basis, quad_order=8)),
                      (penalty_matrix(basis, 2), penalty_matrix(basis, 2, quad_order=8)),
                      (subinterval_gram(basis, 4), subinterval_gram(basis, 4, quad_order=8))]:
        assert_allclose(low, high, rtol=1e-12, atol=1e-12 * np.abs(high).max())


def test_design_matrix():
    basis = make_basis(1.0, 20, 3)
    grid = np.linspace(0, 1, 2001)
    zeros = design_matrix(basis, np.zeros((2, grid.size)), grid)
    assert np.all(zeros == 0.0)
    ones = design_matrix(basis, np.ones((1, grid.size)), grid)
    assert abs(ones.sum() - 1.0) < 1e-12

    curve = basis_matrix(basis, grid)[:, 4]
    U = design_matrix(basis, [curve], grid)
    assert abs(U[0, 4] - gram_matrix(basis)[4, 4]) < 1e-6


def test_design_matrix_invalid_inputs():
    basis = make_basis(1.0, 10, 3)
    grid = np.linspace(0, 1, 11)
    expect_error(design_matrix, basis, [np.ones(11), np.ones(10)], grid)
    expect_error(design_matrix, basis, [np.ones(11)], grid[::-1])
    expect_error(design_matrix, basis, [np.ones(11)], np.linspace(0, 2, 11))


def test_l2_norm_on_subinterval():
    basis = make_basis(1.0, 5, 3)
    assert l2_norm_on_subinterval(SplineFunction.zeros(basis), 3) == 0.0
    ones = SplineFunction(basis, np.ones(basis.size))
    for j in range(1, 6):
        assert abs(l2_norm_on_subinterval(ones, j) - np.sqrt(0.2)) < 1e-12

    halves = make_basis(1.0, 2, 3)
    identity = SplineFunction(halves, greville(halves))
    assert abs(l2_norm_on_subinterval(identity, 1) - np.sqrt(1.0 / 24.0)) < 1e-12
    expect_error(l2_norm_on_subinterval, identity, 3)


def test_subinterval_bound_chain():
    rng = np.random.default_rng(2024)
    basis = make_basis(1.0, 10, 3)
    factor = np.sqrt(basis.num_subintervals / basis.length)
    for _ in range(200):
        spline = SplineFunction(basis, rng.standard_normal(basis.size))
        norms = spline.subinterval_norms()
        for j in range(1, basis.num_subintervals + 1):
            a, b = basis.subinterval_bounds(j)
            values = np.abs(spline(np.linspace(a, b, 1001)))
            scaled = factor * norms[j - 1]
            assert values.min() - 1e-9 <= scaled <= values.max() + 1e-9
            assert abs(norms[j - 1] - l2_norm_on_subinterval(spline, j)) < 1e-12


def test_spline_function_validation():
    basis = make_basis(1.0, 4, 3)
    expect_error(SplineFunction, basis, np.ones(3))
    spline = SplineFunction(basis, np.arange(basis.size, dtype=float))
    assert isinstance(spline(0.5), float)
    assert isinstance(spline.derivative(0.5), float)
    assert spline(np.array([0.1, 0.2])).shape == (2,)


def test_piecewise_spline_zero_outside_pieces():
    left = SplineFunction(make_basis(0.3, 3, 3), np.ones(6))
    right = SplineFunction(make_basis(0.3, 3, 3, start=0.7), np.ones(6))
    piecewise = PiecewiseSpline([left, right], 0.0, 1.0, [(0.3, 0.7)])
    t = np.linspace(0, 1, 1001)
    values = piecewise(t)
    assert np.all(values[(t >= 0.3) & (t <= 0.7)] == 0.0)
    assert_allclose(values[t < 0.3], 1.0, atol=1e-12)
    assert_allclose(values[t > 0.7], 1.0, atol=1e-12)
    expect_error(piecewise, 1.5)


def run_all_tests():
    return run_suite("B样条基函数", globals())


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)

#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
模拟研究测试脚本
真实系数函数、协变量与响应生成、评价指标、随机数子流以及小规模蒙特卡洛运行
"""

import os
import sys

import numpy as np
import pandas as pd

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from baseline_estimators import NullRegionSpec
from bspline_basis import SplineFunction, design_matrix, make_basis, trapezoid_weights
from simulation_study import (LONG_COLUMNS, ScenarioConfig, StudyFailedError, StudyReport, TuningDefaults,
                              covariate_basis, curves_from_coefficients, gen_covariates, gen_responses, ise_metrics,
                              null_proportion, null_region_for, pmse, run_m_sensitivity, run_study,
                              simulation_grid, substream, true_beta)
from slos_solver import FitResult, FunctionalData
from suite_runner import run_suite

SMALL_TUNING = TuningDefaults(M=20, gamma_values=[1e-6, 1e-3], ols_degrees=(3,), ols_knots=(5,),
                              smooth_knots=(10,), oracle_knots=(10,), oracle_folds=3)


def expect_error(error_type, func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except error_type:
        return
    raise AssertionError(f"{func.__name__} 应当抛出 {error_type.__name__}")


def test_true_beta_cases():
    t = np.linspace(0, 1, 11)
    assert np.all(true_beta('I')(t) == 0.0)
    case_two = true_beta('II')
    assert case_two(0.5) == 0.0
    assert abs(case_two(0.2) - 1.6 * np.sin(0.8 * np.pi)) < 1e-12
    assert abs(case_two(0.2) - 0.94046) < 1e-5
    # 0.3 与 0.7 处两侧极限都为 0
    for point in (0.3, 0.7):
        assert abs(case_two(point)) < 1e-12
        assert abs(case_two(point - 1e-13)) < 1e-11 and abs(case_two(point + 1e-13)) < 1e-11
    assert abs(true_beta('III')(0.0) - 2 * np.sin(0.2)) < 1e-12
    assert abs(true_beta(3)(1.0) - (4 + 2 * np.sin(4 * np.pi + 0.2))) < 1e-12
    expect_error(ValueError, true_beta, 'IV')


def test_null_regions():
    assert null_region_for('I').intervals == [(0.0, 1.0)]
    assert null_region_for('2').intervals == [(0.3, 0.7)]
    assert null_region_for('III') is None


def test_covariate_generator():
    assert covariate_basis().size == 74
    grid = simulation_grid()
    assert grid.size == 101 and grid[0] == 0.0 and grid[-1] == 1.0
    assert np.all(curves_from_coefficients(np.zeros((3, 74)), grid) == 0.0)
    curves = gen_covariates(7, np.random.default_rng(1), grid)
    assert curves.shape == (7, 101)
    expect_error(ValueError, gen_covariates, 0, np.random.default_rng(1))


def test_covariate_mean_is_zero():
    values = gen_covariates(100_000, np.random.default_rng(2), np.array([0.5]))[:, 0]
    standard_error = np.std(values) / np.sqrt(values.size)
    assert abs(values.mean()) < 4 * standard_error


def test_case_one_noise_has_unit_variance():
    rng = np.random.default_rng(3)
    grid = simulation_grid()
    curves = gen_covariates(10_000, rng, grid)
    responses, sigma = gen_responses(curves, grid, true_beta('I'), 1.0, 'I', 4.0, rng)
    assert sigma == 1.0
    assert abs(np.var(responses) - 1.0) < 0.05
    assert abs(np.mean(responses) - 1.0) < 0.05


def test_signal_to_noise_ratio():
    rng = np.random.default_rng(4)
    grid = simulation_grid()
    curves = gen_covariates(10_000, rng, grid)
    beta = true_beta('II')
    responses, sigma = gen_responses(curves, grid, beta, 1.0, 'II', 4.0, rng)
    signal = (curves * trapezoid_weights(grid)) @ beta(grid)
    assert abs(np.var(signal, ddof=1) / sigma ** 2 - 4.0) < 1e-9
    again, reused = gen_responses(curves[:5], grid, beta, 1.0, 'II', 4.0, rng, sigma=0.25)
    assert reused == 0.25 and again.shape == (5,)
    expect_error(ValueError, gen_responses, curves, grid, true_beta('I'), 1.0, 'II', 4.0, rng)
    expect_error(ValueError, gen_responses, curves, grid, beta, 1.0, 'II', 0.0, rng)


def test_ise_metrics():
    case_two = true_beta('II')
    region = null_region_for('II')
    assert ise_metrics(case_two, case_two, region) == (0.0, 0.0)

    def shifted(t):
        return case_two(t) + 0.1

    ise0, ise1 = ise_metrics(shifted, case_two, region)
    assert abs(ise0 - 0.01) < 1e-12 and abs(ise1 - 0.01) < 1e-12

    def constant(t):
        return np.full_like(np.asarray(t, dtype=float), 0.5)

    ise0, ise1 = ise_metrics(constant, true_beta('I'), null_region_for('I'))
    assert abs(ise0 - 0.25) < 1e-12 and ise1 is None
    ise0, ise1 = ise_metrics(constant, true_beta('III'), None)
    assert ise0 is None and ise1 > 0


def test_pmse():
    rng = np.random.default_rng(5)
    grid = simulation_grid()
    basis = make_basis(1.0, 10, 3)
    beta = SplineFunction(basis, rng.standard_normal(basis.size))
    curves = gen_covariates(50, rng, grid)
    test = FunctionalData(grid, curves, 0.7 + design_matrix(basis, curves, grid) @ beta.coefficients)
    assert pmse(FitResult(beta_hat=beta, mu_hat=0.7), test) < 1e-20

    noise_curves = gen_covariates(5000, rng, grid)
    noise, _ = gen_responses(noise_curves, grid, true_beta('I'), 1.0, 'I', 4.0, rng)
    zero = FitResult(beta_hat=SplineFunction.zeros(basis), mu_hat=1.0)
    assert abs(pmse(zero, FunctionalData(grid, noise_curves, noise)) - 1.0) < 0.1


def test_null_proportion():
    region = null_region_for('II')
    basis = make_basis(1.0, 10, 3)
    assert null_proportion(SplineFunction.zeros(basis), region) == 1.0
    assert null_proportion(SplineFunction(basis, np.ones(basis.size)), region) == 0.0
    # 系数 0..6 为零时 β̂ 在 [0, 0.4] 上为零, 即 [0.3, 0.7] 中约 101/401 个点 (0.4 处取决于舍入)
    coefficients = np.ones(basis.size)
    coefficients[:7] = 0.0
    partial = null_proportion(SplineFunction(basis, coefficients), region)
    assert round(partial * 401) in (100, 101)
    expect_error(ValueError, null_proportion, SplineFunction.zeros(basis), NullRegionSpec())


def test_substreams_are_reproducible_and_distinct():
    first = substream(11, 3, 0).standard_normal(5)
    assert np.array_equal(first, substream(11, 3, 0).standard_normal(5))
    assert not np.array_equal(first, substream(11, 3, 1).standard_normal(5))
    assert not np.array_equal(first, substream(11, 4, 0).standard_normal(5))
    assert not np.array_equal(first, substream(12, 3, 0).standard_normal(5))


def test_scenario_validation():
    assert ScenarioConfig('2', 50).case == 'II'
    expect_error(ValueError, ScenarioConfig, 'II', 50, replicates=0)
    expect_error(ValueError, ScenarioConfig, 'II', 50, snr=0.0)
    expect_error(ValueError, ScenarioConfig, 'V', 50)


def test_small_study_is_deterministic():
    scenario = ScenarioConfig('II', 60, test_n=200, replicates=2, seed=7)
    methods = ('slos', 'smooth', 'ols', 'oracle')
    first = run_study(scenario, methods, SMALL_TUNING, threads=1)
    second = run_study(scenario, methods, SMALL_TUNING, threads=2)
    pd.testing.assert_frame_equal(first.records, second.records)
    assert first.failures == 0
    assert list(first.records.columns) == LONG_COLUMNS
    assert first.methods == list(methods)
    assert first.metrics == ['PMSE', 'ISE0', 'ISE1', 'null_proportion']
    assert first.values('slos', 'PMSE').size == 2
    assert np.all(np.isfinite(first.records['value']))
    assert first.sd('ols', 'PMSE') >= 0
    oracle_nulls = first.values('oracle', 'null_proportion')
    assert np.all(oracle_nulls == 1.0)


def test_case_one_and_three_omit_undefined_rows():
    case_one = run_study(ScenarioConfig('I', 60, test_n=100, seed=1), ('ols', 'oracle'), SMALL_TUNING, threads=1)
    assert case_one.methods == ['ols']
    assert 'ISE1' not in case_one.metrics and 'ISE0' in case_one.metrics
    case_three = run_study(ScenarioConfig('III', 60, test_n=100, seed=1), ('ols', 'oracle'), SMALL_TUNING, threads=1)
    assert case_three.methods == ['ols']
    assert case_three.metrics == ['PMSE', 'ISE1']


def test_summary_table_formatting():
    rows = []
    for replicate, (pmse_value, proportion) in enumerate([(0.012, 0.9), (0.014, 1.0)]):
        rows.append({'case': 'II', 'n': 150, 'method': 'slos', 'metric': 'PMSE',
                     'replicate': replicate, 'value': pmse_value})
        rows.append({'case': 'II', 'n': 150, 'method': 'slos', 'metric': 'null_proportion',
                     'replicate': replicate, 'value': proportion})
    report = StudyReport(pd.DataFrame(rows, columns=LONG_COLUMNS))
    table = report.summary_table().set_index('metric')
    assert table.loc['PMSE', 'scale'] == '1e-2'
    assert table.loc['PMSE', 'slos'] == '1.30 (0.14)'
    assert table.loc['null_proportion', 'scale'] == '%'
    assert table.loc['null_proportion', 'slos'] == '95.00 (7.07)'
    summary = report.summary()
    assert set(summary['count']) == {2}


def test_too_many_failed_replicates_raise():
    scenario = ScenarioConfig('III', 5, test_n=10, replicates=3, seed=2)
    tuning = TuningDefaults(ols_degrees=(5,), ols_knots=(15,))
    expect_error(StudyFailedError, run_study, scenario, ('ols',), tuning, 1)


def test_m_sensitivity_labels_methods():
    scenario = ScenarioConfig('III', 60, test_n=100, seed=3)
    tuning = TuningDefaults(gamma_values=[1e-5])
    report = run_m_sensitivity(scenario, [10, 20], tuning, threads=1)
    assert report.methods == ['slos_M10', 'slos_M20']
    assert report.metrics == ['PMSE', 'ISE1']
    expect_error(ValueError, run_m_sensitivity, scenario, [], tuning)


def run_all_tests():
    return run_suite("模拟研究", globals())


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)

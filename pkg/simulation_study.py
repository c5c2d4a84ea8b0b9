#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
模拟研究模块
三种真实系数函数 (Case I / II / III)、B样条随机协变量曲线、按信噪比设定噪声,
评价指标 (PMSE、ISE₀、ISE₁、零区域比例) 以及蒙特卡洛重复实验
"""

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from baseline_estimators import NullRegionSpec, select_oracle, select_ols, select_smooth
from bspline_basis import basis_matrix, make_basis, trapezoid_weights
from config import (COVARIATE_KNOTS, COVARIATE_ORDER, CV_FOLDS, MAX_FAILURE_RATE, OLS_DEGREE_GRID,
                    OLS_KNOT_GRID, ORACLE_KNOT_GRID, SIM_GRID_SIZE, SIM_MU, SIM_SNR, SIM_TEST_N,
                    SMOOTH_KNOT_GRID, THREADS)
from slos_solver import FitConfig, FitResult, FunctionalData, fit, predict
from tuning_selector import default_tuning_grid, grid_search, m_heuristic

logger = logging.getLogger('SimulationStudy')

CASES = ('I', 'II', 'III')
METHODS = ('slos', 'smooth', 'ols', 'oracle')
METRICS = ('PMSE', 'ISE0', 'ISE1', 'null_proportion')
LONG_COLUMNS = ['case', 'n', 'method', 'metric', 'replicate', 'value']

# 随机数子流的角色编号
TRAIN_STREAM = 0
TEST_STREAM = 1


class StudyFailedError(RuntimeError):
    """失败的重复次数超过上限"""

    def __init__(self, failures: int, replicates: int):
        self.failures = failures
        self.replicates = replicates
        super().__init__(f"{replicates} 次重复中有 {failures} 次失败, 超过允许比例 {MAX_FAILURE_RATE:.0%}")


def normalize_case(case) -> str:
    text = str(case).strip().upper()
    aliases = {'1': 'I', '2': 'II', '3': 'III'}
    text = aliases.get(text, text)
    if text not in CASES:
        raise ValueError(f"未知的模拟情形: {case}, 可选 I / II / III")
    return text


def true_beta(case) -> Callable[[np.ndarray], np.ndarray]:
    """Case I: β≡0; Case II: 在 (0.3, 0.7) 上为零的分段函数; Case III: 4t³ + 2sin(4πt+0.2)"""
    tag = normalize_case(case)

    def case_one(t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def case_two(t):
        t = np.asarray(t, dtype=float)
        left = 2.0 * (1.0 - t) * np.sin(2.0 * np.pi * (t + 0.2))
        right = 2.0 * t * np.sin(2.0 * np.pi * (t - 0.2))
        return np.where(t <= 0.3, left, np.where(t >= 0.7, right, 0.0))

    def case_three(t):
        t = np.asarray(t, dtype=float)
        return 4.0 * t ** 3 + 2.0 * np.sin(4.0 * np.pi * t + 0.2)

    return {'I': case_one, 'II': case_two, 'III': case_three}[tag]


def null_region_for(case) -> Optional[NullRegionSpec]:
    tag = normalize_case(case)
    if tag == 'I':
        return NullRegionSpec([(0.0, 1.0)])
    if tag == 'II':
        return NullRegionSpec([(0.3, 0.7)])
    return None


def substream(seed: int, replicate: int, role: int) -> np.random.Generator:
    """计数器型随机数生成器 Philox, 每个 (重复, 角色) 一条互不重叠的子流"""
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(replicate), int(role)))
    return np.random.Generator(np.random.Philox(sequence))


def simulation_grid(grid_size: int = SIM_GRID_SIZE) -> np.ndarray:
    if grid_size < 2:
        raise ValueError(f"网格点数至少为 2: {grid_size}")
    return np.linspace(0.0, 1.0, int(grid_size))


def covariate_basis():
    """5 阶 (4 次) B样条, 71 个等距节点, 共 74 个基函数"""
    return make_basis(1.0, COVARIATE_KNOTS - 1, COVARIATE_ORDER - 1)


def curves_from_coefficients(coefficients: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """X_i(t) = Σ_j a_ij B_j(t) 在网格上的取值"""
    return np.atleast_2d(coefficients) @ basis_matrix(covariate_basis(), grid).T


def gen_covariates(n: int, rng: np.random.Generator, grid: Optional[np.ndarray] = None) -> np.ndarray:
    """n 条随机协变量曲线, 系数 a_ij 独立标准正态"""
    if n < 1:
        raise ValueError(f"样本数必须为正: {n}")
    grid = simulation_grid() if grid is None else np.asarray(grid, dtype=float)
    coefficients = rng.standard_normal((int(n), covariate_basis().size))
    return curves_from_coefficients(coefficients, grid)


def gen_responses(curves: np.ndarray, grid: np.ndarray, beta: Callable, mu: float, case, snr: float,
                  rng: np.random.Generator, sigma: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """Y_i = μ + ∫X_iβ + σ_ε z_i; Case I 取 σ_ε=1, 其余情形 σ_ε = sd(信号)/√snr

    sigma 给定时直接使用 (测试集沿用训练集的 σ_ε)
    """
    tag = normalize_case(case)
    if not snr > 0:
        raise ValueError(f"信噪比必须为正: {snr}")
    grid = np.asarray(grid, dtype=float)
    signal = (np.atleast_2d(curves) * trapezoid_weights(grid)) @ np.asarray(beta(grid), dtype=float)
    if sigma is None:
        if tag == 'I':
            sigma = 1.0
        else:
            spread = float(np.std(signal, ddof=1)) if signal.size > 1 else 0.0
            if not spread > 0:
                raise ValueError(f"Case {tag} 的信号标准差为零, 无法按信噪比设定噪声")
            sigma = spread / np.sqrt(snr)
    noise = rng.standard_normal(signal.size)
    return mu + signal + sigma * noise, float(sigma)


def _region_integral(func: Callable, intervals: Sequence[Tuple[float, float]], points: int = 2001) -> float:
    total = 0.0
    for a, b in intervals:
        grid = np.linspace(a, b, points)
        total += float(trapezoid(func(grid), grid))
    return total


def ise_metrics(beta_hat: Callable, beta_true: Callable, null_region: Optional[NullRegionSpec],
                domain: Tuple[float, float] = (0.0, 1.0)) -> Tuple[Optional[float], Optional[float]]:
    """(ISE₀, ISE₁): 零区域 / 非零区域上按长度归一化的积分平方误差, 区域为空时为 None"""
    start, end = domain
    region = null_region if null_region is not None else NullRegionSpec([])
    null_parts = list(region.intervals)
    signal_parts = region.non_null_components(start, end)
    null_length = sum(b - a for a, b in null_parts)
    signal_length = sum(b - a for a, b in signal_parts)
    if null_length <= 0 and signal_length <= 0:
        raise ValueError("零区域与非零区域都为空")

    def squared_error(t):
        return (np.asarray(beta_hat(t), dtype=float) - np.asarray(beta_true(t), dtype=float)) ** 2

    ise0 = _region_integral(squared_error, null_parts) / null_length if null_length > 0 else None
    ise1 = _region_integral(squared_error, signal_parts) / signal_length if signal_length > 0 else None
    return ise0, ise1


def pmse(result: FitResult, test_data: FunctionalData) -> float:
    """测试集上的平均预测平方误差"""
    if test_data.n == 0:
        raise ValueError("测试集不能为空")
    residual = test_data.responses - predict(result, test_data.curves, test_data.grid)
    return float(np.mean(residual ** 2))


def null_proportion(beta_hat: Callable, null_region: NullRegionSpec, step: float = 0.001) -> float:
    """零区域内步长 step 的等距点上 β̂(t) 恰好为零的比例"""
    if null_region is None or null_region.is_empty:
        raise ValueError("零区域为空")
    points = np.concatenate([np.linspace(a, b, int(round((b - a) / step)) + 1) for a, b in null_region.intervals])
    values = np.asarray(beta_hat(points), dtype=float)
    return float(np.mean(values == 0.0))


@dataclass
class ScenarioConfig:
    """一组模拟设置"""
    case: str
    n: int
    test_n: int = SIM_TEST_N
    replicates: int = 1
    seed: int = 0
    mu_true: float = SIM_MU
    snr: float = SIM_SNR
    grid_size: int = SIM_GRID_SIZE

    def __post_init__(self):
        self.case = normalize_case(self.case)
        if self.replicates < 1:
            raise ValueError(f"重复次数至少为 1: {self.replicates}")
        if not self.snr > 0:
            raise ValueError(f"信噪比必须为正: {self.snr}")
        if self.n < 2 or self.test_n < 1:
            raise ValueError(f"样本量无效: n={self.n}, test_n={self.test_n}")


@dataclass
class TuningDefaults:
    """各方法的调参准则与候选网格"""
    slos_criterion: str = 'BIC'
    smooth_criterion: str = 'AIC'
    ols_criterion: str = 'AIC'
    oracle_folds: int = CV_FOLDS
    M: Optional[int] = None
    gamma_values: Optional[List[float]] = None
    ols_degrees: Tuple[int, ...] = OLS_DEGREE_GRID
    ols_knots: Tuple[int, ...] = OLS_KNOT_GRID
    smooth_knots: Tuple[int, ...] = SMOOTH_KNOT_GRID
    oracle_knots: Tuple[int, ...] = ORACLE_KNOT_GRID


@dataclass
class StudyReport:
    """蒙特卡洛结果: 长表 (case, n, method, metric, replicate, value) 与失败计数"""
    records: pd.DataFrame
    failures: int = 0
    failed_replicates: List[int] = field(default_factory=list)

    def values(self, method: str, metric: str) -> np.ndarray:
        rows = self.records[(self.records['method'] == method) & (self.records['metric'] == metric)]
        return rows.sort_values('replicate')['value'].to_numpy(dtype=float)

    def mean(self, method: str, metric: str) -> float:
        return float(np.mean(self.values(method, metric)))

    def sd(self, method: str, metric: str) -> float:
        values = self.values(method, metric)
        return float(np.std(values, ddof=1)) if values.size > 1 else 0.0

    @property
    def methods(self) -> List[str]:
        return list(dict.fromkeys(self.records['method']))

    @property
    def metrics(self) -> List[str]:
        return [m for m in METRICS if m in set(self.records['metric'])]

    def summary(self) -> pd.DataFrame:
        """每个 (case, n, method, metric) 的均值、标准差与有效重复数"""
        grouped = self.records.groupby(['case', 'n', 'method', 'metric'], sort=False)['value']
        frame = grouped.agg(mean='mean', sd=lambda v: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
                            count='count').reset_index()
        return frame

    def summary_table(self) -> pd.DataFrame:
        """按方法分列的 "mean (sd)" 表, 误差指标按 10 的幂缩放 (scale 列), 零区域比例用百分数"""
        rows = []
        summary = self.summary()
        for (case, n), block in summary.groupby(['case', 'n'], sort=False):
            for metric in [m for m in METRICS if m in set(block['metric'])]:
                part = block[block['metric'] == metric]
                if metric == 'null_proportion':
                    factor, label = 100.0, '%'
                else:
                    largest = float(np.max(np.abs(part['mean']))) if len(part) else 0.0
                    exponent = int(np.floor(np.log10(largest))) if largest > 0 else 0
                    factor, label = 10.0 ** (-exponent), f'1e{exponent}'
                row = {'case': case, 'n': n, 'metric': metric, 'scale': label}
                for item in part.itertuples(index=False):
                    row[item.method] = f"{item.mean * factor:.2f} ({item.sd * factor:.2f})"
                rows.append(row)
        return pd.DataFrame(rows)


@dataclass
class _Replicate:
    train: FunctionalData
    test: FunctionalData


def generate_replicate(scenario: ScenarioConfig, replicate: int) -> _Replicate:
    grid = simulation_grid(scenario.grid_size)
    beta = true_beta(scenario.case)
    train_rng = substream(scenario.seed, replicate, TRAIN_STREAM)
    test_rng = substream(scenario.seed, replicate, TEST_STREAM)
    train_curves = gen_covariates(scenario.n, train_rng, grid)
    train_y, sigma = gen_responses(train_curves, grid, beta, scenario.mu_true, scenario.case, scenario.snr, train_rng)
    test_curves = gen_covariates(scenario.test_n, test_rng, grid)
    test_y, _ = gen_responses(test_curves, grid, beta, scenario.mu_true, scenario.case, scenario.snr,
                              test_rng, sigma=sigma)
    domain = (0.0, 1.0)
    return _Replicate(FunctionalData(grid, train_curves, train_y, domain),
                      FunctionalData(grid, test_curves, test_y, domain))


def _slos_fit(train: FunctionalData, tuning: TuningDefaults, M: Optional[int] = None) -> FitResult:
    template = FitConfig(M=M or tuning.M or m_heuristic(train.n))
    grid = default_tuning_grid(train, template, tuning.slos_criterion, tuning.gamma_values)
    best, _ = grid_search(train, grid, template, threads=1)
    return fit(train, best)


def _fit_method(method: str, train: FunctionalData, null_region: Optional[NullRegionSpec],
                tuning: TuningDefaults) -> FitResult:
    match = re.fullmatch(r'slos_M(\d+)', method)
    if match:
        return _slos_fit(train, tuning, int(match.group(1)))
    if method == 'slos':
        return _slos_fit(train, tuning)
    if method == 'smooth':
        return select_smooth(train, tuning.gamma_values, tuning.smooth_knots, criterion=tuning.smooth_criterion)
    if method == 'ols':
        return select_ols(train, tuning.ols_degrees, tuning.ols_knots, criterion=tuning.ols_criterion)
    if method == 'oracle':
        return select_oracle(train, null_region, tuning.oracle_knots, tuning.gamma_values, folds=tuning.oracle_folds)
    raise ValueError(f"未知的方法: {method}")


def _applicable_methods(methods: Sequence[str], null_region: Optional[NullRegionSpec]) -> List[str]:
    """Oracle 只在同时存在零区域与非零区域时有意义"""
    kept = []
    for method in methods:
        if method == 'oracle' and (null_region is None or not null_region.non_null_components(0.0, 1.0)):
            logger.info("当前情形没有可用的 Oracle 估计, 跳过")
            continue
        if method not in METHODS and not re.fullmatch(r'slos_M\d+', method):
            raise ValueError(f"未知的方法: {method}")
        kept.append(method)
    return kept


def run_replicate(scenario: ScenarioConfig, replicate: int, methods: Sequence[str],
                  tuning: TuningDefaults) -> List[Dict]:
    """单次重复: 生成训练/测试集, 逐个方法拟合并计算指标"""
    data = generate_replicate(scenario, replicate)
    beta = true_beta(scenario.case)
    null_region = null_region_for(scenario.case)
    records = []
    for method in methods:
        result = _fit_method(method, data.train, null_region, tuning)
        metrics = {'PMSE': pmse(result, data.test)}
        ise0, ise1 = ise_metrics(result.beta_hat, beta, null_region)
        if ise0 is not None:
            metrics['ISE0'] = ise0
        if ise1 is not None:
            metrics['ISE1'] = ise1
        if null_region is not None:
            metrics['null_proportion'] = null_proportion(result.beta_hat, null_region)
        for metric, value in metrics.items():
            if not np.isfinite(value):
                raise FloatingPointError(f"{method} 的 {metric} 非有限值")
            records.append({'case': scenario.case, 'n': scenario.n, 'method': method,
                            'metric': metric, 'replicate': replicate, 'value': float(value)})
    return records


def run_study(scenario: ScenarioConfig, methods: Sequence[str] = METHODS,
              tuning: Optional[TuningDefaults] = None, threads: int = THREADS) -> StudyReport:
    """蒙特卡洛研究: 每次重复使用独立的确定性子流, 失败超过 20% 时报错"""
    tuning = tuning or TuningDefaults()
    methods = _applicable_methods(methods, null_region_for(scenario.case))
    logger.info(f"开始模拟: Case {scenario.case}, n={scenario.n}, 重复 {scenario.replicates} 次, "
                f"方法 {', '.join(methods)}")

    def task(replicate: int):
        try:
            return run_replicate(scenario, replicate, methods, tuning)
        except Exception as e:
            logger.warning(f"第 {replicate} 次重复失败: {e}")
            return None

    replicates = range(scenario.replicates)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(task, replicates))
    else:
        outcomes = [task(r) for r in replicates]

    failed = [r for r, outcome in zip(replicates, outcomes) if outcome is None]
    if len(failed) > MAX_FAILURE_RATE * scenario.replicates:
        raise StudyFailedError(len(failed), scenario.replicates)
    records = [row for outcome in outcomes if outcome is not None for row in outcome]
    report = StudyReport(pd.DataFrame(records, columns=LONG_COLUMNS), len(failed), failed)
    logger.info(f"模拟完成: 成功 {scenario.replicates - len(failed)}/{scenario.replicates} 次")
    return report


def run_m_sensitivity(scenario: ScenarioConfig, m_values: Sequence[int],
                      tuning: Optional[TuningDefaults] = None, threads: int = THREADS) -> StudyReport:
    """固定不同的 M 重复 SLoS, 方法名为 slos_M<m>, 所有 M 共用相同的数据子流"""
    if not m_values:
        raise ValueError("M 候选值不能为空")
    return run_study(scenario, [f'slos_M{int(m)}' for m in m_values], tuning, threads)

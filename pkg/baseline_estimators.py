#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
对比估计量
最小二乘 (OLS, γ=λ=0)、光滑样条 (Smooth, λ=0) 以及只在非零区域放置节点的 Oracle 估计,
并按模拟研究的惯例用 AIC (OLS / Smooth) 或交叉验证 (Oracle) 选择阶数、节点数与 γ
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError

from bspline_basis import PiecewiseSpline, make_basis
from config import CV_FOLDS, DEFAULT_DERIV_ORDER, OLS_DEGREE_GRID, OLS_KNOT_GRID, ORACLE_KNOT_GRID, SMOOTH_KNOT_GRID
from scad_penalty import ScadParams
from slos_solver import FitConfig, FitResult, FunctionalData, IllConditionedSystemError, fit, fit_components
from tuning_selector import default_gamma_values, score

logger = logging.getLogger('BaselineEstimators')


@dataclass
class NullRegionSpec:
    """真实 β 为零的闭区间集合 N(β)"""
    intervals: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.intervals = sorted((float(a), float(b)) for a, b in self.intervals)
        for a, b in self.intervals:
            if not b > a:
                raise ValueError(f"零区域区间无效: [{a}, {b}]")
        for (_, right), (left, _) in zip(self.intervals[:-1], self.intervals[1:]):
            if left <= right:
                raise ValueError(f"零区域区间相交: {self.intervals}")

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def validate_domain(self, start: float, end: float):
        for a, b in self.intervals:
            if a < start or b > end:
                raise ValueError(f"零区域 [{a}, {b}] 超出定义域 [{start}, {end}]")

    def null_length(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    def non_null_components(self, start: float, end: float) -> List[Tuple[float, float]]:
        """S(β) 的连通分量"""
        self.validate_domain(start, end)
        components, cursor = [], start
        for a, b in self.intervals:
            if a > cursor:
                components.append((cursor, a))
            cursor = max(cursor, b)
        if end > cursor:
            components.append((cursor, end))
        return components


def _baseline_config(M: int, d: int, gamma: float, fit_intercept: bool = True, periodic: bool = False) -> FitConfig:
    return FitConfig(gamma=gamma, scad=ScadParams(0.0), M=M, degree=d,
                     deriv_order=min(DEFAULT_DERIV_ORDER, d), fit_intercept=fit_intercept, periodic=periodic)


def fit_ols(data: FunctionalData, M: int, d: int) -> FitResult:
    """OLS: γ=0, λ=0"""
    return fit(data, _baseline_config(M, d, 0.0))


def fit_smooth(data: FunctionalData, M: int, d: int, gamma: float) -> FitResult:
    """光滑样条: λ=0"""
    return fit(data, _baseline_config(M, d, gamma))


def _component_knots(components: Sequence[Tuple[float, float]], num_knots: int) -> List[int]:
    """各分量的子区间数与分量长度成正比, 至少为 1"""
    lengths = np.array([b - a for a, b in components])
    return [max(1, int(round(num_knots * length / lengths.sum()))) for length in lengths]


def fit_oracle(data: FunctionalData, null_region: NullRegionSpec, num_knots: int, d: int, gamma: float) -> FitResult:
    """Oracle: 每个非零分量一组等距节点基函数, 带粗糙度惩罚的最小二乘, 在 N(β) 上严格为零"""
    start, end = data.domain
    components = null_region.non_null_components(start, end)
    if not components:
        raise ValueError("非零区域为空, 无法构造 Oracle 估计")
    if null_region.is_empty:
        return fit_smooth(data, num_knots, d, gamma)

    bases = [make_basis(b - a, m, d, start=a) for (a, b), m in zip(components, _component_knots(components, num_knots))]
    multi = fit_components(data, bases, _baseline_config(num_knots, d, gamma), null_region.intervals)
    pieces = [result.beta_hat for result in multi.results]
    head = multi.results[0]
    return replace(head,
                   beta_hat=PiecewiseSpline(pieces, start, end, list(null_region.intervals)),
                   active_mask=np.zeros(0, dtype=bool),
                   dead_subintervals=[],
                   config=_baseline_config(num_knots, d, gamma))


def _best(candidates: List[Tuple[float, FitResult]], label: str) -> FitResult:
    finite = [(value, result) for value, result in candidates if np.isfinite(value)]
    if not finite:
        raise IllConditionedSystemError(0, f"{label} 的全部候选都无法拟合")
    value, result = min(finite, key=lambda item: item[0])
    logger.debug(f"{label} 选择: M={result.config.M}, d={result.config.degree}, "
                 f"γ={result.config.gamma:.3g}, 评分={value:.4f}")
    return result


def select_ols(data: FunctionalData, degrees: Sequence[int] = OLS_DEGREE_GRID,
               knots: Sequence[int] = OLS_KNOT_GRID, criterion: str = 'AIC') -> FitResult:
    """按 AIC 选择 OLS 的样条次数与节点数 (秩亏的组合跳过)"""
    candidates = []
    for d in degrees:
        for M in knots:
            try:
                result = fit_ols(data, M, d)
            except (IllConditionedSystemError, LinAlgError):
                continue
            candidates.append((score(result, data, criterion), result))
    return _best(candidates, 'OLS')


def select_smooth(data: FunctionalData, gamma_values: Optional[Sequence[float]] = None,
                  knots: Sequence[int] = SMOOTH_KNOT_GRID, d: int = 3, criterion: str = 'AIC') -> FitResult:
    """按 AIC 选择光滑样条的节点数与 γ"""
    gammas = list(gamma_values) if gamma_values is not None else default_gamma_values()
    candidates = []
    for M in knots:
        for gamma in gammas:
            try:
                result = fit_smooth(data, M, d, gamma)
            except (IllConditionedSystemError, LinAlgError):
                continue
            candidates.append((score(result, data, criterion), result))
    return _best(candidates, 'Smooth')


def select_oracle(data: FunctionalData, null_region: NullRegionSpec,
                  knot_totals: Sequence[int] = ORACLE_KNOT_GRID,
                  gamma_values: Optional[Sequence[float]] = None, d: int = 3,
                  folds: int = CV_FOLDS) -> FitResult:
    """按 k 折交叉验证选择 Oracle 的总节点数与 γ"""
    gammas = list(gamma_values) if gamma_values is not None else default_gamma_values()
    candidates = []
    for total in knot_totals:
        for gamma in gammas:
            try:
                result = fit_oracle(data, null_region, total, d, gamma)
            except (IllConditionedSystemError, LinAlgError):
                continue

            def refit(training: FunctionalData, total=total, gamma=gamma) -> FitResult:
                return fit_oracle(training, null_region, total, d, gamma)

            candidates.append((score(result, data, f'CV({folds})', refit=refit), result))
    return _best(candidates, 'Oracle')

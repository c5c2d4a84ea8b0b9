#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
调参模块
子区间数 M 的经验公式、有效自由度、BIC/AIC/GCV/k 折交叉验证评分,
以及 (γ, λ) 网格搜索
"""

import itertools
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError

from config import (CV_FOLDS, DEFAULT_CRITERION, GAMMA_GRID_RANGE, GAMMA_GRID_SIZE,
                    LAMBDA_GRID_RANGE, LAMBDA_GRID_SIZE, SHRINK_ABSOLUTE_FLOOR, THREADS)
from scad_penalty import subinterval_scale
from slos_solver import FitConfig, FitResult, FitState, FunctionalData, IllConditionedSystemError, fit, predict

logger = logging.getLogger('TuningSelector')

CRITERIA = ('BIC', 'AIC', 'GCV', 'CV')

SCORE_COLUMNS = ['gamma', 'lambda', 'score', 'df', 'converged']


class NoValidConfigurationError(RuntimeError):
    """网格上没有任何收敛且评分有限的配置"""


def m_heuristic(n: int) -> int:
    """M = max{50, [20 n^{1/4}]}, [·] 为四舍五入"""
    if n < 1:
        raise ValueError(f"样本数必须为正: {n}")
    return max(50, int(np.floor(20.0 * n ** 0.25 + 0.5)))


def parse_criterion(criterion: str) -> Tuple[str, int]:
    """解析 'BIC' / 'AIC' / 'GCV' / 'CV' / 'CV(10)' / 'CV10'"""
    text = str(criterion).strip().upper()
    match = re.fullmatch(r'CV\(?(\d+)?\)?', text)
    if match:
        folds = int(match.group(1)) if match.group(1) else CV_FOLDS
        if folds < 2:
            raise ValueError(f"交叉验证折数至少为 2: {folds}")
        return 'CV', folds
    if text not in CRITERIA:
        raise ValueError(f"未知的调参准则: {criterion}, 可选 {', '.join(CRITERIA)}")
    return text, 0


def degrees_of_freedom(fit_state) -> float:
    """有效自由度 tr(H), 只计活跃 (未固定为零) 的列"""
    state = fit_state.state if isinstance(fit_state, FitResult) else fit_state
    if not isinstance(state, FitState):
        raise ValueError("需要带最终方程组的拟合结果")
    return state.hat_matrix_trace()


def residual_sum_of_squares(result: FitResult) -> float:
    state = result.state
    residual = state.responses - state.design @ state.coefficients
    return float(residual @ residual)


def cv_folds(n: int, k: int) -> List[np.ndarray]:
    """按样本顺序分层: 第 i 个样本属于第 i mod k 折"""
    if not 2 <= k <= n:
        raise ValueError(f"折数 k={k} 必须在 2..n={n} 之间")
    labels = np.arange(n) % k
    return [np.flatnonzero(labels == fold) for fold in range(k)]


def cross_validation_error(data: FunctionalData, refit: Callable[[FunctionalData], FitResult], k: int) -> float:
    """k 折交叉验证的平均留出平方误差"""
    total = 0.0
    for held_out in cv_folds(data.n, k):
        training = data.subset(np.setdiff1d(np.arange(data.n), held_out))
        result = refit(training)
        residual = data.responses[held_out] - predict(result, data.curves[held_out], data.grid)
        total += float(residual @ residual)
    return total / data.n


def score(result: FitResult, data: FunctionalData, criterion: str = DEFAULT_CRITERION,
          refit: Optional[Callable[[FunctionalData], FitResult]] = None) -> float:
    """BIC = n log(RSS/n) + log(n) df; AIC = n log(RSS/n) + 2 df; GCV = (RSS/n)/(1-df/n)²; CV(k) 为留出误差

    df >= n 时返回 +inf; refit 用于交叉验证时在训练折上重新拟合 (默认沿用 result.config)
    """
    name, folds = parse_criterion(criterion)
    n = data.n
    if name == 'CV':
        if refit is None:
            if result.config is None:
                raise ValueError("交叉验证需要拟合配置")
            config = result.config

            def refit(training: FunctionalData) -> FitResult:
                return fit(training, config)
        try:
            return cross_validation_error(data, refit, folds)
        except (IllConditionedSystemError, LinAlgError) as e:
            logger.debug(f"交叉验证折内拟合失败: {e}")
            return float('inf')

    df = result.df if np.isfinite(result.df) else degrees_of_freedom(result)
    if df >= n:
        return float('inf')
    floor = max(1e-12 * float(np.var(data.responses)) * n, np.finfo(float).tiny)
    rss = max(residual_sum_of_squares(result), floor)
    if name == 'BIC':
        return float(n * np.log(rss / n) + np.log(n) * df)
    if name == 'AIC':
        return float(n * np.log(rss / n) + 2.0 * df)
    return float((rss / n) / (1.0 - df / n) ** 2)


@dataclass
class TuningGrid:
    """(γ, λ) 候选网格与评分准则"""
    gamma_values: Sequence[float]
    lambda_values: Sequence[float]
    criterion: str = DEFAULT_CRITERION

    def __post_init__(self):
        self.gamma_values = sorted(float(g) for g in self.gamma_values)
        self.lambda_values = sorted(float(v) for v in self.lambda_values)
        if not self.gamma_values or not self.lambda_values:
            raise ValueError("γ 与 λ 网格都不能为空")
        if self.gamma_values[0] < 0 or self.lambda_values[0] < 0:
            raise ValueError("γ 与 λ 网格取值不能为负")
        parse_criterion(self.criterion)

    @property
    def size(self) -> int:
        return len(self.gamma_values) * len(self.lambda_values)


def default_gamma_values(gamma_range: Tuple[float, float] = GAMMA_GRID_RANGE,
                         size: int = GAMMA_GRID_SIZE) -> List[float]:
    low, high = gamma_range
    return list(np.logspace(np.log10(low), np.log10(high), size))


def lambda_scale(data: FunctionalData, template: FitConfig, gamma_values: Sequence[float]) -> float:
    """ŝ: γ 网格几何中点处光滑样条的 max_j c_j, c_j = √(M/T)·‖β_[j]‖₂

    λ 直接与 c_j 比较, 网格按同一尺度给出
    """
    if np.ptp(data.responses) == 0:
        logger.warning("响应为常数, λ 网格改用单位尺度")
        return 1.0
    values = sorted(gamma_values)
    positive = [g for g in values if g > 0]
    middle = float(np.sqrt(positive[0] * positive[-1])) if positive else 0.0
    smooth = fit(data, template.with_tuning(middle, 0.0))
    scales = subinterval_scale(smooth.beta_hat)
    s_hat = float(np.max(scales)) if scales.size else 0.0
    if not s_hat > SHRINK_ABSOLUTE_FLOOR:
        logger.warning(f"光滑样条初值几乎为零 (ŝ={s_hat:.3g}), λ 网格改用单位尺度")
        return 1.0
    return s_hat


def default_tuning_grid(data: FunctionalData, template: FitConfig, criterion: str = DEFAULT_CRITERION,
                        gamma_values: Optional[Sequence[float]] = None,
                        lambda_range: Tuple[float, float] = LAMBDA_GRID_RANGE,
                        lambda_size: int = LAMBDA_GRID_SIZE) -> TuningGrid:
    """γ 取 10⁻⁸…10⁻¹ 的 8 点对数网格, λ 取 (10⁻⁴…10⁰)·ŝ 的 30 点对数网格"""
    gammas = list(gamma_values) if gamma_values is not None else default_gamma_values()
    s_hat = lambda_scale(data, template, gammas)
    low, high = lambda_range
    lambdas = list(s_hat * np.logspace(np.log10(low), np.log10(high), lambda_size))
    logger.debug(f"默认调参网格: γ {len(gammas)} 个, λ {len(lambdas)} 个, ŝ={s_hat:.4g}")
    return TuningGrid(gammas, lambdas, criterion)


def _evaluate(data: FunctionalData, template: FitConfig, criterion: str, gamma: float, lam: float) -> Dict:
    row = {'gamma': gamma, 'lambda': lam, 'score': float('inf'), 'df': float('nan'), 'converged': False}
    try:
        result = fit(data, template.with_tuning(gamma, lam))
    except (IllConditionedSystemError, LinAlgError) as e:
        logger.debug(f"γ={gamma:.3g}, λ={lam:.3g} 拟合失败: {e}")
        return row
    row['df'] = result.df
    row['converged'] = bool(result.converged)
    if result.converged:
        row['score'] = score(result, data, criterion)
    return row


def select_best(table: pd.DataFrame) -> Tuple[float, float, float]:
    """从评分表中选出 (γ, λ, 评分): 只考虑已收敛且评分有限的行

    并列时优先更大的 λ, 其次更大的 γ
    """
    valid = table[table['converged'].astype(bool) & np.isfinite(table['score'])]
    if valid.empty:
        raise NoValidConfigurationError(f"{len(table)} 个候选配置均未收敛或评分无效")
    best = min(zip(valid['gamma'], valid['lambda'], valid['score']), key=lambda r: (r[2], -r[1], -r[0]))
    return float(best[0]), float(best[1]), float(best[2])


def grid_search(data: FunctionalData, grid: TuningGrid, template: FitConfig,
                threads: int = THREADS) -> Tuple[FitConfig, pd.DataFrame]:
    """遍历全部 (γ, λ), 返回评分最小的配置与完整评分表

    评分表按网格顺序排列, 与线程完成顺序无关
    """
    points = list(itertools.product(grid.gamma_values, grid.lambda_values))
    def task(point: Tuple[float, float]) -> Dict:
        return _evaluate(data, template, grid.criterion, *point)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(task, points))
    else:
        rows = [task(point) for point in points]

    table = pd.DataFrame(rows, columns=SCORE_COLUMNS)
    gamma, lam, best_score = select_best(table)
    logger.info(f"网格搜索完成 ({grid.criterion}): γ={gamma:.3g}, λ={lam:.4g}, 评分={best_score:.4f}")
    return template.with_tuning(gamma, lam), table

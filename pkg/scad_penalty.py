#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
SCAD 惩罚模块
SCAD 惩罚函数及其导数, 函数型 SCAD (fSCAD) 的数值积分与子区间近似,
以及局部二次近似 (LQA) 的权重矩阵 W⁽⁰⁾
"""

import logging
from dataclasses import dataclass
from typing import Optional, Set, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid

from bspline_basis import SplineFunction, local_subinterval_grams
from config import SCAD_A

logger = logging.getLogger('ScadPenalty')

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class ScadParams:
    """SCAD 参数: lam 为调节参数 λ, a 默认 3.7"""
    lam: float
    a: float = SCAD_A

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"λ 不能为负: {self.lam}")
        if not self.a > 2:
            raise ValueError(f"SCAD 参数 a 必须大于 2: {self.a}")


def _magnitudes(u: ArrayLike) -> np.ndarray:
    values = np.asarray(u, dtype=float)
    if np.any(values < 0) or np.any(np.isnan(values)):
        raise ValueError("SCAD 的自变量必须非负 (调用方应传入绝对值)")
    return values


def scad(u: ArrayLike, params: ScadParams) -> ArrayLike:
    """p_λ(u), u >= 0"""
    values = _magnitudes(u)
    lam, a = params.lam, params.a
    middle = -(values ** 2 - 2 * a * lam * values + lam ** 2) / (2 * (a - 1))
    result = np.where(values <= lam, lam * values,
                      np.where(values < a * lam, middle, 0.5 * (a + 1) * lam ** 2))
    return float(result) if result.ndim == 0 else result


def scad_deriv(u: ArrayLike, params: ScadParams) -> ArrayLike:
    """p′_λ(u), u >= 0"""
    values = _magnitudes(u)
    lam, a = params.lam, params.a
    result = np.where(values <= lam, lam,
                      np.where(values < a * lam, (a * lam - values) / (a - 1), 0.0))
    result = np.asarray(result, dtype=float)
    return float(result) if result.ndim == 0 else result


def lqa_quadratic(u: ArrayLike, u0: float, params: ScadParams) -> ArrayLike:
    """在 u0 处与 p_λ 相切的二次函数 p(u0) + p′(u0)(u² - u0²)/(2u0)"""
    if not u0 > 0:
        raise ValueError(f"LQA 展开点必须为正: {u0}")
    values = np.asarray(u, dtype=float)
    result = scad(u0, params) + scad_deriv(u0, params) * (values ** 2 - u0 ** 2) / (2 * u0)
    return float(result) if np.ndim(result) == 0 else result


def fscad_value(beta, params: ScadParams, grid_points: int = 100_000) -> float:
    """fSCAD = (1/T) ∫ p_λ(|β(t)|) dt, 均匀网格梯形公式 (数值真值)"""
    if grid_points < 100:
        raise ValueError(f"网格点数至少为 100: {grid_points}")
    grid = np.linspace(beta.domain_start, beta.domain_end, int(grid_points))
    values = scad(np.abs(beta(grid)), params)
    length = beta.domain_end - beta.domain_start
    return float(trapezoid(values, grid) / length)


def subinterval_scale(beta: SplineFunction) -> np.ndarray:
    """c_j = sqrt(M/T) ||β_[j]||_2, 即 β 在每个子区间上的均方根"""
    basis = beta.basis
    return np.sqrt(basis.num_subintervals / basis.length) * beta.subinterval_norms()


def fscad_approx(beta: SplineFunction, params: ScadParams, num_subintervals: Optional[int] = None) -> float:
    """Σ_j p_λ(sqrt(M/T) ||β_[j]||_2)

    num_subintervals 给定时在 M′ 个等分子区间上求和 (与样条自身节点无关)
    """
    if num_subintervals is None:
        return float(np.sum(scad(subinterval_scale(beta), params)))
    if num_subintervals < 1:
        raise ValueError(f"子区间数必须为正: {num_subintervals}")
    edges = np.linspace(beta.domain_start, beta.domain_end, int(num_subintervals) + 1)
    factor = num_subintervals / (beta.domain_end - beta.domain_start)
    squares = np.array([beta.squared_norm_between(a, b) for a, b in zip(edges[:-1], edges[1:])])
    return float(np.sum(scad(np.sqrt(factor * np.clip(squares, 0.0, None)), params)))


def lqa_weights(scales: np.ndarray, params: ScadParams, shrink_threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    """由 c_j 计算每个 W_j 的权重 ½ p′(c_j) / (c_j T/M) 中除去 M/T 因子的部分

    返回 (weights, dead): weights[j] = ½ p′(c_j)/c_j, 死区间权重为 0
    """
    if not shrink_threshold > 0:
        raise ValueError(f"收缩阈值必须为正: {shrink_threshold}")
    dead = scales <= shrink_threshold
    weights = np.zeros(scales.size)
    live = ~dead
    weights[live] = 0.5 * scad_deriv(scales[live], params) / scales[live]
    return weights, dead


def lqa_constant(scales: np.ndarray, params: ScadParams, dead: np.ndarray) -> float:
    """G(β⁽⁰⁾) = Σ_j [p(c_j) - ½ p′(c_j) c_j], 只对活跃子区间求和"""
    live = scales[~dead]
    if live.size == 0:
        return 0.0
    return float(np.sum(scad(live, params) - 0.5 * scad_deriv(live, params) * live))


def assemble_lqa(beta0: SplineFunction, weights: np.ndarray) -> np.ndarray:
    """W⁽⁰⁾ = (M/T) Σ_j weights[j] W_j"""
    basis = beta0.basis
    d = basis.degree
    blocks = local_subinterval_grams(basis)
    factor = basis.num_subintervals / basis.length
    matrix = np.zeros((basis.size, basis.size))
    for j in np.flatnonzero(weights):
        matrix[j:j + d + 1, j:j + d + 1] += factor * weights[j] * blocks[j]
    return 0.5 * (matrix + matrix.T)


def lqa_matrix(beta0: SplineFunction, params: ScadParams, shrink_threshold: float) -> Tuple[np.ndarray, Set[int]]:
    """LQA 权重矩阵 W⁽⁰⁾ 与死子区间集合 (1 起始下标)"""
    scales = subinterval_scale(beta0)
    weights, dead = lqa_weights(scales, params, shrink_threshold)
    dead_set = {int(j) + 1 for j in np.flatnonzero(dead)}
    if dead_set:
        logger.debug(f"LQA: {len(dead_set)} 个子区间低于收缩阈值 {shrink_threshold:.3g}")
    return assemble_lqa(beta0, weights), dead_set

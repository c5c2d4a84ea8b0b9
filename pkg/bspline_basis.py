#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
B样条基函数模块
在 [0, T] 上构造等距节点的 (端点重复) B样条基, 计算基函数值/导数,
以及 Gram 矩阵、粗糙度惩罚矩阵 V、子区间 Gram 矩阵 W_j 和设计矩阵 U
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import BSpline

logger = logging.getLogger('BSplineBasis')

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class BSplineBasis:
    """等距节点 B样条基: M 个子区间, d 次, 共 M+d 个基函数"""
    domain_start: float
    domain_end: float
    num_subintervals: int
    degree: int

    def __post_init__(self):
        if self.num_subintervals < 1:
            raise ValueError(f"子区间数 M 必须为正整数: {self.num_subintervals}")
        if self.degree < 0:
            raise ValueError(f"样条次数 d 不能为负: {self.degree}")
        if not self.domain_end > self.domain_start:
            raise ValueError(f"定义域长度必须为正: [{self.domain_start}, {self.domain_end}]")

    @property
    def length(self) -> float:
        """定义域长度 T"""
        return self.domain_end - self.domain_start

    @property
    def size(self) -> int:
        return self.num_subintervals + self.degree

    @property
    def spacing(self) -> float:
        return self.length / self.num_subintervals

    @property
    def knots(self) -> np.ndarray:
        """M+1 个等距节点 (含端点)"""
        return np.linspace(self.domain_start, self.domain_end, self.num_subintervals + 1)

    @property
    def full_knots(self) -> np.ndarray:
        """端点重复 d+1 次的完整节点向量"""
        knots = self.knots
        return np.concatenate([
            np.full(self.degree, knots[0]), knots, np.full(self.degree, knots[-1])
        ])

    def subinterval_bounds(self, j: int) -> Tuple[float, float]:
        """第 j 个子区间 [t_{j-1}, t_j] (j 从 1 开始)"""
        _check_subinterval(self, j)
        knots = self.knots
        return float(knots[j - 1]), float(knots[j])

    def coefficient_support(self, k: int) -> Tuple[int, int]:
        """第 k 个基函数 (从 0 开始) 非零的子区间范围, 返回 0 起始的闭区间下标"""
        return max(0, k - self.degree), min(self.num_subintervals - 1, k)

    def evaluate(self, t: ArrayLike, deriv_order: int = 0) -> np.ndarray:
        return basis_matrix(self, t, deriv_order)


def make_basis(T: float, M: int, d: int, start: float = 0.0) -> BSplineBasis:
    """在 [start, start+T] 上放置 M+1 个等距节点"""
    if T <= 0:
        raise ValueError(f"定义域长度 T 必须为正: {T}")
    if int(M) != M or M < 1:
        raise ValueError(f"子区间数 M 必须为正整数: {M}")
    if int(d) != d or d < 0:
        raise ValueError(f"样条次数 d 必须为非负整数: {d}")
    return BSplineBasis(float(start), float(start) + float(T), int(M), int(d))


def _check_subinterval(basis: BSplineBasis, j: int):
    if int(j) != j or not 1 <= j <= basis.num_subintervals:
        raise ValueError(f"子区间下标越界: j={j}, 有效范围 1..{basis.num_subintervals}")


def _check_points(basis: BSplineBasis, t: np.ndarray) -> np.ndarray:
    tol = 1e-12 * max(1.0, abs(basis.domain_start), abs(basis.domain_end))
    if np.any(~np.isfinite(t)) or np.any(t < basis.domain_start - tol) or np.any(t > basis.domain_end + tol):
        raise ValueError(f"时间点超出定义域 [{basis.domain_start}, {basis.domain_end}]")
    return np.clip(t, basis.domain_start, basis.domain_end)


@lru_cache(maxsize=256)
def _basis_spline(basis: BSplineBasis, deriv_order: int) -> BSpline:
    # 系数取单位阵, 一次调用即得到全部 M+d 个基函数
    spline = BSpline(basis.full_knots, np.eye(basis.size), basis.degree, extrapolate=True)
    if deriv_order > 0:
        spline = spline.derivative(deriv_order)
    return spline


def basis_matrix(basis: BSplineBasis, t: ArrayLike, deriv_order: int = 0) -> np.ndarray:
    """在一组时间点上计算 B(t) 或其 deriv_order 阶导数, 形状 (len(t), M+d)"""
    if int(deriv_order) != deriv_order or deriv_order < 0:
        raise ValueError(f"导数阶必须为非负整数: {deriv_order}")
    if deriv_order > basis.degree:
        raise ValueError(f"导数阶 {deriv_order} 超过样条次数 {basis.degree}")
    points = _check_points(basis, np.atleast_1d(np.asarray(t, dtype=float)))
    values = _basis_spline(basis, int(deriv_order))(points)
    return np.asarray(values).reshape(points.size, basis.size)


def eval_basis(basis: BSplineBasis, t: float, deriv_order: int = 0) -> np.ndarray:
    """单点计算 B(t) (或导数), 返回长度 M+d 的向量"""
    return basis_matrix(basis, [t], deriv_order)[0]


def _gauss_legendre(a: float, b: float, order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (b - a)
    return a + half * (nodes + 1.0), weights * half


def _quadrature_order(basis: BSplineBasis, quad_order: Optional[int]) -> int:
    order = basis.degree + 1 if quad_order is None else int(quad_order)
    if order < 1:
        raise ValueError(f"求积阶数必须为正: {order}")
    return order


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@lru_cache(maxsize=256)
def _local_products(basis: BSplineBasis, deriv_order: int, quad_order: int) -> np.ndarray:
    """每个子区间上 (d+1)x(d+1) 的局部积分块 ∫ D^m B_u D^m B_v"""
    M, d = basis.num_subintervals, basis.degree
    knots = basis.knots
    blocks = np.zeros((M, d + 1, d + 1))
    for j in range(M):
        nodes, weights = _gauss_legendre(knots[j], knots[j + 1], quad_order)
        local = basis_matrix(basis, nodes, deriv_order)[:, j:j + d + 1]
        blocks[j] = local.T @ (weights[:, None] * local)
    return _frozen(blocks)


def _assemble(basis: BSplineBasis, blocks: np.ndarray, indices: Optional[Sequence[int]] = None) -> np.ndarray:
    d = basis.degree
    matrix = np.zeros((basis.size, basis.size))
    for j in (range(basis.num_subintervals) if indices is None else indices):
        matrix[j:j + d + 1, j:j + d + 1] += blocks[j]
    return matrix


def local_subinterval_grams(basis: BSplineBasis, quad_order: Optional[int] = None) -> np.ndarray:
    """全部子区间 Gram 块, 形状 (M, d+1, d+1); 第 j 块对应系数下标 j..j+d (0 起始)"""
    return _local_products(basis, 0, _quadrature_order(basis, quad_order))


def gram_matrix(basis: BSplineBasis, quad_order: Optional[int] = None) -> np.ndarray:
    """完整 Gram 矩阵 ∫ B_u B_v dt"""
    return _assemble(basis, local_subinterval_grams(basis, quad_order))


def penalty_matrix(basis: BSplineBasis, m: int, quad_order: Optional[int] = None) -> np.ndarray:
    """粗糙度惩罚矩阵 V, v_ij = ∫ D^m B_i D^m B_j dt"""
    if int(m) != m or m < 1:
        raise ValueError(f"惩罚导数阶 m 必须为正整数: {m}")
    if m > basis.degree:
        raise ValueError(f"惩罚导数阶 m={m} 超过样条次数 d={basis.degree}")
    blocks = _local_products(basis, int(m), _quadrature_order(basis, quad_order))
    matrix = _assemble(basis, blocks)
    return 0.5 * (matrix + matrix.T)


def subinterval_gram(basis: BSplineBasis, j: int, quad_order: Optional[int] = None) -> np.ndarray:
    """第 j 个子区间 (1 起始) 的 W_j 矩阵"""
    _check_subinterval(basis, j)
    return _assemble(basis, local_subinterval_grams(basis, quad_order), [j - 1])


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """复合梯形公式在观测网格上的权重"""
    steps = np.diff(grid)
    weights = np.zeros(grid.size)
    weights[:-1] += 0.5 * steps
    weights[1:] += 0.5 * steps
    return weights


def validate_grid(grid: ArrayLike) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError(f"观测网格至少需要 2 个时间点, 实际形状 {grid.shape}")
    if np.any(~np.isfinite(grid)) or np.any(np.diff(grid) <= 0):
        raise ValueError("观测网格必须严格递增")
    return grid


def as_curve_matrix(curves, num_points: int) -> np.ndarray:
    """把曲线列表整理成 n x K 矩阵, 长度不一致时报错"""
    if isinstance(curves, np.ndarray) and curves.ndim == 2:
        matrix = curves.astype(float, copy=False)
    else:
        rows = [np.asarray(curve, dtype=float).ravel() for curve in curves]
        lengths = {row.size for row in rows}
        if len(lengths) > 1:
            raise ValueError(f"曲线采样点数不一致: {sorted(lengths)}")
        matrix = np.vstack(rows) if rows else np.zeros((0, num_points))
    if matrix.shape[1] != num_points:
        raise ValueError(f"曲线采样点数 {matrix.shape[1]} 与网格长度 {num_points} 不符")
    return matrix


def design_matrix(basis: BSplineBasis, curves, grid: ArrayLike) -> np.ndarray:
    """设计矩阵 U, u_ij ≈ ∫ X_i(t) B_j(t) dt (网格上的梯形公式)"""
    grid = validate_grid(grid)
    matrix = as_curve_matrix(curves, grid.size)
    values = basis_matrix(basis, grid)
    return (matrix * trapezoid_weights(grid)) @ values


@dataclass
class SplineFunction:
    """基函数上的系数向量, 表示 β(t) = Bᵀ(t) b"""
    basis: BSplineBasis
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float).ravel()
        if self.coefficients.size != self.basis.size:
            raise ValueError(f"系数长度 {self.coefficients.size} 与基函数个数 {self.basis.size} 不符")

    @property
    def domain_start(self) -> float:
        return self.basis.domain_start

    @property
    def domain_end(self) -> float:
        return self.basis.domain_end

    def __call__(self, t: ArrayLike) -> Union[float, np.ndarray]:
        return self.derivative(t, 0)

    def derivative(self, t: ArrayLike, order: int = 1) -> Union[float, np.ndarray]:
        values = basis_matrix(self.basis, t, order) @ self.coefficients
        return float(values[0]) if np.ndim(t) == 0 else values

    def subinterval_norms(self) -> np.ndarray:
        """全部子区间上的 ||β_[j]||_2"""
        d = self.basis.degree
        blocks = local_subinterval_grams(self.basis)
        local = np.lib.stride_tricks.sliding_window_view(self.coefficients, d + 1)
        squares = np.einsum('ju,juv,jv->j', local, blocks, local)
        return np.sqrt(np.clip(squares, 0.0, None))

    def squared_norm_between(self, a: float, b: float) -> float:
        """∫_a^b β² dt, 在样条节点处分段后用 Gauss-Legendre 精确积分"""
        if b <= a:
            return 0.0
        knots = self.basis.knots
        inner = knots[(knots > a) & (knots < b)]
        breaks = np.concatenate([[a], inner, [b]])
        total = 0.0
        for left, right in zip(breaks[:-1], breaks[1:]):
            nodes, weights = _gauss_legendre(left, right, self.basis.degree + 1)
            total += float(weights @ self(nodes) ** 2)
        return total

    @classmethod
    def zeros(cls, basis: BSplineBasis) -> 'SplineFunction':
        return cls(basis, np.zeros(basis.size))

    @classmethod
    def least_squares(cls, basis: BSplineBasis, func, num_points: int = 5001) -> 'SplineFunction':
        """在密集网格上最小二乘逼近给定函数"""
        grid = np.linspace(basis.domain_start, basis.domain_end, num_points)
        coefficients, *_ = np.linalg.lstsq(basis_matrix(basis, grid), func(grid), rcond=None)
        return cls(basis, coefficients)


def l2_norm_on_subinterval(spline: SplineFunction, j: int) -> float:
    """||β_[j]||_2 = sqrt(bᵀ W_j b)"""
    _check_subinterval(spline.basis, j)
    d = spline.basis.degree
    block = local_subinterval_grams(spline.basis)[j - 1]
    local = spline.coefficients[j - 1:j + d]
    return float(np.sqrt(max(local @ block @ local, 0.0)))


@dataclass
class PiecewiseSpline:
    """由若干分量样条拼成的系数函数, 分量之外以及 zero_intervals (闭区间) 上恒为零"""
    pieces: List[SplineFunction]
    domain_start: float
    domain_end: float
    zero_intervals: List[Tuple[float, float]] = field(default_factory=list)

    def __call__(self, t: ArrayLike) -> Union[float, np.ndarray]:
        points = np.atleast_1d(np.asarray(t, dtype=float))
        tol = 1e-12 * max(1.0, abs(self.domain_start), abs(self.domain_end))
        if np.any(points < self.domain_start - tol) or np.any(points > self.domain_end + tol):
            raise ValueError(f"时间点超出定义域 [{self.domain_start}, {self.domain_end}]")
        values = np.zeros(points.size)
        for piece in self.pieces:
            inside = (points >= piece.domain_start) & (points <= piece.domain_end)
            if np.any(inside):
                values[inside] = piece(points[inside])
        for low, high in self.zero_intervals:
            values[(points >= low) & (points <= high)] = 0.0
        return float(values[0]) if np.ndim(t) == 0 else values

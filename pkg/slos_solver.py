#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
SLoS 求解器
组装带粗糙度惩罚与 fSCAD 惩罚的惩罚最小二乘问题, 用局部二次近似 (LQA) 迭代求解:
1. 初值为光滑样条估计 b⁽⁰⁾ = (UᵀU + nγV)⁻¹Uᵀy
2. 由当前迭代计算 W⁽ⁱ⁾, 以堆叠最小二乘求解 (UᵀU + nγV + nW⁽ⁱ⁾) b = Uᵀy, 过小的子区间手动收缩为零
3. 重复第2步直到收敛
支持截距增广、周期约束 β(0)=β(T) 以及多个函数型协变量
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, eigh, lstsq, svd

from bspline_basis import (BSplineBasis, SplineFunction, as_curve_matrix, basis_matrix, design_matrix,
                           make_basis, penalty_matrix, trapezoid_weights, validate_grid)
from config import (CONVERGENCE_TOL, DEFAULT_DEGREE, DEFAULT_DERIV_ORDER, MAX_ITERATIONS,
                    SHRINK_ABSOLUTE_FLOOR, SHRINK_RELATIVE)
from scad_penalty import ScadParams, assemble_lqa, fscad_approx, lqa_constant, lqa_weights, subinterval_scale

logger = logging.getLogger('SLoSSolver')

# 列归一化后奇异值与最大奇异值之比低于此值视为秩不足
_RANK_RCOND = 1e-12
# 半正定惩罚矩阵开方时舍去的相对特征值
_EIGEN_FLOOR = 1e-10


class IllConditionedSystemError(RuntimeError):
    """收缩之后线性方程组仍然奇异"""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(f"第 {iteration} 次迭代的线性方程组病态或奇异{': ' + message if message else ''}")


@dataclass
class FunctionalSample:
    """单条协变量曲线的网格采样值及其标量响应"""
    curve: np.ndarray
    response: float


@dataclass
class FunctionalData:
    """共用同一观测网格的 n 个样本"""
    grid: np.ndarray
    curves: np.ndarray
    responses: np.ndarray
    domain: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        self.grid = validate_grid(self.grid)
        self.curves = as_curve_matrix(self.curves, self.grid.size)
        self.responses = np.asarray(self.responses, dtype=float).ravel()
        if self.curves.shape[0] != self.responses.size:
            raise ValueError(f"曲线数 {self.curves.shape[0]} 与响应数 {self.responses.size} 不符")
        if not np.all(np.isfinite(self.curves)) or not np.all(np.isfinite(self.responses)):
            raise ValueError("数据中存在缺失值或非有限值")
        if self.domain is None:
            self.domain = (float(self.grid[0]), float(self.grid[-1]))
        start, end = self.domain
        if not end > start or self.grid[0] < start or self.grid[-1] > end:
            raise ValueError(f"观测网格不在定义域 [{start}, {end}] 内")

    @property
    def n(self) -> int:
        return self.responses.size

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    @classmethod
    def from_samples(cls, samples: Sequence[FunctionalSample], grid,
                     domain: Optional[Tuple[float, float]] = None) -> 'FunctionalData':
        return cls(np.asarray(grid, dtype=float), [s.curve for s in samples],
                   [s.response for s in samples], domain)

    def samples(self) -> List[FunctionalSample]:
        return [FunctionalSample(curve, float(y)) for curve, y in zip(self.curves, self.responses)]

    def subset(self, indices) -> 'FunctionalData':
        indices = np.asarray(indices)
        return FunctionalData(self.grid, self.curves[indices], self.responses[indices], self.domain)

    def with_responses(self, responses) -> 'FunctionalData':
        return FunctionalData(self.grid, self.curves, responses, self.domain)


@dataclass
class FitConfig:
    """SLoS 全部调节参数"""
    gamma: float = 0.0
    scad: ScadParams = field(default_factory=lambda: ScadParams(0.0))
    M: int = 50
    degree: int = DEFAULT_DEGREE
    deriv_order: int = DEFAULT_DERIV_ORDER
    max_iterations: int = MAX_ITERATIONS
    convergence_tol: float = CONVERGENCE_TOL
    shrink_threshold: float = SHRINK_RELATIVE
    shrink_floor: float = SHRINK_ABSOLUTE_FLOOR
    fit_intercept: bool = True
    periodic: bool = False

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"γ 不能为负: {self.gamma}")
        if self.M < 1:
            raise ValueError(f"子区间数 M 必须为正: {self.M}")
        if self.deriv_order > self.degree:
            raise ValueError(f"惩罚导数阶 m={self.deriv_order} 不能超过样条次数 d={self.degree}")
        if self.max_iterations < 1 or not self.convergence_tol > 0:
            raise ValueError("最大迭代次数与收敛容差必须为正")
        if not self.shrink_threshold > 0 or not self.shrink_floor > 0:
            raise ValueError("收缩阈值必须为正")

    @property
    def lam(self) -> float:
        return self.scad.lam

    def with_tuning(self, gamma: Optional[float] = None, lam: Optional[float] = None) -> 'FitConfig':
        scad = self.scad if lam is None else ScadParams(lam, self.scad.a)
        return replace(self, gamma=self.gamma if gamma is None else gamma, scad=scad)

    def basis_for(self, domain: Tuple[float, float]) -> BSplineBasis:
        start, end = domain
        return make_basis(end - start, self.M, self.degree, start=start)


@dataclass
class FitState:
    """收敛时的最终方程组, 供自由度、替代目标 R(b) 与检验使用"""
    design: np.ndarray          # 增广设计矩阵 Ũ
    responses: np.ndarray
    gram: np.ndarray            # ŨᵀŨ
    rhs: np.ndarray             # Ũᵀy
    roughness: np.ndarray       # blockdiag(0, γ_k V_k)
    lqa: np.ndarray             # 最后一次求解所用的 blockdiag(0, W_k)
    lqa_offset: float           # G(β⁽⁰⁾)
    free_map: np.ndarray        # 自由参数到完整系数的映射 P
    coefficients: np.ndarray    # 完整 (含截距) 系数

    @property
    def n(self) -> int:
        return self.responses.size

    def surrogate(self, coefficients: np.ndarray) -> float:
        """R(b) = (1/n)||y - Ũb||² + γbᵀVb + bᵀW b + G"""
        residual = self.responses - self.design @ coefficients
        return float(residual @ residual / self.n
                     + coefficients @ self.roughness @ coefficients
                     + coefficients @ self.lqa @ coefficients
                     + self.lqa_offset)

    def hat_matrix_trace(self) -> float:
        """有效自由度 tr(H), H = ŨP (PᵀŨᵀŨP + nPᵀṼP)⁻¹ PᵀŨᵀ

        只在活跃列上计算, 不含 LQA 项 W
        """
        P = self.free_map
        if P.shape[1] == 0:
            return 0.0
        stacked, _ = _equilibrate(_stack(self.design, _square_root_rows(self.roughness), P, self.n))
        left, singular, _ = svd(stacked, full_matrices=False)
        keep = singular > _RANK_RCOND * singular[0]
        return float(np.sum(left[:self.n, keep] ** 2))


@dataclass
class FitResult:
    """拟合结果"""
    beta_hat: object
    mu_hat: float = 0.0
    active_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    iterations: int = 0
    converged: bool = True
    objective_trace: List[float] = field(default_factory=list)
    residual_variance: float = float('nan')
    surrogate_trace: List[Tuple[float, float]] = field(default_factory=list)
    dead_subintervals: List[int] = field(default_factory=list)
    state: Optional[FitState] = None
    config: Optional[FitConfig] = None
    df: float = float('nan')


@dataclass
class MultiFitResult:
    """多协变量拟合: 每个协变量一个 FitResult, 共享截距"""
    results: List[FitResult]
    mu_hat: float

    def predict(self, datasets: Sequence[FunctionalData]) -> np.ndarray:
        if len(datasets) != len(self.results):
            raise ValueError(f"协变量个数 {len(datasets)} 与模型 {len(self.results)} 不符")
        total = np.full(datasets[0].n, self.mu_hat)
        for result, data in zip(self.results, datasets):
            total += predict(result, data.curves, data.grid) - result.mu_hat
        return total


@dataclass
class _Block:
    """一个函数型协变量在增广系数向量中的位置与矩阵"""
    basis: BSplineBasis
    config: FitConfig
    design: np.ndarray
    penalty: np.ndarray
    offset: int

    @property
    def size(self) -> int:
        return self.basis.size

    @property
    def indices(self) -> slice:
        return slice(self.offset, self.offset + self.size)

    def spline(self, coefficients: np.ndarray) -> SplineFunction:
        return SplineFunction(self.basis, coefficients[self.indices].copy())


def _touching(basis: BSplineBasis, dead: np.ndarray) -> np.ndarray:
    """支撑与任一死子区间相交的系数"""
    d = basis.degree
    pinned = np.zeros(basis.size, dtype=bool)
    for j in np.flatnonzero(dead):
        pinned[j:j + d + 1] = True
    return pinned


def _free_map(total: int, pinned: np.ndarray, ties: Sequence[Tuple[int, int]]) -> np.ndarray:
    """构造 P: 固定为零的系数没有列, 周期约束把最后一个系数并入第一个"""
    pinned = pinned.copy()
    tied = {}
    for first, last in ties:
        if pinned[first] or pinned[last]:
            pinned[first] = pinned[last] = True
        else:
            tied[last] = first
    columns: Dict[int, int] = {}
    for i in range(total):
        if not pinned[i] and i not in tied:
            columns[i] = len(columns)
    P = np.zeros((total, len(columns)))
    for i, col in columns.items():
        P[i, col] = 1.0
    for last, first in tied.items():
        P[last, columns[first]] = 1.0
    return P


def _square_root_rows(matrix: np.ndarray) -> np.ndarray:
    """半正定矩阵 A 的行因子 L (LᵀL = A), 只保留正特征值对应的行"""
    if not np.any(matrix):
        return np.zeros((0, matrix.shape[0]))
    values, vectors = eigh(0.5 * (matrix + matrix.T))
    if not values[-1] > 0:
        return np.zeros((0, matrix.shape[0]))
    keep = values > _EIGEN_FLOOR * values[-1]
    return np.sqrt(values[keep])[:, None] * vectors[:, keep].T


def _equilibrate(stacked: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(stacked, axis=0)
    scale = np.ones_like(norms)
    scale[norms > 0] = 1.0 / norms[norms > 0]
    return stacked * scale, scale


def _stack(design: np.ndarray, penalty_rows: np.ndarray, P: np.ndarray, n: int) -> np.ndarray:
    return np.vstack([design @ P, np.sqrt(n) * (penalty_rows @ P)])


def _with_lqa(roughness_rows: np.ndarray, lqa: np.ndarray) -> np.ndarray:
    return np.vstack([roughness_rows, _square_root_rows(lqa)])


def _solve_reduced(design: np.ndarray, responses: np.ndarray, penalty_rows: np.ndarray, P: np.ndarray,
                   unpenalized: bool, n: int) -> np.ndarray:
    """在自由子空间上求解堆叠最小二乘 [ŨP; √n·LP] b = [y; 0], 秩不足时抛出 LinAlgError

    与正规方程 (PᵀŨᵀŨP + nPᵀLᵀLP) b = PᵀŨᵀy 等价, 但不对设计矩阵求平方, γ 很大时仍然稳定
    """
    if P.shape[1] == 0:
        return np.zeros(P.shape[0])
    if unpenalized and P.shape[1] > n:
        raise LinAlgError(f"自由参数 {P.shape[1]} 多于样本数 {n}")
    stacked, scale = _equilibrate(_stack(design, penalty_rows, P, n))
    target = np.concatenate([responses, np.zeros(stacked.shape[0] - responses.size)])
    solution, _, rank, _ = lstsq(stacked, target, cond=_RANK_RCOND, lapack_driver='gelsd')
    if rank < P.shape[1]:
        raise LinAlgError(f"方程组的秩 {rank} 小于自由参数个数 {P.shape[1]}")
    return P @ (solution * scale)


def _objective(coefficients: np.ndarray, design: np.ndarray, responses: np.ndarray, blocks: List[_Block]) -> float:
    residual = responses - design @ coefficients
    value = residual @ residual / responses.size
    for block in blocks:
        local = coefficients[block.indices]
        value += block.config.gamma * local @ block.penalty @ local
        if block.config.lam > 0:
            value += fscad_approx(block.spline(coefficients), block.config.scad)
    return float(value)


def _penalty(basis: BSplineBasis, config: FitConfig) -> np.ndarray:
    if config.gamma == 0:
        return np.zeros((basis.size, basis.size))
    return penalty_matrix(basis, config.deriv_order)


def _prepare_blocks(datasets: Sequence[FunctionalData], configs: Sequence[FitConfig]) -> Tuple[List[_Block], int]:
    if len(datasets) == 0 or len(datasets) != len(configs):
        raise ValueError("协变量数据与配置个数必须相同且非空")
    responses = datasets[0].responses
    for data in datasets[1:]:
        if data.n != responses.size or not np.array_equal(data.responses, responses):
            raise ValueError("多个协变量必须共享同一组样本与响应")
    offset = 1 if configs[0].fit_intercept else 0
    blocks = []
    for data, config in zip(datasets, configs):
        basis = config.basis_for(data.domain)
        blocks.append(_Block(basis, config, design_matrix(basis, data.curves, data.grid),
                             _penalty(basis, config), offset))
        offset += basis.size
    return blocks, offset


def component_design(basis: BSplineBasis, data: FunctionalData,
                     zero_intervals: Sequence[Tuple[float, float]] = ()) -> np.ndarray:
    """只在 basis 自身闭区间上非零的设计矩阵; 区间外以及 zero_intervals (闭区间) 内的网格点取 0"""
    values = np.zeros((data.grid.size, basis.size))
    inside = (data.grid >= basis.domain_start) & (data.grid <= basis.domain_end)
    for low, high in zero_intervals:
        inside &= ~((data.grid >= low) & (data.grid <= high))
    if np.any(inside):
        values[inside] = basis_matrix(basis, data.grid[inside])
    return (data.curves * trapezoid_weights(data.grid)) @ values


def _lqa_step(blocks: List[_Block], coefficients: np.ndarray, dead: List[np.ndarray],
              thresholds: List[float], total: int) -> Tuple[np.ndarray, float, List[np.ndarray], bool]:
    """由当前迭代计算 W⁽ⁱ⁾ 与新的死区间集合 (死区间单调增加)"""
    lqa = np.zeros((total, total))
    offset_value = 0.0
    new_dead = []
    for block, old, threshold in zip(blocks, dead, thresholds):
        if block.config.lam == 0:
            new_dead.append(old)
            continue
        beta = block.spline(coefficients)
        scales = subinterval_scale(beta)
        weights, below = lqa_weights(scales, block.config.scad, threshold)
        current = old | below
        weights[current] = 0.0
        lqa[block.indices, block.indices] = assemble_lqa(beta, weights)
        offset_value += lqa_constant(scales, block.config.scad, current)
        new_dead.append(current)
    changed = any(not np.array_equal(a, b) for a, b in zip(dead, new_dead))
    return lqa, offset_value, new_dead, changed


def _pinned(blocks: List[_Block], dead: List[np.ndarray], total: int) -> np.ndarray:
    pinned = np.zeros(total, dtype=bool)
    for block, mask in zip(blocks, dead):
        pinned[block.indices] = _touching(block.basis, mask)
    return pinned


def _initial_thresholds(blocks: List[_Block], coefficients: np.ndarray) -> List[float]:
    thresholds = []
    for block in blocks:
        scales = subinterval_scale(block.spline(coefficients))
        reference = float(np.max(scales)) if scales.size else 0.0
        thresholds.append(max(block.config.shrink_threshold * reference, block.config.shrink_floor))
    return thresholds


def _run_lqa(blocks: List[_Block], total: int, responses: np.ndarray, lead: FitConfig) -> MultiFitResult:
    n = responses.size
    if n < 2:
        raise ValueError(f"样本数至少为 2: {n}")

    columns = ([np.ones((n, 1))] if lead.fit_intercept else []) + [block.design for block in blocks]
    design = np.hstack(columns)
    gram = design.T @ design
    rhs = design.T @ responses
    roughness = np.zeros((total, total))
    for block in blocks:
        roughness[block.indices, block.indices] = block.config.gamma * block.penalty
    ties = [(block.offset, block.offset + block.size - 1) for block in blocks if block.config.periodic]
    unpenalized_base = all(block.config.gamma == 0 for block in blocks)
    roughness_rows = _square_root_rows(roughness)

    dead = [np.zeros(block.basis.num_subintervals, dtype=bool) for block in blocks]
    lqa = np.zeros((total, total))
    lqa_offset = 0.0
    P = _free_map(total, np.zeros(total, dtype=bool), ties)

    # 第1步: 光滑样条初值
    try:
        coefficients = _solve_reduced(design, responses, roughness_rows, P, unpenalized_base, n)
    except LinAlgError as e:
        raise IllConditionedSystemError(0, str(e)) from e
    objective_trace = [_objective(coefficients, design, responses, blocks)]
    surrogate_trace: List[Tuple[float, float]] = []
    iterations = 0
    converged = True

    if any(block.config.lam > 0 for block in blocks):
        converged = False
        thresholds = _initial_thresholds(blocks, coefficients)
        for iteration in range(1, lead.max_iterations + 1):
            iterations = iteration
            lqa, lqa_offset, new_dead, changed = _lqa_step(blocks, coefficients, dead, thresholds, total)
            P = _free_map(total, _pinned(blocks, new_dead, total), ties)
            projected = P @ np.linalg.lstsq(P, coefficients, rcond=None)[0] if P.shape[1] else np.zeros(total)
            unpenalized = unpenalized_base and not np.any(lqa)
            try:
                updated = _solve_reduced(design, responses, _with_lqa(roughness_rows, lqa), P, unpenalized, n)
            except LinAlgError as first_error:
                # 阈值放大 10 倍再收缩一次
                logger.warning(f"第 {iteration} 次迭代方程组病态, 放大收缩阈值后重试: {first_error}")
                thresholds = [10.0 * value for value in thresholds]
                lqa, lqa_offset, new_dead, changed = _lqa_step(blocks, coefficients, dead, thresholds, total)
                P = _free_map(total, _pinned(blocks, new_dead, total), ties)
                projected = P @ np.linalg.lstsq(P, coefficients, rcond=None)[0] if P.shape[1] else np.zeros(total)
                try:
                    updated = _solve_reduced(design, responses, _with_lqa(roughness_rows, lqa), P, False, n)
                except LinAlgError as e:
                    raise IllConditionedSystemError(iteration, str(e)) from e
            dead = new_dead
            state = FitState(design, responses, gram, rhs, roughness, lqa, lqa_offset, P, updated)
            surrogate_trace.append((state.surrogate(projected), state.surrogate(updated)))
            change = np.linalg.norm(updated - coefficients) / max(1.0, np.linalg.norm(coefficients))
            coefficients = updated
            objective_trace.append(_objective(coefficients, design, responses, blocks))
            logger.debug(f"迭代 {iteration}: 相对变化 {change:.3e}, 零子区间 {sum(int(m.sum()) for m in dead)}")
            if change < lead.convergence_tol and not changed:
                converged = True
                break
        if not converged:
            logger.warning(f"LQA 在 {lead.max_iterations} 次迭代内未收敛")

    state = FitState(design, responses, gram, rhs, roughness, lqa, lqa_offset, P, coefficients)
    df = state.hat_matrix_trace()
    residual = responses - design @ coefficients
    rss = float(residual @ residual)
    residual_variance = rss / (n - df) if n - df > 0 else float('nan')
    mu_hat = float(coefficients[0]) if lead.fit_intercept else 0.0

    results = []
    for block, mask in zip(blocks, dead):
        results.append(FitResult(
            beta_hat=block.spline(coefficients),
            mu_hat=mu_hat,
            active_mask=~mask,
            iterations=iterations,
            converged=converged,
            objective_trace=list(objective_trace),
            residual_variance=residual_variance,
            surrogate_trace=list(surrogate_trace),
            dead_subintervals=[int(j) + 1 for j in np.flatnonzero(mask)],
            state=state,
            config=block.config,
            df=df,
        ))
    logger.debug(f"拟合完成: 迭代 {iterations} 次, 收敛={converged}, 自由度 {df:.2f}")
    return MultiFitResult(results, mu_hat)


def fit(data: FunctionalData, config: FitConfig) -> FitResult:
    """SLoS 估计 (λ=0 时即光滑样条, γ=λ=0 时即最小二乘)"""
    return fit_multi([data], [config]).results[0]


def fit_multi(datasets: Sequence[FunctionalData], configs: Sequence[FitConfig]) -> MultiFitResult:
    """多个函数型协变量: U=(U₁,…,U_K), V=diag(V_k), W=diag(W_k), 各自独立维护死区间"""
    blocks, total = _prepare_blocks(datasets, configs)
    return _run_lqa(blocks, total, datasets[0].responses, configs[0])


def fit_components(data: FunctionalData, bases: Sequence[BSplineBasis], config: FitConfig,
                   zero_intervals: Sequence[Tuple[float, float]] = ()) -> MultiFitResult:
    """在若干互不相交的子区间上各放一组基函数, 拼接设计矩阵后共同求解

    各子区间之外以及 zero_intervals (闭区间) 上 β 恒为零; 所有分量共用 config 中的 γ 与 λ
    """
    if len(bases) == 0:
        raise ValueError("至少需要一个分量基函数")
    offset = 1 if config.fit_intercept else 0
    blocks = []
    for basis in bases:
        if basis.domain_start < data.domain[0] or basis.domain_end > data.domain[1]:
            raise ValueError(f"分量 [{basis.domain_start}, {basis.domain_end}] 超出定义域 {data.domain}")
        local = replace(config, M=basis.num_subintervals, degree=basis.degree,
                        deriv_order=min(config.deriv_order, basis.degree))
        design = component_design(basis, data, zero_intervals)
        blocks.append(_Block(basis, local, design, _penalty(basis, local), offset))
        offset += basis.size
    return _run_lqa(blocks, offset, data.responses, config)


def predict(result: FitResult, curves, grid) -> np.ndarray:
    """ŷ_i = μ̂ + ∫ X_i β̂ (梯形公式)"""
    grid = validate_grid(grid)
    matrix = as_curve_matrix(curves, grid.size)
    values = np.asarray(result.beta_hat(grid), dtype=float)
    return result.mu_hat + (matrix * trapezoid_weights(grid)) @ values


def objective(beta: SplineFunction, mu: float, data: FunctionalData, config: FitConfig) -> float:
    """Q(β, μ) = (1/n)Σ[Y_i - μ - ∫X_iβ]² + γ||D^m β||² + Σ_j p_λ(c_j)"""
    if data.n == 0:
        raise ValueError("数据不能为空")
    if beta.basis.degree < config.deriv_order:
        raise ValueError(f"样条次数 {beta.basis.degree} 小于惩罚导数阶 {config.deriv_order}")
    U = design_matrix(beta.basis, data.curves, data.grid)
    residual = data.responses - mu - U @ beta.coefficients
    value = residual @ residual / data.n
    if config.gamma > 0:
        value += config.gamma * beta.coefficients @ penalty_matrix(beta.basis, config.deriv_order) @ beta.coefficients
    if config.lam > 0:
        value += fscad_approx(beta, config.scad)
    return float(value)

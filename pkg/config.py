#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""配置文件 - SLoS 函数型线性回归工具的默认参数

所有常量都可以通过环境变量或项目根目录下的 .env 文件覆盖
"""

import os
from typing import Tuple

from dotenv import load_dotenv

load_dotenv()


def _env_str(name: str, default: str) -> str:
    return os.getenv(name, default)


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    return int(value) if value not in (None, '') else default


def _env_float(name: str, default: float) -> float:
    value = os.getenv(name)
    return float(value) if value not in (None, '') else default


def _env_range(name: str, default: Tuple[float, float]) -> Tuple[float, float]:
    """读取形如 "1e-8,1e-1" 的区间"""
    value = os.getenv(name)
    if value in (None, ''):
        return default
    low, high = (float(v) for v in value.split(','))
    return low, high


def _env_ints(name: str, default: Tuple[int, ...]) -> Tuple[int, ...]:
    value = os.getenv(name)
    if value in (None, ''):
        return default
    return tuple(int(v) for v in value.split(',') if v.strip())


# SCAD 惩罚参数 (a 的推荐值为 3.7)
SCAD_A = _env_float('SLOS_SCAD_A', 3.7)

# B样条基函数设置
DEFAULT_DEGREE = _env_int('SLOS_DEGREE', 3)          # 三次样条
DEFAULT_DERIV_ORDER = _env_int('SLOS_DERIV_ORDER', 2)  # 粗糙度惩罚的导数阶 m

# LQA 迭代设置
MAX_ITERATIONS = _env_int('SLOS_MAX_ITERATIONS', 500)
CONVERGENCE_TOL = _env_float('SLOS_CONVERGENCE_TOL', 1e-6)

# 手动收缩阈值: c_j <= SHRINK_RELATIVE * 初始迭代的 max c_j 时子区间判为零
SHRINK_RELATIVE = _env_float('SLOS_SHRINK_RELATIVE', 1e-4)
SHRINK_ABSOLUTE_FLOOR = _env_float('SLOS_SHRINK_ABSOLUTE_FLOOR', 1e-10)

# 调参网格
GAMMA_GRID_RANGE = _env_range('SLOS_GAMMA_RANGE', (1e-8, 1e-1))
GAMMA_GRID_SIZE = _env_int('SLOS_GAMMA_GRID_SIZE', 8)
LAMBDA_GRID_RANGE = _env_range('SLOS_LAMBDA_RANGE', (1e-4, 1.0))  # 相对于 ŝ 的倍数
LAMBDA_GRID_SIZE = _env_int('SLOS_LAMBDA_GRID_SIZE', 30)
CV_FOLDS = _env_int('SLOS_CV_FOLDS', 5)
DEFAULT_CRITERION = _env_str('SLOS_CRITERION', 'BIC')  # 可选值: BIC, AIC, GCV, CV

# 对比估计量的节点/阶数候选
OLS_DEGREE_GRID = _env_ints('SLOS_OLS_DEGREES', (2, 3, 4, 5))
OLS_KNOT_GRID = _env_ints('SLOS_OLS_KNOTS', (4, 6, 8, 10, 15))
SMOOTH_KNOT_GRID = _env_ints('SLOS_SMOOTH_KNOTS', (20, 35, 50))
ORACLE_KNOT_GRID = _env_ints('SLOS_ORACLE_KNOTS', (10, 20, 30, 40, 50))

# 模拟研究设置
SIM_TEST_N = _env_int('SLOS_SIM_TEST_N', 5000)
SIM_GRID_SIZE = _env_int('SLOS_SIM_GRID_SIZE', 101)
SIM_MU = _env_float('SLOS_SIM_MU', 1.0)
SIM_SNR = _env_float('SLOS_SIM_SNR', 4.0)
COVARIATE_KNOTS = 71   # 协变量曲线: 71 个等距节点
COVARIATE_ORDER = 5    # 5 阶 (4 次) B样条, 共 74 个基函数
MAX_FAILURE_RATE = _env_float('SLOS_MAX_FAILURE_RATE', 0.2)

# 应用数据设置
PLOT_GRID_POINTS = _env_int('SLOS_PLOT_GRID_POINTS', 1001)
NUM_PERMUTATIONS = _env_int('SLOS_NUM_PERMUTATIONS', 1000)
PERMUTATION_FAILURE_CAP = _env_float('SLOS_PERMUTATION_FAILURE_CAP', 0.05)

# 数据存储设置
DATA_DIR = _env_str('SLOS_DATA_DIR', 'data')
OUTPUT_DIR = _env_str('SLOS_OUTPUT_DIR', os.path.join(DATA_DIR, 'output'))

# 并发设置 (网格点 / 重复 / 置换 的工作线程数)
THREADS = _env_int('SLOS_THREADS', 1)

# CSV 输出: 17 位有效数字保证读写往返不丢精度
CSV_FLOAT_FORMAT = '%.17g'

# 日志设置
LOG_LEVEL = _env_str('SLOS_LOG_LEVEL', 'INFO')  # 可选值: DEBUG, INFO, WARNING, ERROR
LOG_FILE = _env_str('SLOS_LOG_FILE', 'slos.log')

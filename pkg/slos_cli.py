#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
SLoS 命令行工具
子命令:
  fit       在应用数据上调参并拟合, 输出 β̂ 曲线、系数、非零区域与 R²
  tune      只做 (γ, λ) 网格搜索, 输出评分表
  permtest  置换检验: 打乱响应后重新拟合, 比较 R²
  simulate  蒙特卡洛模拟研究
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from scipy.linalg import LinAlgError

from config import (DEFAULT_CRITERION, DEFAULT_DEGREE, DEFAULT_DERIV_ORDER, LOG_FILE, LOG_LEVEL,
                    NUM_PERMUTATIONS, OUTPUT_DIR, PERMUTATION_FAILURE_CAP, PLOT_GRID_POINTS, SIM_GRID_SIZE,
                    SIM_MU, SIM_SNR, SIM_TEST_N, THREADS)
from functional_dataset import CsvLayout, FunctionalDataset, load_csv, write_table
from simulation_study import METHODS, ScenarioConfig, StudyReport, run_m_sensitivity, run_study, substream
from slos_solver import FitConfig, FitResult, FunctionalData, IllConditionedSystemError, fit, predict
from tuning_selector import (NoValidConfigurationError, TuningGrid, default_gamma_values, default_tuning_grid,
                             grid_search, m_heuristic)

logger = logging.getLogger('SLoSCLI')

PERMUTATION_STREAM = 2


class PermutationTestError(RuntimeError):
    """失败的置换次数超过上限"""


def setup_logging(level: str = LOG_LEVEL):
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(LOG_FILE, encoding='utf-8'),
            logging.StreamHandler(sys.stdout)
        ]
    )


# ---------------------------------------------------------------- 拟合与检验

@dataclass
class FitOptions:
    """应用拟合的可选覆盖项, None 表示由调参决定"""
    M: Optional[int] = None
    degree: int = DEFAULT_DEGREE
    gamma: Optional[float] = None
    lam: Optional[float] = None
    criterion: str = DEFAULT_CRITERION
    periodic: bool = False
    fit_intercept: bool = True
    threads: int = THREADS

    def template(self, n: int) -> FitConfig:
        return FitConfig(M=self.M or m_heuristic(n), degree=self.degree,
                         deriv_order=min(DEFAULT_DERIV_ORDER, self.degree),
                         periodic=self.periodic, fit_intercept=self.fit_intercept)


@dataclass
class ApplicationFit:
    dataset: FunctionalDataset
    data: FunctionalData
    result: FitResult
    config: FitConfig
    score_table: Optional[pd.DataFrame]
    r2: float


@dataclass
class PermutationReport:
    """置换检验结果, p = (1 + #{置换 R² ≥ 观测 R²}) / (1 + 置换次数)"""
    observed_r2: float
    permuted_r2: np.ndarray
    num_permutations: int
    p_value: float
    failures: int = 0


def r_squared(result: FitResult, data: FunctionalData) -> float:
    """R² = 1 - RSS/TSS; 响应为常数时记为 0"""
    fitted = predict(result, data.curves, data.grid)
    rss = float(np.sum((data.responses - fitted) ** 2))
    tss = float(np.sum((data.responses - data.responses.mean()) ** 2))
    return 0.0 if tss == 0 else 1.0 - rss / tss


def tune_dataset(data: FunctionalData, options: FitOptions) -> Tuple[FitConfig, Optional[pd.DataFrame]]:
    """γ、λ 都给定时直接使用, 否则在默认网格上搜索 (给定的一个固定不变)"""
    template = options.template(data.n)
    if options.gamma is not None and options.lam is not None:
        return template.with_tuning(options.gamma, options.lam), None
    gammas = [options.gamma] if options.gamma is not None else None
    grid = default_tuning_grid(data, template, options.criterion, gammas)
    if options.lam is not None:
        grid = TuningGrid(grid.gamma_values, [options.lam], options.criterion)
    return grid_search(data, grid, template, threads=options.threads)


def fit_application(dataset: FunctionalDataset, options: FitOptions) -> ApplicationFit:
    data = dataset.to_functional_data()
    config, table = tune_dataset(data, options)
    result = fit(data, config)
    if not result.converged:
        logger.warning(f"所选配置 γ={config.gamma:.3g}, λ={config.lam:.3g} 未收敛")
    return ApplicationFit(dataset, data, result, config, table, r_squared(result, data))


def fit_smooth_comparison(data: FunctionalData, options: FitOptions) -> FitResult:
    """同一组基函数上按 AIC 选 γ 的光滑样条, 作为对照曲线"""
    template = options.template(data.n)
    config, _ = grid_search(data, TuningGrid(default_gamma_values(), [0.0], 'AIC'), template,
                            threads=options.threads)
    return fit(data, config)


def permutation_p_value(observed: float, permuted: np.ndarray) -> float:
    permuted = np.asarray(permuted, dtype=float)
    return float((1 + np.sum(permuted >= observed)) / (1 + permuted.size))


def run_permutation_test(dataset: FunctionalDataset, options: FitOptions, num_permutations: int = NUM_PERMUTATIONS,
                         seed: int = 0, fast: bool = False, threads: int = 1,
                         observed: Optional[ApplicationFit] = None) -> PermutationReport:
    """每次置换在完整调参网格上重新拟合; fast=True 时沿用观测数据选出的 (γ, λ)"""
    if num_permutations < 1:
        raise ValueError(f"置换次数必须为正: {num_permutations}")
    observed = observed or fit_application(dataset, options)
    inner = replace(options, threads=1)

    def task(k: int) -> Optional[float]:
        permuted = substream(seed, k, PERMUTATION_STREAM).permutation(dataset.responses)
        try:
            if fast:
                data = observed.data.with_responses(permuted)
                return r_squared(fit(data, observed.config), data)
            return fit_application(dataset.with_responses(permuted), inner).r2
        except (IllConditionedSystemError, NoValidConfigurationError, LinAlgError) as e:
            logger.warning(f"第 {k} 次置换拟合失败: {e}")
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(task, range(num_permutations)))
    else:
        outcomes = [task(k) for k in range(num_permutations)]

    failures = sum(1 for value in outcomes if value is None)
    if failures > PERMUTATION_FAILURE_CAP * num_permutations:
        raise PermutationTestError(f"{num_permutations} 次置换中 {failures} 次失败, 超过 {PERMUTATION_FAILURE_CAP:.0%}")
    permuted_r2 = np.array([value for value in outcomes if value is not None])
    p_value = permutation_p_value(observed.r2, permuted_r2)
    logger.info(f"置换检验完成: 观测 R²={observed.r2:.4f}, p={p_value:.4g}, 有效置换 {permuted_r2.size} 次")
    return PermutationReport(observed.r2, permuted_r2, int(permuted_r2.size), p_value, failures)


# ---------------------------------------------------------------- 输出

def active_regions(result: FitResult, shift: float = 0.0) -> pd.DataFrame:
    """把相邻的活跃子区间合并为 (start, end), 以原始单位表示"""
    basis = result.beta_hat.basis
    knots = basis.knots + shift
    mask = np.asarray(result.active_mask, dtype=bool)
    if mask.size == 0:
        mask = np.ones(basis.num_subintervals, dtype=bool)
    regions, start = [], None
    for j, active in enumerate(mask):
        if active and start is None:
            start = knots[j]
        if not active and start is not None:
            regions.append((start, knots[j]))
            start = None
    if start is not None:
        regions.append((start, knots[-1]))
    return pd.DataFrame(regions, columns=['start', 'end'])


def curve_frame(result: FitResult, dataset: FunctionalDataset, points: int = PLOT_GRID_POINTS) -> pd.DataFrame:
    start, end = dataset.domain
    t = np.linspace(start, end, points)
    return pd.DataFrame({'t': t, 'value': result.beta_hat(t - start)})


def coefficient_frame(result: FitResult) -> pd.DataFrame:
    terms, values = [], []
    if result.config is None or result.config.fit_intercept:
        terms.append('intercept')
        values.append(result.mu_hat)
    coefficients = result.beta_hat.coefficients
    terms.extend(f'b{k + 1}' for k in range(coefficients.size))
    values.extend(coefficients.tolist())
    return pd.DataFrame({'term': terms, 'value': values})


def metrics_frame(values: Dict[str, float]) -> pd.DataFrame:
    return pd.DataFrame({'metric': list(values), 'value': [float(v) for v in values.values()]})


def write_run_config(path: str, args: argparse.Namespace, timestamp: bool):
    """运行参数旁注文件 (key=value)"""
    lines = []
    if timestamp:
        lines.append(f"# generated_at: {datetime.now().isoformat(timespec='seconds')}")
    for key in sorted(vars(args)):
        value = getattr(args, key)
        if isinstance(value, (list, tuple)):
            value = ','.join(str(v) for v in value)
        lines.append(f"{key}={value}")
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write('\n'.join(lines) + '\n')


# ---------------------------------------------------------------- 子命令

def _load_dataset(args: argparse.Namespace) -> FunctionalDataset:
    dataset = load_csv(args.data, CsvLayout(args.response, args.id_column, args.domain, args.units or ''))
    if args.log_response:
        if np.any(dataset.responses <= 0):
            raise ValueError("--log-response 要求响应全部为正")
        dataset = dataset.with_responses(np.log(dataset.responses))
    return dataset


def _options(args: argparse.Namespace) -> FitOptions:
    return FitOptions(M=args.M, degree=args.degree, gamma=args.gamma, lam=args.lam, criterion=args.criterion,
                      periodic=bool(args.periodic), fit_intercept=not args.no_intercept, threads=args.threads)


def _output(args: argparse.Namespace, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def cmd_fit(args: argparse.Namespace) -> ApplicationFit:
    dataset = _load_dataset(args)
    options = _options(args)
    application = fit_application(dataset, options)
    smooth = fit_smooth_comparison(application.data, options)
    result, stamp = application.result, not args.no_timestamp

    write_table(curve_frame(result, dataset), _output(args, 'beta_hat.csv'), stamp)
    write_table(curve_frame(smooth, dataset), _output(args, 'smooth_beta_hat.csv'), stamp)
    write_table(coefficient_frame(result), _output(args, 'coefficients.csv'), stamp)
    write_table(active_regions(result, dataset.shift), _output(args, 'active_regions.csv'), stamp)
    if application.score_table is not None:
        write_table(application.score_table, _output(args, 'score_table.csv'), stamp)
    write_table(metrics_frame({
        'r2': application.r2,
        'smooth_r2': r_squared(smooth, application.data),
        'gamma': application.config.gamma,
        'lambda': application.config.lam,
        'M': application.config.M,
        'degree': application.config.degree,
        'df': result.df,
        'residual_variance': result.residual_variance,
        'iterations': result.iterations,
        'converged': int(result.converged),
        'null_subintervals': len(result.dead_subintervals),
        'n': dataset.n,
    }), _output(args, 'metrics.csv'), stamp)
    write_run_config(_output(args, 'run_config.txt'), args, stamp)
    print(f"✅ 拟合完成: R²={application.r2:.4f}, 零子区间 {len(result.dead_subintervals)}/{application.config.M}, "
          f"输出目录 {args.out_dir}")
    return application


def cmd_tune(args: argparse.Namespace) -> Tuple[FitConfig, Optional[pd.DataFrame]]:
    dataset = _load_dataset(args)
    data = dataset.to_functional_data()
    config, table = tune_dataset(data, _options(args))
    stamp = not args.no_timestamp
    if table is not None:
        write_table(table, _output(args, 'score_table.csv'), stamp)
    write_table(metrics_frame({'gamma': config.gamma, 'lambda': config.lam, 'M': config.M}),
                _output(args, 'metrics.csv'), stamp)
    write_run_config(_output(args, 'run_config.txt'), args, stamp)
    print(f"✅ 调参完成: γ={config.gamma:.4g}, λ={config.lam:.4g}, M={config.M}")
    return config, table


def cmd_permtest(args: argparse.Namespace) -> PermutationReport:
    dataset = _load_dataset(args)
    report = run_permutation_test(dataset, _options(args), args.permutations, args.seed, args.fast, args.threads)
    stamp = not args.no_timestamp
    write_table(pd.DataFrame({'permutation': np.arange(report.permuted_r2.size), 'r2': report.permuted_r2}),
                _output(args, 'permutation.csv'), stamp)
    write_table(metrics_frame({'observed_r2': report.observed_r2, 'p_value': report.p_value,
                               'num_permutations': report.num_permutations, 'failures': report.failures}),
                _output(args, 'metrics.csv'), stamp)
    write_run_config(_output(args, 'run_config.txt'), args, stamp)
    print(f"✅ 置换检验完成: 观测 R²={report.observed_r2:.4f}, p={report.p_value:.4g}")
    return report


def cmd_simulate(args: argparse.Namespace) -> StudyReport:
    scenario = ScenarioConfig(case=args.case, n=args.n, test_n=args.test_n, replicates=args.replicates,
                              seed=args.seed, mu_true=args.mu, snr=args.snr, grid_size=args.grid_size)
    if args.m_values:
        report = run_m_sensitivity(scenario, args.m_values, threads=args.threads)
    else:
        report = run_study(scenario, args.methods, threads=args.threads)
    stamp = not args.no_timestamp
    write_table(report.records, _output(args, 'study_long.csv'), stamp)
    write_table(report.summary_table(), _output(args, 'study_summary.csv'), stamp)
    write_table(metrics_frame({'replicates': scenario.replicates, 'failures': report.failures}),
                _output(args, 'metrics.csv'), stamp)
    write_run_config(_output(args, 'run_config.txt'), args, stamp)
    print(f"✅ 模拟完成: Case {scenario.case}, n={scenario.n}, 失败 {report.failures}/{scenario.replicates}")
    return report


# ---------------------------------------------------------------- 参数解析

def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off', ''):
        return False
    raise ValueError(f"无法解析布尔值: {value}")


def _as_range(value) -> Optional[Tuple[float, float]]:
    if value is None or isinstance(value, tuple):
        return value
    parts = [float(v) for v in str(value).split(',')]
    if len(parts) != 2:
        raise ValueError(f"区间格式应为 'a,b': {value}")
    return parts[0], parts[1]


def _as_list(value) -> List[str]:
    if isinstance(value, list):
        return value
    return [v.strip() for v in str(value).split(',') if v.strip()]


def _as_ints(value) -> List[int]:
    return [int(v) for v in _as_list(value)]


# 配置文件中的键 -> (参数名, 转换函数)
_CONFIG_KEYS: Dict[str, Tuple[str, Callable]] = {
    'seed': ('seed', int), 'out_dir': ('out_dir', str), 'threads': ('threads', int),
    'no_timestamp': ('no_timestamp', _as_bool), 'log_level': ('log_level', str),
    'data': ('data', str), 'response': ('response', str), 'id_column': ('id_column', str),
    'domain': ('domain', _as_range), 'units': ('units', str), 'log_response': ('log_response', _as_bool),
    'periodic': ('periodic', _as_bool), 'no_intercept': ('no_intercept', _as_bool),
    'm': ('M', int), 'degree': ('degree', int), 'gamma': ('gamma', float), 'lambda': ('lam', float),
    'lam': ('lam', float), 'criterion': ('criterion', str), 'permutations': ('permutations', int),
    'fast': ('fast', _as_bool), 'case': ('case', str), 'n': ('n', int), 'replicates': ('replicates', int),
    'test_n': ('test_n', int), 'methods': ('methods', _as_list), 'grid_size': ('grid_size', int),
    'snr': ('snr', float), 'mu': ('mu', float), 'm_values': ('m_values', _as_ints),
}

# 命令行与配置文件都未给出时的默认值
_DEFAULTS = {
    'seed': 0, 'out_dir': OUTPUT_DIR, 'threads': THREADS, 'no_timestamp': False, 'log_level': LOG_LEVEL,
    'units': '', 'log_response': False, 'periodic': False, 'no_intercept': False, 'degree': DEFAULT_DEGREE,
    'criterion': DEFAULT_CRITERION, 'permutations': NUM_PERMUTATIONS, 'fast': False,
    'replicates': 1, 'test_n': SIM_TEST_N, 'methods': list(METHODS), 'grid_size': SIM_GRID_SIZE,
    'snr': SIM_SNR, 'mu': SIM_MU,
}

_REQUIRED = {
    'fit': ('data', 'response'), 'tune': ('data', 'response'), 'permtest': ('data', 'response'),
    'simulate': ('case', 'n'),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='key=value 格式的配置文件')
    common.add_argument('--seed', type=int)
    common.add_argument('--out-dir', dest='out_dir')
    common.add_argument('--threads', type=int)
    common.add_argument('--no-timestamp', dest='no_timestamp', action='store_true', default=None)
    common.add_argument('--log-level', dest='log_level')

    dataset = argparse.ArgumentParser(add_help=False)
    dataset.add_argument('--data', help='CSV 数据文件')
    dataset.add_argument('--response', help='响应列名')
    dataset.add_argument('--id-column', dest='id_column')
    dataset.add_argument('--domain', help="定义域 'a,b' (默认取网格两端)")
    dataset.add_argument('--units')
    dataset.add_argument('--log-response', dest='log_response', action='store_true', default=None)
    dataset.add_argument('--periodic', action='store_true', default=None, help='约束 β(起点) = β(终点)')
    dataset.add_argument('--no-intercept', dest='no_intercept', action='store_true', default=None)
    dataset.add_argument('--M', dest='M', type=int, help='子区间数 (默认 max{50, [20n^0.25]})')
    dataset.add_argument('--degree', type=int)
    dataset.add_argument('--gamma', type=float)
    dataset.add_argument('--lambda', dest='lam', type=float)
    dataset.add_argument('--criterion', help='BIC / AIC / GCV / CV(k)')

    parser = argparse.ArgumentParser(description='SLoS 函数型线性回归工具')
    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('fit', parents=[common, dataset], help='调参并拟合')
    commands.add_parser('tune', parents=[common, dataset], help='网格搜索 (γ, λ)')
    permtest = commands.add_parser('permtest', parents=[common, dataset], help='置换检验')
    permtest.add_argument('--permutations', type=int)
    permtest.add_argument('--fast', action='store_true', default=None, help='沿用观测数据的 (γ, λ)')

    simulate = commands.add_parser('simulate', parents=[common], help='蒙特卡洛模拟')
    simulate.add_argument('--case', help='I / II / III')
    simulate.add_argument('--n', type=int)
    simulate.add_argument('--replicates', type=int)
    simulate.add_argument('--test-n', dest='test_n', type=int)
    simulate.add_argument('--methods', type=_as_list, help='逗号分隔: slos,smooth,ols,oracle')
    simulate.add_argument('--grid-size', dest='grid_size', type=int)
    simulate.add_argument('--snr', type=float)
    simulate.add_argument('--mu', type=float)
    simulate.add_argument('--m-values', dest='m_values', type=_as_ints, help='M 敏感性分析, 逗号分隔')
    return parser


def resolve_arguments(args: argparse.Namespace) -> argparse.Namespace:
    """优先级: 命令行参数 > --config 文件 > 环境变量/.env (config.py) > 内置默认"""
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"配置文件不存在: {args.config}")
        for key, value in dotenv_values(args.config).items():
            normalized = key.strip().lower().replace('-', '_')
            if normalized not in _CONFIG_KEYS:
                logger.warning(f"配置文件中未知的键: {key}")
                continue
            dest, convert = _CONFIG_KEYS[normalized]
            if hasattr(args, dest) and getattr(args, dest) is None and value is not None:
                setattr(args, dest, convert(value))
    for dest, default in _DEFAULTS.items():
        if hasattr(args, dest) and getattr(args, dest) is None:
            setattr(args, dest, default)
    for dest in _REQUIRED[args.command]:
        if getattr(args, dest, None) is None:
            raise ValueError(f"缺少必需参数 --{dest.replace('_', '-')}")
    if hasattr(args, 'domain'):
        args.domain = _as_range(args.domain)
    return args


_COMMANDS = {'fit': cmd_fit, 'tune': cmd_tune, 'permtest': cmd_permtest, 'simulate': cmd_simulate}


def main(argv: Optional[List[str]] = None) -> int:
    """主函数, 返回进程退出码"""
    args = build_parser().parse_args(argv)
    try:
        args = resolve_arguments(args)
        setup_logging(args.log_level)
        _COMMANDS[args.command](args)
        return 0
    except KeyboardInterrupt:
        print("⏹️ 已中断")
        return 1
    except Exception as e:
        logger.error(f"❌ 命令 {args.command} 失败: {e}", exc_info=True)
        print(f"❌ 执行失败: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
函数型数据集读写
从 CSV 读取 "首行为数值网格表头" 的曲线数据 (光谱、气温等), 校验后转换为求解器使用的 FunctionalData;
所有输出表格以 17 位有效数字写出, 可选首行时间戳注释
"""

import logging
import os
from dataclasses import dataclass
from datetime import datetime
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from config import CSV_FLOAT_FORMAT
from slos_solver import FunctionalData

logger = logging.getLogger('FunctionalDataset')


class DatasetParseError(ValueError):
    """数据文件格式错误, row / column 指出出错位置 (已知时)"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"第 {row} 行")
        if column is not None:
            location.append(f"列 '{column}'")
        super().__init__(f"{message}{' (' + ', '.join(location) + ')' if location else ''}")


@dataclass
class CsvLayout:
    """CSV 布局: 响应列、可选的样本编号列, 其余列的表头为网格时间点"""
    response_column: str
    id_column: Optional[str] = None
    domain: Optional[Tuple[float, float]] = None
    units: str = ''


@dataclass
class FunctionalDataset:
    """应用数据: 网格、n×K 曲线矩阵、响应、定义域与样本标签"""
    grid: np.ndarray
    curves: np.ndarray
    responses: np.ndarray
    domain: Tuple[float, float]
    labels: Optional[List[str]] = None
    units: str = ''
    response_name: str = 'y'

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.curves = np.asarray(self.curves, dtype=float)
        self.responses = np.asarray(self.responses, dtype=float)
        if self.responses.size < 2:
            raise ValueError(f"样本数至少为 2: {self.responses.size}")
        if self.curves.shape != (self.responses.size, self.grid.size):
            raise ValueError(f"曲线矩阵形状 {self.curves.shape} 与 (n={self.responses.size}, K={self.grid.size}) 不符")
        if np.isnan(self.curves).any() or np.isnan(self.responses).any():
            raise ValueError("数据中存在缺失值")
        start, end = self.domain
        if self.grid[0] < start or self.grid[-1] > end:
            raise ValueError(f"网格 [{self.grid[0]}, {self.grid[-1]}] 不在定义域 [{start}, {end}] 内")

    @property
    def n(self) -> int:
        return self.responses.size

    @property
    def shift(self) -> float:
        """拟合时把定义域平移到从 0 开始"""
        return float(self.domain[0])

    def to_functional_data(self) -> FunctionalData:
        start, end = self.domain
        return FunctionalData(self.grid - start, self.curves, self.responses, (0.0, end - start))

    def with_responses(self, responses) -> 'FunctionalDataset':
        return FunctionalDataset(self.grid, self.curves, responses, self.domain, self.labels,
                                 self.units, self.response_name)


def _parse_grid(columns: List[str]) -> np.ndarray:
    values = []
    for name in columns:
        try:
            values.append(float(name))
        except (TypeError, ValueError):
            raise DatasetParseError("网格表头必须是数值时间点", row=0, column=str(name))
    return np.asarray(values)


def load_csv(path: str, layout: CsvLayout) -> FunctionalDataset:
    """读取数据文件; 缺失值报告所在行列, 网格列按时间点排序"""
    try:
        frame = pd.read_csv(path, dtype=str, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise DatasetParseError(f"数据文件为空: {path}")
    if frame.empty:
        raise DatasetParseError(f"数据文件没有样本行: {path}")
    if layout.response_column not in frame.columns:
        raise DatasetParseError("找不到响应列", column=layout.response_column)
    if layout.id_column is not None and layout.id_column not in frame.columns:
        raise DatasetParseError("找不到样本编号列", column=layout.id_column)

    grid_columns = [c for c in frame.columns if c not in (layout.response_column, layout.id_column)]
    if len(grid_columns) < 2:
        raise DatasetParseError("至少需要 2 个网格列")
    grid = _parse_grid(grid_columns)
    order = np.argsort(grid, kind='stable')
    if np.any(np.diff(grid[order]) <= 0):
        raise DatasetParseError("网格时间点有重复", row=0)

    numeric = frame[grid_columns + [layout.response_column]].apply(pd.to_numeric, errors='coerce')
    missing = numeric.isna().to_numpy()
    if missing.any():
        row, col = np.argwhere(missing)[0]
        raise DatasetParseError("存在缺失值或非数值", row=int(row) + 1, column=numeric.columns[col])

    # to_numeric 只用来定位非法单元格; 取值用 float() 逐格转换, 与文件中的十进制串逐位一致
    values = frame[grid_columns + [layout.response_column]].to_numpy(dtype=object).astype(float)
    curves = values[:, :-1][:, order]
    responses = values[:, -1]
    grid = grid[order]
    domain = tuple(layout.domain) if layout.domain is not None else (float(grid[0]), float(grid[-1]))
    labels = frame[layout.id_column].tolist() if layout.id_column is not None else None
    try:
        dataset = FunctionalDataset(grid, curves, responses, domain, labels, layout.units, layout.response_column)
    except ValueError as e:
        raise DatasetParseError(str(e))
    logger.info(f"读取数据 {os.path.basename(path)}: n={dataset.n}, K={grid.size}, 定义域 [{domain[0]}, {domain[1]}]")
    return dataset


def write_table(frame: pd.DataFrame, path: str, timestamp: bool = True):
    """写出 CSV (17 位有效数字), timestamp 为 True 时首行写 '# generated_at: ...'"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        if timestamp:
            handle.write(f"# generated_at: {datetime.now().isoformat(timespec='seconds')}\n")
        frame.to_csv(handle, index=False, float_format=CSV_FLOAT_FORMAT)


def read_table(path: str) -> pd.DataFrame:
    """读回 write_table 写出的文件, 跳过注释行并按往返精度解析浮点数"""
    return pd.read_csv(path, comment='#', float_precision='round_trip')

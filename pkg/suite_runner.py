#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
测试脚本的公共运行器
逐个执行模块中的 test_* 函数, 打印通过/失败汇总 (各 test_*.py 也可以直接用 pytest 收集)
"""

import logging
import os
import time
import traceback
from typing import Dict, List, Tuple

ACCEPTANCE_ENV = 'SLOS_RUN_ACCEPTANCE'


def acceptance_enabled() -> bool:
    return os.getenv(ACCEPTANCE_ENV, '') == '1'


def collect_tests(namespace: Dict) -> List[Tuple[str, object]]:
    return [(name, func) for name, func in namespace.items() if name.startswith('test_') and callable(func)]


def run_suite(title: str, namespace: Dict) -> bool:
    """运行 namespace 中全部 test_* 函数, 全部通过时返回 True"""
    logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    print(f"🚀 开始{title}测试")
    print("=" * 60)

    results = []
    for test_name, test_func in collect_tests(namespace):
        started = time.time()
        try:
            test_func()
            results.append((test_name, True))
            print(f"✅ {test_name}: 通过 ({time.time() - started:.1f}s)")
        except AssertionError as e:
            results.append((test_name, False))
            print(f"❌ {test_name}: 失败 - {e}")
            traceback.print_exc()
        except Exception as e:
            results.append((test_name, False))
            print(f"❌ {test_name}: 异常 - {str(e)}")
            traceback.print_exc()

    print("\n" + "=" * 60)
    print("📊 测试结果汇总")
    print("=" * 60)
    passed = sum(1 for _, result in results if result)
    for test_name, result in results:
        status = "✅ 通过" if result else "❌ 失败"
        print(f"{test_name:45} {status}")
    print(f"\n总结: {passed}/{len(results)} 个测试通过")
    return passed == len(results)

"""Frequency, block frequency, runs and forward cumulative sums tests (NIST SP 800-22 formulas)."""

import math
from dataclasses import dataclass, asdict
from typing import List

import numpy as np
from loguru import logger
from scipy.special import erfc, gammaincc
from scipy.stats import norm

from utils.bitbuffer import BitBuffer
from utils.errors import InsufficientData, PrerequisiteFailed

DEFAULT_ALPHA = 0.01
MIN_BITS = 100
MIN_BLOCK_LEN = 20
DEFAULT_BLOCK_LEN = 128


@dataclass(frozen=True)
class TestReport:
    test_name: str
    p_value: float
    passed: bool
    alpha: float = DEFAULT_ALPHA

    def to_dict(self) -> dict:
        return asdict(self)


# pytest не должен собирать этот класс как тест
TestReport.__test__ = False


def _report(name: str, p_value: float, alpha: float) -> TestReport:
    p = min(1.0, max(0.0, float(p_value)))
    return TestReport(test_name=name, p_value=p, passed=p >= alpha, alpha=alpha)


def _require_bits(bits: BitBuffer, name: str) -> np.ndarray:
    if bits.bit_count < MIN_BITS:
        raise InsufficientData(f"{name}: нужно ≥ {MIN_BITS} бит, получено {bits.bit_count}")
    return bits.to_bits()


def frequency_monobit(bits: BitBuffer, alpha: float = DEFAULT_ALPHA) -> TestReport:
    x = _require_bits(bits, "frequency_monobit")
    n = x.size
    s = 2 * int(x.sum()) - n
    return _report("frequency_monobit", erfc(abs(s) / math.sqrt(2 * n)), alpha)


def block_frequency(bits: BitBuffer, block_len: int = DEFAULT_BLOCK_LEN,
                    alpha: float = DEFAULT_ALPHA) -> TestReport:
    if block_len < MIN_BLOCK_LEN:
        raise InsufficientData(f"block_frequency: длина блока должна быть ≥ {MIN_BLOCK_LEN}")
    n_blocks = bits.bit_count // block_len
    if n_blocks < 1:
        raise InsufficientData(f"block_frequency: нет ни одного полного блока длины {block_len}")
    x = bits.to_bits()[: n_blocks * block_len].reshape(n_blocks, block_len)
    proportions = x.sum(axis=1) / block_len
    chi2 = 4.0 * block_len * float(np.sum((proportions - 0.5) ** 2))
    return _report("block_frequency", gammaincc(n_blocks / 2.0, chi2 / 2.0), alpha)


def runs_test(bits: BitBuffer, alpha: float = DEFAULT_ALPHA) -> TestReport:
    x = _require_bits(bits, "runs_test")
    n = x.size
    pi = x.sum() / n
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        raise PrerequisiteFailed(f"runs_test: |π − 1/2| = {abs(pi - 0.5):.4f} ≥ 2/√n")
    runs = 1 + int(np.count_nonzero(x[1:] != x[:-1]))
    numerator = abs(runs - 2.0 * n * pi * (1.0 - pi))
    denominator = 2.0 * math.sqrt(2.0 * n) * pi * (1.0 - pi)
    return _report("runs", erfc(numerator / denominator), alpha)


def cumulative_sums(bits: BitBuffer, alpha: float = DEFAULT_ALPHA) -> TestReport:
    x = _require_bits(bits, "cumulative_sums")
    n = x.size
    walk = np.cumsum(2 * x.astype(np.int64) - 1)
    z = int(np.max(np.abs(walk)))
    sqrt_n = math.sqrt(n)

    k1 = np.arange(int((-n / z + 1) / 4), int((n / z - 1) / 4) + 1)
    k2 = np.arange(int((-n / z - 3) / 4), int((n / z - 1) / 4) + 1)
    first = np.sum(norm.cdf((4 * k1 + 1) * z / sqrt_n) - norm.cdf((4 * k1 - 1) * z / sqrt_n))
    second = np.sum(norm.cdf((4 * k2 + 3) * z / sqrt_n) - norm.cdf((4 * k2 + 1) * z / sqrt_n))
    return _report("cumulative_sums", 1.0 - first + second, alpha)


def run_all(bits: BitBuffer, alpha: float = DEFAULT_ALPHA,
            block_len: int = DEFAULT_BLOCK_LEN) -> List[TestReport]:
    """All four tests; a failed runs prerequisite counts as p = 0"""
    reports = [frequency_monobit(bits, alpha), block_frequency(bits, block_len, alpha)]
    try:
        reports.append(runs_test(bits, alpha))
    except PrerequisiteFailed as e:
        logger.warning(f"⚠️ {e}")
        reports.append(TestReport(test_name="runs", p_value=0.0, passed=False, alpha=alpha))
    reports.append(cumulative_sums(bits, alpha))
    for report in reports:
        marker = "✅" if report.passed else "❌"
        logger.debug(f"{marker} {report.test_name}: p = {report.p_value:.6f}")
    return reports

"""Toeplitz hashing over GF(2).

Matrix entry (i, j) is seed[i + n_in - 1 - j], so output bit i is the parity
of seed[i : i + n_in] against the reversed input.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from typing import Iterable, Iterator, List, Literal, Sequence

import numpy as np
import psutil
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view

from utils.bitbuffer import BitBuffer, concat
from utils.errors import InvalidLength

# 35 бит позиции + 2 бита выбора состояния
TEST_SELECTION_BITS = 37
DEFAULT_BLOCK_BITS = 1 << 20
# строк × столбцов в одном чанке наивного пути
NAIVE_CHUNK_CELLS = 1 << 24
# бит входа, распаковываемых наивным путём за раз
NAIVE_INPUT_BITS = 1 << 16
# во сколько раз рабочий набор packed-пути больше сида
PACKED_WORKING_FACTOR = 4

ExtractMode = Literal["naive", "packed"]


@dataclass(frozen=True)
class ToeplitzSpec:
    n_in: int
    m_out: int
    seed: BitBuffer

    def __post_init__(self):
        required = required_seed_length(self.n_in, self.m_out)
        if self.seed.bit_count != required:
            raise InvalidLength(
                f"Сид Тёплица должен иметь {required} бит, получено {self.seed.bit_count}"
            )


@dataclass(frozen=True)
class BlockPlan:
    offset: int
    n_in: int
    m_out: int


@dataclass(frozen=True)
class SeedLedger:
    bits_consumed_extraction: int
    bits_consumed_test_selection: int
    bits_produced: int
    net_expansion: int

    def to_dict(self) -> dict:
        return asdict(self)


def required_seed_length(n_in: int, m_out: int) -> int:
    if n_in < 1 or m_out < 1:
        raise InvalidLength(f"Размеры матрицы должны быть ≥ 1: n={n_in}, m={m_out}")
    if m_out > n_in:
        raise InvalidLength(f"m_out={m_out} больше n_in={n_in}")
    return n_in + m_out - 1


def _extract_naive(chunks: Iterable[np.ndarray], seed: BitBuffer, n_in: int, m_out: int) -> np.ndarray:
    """Row-window reference path, fed the input in consecutive pieces.

    A piece x[j0:j1] meets the seed bits seed[n_in - j1 : n_in - j0 + m_out - 1];
    only that slice and the piece itself are unpacked.
    """
    out = np.zeros(m_out, dtype=np.uint8)
    consumed = 0
    for chunk in chunks:
        width = int(chunk.size)
        if width == 0:
            continue
        stop = consumed + width
        if stop > n_in:
            raise InvalidLength(f"Вход длиннее {n_in} бит, ожидаемых матрицей")
        base = n_in - stop
        windows = sliding_window_view(seed.slice(base, base + m_out - 1 + width).to_bits(), width)
        x_rev = chunk[::-1].astype(np.int64)
        rows = max(1, NAIVE_CHUNK_CELLS // width)
        for start in range(0, m_out, rows):
            end = min(m_out, start + rows)
            out[start:end] ^= ((windows[start:end].astype(np.int64) @ x_rev) & 1).astype(np.uint8)
        consumed = stop
    if consumed != n_in:
        raise InvalidLength(f"Вход длины {consumed}, матрица ожидает {n_in}")
    return out


def _pieces(buffer: BitBuffer, piece_bits: int) -> Iterator[np.ndarray]:
    for start in range(0, buffer.bit_count, piece_bits):
        yield buffer.slice(start, min(buffer.bit_count, start + piece_bits)).to_bits()


def _extract_packed(input_bits: BitBuffer, seed: BitBuffer, n_in: int, m_out: int) -> np.ndarray:
    working_set = PACKED_WORKING_FACTOR * (seed.bit_count + n_in) // 8
    available = psutil.virtual_memory().available
    if working_set > available:
        raise InvalidLength(
            f"packed-путь требует ~{working_set} байт, доступно {available}; используйте naive"
        )
    s = seed.to_int()
    x_rev = BitBuffer.from_bits(input_bits.to_bits()[::-1]).to_int()
    out = np.empty(m_out, dtype=np.uint8)
    for i in range(m_out):
        out[i] = ((s >> i) & x_rev).bit_count() & 1
    return out


def extract(input_bits: BitBuffer, spec: ToeplitzSpec, mode: ExtractMode = "packed") -> BitBuffer:
    if input_bits.bit_count != spec.n_in:
        raise InvalidLength(f"Вход длины {input_bits.bit_count}, матрица ожидает {spec.n_in}")
    if mode == "naive":
        out = _extract_naive(_pieces(input_bits, NAIVE_INPUT_BITS), spec.seed, spec.n_in, spec.m_out)
    elif mode == "packed":
        out = _extract_packed(input_bits, spec.seed, spec.n_in, spec.m_out)
    else:
        raise InvalidLength(f"Неизвестный режим извлечения: {mode}")
    return BitBuffer.from_bits(out)


def extract_stream(chunks: Iterable[BitBuffer], spec: ToeplitzSpec) -> BitBuffer:
    """Naive extraction of an input that arrives in pieces, e.g. from iter_bits_file"""
    return BitBuffer.from_bits(
        _extract_naive((chunk.to_bits() for chunk in chunks), spec.seed, spec.n_in, spec.m_out)
    )


def ledger(n_test_states: int, l_bits: int, seed_len: int) -> SeedLedger:
    test_bits = TEST_SELECTION_BITS * n_test_states
    return SeedLedger(
        bits_consumed_extraction=seed_len,
        bits_consumed_test_selection=test_bits,
        bits_produced=l_bits,
        net_expansion=l_bits - seed_len - test_bits,
    )


def plan_blocks(n_raw: int, l_bits: int, block_bits: int = DEFAULT_BLOCK_BITS) -> List[BlockPlan]:
    """Split n_raw input bits into blocks with per-block m summing to l_bits exactly.

    Each block gets floor(l·n_block/n_raw); the remainder goes to the blocks
    with the largest fractional parts. Blocks that end up with m = 0 are dropped.
    """
    if block_bits < 1:
        raise InvalidLength("Размер блока должен быть ≥ 1")
    if l_bits < 0 or l_bits > n_raw:
        raise InvalidLength(f"Нельзя извлечь {l_bits} бит из {n_raw} сырых")

    sizes = [min(block_bits, n_raw - offset) for offset in range(0, n_raw, block_bits)]
    base = [l_bits * n // n_raw for n in sizes]
    remainder = l_bits - sum(base)
    by_fraction = sorted(range(len(sizes)), key=lambda k: (-(l_bits * sizes[k] % n_raw), k))
    for k in by_fraction[:remainder]:
        base[k] += 1

    plan, offset = [], 0
    for n, m in zip(sizes, base):
        if m > 0:
            plan.append(BlockPlan(offset=offset, n_in=n, m_out=m))
        offset += n
    return plan


def plan_seed_length(plan: Sequence[BlockPlan]) -> int:
    """One seed shared across blocks; each block reads the prefix it needs"""
    if not plan:
        return 0
    return max(b.n_in for b in plan) + max(b.m_out for b in plan) - 1


def _extract_block(task) -> BitBuffer:
    block_input, seed_prefix, block, mode = task
    return extract(block_input, ToeplitzSpec(block.n_in, block.m_out, seed_prefix), mode)


def extract_blocks(raw: BitBuffer, l_bits: int, seed: BitBuffer, block_bits: int = DEFAULT_BLOCK_BITS,
                   mode: ExtractMode = "packed", workers: int = 1,
                   allow_long_seed: bool = False) -> BitBuffer:
    """Block-wise extraction of exactly l_bits from raw.

    The seed must match the block plan exactly; with allow_long_seed a longer
    seed is accepted and only its prefix is used.
    """
    plan = plan_blocks(raw.bit_count, l_bits, block_bits)
    needed = plan_seed_length(plan)
    if seed.bit_count < needed:
        raise InvalidLength(f"Сид содержит {seed.bit_count} бит, план блоков требует {needed}")
    if seed.bit_count > needed:
        if not allow_long_seed:
            raise InvalidLength(
                f"Сид содержит {seed.bit_count} бит, план блоков требует ровно {needed}; "
                f"лишние биты допускаются только явно"
            )
        logger.warning(f"⚠️ Используются первые {needed} из {seed.bit_count} бит сида")

    logger.info(f"🔄 Извлечение {l_bits} бит из {raw.bit_count} сырых: блоков {len(plan)}, режим {mode}")
    tasks = [
        (raw.slice(b.offset, b.offset + b.n_in), seed.slice(0, b.n_in + b.m_out - 1), b, mode)
        for b in plan
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_extract_block, tasks))
    else:
        parts = [_extract_block(task) for task in tasks]
    return concat(parts)

"""Packed bit buffers and the QRNGBITS file format.

Bit i lives in byte i // 8 at position i % 8 (least-significant bit first).
File layout: b"QRNGBITS", bit_count as little-endian uint64, payload.
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
from loguru import logger

from utils.errors import ArtifactIOError, InvalidLength

MAGIC = b"QRNGBITS"
HEADER = struct.Struct("<8sQ")


@dataclass(frozen=True)
class BitBuffer:
    bit_count: int
    payload: bytes

    def __post_init__(self):
        if self.bit_count < 0:
            raise InvalidLength(f"Отрицательная длина буфера: {self.bit_count}")
        expected = (self.bit_count + 7) // 8
        if len(self.payload) != expected:
            raise InvalidLength(
                f"Длина payload {len(self.payload)} байт не соответствует {self.bit_count} битам"
            )
        tail = self.bit_count % 8
        if tail and self.payload[-1] >> tail:
            raise InvalidLength("Неиспользуемые хвостовые биты должны быть нулевыми")

    @classmethod
    def from_bits(cls, bits) -> "BitBuffer":
        arr = np.asarray(bits, dtype=np.uint8).ravel()
        if arr.size and arr.max() > 1:
            raise InvalidLength("Ожидались биты 0/1")
        return cls(int(arr.size), np.packbits(arr, bitorder="little").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes, bit_count: Optional[int] = None) -> "BitBuffer":
        """Whole bytes by default; a shorter bit_count keeps only the first bits"""
        if bit_count is None:
            bit_count = 8 * len(data)
        if bit_count > 8 * len(data):
            raise InvalidLength(f"{len(data)} байт не вмещают {bit_count} бит")
        return cls.from_bits(np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=bit_count, bitorder="little"))

    @classmethod
    def from_int(cls, value: int, bit_count: int) -> "BitBuffer":
        if value < 0 or value >> bit_count:
            raise InvalidLength(f"Значение не помещается в {bit_count} бит")
        return cls(bit_count, value.to_bytes((bit_count + 7) // 8, "little"))

    @classmethod
    def random(cls, rng: np.random.Generator, bit_count: int) -> "BitBuffer":
        return cls.from_bits(rng.integers(0, 2, size=bit_count, dtype=np.uint8))

    def to_bits(self) -> np.ndarray:
        raw = np.frombuffer(self.payload, dtype=np.uint8)
        return np.unpackbits(raw, count=self.bit_count, bitorder="little")

    def to_int(self) -> int:
        """Bit i of the buffer becomes bit i of the integer"""
        return int.from_bytes(self.payload, "little")

    def slice(self, start: int, stop: int) -> "BitBuffer":
        if not 0 <= start <= stop <= self.bit_count:
            raise InvalidLength(f"Срез [{start}, {stop}) вне буфера длины {self.bit_count}")
        if start % 8 == 0:
            return self._aligned_slice(start, stop)
        first = start // 8
        raw = np.frombuffer(self.payload[first:(stop + 7) // 8], dtype=np.uint8)
        shift = start - 8 * first
        return BitBuffer.from_bits(np.unpackbits(raw, bitorder="little")[shift:shift + stop - start])

    def _aligned_slice(self, start: int, stop: int) -> "BitBuffer":
        chunk = bytearray(self.payload[start // 8:(stop + 7) // 8])
        tail = (stop - start) % 8
        if tail:
            chunk[-1] &= (1 << tail) - 1
        return BitBuffer(stop - start, bytes(chunk))

    def count_ones(self) -> int:
        return int(np.unpackbits(np.frombuffer(self.payload, dtype=np.uint8)).sum())

    def __len__(self) -> int:
        return self.bit_count


def xor(a: BitBuffer, b: BitBuffer) -> BitBuffer:
    if a.bit_count != b.bit_count:
        raise InvalidLength(f"XOR буферов разной длины: {a.bit_count} и {b.bit_count}")
    left = np.frombuffer(a.payload, dtype=np.uint8)
    right = np.frombuffer(b.payload, dtype=np.uint8)
    return BitBuffer(a.bit_count, np.bitwise_xor(left, right).tobytes())


def concat(buffers) -> BitBuffer:
    parts = [buf.to_bits() for buf in buffers]
    return BitBuffer.from_bits(np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8))


def write_bits_file(path: Union[str, Path], buffer: BitBuffer) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(HEADER.pack(MAGIC, buffer.bit_count))
            f.write(buffer.payload)
    except OSError as e:
        raise ArtifactIOError(f"Не удалось записать {path}: {e}") from e
    logger.debug(f"Записано {buffer.bit_count} бит в {path}")


def read_bits_file(path: Union[str, Path]) -> BitBuffer:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            header = f.read(HEADER.size)
            payload = f.read()
    except OSError as e:
        raise ArtifactIOError(f"Не удалось прочитать {path}: {e}") from e

    if len(header) != HEADER.size:
        raise ArtifactIOError(f"Файл {path} слишком короткий для заголовка QRNGBITS")
    magic, bit_count = HEADER.unpack(header)
    if magic != MAGIC:
        raise ArtifactIOError(f"Файл {path} не является QRNGBITS (magic={magic!r})")
    try:
        return BitBuffer(bit_count, payload)
    except InvalidLength as e:
        raise ArtifactIOError(f"Повреждённый файл {path}: {e}") from e


def iter_bits_file(path: Union[str, Path], chunk_bits: int) -> Iterator[BitBuffer]:
    """Consecutive chunk_bits pieces of a QRNGBITS file, the last one possibly shorter.

    Only one chunk of the payload is in memory at a time.
    """
    if chunk_bits < 8 or chunk_bits % 8:
        raise InvalidLength(f"Размер чанка должен быть кратен 8 и ≥ 8, получено {chunk_bits}")
    path = Path(path)
    try:
        with open(path, "rb") as f:
            header = f.read(HEADER.size)
            if len(header) != HEADER.size:
                raise ArtifactIOError(f"Файл {path} слишком короткий для заголовка QRNGBITS")
            magic, bit_count = HEADER.unpack(header)
            if magic != MAGIC:
                raise ArtifactIOError(f"Файл {path} не является QRNGBITS (magic={magic!r})")
            remaining = bit_count
            while remaining > 0:
                size = min(chunk_bits, remaining)
                data = f.read((size + 7) // 8)
                if len(data) != (size + 7) // 8:
                    raise ArtifactIOError(f"Повреждённый файл {path}: payload короче {bit_count} бит")
                try:
                    chunk = BitBuffer(size, data)
                except InvalidLength as e:
                    raise ArtifactIOError(f"Повреждённый файл {path}: {e}") from e
                yield chunk
                remaining -= size
    except OSError as e:
        raise ArtifactIOError(f"Не удалось прочитать {path}: {e}") from e

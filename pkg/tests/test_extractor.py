import numpy as np
import pytest

import services.extractor as extractor
from services.extractor import (
    ToeplitzSpec,
    extract,
    extract_blocks,
    extract_stream,
    ledger,
    plan_blocks,
    plan_seed_length,
    required_seed_length,
)
from utils.bitbuffer import BitBuffer, concat, iter_bits_file, read_bits_file, write_bits_file, xor
from utils.errors import ArtifactIOError, InvalidLength


def bits(text):
    return BitBuffer.from_bits([int(c) for c in text])


@pytest.mark.parametrize("mode", ["naive", "packed"])
def test_hand_example(mode):
    spec = ToeplitzSpec(4, 3, bits("101101"))
    assert extract(bits("1011"), spec, mode).to_bits().tolist() == [0, 1, 1]


@pytest.mark.parametrize("mode", ["naive", "packed"])
def test_zero_input_gives_zero_output(mode):
    rng = np.random.default_rng(1)
    spec = ToeplitzSpec(64, 20, BitBuffer.random(rng, 83))
    assert extract(BitBuffer.from_bits(np.zeros(64)), spec, mode).count_ones() == 0


def test_extraction_is_linear():
    rng = np.random.default_rng(2)
    spec = ToeplitzSpec(100, 40, BitBuffer.random(rng, 139))
    for _ in range(20):
        a, b = BitBuffer.random(rng, 100), BitBuffer.random(rng, 100)
        assert extract(xor(a, b), spec) == xor(extract(a, spec), extract(b, spec))


@pytest.mark.parametrize("n_in, m_out", [(1, 1), (9, 9), (257, 31), (1000, 999)])
def test_naive_and_packed_agree(n_in, m_out):
    rng = np.random.default_rng(n_in)
    spec = ToeplitzSpec(n_in, m_out, BitBuffer.random(rng, required_seed_length(n_in, m_out)))
    x = BitBuffer.random(rng, n_in)
    assert extract(x, spec, "naive") == extract(x, spec, "packed")


@pytest.mark.parametrize("n_in, m_out, expected", [(1, 1, 1), (4, 3, 6), (10 ** 6, 4000, 1_003_999)])
def test_required_seed_length(n_in, m_out, expected):
    assert required_seed_length(n_in, m_out) == expected


@pytest.mark.parametrize("n_in, m_out", [(0, 1), (4, 0), (3, 4)])
def test_required_seed_length_rejects(n_in, m_out):
    with pytest.raises(InvalidLength):
        required_seed_length(n_in, m_out)


def test_spec_and_input_lengths_are_checked():
    with pytest.raises(InvalidLength):
        ToeplitzSpec(4, 3, bits("10110"))
    with pytest.raises(InvalidLength):
        extract(bits("101"), ToeplitzSpec(4, 3, bits("101101")))
    with pytest.raises(InvalidLength):
        extract(bits("1011"), ToeplitzSpec(4, 3, bits("101101")), "fast")


def test_ledger_examples():
    entry = ledger(270_000, 10_000_000, 10_000)
    assert entry.bits_consumed_test_selection == 9_990_000
    assert entry.net_expansion == 10_000_000 - 10_000 - 9_990_000
    assert ledger(0, 0, 5).net_expansion == -5
    assert ledger(1, 0, 0).bits_consumed_test_selection == 37


@pytest.mark.parametrize("n_raw, l_bits, block_bits", [
    (10, 7, 3),
    (1_000_003, 4_321, 1 << 16),
    (100, 100, 7),
    (100, 1, 10),
])
def test_plan_blocks_sums_exactly(n_raw, l_bits, block_bits):
    plan = plan_blocks(n_raw, l_bits, block_bits)
    assert sum(b.m_out for b in plan) == l_bits
    assert all(0 < b.m_out <= b.n_in <= block_bits for b in plan)
    offsets = [b.offset for b in plan]
    assert offsets == sorted(offsets)


def test_plan_blocks_rejects():
    with pytest.raises(InvalidLength):
        plan_blocks(10, 11, 4)
    with pytest.raises(InvalidLength):
        plan_blocks(10, 5, 0)
    assert plan_blocks(10, 0, 4) == []
    assert plan_seed_length([]) == 0


def test_single_block_matches_direct_extraction():
    rng = np.random.default_rng(3)
    raw = BitBuffer.random(rng, 500)
    seed = BitBuffer.random(rng, required_seed_length(500, 120))
    blockwise = extract_blocks(raw, 120, seed, block_bits=1000)
    assert blockwise == extract(raw, ToeplitzSpec(500, 120, seed))


def test_extract_blocks_length_and_workers():
    rng = np.random.default_rng(4)
    raw = BitBuffer.random(rng, 5000)
    plan = plan_blocks(5000, 777, 1024)
    seed = BitBuffer.random(rng, plan_seed_length(plan) + 13)
    serial = extract_blocks(raw, 777, seed, block_bits=1024, allow_long_seed=True)
    parallel = extract_blocks(raw, 777, seed, block_bits=1024, workers=2, allow_long_seed=True)
    exact = extract_blocks(raw, 777, seed.slice(0, plan_seed_length(plan)), block_bits=1024)
    assert serial.bit_count == 777
    assert serial == parallel == exact


def test_extract_blocks_rejects_short_seed():
    raw = BitBuffer.from_bits(np.ones(64))
    with pytest.raises(InvalidLength):
        extract_blocks(raw, 10, BitBuffer.from_bits(np.ones(20)), block_bits=64)


def test_extract_blocks_rejects_long_seed_unless_allowed():
    rng = np.random.default_rng(7)
    raw = BitBuffer.random(rng, 300)
    needed = plan_seed_length(plan_blocks(300, 40, 128))
    seed = BitBuffer.random(rng, needed + 1)
    with pytest.raises(InvalidLength):
        extract_blocks(raw, 40, seed, block_bits=128)
    assert extract_blocks(raw, 40, seed, block_bits=128, allow_long_seed=True).bit_count == 40


def test_bit_buffer_layout_and_slices():
    buf = BitBuffer.from_int(0b1101, 4)
    assert buf.to_bits().tolist() == [1, 0, 1, 1]
    assert buf.to_int() == 0b1101
    long = concat([buf, bits("0011"), bits("1")])
    assert long.bit_count == 9
    assert long.slice(8, 9) == bits("1")
    assert long.slice(3, 6) == bits("100")
    assert long.count_ones() == 6
    assert BitBuffer.from_bytes(b"\x0d") == concat([buf, bits("0000")])
    assert BitBuffer.from_bytes(b"\x0d\xff", 4) == buf
    with pytest.raises(InvalidLength):
        BitBuffer.from_bytes(b"\x00", 9)
    with pytest.raises(InvalidLength):
        BitBuffer(3, b"\xff")
    with pytest.raises(InvalidLength):
        long.slice(4, 10)


def test_bits_file_round_trip_and_corruption(tmp_path):
    buf = BitBuffer.random(np.random.default_rng(6), 1001)
    path = tmp_path / "nested" / "raw.bits"
    write_bits_file(path, buf)
    assert read_bits_file(path) == buf

    bad_magic = tmp_path / "bad.bits"
    bad_magic.write_bytes(b"NOTBITS!" + path.read_bytes()[8:])
    with pytest.raises(ArtifactIOError):
        read_bits_file(bad_magic)

    truncated = tmp_path / "short.bits"
    truncated.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ArtifactIOError):
        read_bits_file(truncated)
    with pytest.raises(ArtifactIOError):
        read_bits_file(tmp_path / "missing.bits")


def test_collision_rate_is_two_universal():
    rng = np.random.default_rng(2024)
    x, y = bits("1010011100001111"), bits("0110100111000011")
    trials, collisions = 100_000, 0
    for _ in range(trials):
        spec = ToeplitzSpec(16, 8, BitBuffer.random(rng, 23))
        collisions += extract(x, spec) == extract(y, spec)
    assert collisions / trials <= 1.2 / 256


def test_naive_path_streams_small_pieces(monkeypatch):
    monkeypatch.setattr(extractor, "NAIVE_INPUT_BITS", 24)
    monkeypatch.setattr(extractor, "NAIVE_CHUNK_CELLS", 100)
    rng = np.random.default_rng(8)
    spec = ToeplitzSpec(301, 77, BitBuffer.random(rng, required_seed_length(301, 77)))
    x = BitBuffer.random(rng, 301)
    assert extract(x, spec, "naive") == extract(x, spec, "packed")


def test_extract_stream_from_bits_file(tmp_path):
    rng = np.random.default_rng(9)
    raw = BitBuffer.random(rng, 1003)
    path = tmp_path / "raw.bits"
    write_bits_file(path, raw)
    spec = ToeplitzSpec(1003, 200, BitBuffer.random(rng, required_seed_length(1003, 200)))

    pieces = list(iter_bits_file(path, 64))
    assert [p.bit_count for p in pieces] == [64] * 15 + [43]
    assert concat(pieces) == raw
    assert extract_stream(iter_bits_file(path, 64), spec) == extract(raw, spec, "packed")


def test_extract_stream_checks_total_length():
    rng = np.random.default_rng(10)
    spec = ToeplitzSpec(100, 10, BitBuffer.random(rng, 109))
    with pytest.raises(InvalidLength):
        extract_stream([BitBuffer.random(rng, 64)], spec)
    with pytest.raises(InvalidLength):
        extract_stream([BitBuffer.random(rng, 64), BitBuffer.random(rng, 64)], spec)


def test_iter_bits_file_rejects_bad_chunks_and_files(tmp_path):
    path = tmp_path / "raw.bits"
    write_bits_file(path, BitBuffer.random(np.random.default_rng(11), 100))
    with pytest.raises(InvalidLength):
        list(iter_bits_file(path, 12))
    truncated = tmp_path / "short.bits"
    truncated.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(ArtifactIOError):
        list(iter_bits_file(truncated, 64))
    with pytest.raises(ArtifactIOError):
        list(iter_bits_file(tmp_path / "missing.bits", 64))


def test_unaligned_slice_matches_bit_indexing():
    rng = np.random.default_rng(12)
    buf = BitBuffer.random(rng, 333)
    for start, stop in [(1, 2), (3, 300), (13, 333), (7, 7), (65, 130)]:
        assert buf.slice(start, stop).to_bits().tolist() == buf.to_bits()[start:stop].tolist()


@pytest.mark.slow
def test_naive_and_packed_agree_on_random_instances():
    rng = np.random.default_rng(2025)
    for _ in range(1000):
        n_in = int(rng.integers(1, 4097))
        m_out = int(rng.integers(1, n_in + 1))
        spec = ToeplitzSpec(n_in, m_out, BitBuffer.random(rng, required_seed_length(n_in, m_out)))
        x = BitBuffer.random(rng, n_in)
        assert extract(x, spec, "naive") == extract(x, spec, "packed"), (n_in, m_out)

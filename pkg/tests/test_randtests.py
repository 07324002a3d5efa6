import numpy as np
import pytest
from scipy.stats import chi2

from services.extractor import ToeplitzSpec, extract, extract_blocks, plan_blocks, plan_seed_length, required_seed_length
from services.randtests import (
    block_frequency,
    cumulative_sums,
    frequency_monobit,
    run_all,
    runs_test,
)
from services.source_sim import DetectorModel, SourceModel, run_protocol
from utils.bitbuffer import BitBuffer
from utils.errors import InsufficientData, PrerequisiteFailed

# первые 100 бит двоичного разложения π
PI_BITS = BitBuffer.from_bits([int(c) for c in (
    "1100100100001111110110101010001000100001011010001100001000110100"
    "110001001100011001100010100010111000"
)])


def test_reference_sequence_values():
    assert frequency_monobit(PI_BITS).p_value == pytest.approx(0.109599, abs=1e-6)
    assert runs_test(PI_BITS).p_value == pytest.approx(0.500798, abs=1e-6)
    assert cumulative_sums(PI_BITS).p_value == pytest.approx(0.219194, abs=1e-6)
    # доли единиц по блокам: 11, 7, 8, 8, 8 из 20
    assert block_frequency(PI_BITS, block_len=20).p_value == pytest.approx(chi2.sf(4.4, 5), rel=1e-9)


def test_report_fields():
    report = frequency_monobit(PI_BITS, alpha=0.2)
    assert report.test_name == "frequency_monobit"
    assert not report.passed
    assert report.to_dict()["alpha"] == 0.2


def test_alternating_sequence_fails_runs_only():
    alternating = BitBuffer.from_bits(np.tile([0, 1], 50))
    assert frequency_monobit(alternating).p_value == 1.0
    runs = runs_test(alternating)
    assert runs.test_name == "runs" and not runs.passed


def test_balanced_pairs_are_perfect_for_counting_tests():
    pairs = BitBuffer.from_bits(np.tile([0, 0, 1, 1], 25))
    assert frequency_monobit(pairs).p_value == 1.0
    assert runs_test(pairs).p_value == 1.0
    assert block_frequency(pairs, block_len=20).p_value == 1.0


def test_constant_sequence_fails_prerequisite():
    ones = BitBuffer.from_bits(np.ones(1000))
    assert frequency_monobit(ones).p_value < 1e-10
    with pytest.raises(PrerequisiteFailed):
        runs_test(ones)
    reports = {r.test_name: r for r in run_all(ones)}
    assert list(reports) == ["frequency_monobit", "block_frequency", "runs", "cumulative_sums"]
    assert reports["runs"].p_value == 0.0 and not reports["runs"].passed


def test_input_size_errors():
    short = BitBuffer.from_bits(np.zeros(99))
    for test in (frequency_monobit, runs_test, cumulative_sums):
        with pytest.raises(InsufficientData):
            test(short)
    with pytest.raises(InsufficientData):
        block_frequency(PI_BITS, block_len=10)
    with pytest.raises(InsufficientData):
        block_frequency(PI_BITS, block_len=200)


def test_uniform_bits_pass():
    bits = BitBuffer.random(np.random.default_rng(8), 100_000)
    assert all(r.p_value > 1e-4 for r in run_all(bits))


def test_extracted_simulator_output_passes_and_raw_does_not():
    source = SourceModel(p_gen=0.97, p_test=0.01)
    raw, _ = run_protocol(source, DetectorModel(), 1_700_000, 77)
    n_in, m_out, n_blocks = 80_000, 10_000, 20
    assert raw.bit_count >= n_in * n_blocks

    # сырые биты смещены: частотный тест проваливается
    assert not frequency_monobit(raw.slice(0, n_in)).passed

    rng = np.random.default_rng(78)
    passes = {}
    for k in range(n_blocks):
        seed = BitBuffer.random(rng, required_seed_length(n_in, m_out))
        out = extract(raw.slice(k * n_in, (k + 1) * n_in), ToeplitzSpec(n_in, m_out, seed))
        for report in run_all(out):
            passes[report.test_name] = passes.get(report.test_name, 0) + int(report.passed)
    assert all(count >= 18 for count in passes.values()), passes


def test_p_values_are_not_degenerate():
    rng = np.random.default_rng(21)
    values = {}
    for _ in range(30):
        for report in run_all(BitBuffer.random(rng, 10_000)):
            values.setdefault(report.test_name, set()).add(round(report.p_value, 12))
    assert len(values) == 4
    for name, distinct in values.items():
        assert len(distinct) >= 10, name
        assert all(0.0 < p <= 1.0 for p in distinct), name


@pytest.mark.slow
def test_hundred_megabit_outputs_pass_in_proportion():
    source = SourceModel(p_gen=0.97, p_test=0.01)
    n_out, block_bits = 10 ** 6, 8000
    n_raw = 8 * n_out
    rng = np.random.default_rng(2026)
    passes = {}
    for k in range(100):
        raw, _ = run_protocol(source, DetectorModel(), 8_400_000, 1000 + k)
        assert raw.bit_count >= n_raw
        seed = BitBuffer.random(rng, plan_seed_length(plan_blocks(n_raw, n_out, block_bits)))
        out = extract_blocks(raw.slice(0, n_raw), n_out, seed, block_bits)
        assert out.bit_count == n_out
        for report in run_all(out):
            passes[report.test_name] = passes.get(report.test_name, 0) + int(report.passed)
    assert len(passes) == 4
    assert all(count >= 96 for count in passes.values()), passes

"""Monte-Carlo prepare-and-measure simulation.

Every round consumes exactly ROUND_DRAWS uniforms from a counter-based
Philox stream, shards have a fixed size, so the output does not depend on
how many workers run the shards.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, field
from typing import Iterator, List, Literal, Optional, Protocol, Sequence, Tuple

import numpy as np
from loguru import logger

from services.bloch import (
    BlochVector,
    QubitState,
    bloch_length_from_noise,
    orthonormal_frame,
    tilted_state,
)
from utils.bitbuffer import BitBuffer
from utils.errors import AbortReason, InvalidModel, ProtocolAbort

SHARD_ROUNDS = 1 << 18
# setting, test tag, четыре для кликов, два для шума модуляции
ROUND_DRAWS = 8
MAX_SEED = (1 << 64) - 1

PhotonSource = Literal["coherent", "single_photon"]
LossModel = Literal["common", "per_arm"]


@dataclass(frozen=True)
class SourceModel:
    mu: float = 0.58
    p_gen: float = 0.1
    p_test: float = 0.3
    misalign1: float = math.pi / 28
    misalign2: float = math.pi / 28
    noise_range0: float = 0.0
    noise_range1: float = math.pi / 24
    noise_range2: float = math.pi / 24
    gen_azimuth: float = 0.0
    gen_tilt: float = 0.0
    photon_source: PhotonSource = "coherent"

    def __post_init__(self):
        if self.mu < 0 or not math.isfinite(self.mu):
            raise InvalidModel(f"μ должен быть ≥ 0, получено {self.mu}")
        if min(self.p_gen, self.p_test) < 0 or abs(self.p_gen + 3 * self.p_test - 1) > 1e-12:
            raise InvalidModel(f"Нужно p_gen + 3·p_test = 1, получено p_gen={self.p_gen}, p_test={self.p_test}")
        angles = (self.misalign1, self.misalign2, self.noise_range0, self.noise_range1,
                  self.noise_range2, self.gen_azimuth, self.gen_tilt)
        if any(a < 0 for a in angles):
            raise InvalidModel("Все углы модели источника должны быть ≥ 0")
        if max(self.noise_range0, self.noise_range1, self.noise_range2) > math.pi / 2:
            raise InvalidModel("Диапазон шума модуляции не может превышать π/2")
        if self.gen_tilt > math.pi / 2:
            raise InvalidModel(f"Наклон генерационного состояния не может превышать π/2, получено {self.gen_tilt}")
        if self.noise_range0 > min(self.noise_range1, self.noise_range2):
            raise InvalidModel(
                "Шум генерационного состояния должен быть не больше шума тестовых состояний"
            )
        if self.photon_source not in ("coherent", "single_photon"):
            raise InvalidModel(f"Неизвестный тип источника: {self.photon_source}")

    @classmethod
    def from_total_misalignment(cls, delta_m: float, **kwargs) -> "SourceModel":
        """Split Δθ_m evenly between the two test states"""
        return cls(misalign1=delta_m / 2, misalign2=delta_m / 2, **kwargs)

    @property
    def total_misalignment(self) -> float:
        return self.misalign1 + self.misalign2

    def noise_range(self, setting: int) -> float:
        return (self.noise_range0, self.noise_range1, self.noise_range2)[setting]

    def ideal_direction(self, setting: int) -> BlochVector:
        if setting == 0:
            # gen_tilt опускает состояние с экватора к |V⟩
            cos_tilt = math.cos(self.gen_tilt)
            return BlochVector(cos_tilt * math.cos(self.gen_azimuth), cos_tilt * math.sin(self.gen_azimuth),
                               -math.sin(self.gen_tilt))
        if setting == 1:
            return BlochVector(math.sin(self.misalign1), 0.0, math.cos(self.misalign1))
        if setting == 2:
            return BlochVector(math.sin(self.misalign2), 0.0, -math.cos(self.misalign2))
        raise InvalidModel(f"Настройка должна быть 0, 1 или 2, получено {setting}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DetectorModel:
    eff_h: float = 0.106
    eff_v: float = 0.137
    dark_h: float = 1.3e-6
    dark_v: float = 1.6e-6
    loss_model: LossModel = "common"

    def __post_init__(self):
        for name in ("eff_h", "eff_v", "dark_h", "dark_v"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidModel(f"{name} должен лежать в [0,1], получено {value}")
        if self.loss_model not in ("common", "per_arm"):
            raise InvalidModel(f"Неизвестная модель потерь: {self.loss_model}")

    @property
    def common_loss(self) -> float:
        return min(self.eff_h, self.eff_v)

    def arm_efficiencies(self) -> Tuple[float, float]:
        """Relative arm efficiencies applied on top of μ.

        In "common" mode μ is already measured after the total loss, which
        includes the detectors' common contribution, so both arms respond at 1.
        """
        if self.loss_model == "common":
            return 1.0, 1.0
        return self.eff_h, self.eff_v

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RoundRecord:
    setting: int
    outcome: int
    is_test: bool


@dataclass(frozen=True)
class ExpectationStats:
    count_b0: Tuple[int, int, int] = (0, 0, 0)
    count_b1: Tuple[int, int, int] = (0, 0, 0)
    n_gen_rounds: int = 0

    def __post_init__(self):
        if len(self.count_b0) != 3 or len(self.count_b1) != 3:
            raise InvalidModel("Счётчики должны быть заданы для трёх настроек")
        if min(self.count_b0) < 0 or min(self.count_b1) < 0 or self.n_gen_rounds < 0:
            raise InvalidModel("Счётчики не могут быть отрицательными")

    def __add__(self, other: "ExpectationStats") -> "ExpectationStats":
        return ExpectationStats(
            count_b0=tuple(a + b for a, b in zip(self.count_b0, other.count_b0)),
            count_b1=tuple(a + b for a, b in zip(self.count_b1, other.count_b1)),
            n_gen_rounds=self.n_gen_rounds + other.n_gen_rounds,
        )

    def n_test(self, setting: int) -> int:
        return self.count_b0[setting] + self.count_b1[setting]

    @property
    def n_rounds(self) -> int:
        return sum(self.count_b0) + sum(self.count_b1) + self.n_gen_rounds

    def ge_of(self, setting: int) -> float:
        total = self.n_test(setting)
        if total == 0:
            raise ProtocolAbort(AbortReason.NO_TEST_DATA, f"нет тестовых раундов для настройки {setting}")
        return (self.count_b0[setting] - self.count_b1[setting]) / total

    @property
    def ge(self) -> Tuple[float, float, float]:
        return tuple(self.ge_of(s) for s in range(3))

    def to_dict(self) -> dict:
        return {
            "count_b0": list(self.count_b0),
            "count_b1": list(self.count_b1),
            "n_gen_rounds": self.n_gen_rounds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExpectationStats":
        return cls(
            count_b0=tuple(int(v) for v in data["count_b0"]),
            count_b1=tuple(int(v) for v in data["count_b1"]),
            n_gen_rounds=int(data["n_gen_rounds"]),
        )


class ShardObserver(Protocol):
    """Notified after every simulated shard"""
    def on_shard_done(self, shard_index: int, n_shards: int, stats: ExpectationStats) -> None:
        pass


def lab_state(setting: int, model: SourceModel, rng: Optional[np.random.Generator] = None) -> QubitState:
    """Prepared state for a setting.

    Without `rng` the modulation noise is folded into the Bloch length (the
    mean state); with `rng` one noisy pure state is sampled.
    """
    direction = model.ideal_direction(setting)
    theta_range = model.noise_range(setting)
    if rng is None:
        return QubitState(direction.scaled(bloch_length_from_noise(theta_range)))
    theta, azimuth = rng.random(2)
    return tilted_state(direction, 2 * theta_range * theta, 2 * math.pi * azimuth)


def click_probabilities(state: QubitState, mu: float, det: DetectorModel) -> Tuple[float, float]:
    p_h, p_v = _coherent_clicks(np.array([state.bloch.z]), mu, det)
    return float(p_h[0]), float(p_v[0])


def _coherent_clicks(sz: np.ndarray, mu: float, det: DetectorModel):
    eff_h, eff_v = det.arm_efficiencies()
    q_h = (1.0 + sz) / 2.0
    q_v = (1.0 - sz) / 2.0
    p_h = 1.0 - (1.0 - det.dark_h) * np.exp(-mu * q_h * eff_h)
    p_v = 1.0 - (1.0 - det.dark_v) * np.exp(-mu * q_v * eff_v)
    return p_h, p_v


def assign_outcome(h_clicked: int, v_clicked: int) -> int:
    """H -> 0, V -> 1, no-click and double-click -> 0"""
    return int(bool(v_clicked) and not bool(h_clicked))


def outcome_one_probability(state: QubitState, source: SourceModel, det: DetectorModel) -> float:
    """Pr[b = 1] for a prepared state, the click model composed with assign_outcome"""
    sz = state.bloch.z
    if source.photon_source == "coherent":
        p_h, p_v = click_probabilities(state, source.mu, det)
        return p_v * (1.0 - p_h)
    eff_h, eff_v = det.arm_efficiencies()
    q_h, q_v = (1.0 + sz) / 2.0, (1.0 - sz) / 2.0
    undetected = 1.0 - q_h * eff_h - q_v * eff_v
    return (1.0 - det.dark_h) * (q_v * eff_v + undetected * det.dark_v)


def analytic_expectations(source: SourceModel, det: DetectorModel) -> Tuple[float, float, float]:
    """Exact g per setting for the mean lab states"""
    return tuple(
        1.0 - 2.0 * outcome_one_probability(lab_state(s, source), source, det) for s in range(3)
    )


def _shard_streams(master_seed: int, shard_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(shard_index,))
    return np.random.Generator(np.random.Philox(seq))


def _shard_sz(settings: np.ndarray, draws: np.ndarray, source: SourceModel,
              per_round_noise: bool) -> np.ndarray:
    if not per_round_noise:
        sz_by_setting = np.array([lab_state(s, source).bloch.z for s in range(3)])
        return sz_by_setting[settings]

    directions = np.array([source.ideal_direction(s).as_array() for s in range(3)])
    frames = [orthonormal_frame(d) for d in directions]
    e1_z = np.array([f[0][2] for f in frames])
    e2_z = np.array([f[1][2] for f in frames])
    ranges = np.array([source.noise_range(s) for s in range(3)])

    tilt = 2.0 * ranges[settings] * draws[:, 6]
    azimuth = 2.0 * math.pi * draws[:, 7]
    return (np.cos(tilt) * directions[settings, 2]
            + np.sin(tilt) * (np.cos(azimuth) * e1_z[settings] + np.sin(azimuth) * e2_z[settings]))


def _simulate_shard(task) -> Tuple[np.ndarray, ExpectationStats]:
    source, det, shard_index, n_rounds, master_seed, per_round_noise = task
    rng = _shard_streams(master_seed, shard_index)
    draws = rng.random((n_rounds, ROUND_DRAWS))

    p_zero = source.p_gen + source.p_test
    settings = np.where(draws[:, 0] < p_zero, 0,
                        np.where(draws[:, 0] < p_zero + source.p_test, 1, 2))
    is_test = (settings != 0) | (draws[:, 1] < source.p_test / p_zero)

    sz = _shard_sz(settings, draws, source, per_round_noise)
    if source.photon_source == "coherent":
        p_h, p_v = _coherent_clicks(sz, source.mu, det)
        h = draws[:, 2] < p_h
        v = draws[:, 3] < p_v
    else:
        eff_h, eff_v = det.arm_efficiencies()
        to_h = draws[:, 2] < (1.0 + sz) / 2.0
        detected = draws[:, 3] < np.where(to_h, eff_h, eff_v)
        h = (to_h & detected) | (draws[:, 4] < det.dark_h)
        v = (~to_h & detected) | (draws[:, 5] < det.dark_v)
    outcome = v & ~h

    b0, b1 = [], []
    for s in range(3):
        mask = is_test & (settings == s)
        ones = int(np.count_nonzero(outcome & mask))
        b1.append(ones)
        b0.append(int(np.count_nonzero(mask)) - ones)
    gen_bits = outcome[~is_test].astype(np.uint8)
    return gen_bits, ExpectationStats(tuple(b0), tuple(b1), int(gen_bits.size))


def _shard_tasks(source, det, n_rounds, master_seed, per_round_noise):
    n_shards = math.ceil(n_rounds / SHARD_ROUNDS)
    for k in range(n_shards):
        size = min(SHARD_ROUNDS, n_rounds - k * SHARD_ROUNDS)
        yield source, det, k, size, master_seed, per_round_noise


def run_protocol(source: SourceModel, det: DetectorModel, n_rounds: int, master_seed: int,
                 *, per_round_noise: bool = False, workers: int = 1,
                 observers: Sequence[ShardObserver] = ()) -> Tuple[BitBuffer, ExpectationStats]:
    """Simulate n_rounds; generation outcomes become raw bits, test outcomes are tallied"""
    if n_rounds < 1:
        raise InvalidModel(f"Число раундов должно быть ≥ 1, получено {n_rounds}")
    if not 0 <= master_seed <= MAX_SEED:
        raise InvalidModel(f"master_seed должен быть 64-битным, получено {master_seed}")

    n_shards = math.ceil(n_rounds / SHARD_ROUNDS)
    logger.info(f"🔄 Симуляция {n_rounds} раундов: μ={source.mu}, Δθ_m={source.total_misalignment:.4f}, "
                f"шардов {n_shards}, воркеров {workers}")
    tasks = _shard_tasks(source, det, n_rounds, master_seed, per_round_noise)

    chunks: List[np.ndarray] = []
    stats = ExpectationStats()
    if workers > 1 and n_shards > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_simulate_shard, tasks)
            for k, (bits, shard_stats) in enumerate(results):
                chunks.append(bits)
                stats = stats + shard_stats
                _notify(observers, k, n_shards, shard_stats)
    else:
        for k, task in enumerate(tasks):
            bits, shard_stats = _simulate_shard(task)
            chunks.append(bits)
            stats = stats + shard_stats
            _notify(observers, k, n_shards, shard_stats)

    raw = BitBuffer.from_bits(np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint8))
    logger.info(f"✅ Симуляция завершена: {raw.bit_count} сырых бит, тестовых раундов "
                f"{[stats.n_test(s) for s in range(3)]}")
    return raw, stats


def _notify(observers: Sequence[ShardObserver], shard_index: int, n_shards: int,
            stats: ExpectationStats) -> None:
    for observer in observers:
        try:
            observer.on_shard_done(shard_index, n_shards, stats)
        except Exception as e:
            logger.error(f"Ошибка при уведомлении наблюдателя: {e}")


def round_records(source: SourceModel, det: DetectorModel, n_rounds: int,
                  master_seed: int) -> Iterator[RoundRecord]:
    """Per-round view of the first shard-sized stream, for inspection of small runs"""
    if n_rounds < 1 or n_rounds > SHARD_ROUNDS:
        raise InvalidModel(f"round_records поддерживает 1..{SHARD_ROUNDS} раундов")
    rng = _shard_streams(master_seed, 0)
    draws = rng.random((n_rounds, ROUND_DRAWS))
    p_zero = source.p_gen + source.p_test
    for row in draws:
        setting = 0 if row[0] < p_zero else (1 if row[0] < p_zero + source.p_test else 2)
        is_test = setting != 0 or row[1] < source.p_test / p_zero
        state = lab_state(setting, source)
        if source.photon_source == "coherent":
            p_h, p_v = click_probabilities(state, source.mu, det)
            h, v = row[2] < p_h, row[3] < p_v
        else:
            eff_h, eff_v = det.arm_efficiencies()
            to_h = row[2] < (1.0 + state.bloch.z) / 2.0
            detected = row[3] < (eff_h if to_h else eff_v)
            h = (to_h and detected) or row[4] < det.dark_h
            v = ((not to_h) and detected) or row[5] < det.dark_v
        yield RoundRecord(setting=setting, outcome=assign_outcome(h, v), is_test=bool(is_test))

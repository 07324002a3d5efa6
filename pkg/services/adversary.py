"""Numeric adversary used to check the analytic C and guessing-probability bounds.

The adversary splits the generation state into two pure components along a
chord through its Bloch vector and guesses each component optimally.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Literal, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from services.bloch import (
    BinaryPovm,
    BlochVector,
    QubitState,
    StateTriple,
    expectation,
    randomness_parameter,
    state_from_polar,
    tilted_state,
)
from services.entropy import c_bound_ideal, guessing_prob_upper
from utils.errors import ArtifactIOError, InvalidModel, ProtocolAbort

DEFAULT_TOLERANCE = 1e-9
MIN_GRID = 8
PURE_TOL = 1e-12
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
# наибольшее отклонение тестовых состояний от ±T в случайных экземплярах
TEST_SPREAD = math.pi / 12

Check = Literal["c_bound", "p_guess"]
CHECKS: Tuple[Check, ...] = ("c_bound", "p_guess")


@dataclass(frozen=True)
class AdversaryInstance:
    povm: BinaryPovm
    state: QubitState
    decomposition: Tuple[Tuple[float, BlochVector], ...]

    def __post_init__(self):
        weights = [w for w, _ in self.decomposition]
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise InvalidModel(f"Веса разложения должны быть ≥ 0 и давать в сумме 1: {weights}")
        for _, direction in self.decomposition:
            if abs(direction.norm - 1.0) > 1e-9:
                raise InvalidModel("Компоненты разложения должны быть чистыми состояниями")
        mean = sum((direction.as_array() * w for w, direction in self.decomposition), np.zeros(3))
        if np.linalg.norm(mean - self.state.bloch.as_array()) > 1e-9:
            raise InvalidModel("Взвешенное среднее разложения не совпадает с вектором состояния")

    def guessing_probability(self) -> float:
        return sum(w * pguess_pure(self.povm.a0, nxy_of(self.povm, d)) for w, d in self.decomposition)


@dataclass(frozen=True)
class OracleVerdict:
    sample_index: int
    check: Check
    c_exact: float
    numeric_pguess: float
    analytic_bound: float
    margin: float
    violated: bool
    aborted: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def pguess_pure(a0: float, n_xy: float) -> float:
    """1 - a0 (1 - sqrt(1 - n_xy^2))"""
    if not 0.0 <= a0 <= 1.0:
        raise InvalidModel(f"a0 должен лежать в [0,1], получено {a0}")
    if not 0.0 <= n_xy <= 1.0:
        raise InvalidModel(f"n_xy должен лежать в [0,1], получено {n_xy}")
    return 1.0 - a0 * (1.0 - math.sqrt(1.0 - n_xy * n_xy))


def nxy_of(povm: BinaryPovm, pure_direction: BlochVector) -> float:
    if povm.a0 == 0.0:
        raise InvalidModel("n_xy не определён при a0 = 0")
    return min(1.0, randomness_parameter(povm.t, pure_direction) / (2.0 * povm.a0))


def fibonacci_sphere(n_points: int) -> np.ndarray:
    """Near-uniform deterministic unit vectors, shape (n_points, 3)"""
    if n_points < 1:
        raise InvalidModel("Нужна хотя бы одна точка сетки")
    i = np.arange(n_points, dtype=float)
    z = 1.0 - 2.0 * (i + 0.5) / n_points
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = GOLDEN_ANGLE * i
    return np.column_stack((r * np.cos(phi), r * np.sin(phi), z))


def _chord_decompositions(s: np.ndarray, grid_n: int):
    """Pure pairs (ω1, ω2) and weights with q1 ω1 + q2 ω2 = s"""
    omega1 = fibonacci_sphere(grid_n * grid_n)
    d = s - omega1
    d2 = np.einsum("ij,ij->i", d, d)
    keep = d2 > PURE_TOL
    omega1, d, d2 = omega1[keep], d[keep], d2[keep]
    t = -2.0 * np.einsum("ij,ij->i", omega1, d) / d2
    omega2 = omega1 + t[:, None] * d
    q2 = 1.0 / t
    return omega1, omega2, 1.0 - q2, q2


def _pguess_grid(povm: BinaryPovm, directions: np.ndarray) -> np.ndarray:
    cross = np.cross(povm.t.as_array(), directions)
    n_xy = np.minimum(1.0, np.linalg.norm(cross, axis=1) / (2.0 * povm.a0))
    return 1.0 - povm.a0 * (1.0 - np.sqrt(1.0 - n_xy * n_xy))


def _grid_search(povm: BinaryPovm, state: QubitState, grid_n: int) -> Tuple[float, AdversaryInstance]:
    s = state.bloch.as_array()
    omega1, omega2, q1, q2 = _chord_decompositions(s, grid_n)
    values = q1 * _pguess_grid(povm, omega1) + q2 * _pguess_grid(povm, omega2)
    best = int(np.argmax(values))
    w2 = float(q2[best])
    instance = AdversaryInstance(
        povm=povm,
        state=state,
        decomposition=(
            (1.0 - w2, BlochVector.from_array(omega1[best])),
            (w2, BlochVector.from_array(omega2[best] / np.linalg.norm(omega2[best]))),
        ),
    )
    return float(values[best]), instance


def max_pguess_numeric(povm: BinaryPovm, state: QubitState, grid_n: int) -> float:
    if grid_n < MIN_GRID:
        raise InvalidModel(f"grid_n должен быть ≥ {MIN_GRID}, получено {grid_n}")
    norm = state.bloch.norm
    if norm > 1.0 + PURE_TOL:
        raise InvalidModel(f"Вектор состояния вне шара Блоха: |S|={norm}")
    if povm.a0 == 0.0 or povm.t.norm == 0.0:
        # T = 0: исход не зависит от состояния
        return pguess_pure(povm.a0, 0.0)
    if norm >= 1.0 - PURE_TOL:
        return pguess_pure(povm.a0, nxy_of(povm, state.bloch.scaled(1.0 / norm)))
    value, _ = _grid_search(povm, state, grid_n)
    return value


def best_decomposition(povm: BinaryPovm, state: QubitState, grid_n: int) -> AdversaryInstance:
    """The maximising two-component decomposition found on the grid"""
    if grid_n < MIN_GRID:
        raise InvalidModel(f"grid_n должен быть ≥ {MIN_GRID}, получено {grid_n}")
    if state.bloch.norm >= 1.0 - PURE_TOL:
        direction = state.bloch.scaled(1.0 / state.bloch.norm)
        return AdversaryInstance(povm, QubitState(direction), ((1.0, direction),))
    _, instance = _grid_search(povm, state, grid_n)
    return instance


def ideal_instance() -> Tuple[BinaryPovm, StateTriple]:
    """Projective σ_z measurement, S0 on the equator, antipodal pure test states"""
    povm = BinaryPovm.projective(BlochVector(0.0, 0.0, 1.0))
    triple = StateTriple(
        QubitState(BlochVector(1.0, 0.0, 0.0)),
        QubitState(BlochVector(0.0, 0.0, 1.0)),
        QubitState(BlochVector(0.0, 0.0, -1.0)),
    )
    return povm, triple


def _random_direction(rng: np.random.Generator) -> BlochVector:
    u, phi = rng.random(2)
    return state_from_polar(math.acos(1.0 - 2.0 * u), 2.0 * math.pi * phi, 1.0).bloch


def _test_state(rng: np.random.Generator, axis: BlochVector, r0: float) -> QubitState:
    tilt = TEST_SPREAD * float(rng.random())
    state = tilted_state(axis, tilt, 2.0 * math.pi * float(rng.random()))
    return QubitState(state.bloch.scaled(r0 * (0.8 + 0.2 * float(rng.random()))))


def sample_instance(rng: np.random.Generator, adversarial: bool = False) -> Tuple[BinaryPovm, StateTriple]:
    """Random valid (POVM, state triple) with the purity ordering.

    Test states sit within TEST_SPREAD of ±T, as a working device prepares
    them. Adversarial instances also put S0 within a few degrees of T, the
    regime where the C bound is smallest and most likely to abort.
    """
    a0 = float(rng.random())
    t_dir = _random_direction(rng)
    t_len = float(rng.random()) * 2.0 * min(a0, 1.0 - a0)
    povm = BinaryPovm(a0, t_dir.scaled(t_len))

    r0 = float(rng.random()) ** 0.25
    if adversarial:
        s0 = tilted_state(t_dir, 0.05 * float(rng.random()), 2.0 * math.pi * float(rng.random()))
        s0 = QubitState(s0.bloch.scaled(r0))
    else:
        s0 = QubitState(_random_direction(rng).scaled(r0))
    s1 = _test_state(rng, t_dir, r0)
    s2 = _test_state(rng, t_dir.scaled(-1.0), r0)
    return povm, StateTriple(s0, s1, s2)


def verify_instance(sample_index: int, povm: BinaryPovm, triple: StateTriple,
                    grid_n: int = 64, tolerance: float = DEFAULT_TOLERANCE,
                    checks: Sequence[Check] = CHECKS) -> List[OracleVerdict]:
    c_exact = randomness_parameter(povm.t, triple.rho0.bloch)
    verdicts = []
    if "c_bound" in checks:
        g0, g1, g2 = (expectation(povm, rho) for rho in triple)
        try:
            bound = c_bound_ideal(g0, g1, g2)
        except ProtocolAbort:
            verdicts.append(OracleVerdict(sample_index, "c_bound", c_exact, math.nan, math.nan,
                                          math.nan, violated=False, aborted=True))
        else:
            margin = c_exact - bound
            verdicts.append(OracleVerdict(sample_index, "c_bound", c_exact, math.nan, bound,
                                          margin, violated=margin < -tolerance))
    if "p_guess" in checks:
        numeric = max_pguess_numeric(povm, triple.rho0, grid_n)
        bound = guessing_prob_upper(min(1.0, c_exact))
        margin = bound - numeric
        verdicts.append(OracleVerdict(sample_index, "p_guess", c_exact, numeric, bound,
                                      margin, violated=margin < -tolerance))
    return verdicts


def _sample_stream(seed: int, sample_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(sample_index,))
    return np.random.Generator(np.random.Philox(seq))


def _sweep_chunk(task) -> List[OracleVerdict]:
    indices, seed, tolerance, grid_n, checks, adversarial_fraction = task
    verdicts = []
    for i in indices:
        rng = _sample_stream(seed, i)
        adversarial = rng.random() < adversarial_fraction
        povm, triple = sample_instance(rng, adversarial)
        verdicts.extend(verify_instance(i, povm, triple, grid_n, tolerance, checks))
    return verdicts


def soundness_sweep(n_samples: int, seed: int, tolerance: float = DEFAULT_TOLERANCE,
                    grid_n: int = 64, checks: Sequence[Check] = CHECKS,
                    adversarial_fraction: float = 0.1, workers: int = 1) -> List[OracleVerdict]:
    """Random-instance check of both analytic bounds; verdicts ordered by sample index"""
    if n_samples < 1:
        raise InvalidModel("n_samples должен быть ≥ 1")
    if grid_n < MIN_GRID:
        raise InvalidModel(f"grid_n должен быть ≥ {MIN_GRID}, получено {grid_n}")
    unknown = set(checks) - set(CHECKS)
    if unknown:
        raise InvalidModel(f"Неизвестные проверки: {sorted(unknown)}")

    logger.info(f"🔄 Проверка оценок на {n_samples} случайных экземплярах, grid_n={grid_n}, проверки {list(checks)}")
    checks = tuple(checks)
    if workers > 1:
        chunk = math.ceil(n_samples / (workers * 4))
        tasks = [(range(start, min(start + chunk, n_samples)), seed, tolerance, grid_n, checks,
                  adversarial_fraction) for start in range(0, n_samples, chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            verdicts = [v for part in pool.map(_sweep_chunk, tasks) for v in part]
    else:
        verdicts = _sweep_chunk((range(n_samples), seed, tolerance, grid_n, checks, adversarial_fraction))

    summary = sweep_summary(verdicts)
    if summary["violated"]:
        logger.error(f"❌ Найдено нарушений оценок: {summary['violated']}")
    else:
        logger.info(f"✅ Нарушений нет, прерываний оценки C: {summary['aborted']}")
    return verdicts


def sweep_summary(verdicts: Sequence[OracleVerdict]) -> Dict[str, object]:
    summary: Dict[str, object] = {
        "n_verdicts": len(verdicts),
        "violated": sum(1 for v in verdicts if v.violated),
        "aborted": sum(1 for v in verdicts if v.aborted),
    }
    for check in CHECKS:
        margins = [v.margin for v in verdicts if v.check == check and not v.aborted]
        summary[f"min_margin_{check}"] = min(margins) if margins else None
    return summary


CSV_FIELDS = ("sample_index", "check", "c_exact", "analytic_bound", "numeric_pguess",
              "margin", "violated", "aborted")


def verdicts_to_csv(verdicts: Sequence[OracleVerdict], path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
            writer.writeheader()
            for verdict in verdicts:
                row = verdict.to_dict()
                writer.writerow({key: _csv_value(row[key]) for key in CSV_FIELDS})
    except OSError as e:
        raise ArtifactIOError(f"Не удалось записать {path}: {e}") from e


def _csv_value(value):
    if isinstance(value, float):
        return repr(value)
    return value

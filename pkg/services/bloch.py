"""Qubit states and two-outcome measurements in Bloch coordinates.

Density matrices are never built: a state is its Bloch vector S, a binary
POVM is the pair (a0, T) with F0 = a0*I + T/2 . sigma.
"""

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from utils.errors import InvalidModel

CONSTRUCTION_TOL = 1e-12
RESULT_TOL = 1e-9
# ниже этого θ′ sin(2θ′)/(2θ′) считаем рядом
SERIES_CUTOFF = 1e-6


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise InvalidModel(f"Компоненты вектора Блоха должны быть конечными: {self}")

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "BlochVector":
        x, y, z = (float(v) for v in values)
        return cls(x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def dot(self, other: "BlochVector") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other: "BlochVector") -> "BlochVector":
        return BlochVector(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def scaled(self, factor: float) -> "BlochVector":
        return BlochVector(self.x * factor, self.y * factor, self.z * factor)


@dataclass(frozen=True)
class QubitState:
    bloch: BlochVector

    def __post_init__(self):
        if self.bloch.norm > 1 + CONSTRUCTION_TOL:
            raise InvalidModel(f"Вектор состояния вне шара Блоха: |S|={self.bloch.norm:.15g}")

    @classmethod
    def pure(cls, direction: BlochVector) -> "QubitState":
        norm = direction.norm
        if norm == 0:
            raise InvalidModel("Чистое состояние требует ненулевого направления")
        return cls(direction.scaled(1.0 / norm))

    @property
    def purity(self) -> float:
        """Tr[rho^2] = (1 + |S|^2) / 2"""
        return (1 + self.bloch.norm ** 2) / 2


@dataclass(frozen=True)
class BinaryPovm:
    a0: float
    t: BlochVector

    def __post_init__(self):
        if not 0.0 <= self.a0 <= 1.0:
            raise InvalidModel(f"a0 должен лежать в [0,1], получено {self.a0}")
        limit = 2 * min(self.a0, 1 - self.a0) + CONSTRUCTION_TOL
        if self.t.norm > limit:
            raise InvalidModel(
                f"Элементы POVM не положительны: |T|={self.t.norm:.6g} > 2·min(a0,1−a0)={limit:.6g}"
            )

    @classmethod
    def projective(cls, direction: BlochVector) -> "BinaryPovm":
        """Ideal projective measurement along `direction`"""
        norm = direction.norm
        if norm == 0:
            raise InvalidModel("Проективное измерение требует ненулевого направления")
        return cls(0.5, direction.scaled(1.0 / norm))


@dataclass(frozen=True)
class StateTriple:
    rho0: QubitState
    rho1: QubitState
    rho2: QubitState

    def __post_init__(self):
        # генерационное состояние не менее чистое, чем тестовые
        r0 = self.rho0.bloch.norm
        for name, state in (("rho1", self.rho1), ("rho2", self.rho2)):
            if r0 < state.bloch.norm - CONSTRUCTION_TOL:
                raise InvalidModel(
                    f"Нарушен порядок чистоты: |S0|={r0:.6g} < |S_{name[-1]}|={state.bloch.norm:.6g}"
                )

    def __iter__(self):
        return iter((self.rho0, self.rho1, self.rho2))


def expectation(povm: BinaryPovm, state: QubitState) -> float:
    """g = Tr[(F0 - F1) rho] = (2 a0 - 1) + T . S"""
    value = (2 * povm.a0 - 1) + povm.t.dot(state.bloch)
    if abs(value) > 1 + RESULT_TOL:
        raise InvalidModel(f"Ожидание вне [−1,1]: {value}")
    return value


def randomness_parameter(t: BlochVector, s0: BlochVector) -> float:
    """C = |T x S0|"""
    return t.cross(s0).norm


def bloch_length_from_noise(theta_range: float) -> float:
    """Bloch length of a state smeared uniformly over a modulation range θ′.

    Returns sin(2θ′)/(2θ′), exactly 1 at θ′ = 0.
    """
    if not 0.0 <= theta_range <= math.pi / 2:
        raise InvalidModel(f"Диапазон шума θ′ должен лежать в [0, π/2], получено {theta_range}")
    x = 2 * theta_range
    if theta_range < SERIES_CUTOFF:
        return 1.0 - x * x / 6.0 + x ** 4 / 120.0
    return max(0.0, math.sin(x) / x)


def state_from_polar(theta: float, phi: float, radius: float) -> QubitState:
    if not 0.0 <= radius <= 1.0:
        raise InvalidModel(f"Радиус должен лежать в [0,1], получено {radius}")
    sin_theta = math.sin(theta)
    return QubitState(BlochVector(
        radius * sin_theta * math.cos(phi),
        radius * sin_theta * math.sin(phi),
        radius * math.cos(theta),
    ))


def orthonormal_frame(direction: np.ndarray):
    """Two unit vectors completing `direction` to a right-handed basis"""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, d)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2


def tilted_state(direction: BlochVector, tilt: float, azimuth: float) -> QubitState:
    """Pure state at Bloch angle `tilt` from `direction`, rotated by `azimuth` around it"""
    d = direction.as_array()
    d = d / np.linalg.norm(d)
    e1, e2 = orthonormal_frame(d)
    vec = math.cos(tilt) * d + math.sin(tilt) * (math.cos(azimuth) * e1 + math.sin(azimuth) * e2)
    return QubitState(BlochVector.from_array(vec))

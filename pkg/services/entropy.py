"""Analytic security chain: C bound -> guessing probability -> extractable length."""

import math
from dataclasses import dataclass, asdict
from typing import Literal, Optional, Sequence

from loguru import logger

from utils.errors import AbortReason, InvalidModel, ProtocolAbort

# ε_t = 7ε (six Hoeffding terms + leftover hash)
FAILURE_TERMS = 7
LN2 = math.log(2.0)

PrefactorVariant = Literal["eta_plus_theta", "eta_only"]
Sign = Literal["+", "-"]


def eta_single_or_vacuum(mu: float) -> float:
    """Pr[n <= 1] for a Poissonian source of mean mu"""
    if mu < 0 or not math.isfinite(mu):
        raise InvalidModel(f"Среднее число фотонов должно быть ≥ 0, получено {mu}")
    return (1.0 + mu) * math.exp(-mu)


def hoeffding_delta(epsilon: float, n: int) -> float:
    if n <= 0:
        raise InvalidModel("Число раундов для оценки флуктуаций должно быть > 0")
    if not 0.0 < epsilon <= 1.0:
        raise InvalidModel(f"ε должен лежать в (0,1], получено {epsilon}")
    return math.sqrt(math.log(1.0 / epsilon) / (2.0 * n))


@dataclass(frozen=True)
class SecurityBudget:
    epsilon: float
    n_total: int
    n_gen: int
    n_test_per_state: int
    mu: float
    sys_freq_hz: float

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidModel(f"ε должен лежать в (0,1), получено {self.epsilon}")
        if self.n_gen < 1 or self.n_test_per_state < 1:
            raise InvalidModel("Нужен хотя бы один генерационный и один тестовый раунд на состояние")
        if self.n_gen + 3 * self.n_test_per_state > self.n_total:
            raise InvalidModel(
                f"N_g + 3·N_t = {self.n_gen + 3 * self.n_test_per_state} превышает N = {self.n_total}"
            )
        if self.mu < 0:
            raise InvalidModel(f"μ должен быть ≥ 0, получено {self.mu}")
        if self.sys_freq_hz <= 0:
            raise InvalidModel("Частота системы должна быть > 0")

    @classmethod
    def from_test_fraction(cls, n_total: int, test_fraction: float, epsilon: float,
                           mu: float, sys_freq_hz: float) -> "SecurityBudget":
        """Split N into N_g generation rounds and 3·N_t test rounds"""
        if not 0.0 < test_fraction < 1.0:
            raise InvalidModel(f"Доля тестовых раундов должна лежать в (0,1), получено {test_fraction}")
        n_test = int(round(n_total * test_fraction / 3))
        return cls(
            epsilon=epsilon,
            n_total=n_total,
            n_gen=n_total - 3 * n_test,
            n_test_per_state=n_test,
            mu=mu,
            sys_freq_hz=sys_freq_hz,
        )

    @classmethod
    def from_total_failure(cls, epsilon_total: float, **kwargs) -> "SecurityBudget":
        return cls(epsilon=epsilon_total / FAILURE_TERMS, **kwargs)

    @property
    def epsilon_total(self) -> float:
        return FAILURE_TERMS * self.epsilon

    @property
    def eta(self) -> float:
        return eta_single_or_vacuum(self.mu)

    @property
    def theta_t(self) -> float:
        return hoeffding_delta(self.epsilon, self.n_test_per_state)

    @property
    def theta_g(self) -> float:
        return hoeffding_delta(self.epsilon, self.n_gen)


@dataclass(frozen=True)
class EntropyReport:
    c_bound: float
    p_guess: float
    min_entropy_bits: float
    length_bits: int
    rate_bps: float
    aborted: bool = False
    abort_reason: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def c_bound_ideal(g0: float, g1: float, g2: float) -> float:
    """sqrt((g1 - g0)(g0 - g2)); aborts when the product is negative"""
    for g in (g0, g1, g2):
        if not -1.0 <= g <= 1.0:
            raise InvalidModel(f"Ожидание вне [−1,1]: {g}")
    product = (g1 - g0) * (g0 - g2)
    if product < 0:
        raise ProtocolAbort(AbortReason.EXPECTATION_ORDER, f"(g1−g0)(g0−g2) = {product:.6g} < 0")
    return min(1.0, math.sqrt(product))


def guessing_prob_upper(c: float) -> float:
    if not 0.0 <= c <= 1.0:
        raise InvalidModel(f"C должен лежать в [0,1], получено {c}")
    return 1.0 - (c / 2.0) * (1.0 - math.sqrt(1.0 - c * c))


def _neg_log2_pguess(c: float) -> float:
    """-log2 of the guessing-probability bound, accurate for pguess near 1"""
    deficit = (c / 2.0) * (1.0 - math.sqrt(1.0 - c * c))
    return -math.log1p(-deficit) / LN2


def multiphoton_adjust(g_prime: float, pr_le1: float, sign: Sign) -> float:
    """Worst-case single-photon-subspace expectation from a practical-source one"""
    if pr_le1 <= 0.0 or pr_le1 > 1.0:
        raise InvalidModel(f"Pr[n≤1] должна лежать в (0,1], получено {pr_le1}")
    if not -1.0 <= g_prime <= 1.0:
        raise InvalidModel(f"Ожидание вне [−1,1]: {g_prime}")
    if sign not in ("+", "-"):
        raise InvalidModel(f"Знак должен быть '+' или '-', получено {sign!r}")
    shift = 1.0 - pr_le1
    value = (g_prime - shift) / pr_le1 if sign == "-" else (g_prime + shift) / pr_le1
    return min(1.0, max(-1.0, value))


def _single_photon_gap(upper: float, lower: float, eta: float, theta_t: float) -> float:
    """Worst-case gap upper − lower after multiphoton and sampling corrections.

    Without clipping this is upper − lower − 2(1 − η) − 4θ_t.
    """
    worst_upper = multiphoton_adjust(upper, eta, "-")
    worst_lower = multiphoton_adjust(lower, eta, "+")
    return eta * (worst_upper - worst_lower) - 4.0 * theta_t


def c_bound_practical(ge0: float, ge1: float, ge2: float, budget: SecurityBudget,
                      prefactor_variant: PrefactorVariant = "eta_plus_theta",
                      *, eta: Optional[float] = None, theta_t: Optional[float] = None) -> float:
    """Worst-case C from finite-sample expectations of a coherent source.

    `eta` and `theta_t` override the budget-derived values.
    """
    for g in (ge0, ge1, ge2):
        if not -1.0 <= g <= 1.0:
            raise InvalidModel(f"Ожидание вне [−1,1]: {g}")
    eta = budget.eta if eta is None else eta
    theta_t = budget.theta_t if theta_t is None else theta_t

    # метки исходов могут быть переставлены относительно тестовых состояний
    if ge1 < ge2:
        ge0, ge1, ge2 = -ge0, -ge1, -ge2

    # штраф входит в один множитель: разность ожиданий в однофотонном подпространстве
    if ge0 >= (ge1 + ge2) / 2.0:
        first, second = _single_photon_gap(ge1, ge0, eta, theta_t), ge0 - ge2
    else:
        first, second = ge1 - ge0, _single_photon_gap(ge0, ge2, eta, theta_t)
    product = first * second
    if product < 0:
        raise ProtocolAbort(
            AbortReason.NON_POSITIVE_WITNESS,
            f"множители ({first:.6g}, {second:.6g}) при η={eta:.6g}, θ_t={theta_t:.6g}",
        )

    if prefactor_variant == "eta_plus_theta":
        prefactor = 1.0 / (eta + theta_t)
    elif prefactor_variant == "eta_only":
        prefactor = 1.0 / eta
    else:
        raise InvalidModel(f"Неизвестный вариант префактора: {prefactor_variant}")
    return min(1.0, max(0.0, prefactor * math.sqrt(product)))


def final_length(c: float, budget: SecurityBudget, conservative_eta: bool = False,
                 *, theta_g: Optional[float] = None) -> EntropyReport:
    """Leftover-hash length l and rate for a certified C.

    `theta_g` overrides the budget fluctuation term.
    """
    p_guess = guessing_prob_upper(c)
    theta_g = budget.theta_g if theta_g is None else theta_g
    weight = budget.eta - theta_g if conservative_eta else budget.eta + theta_g

    min_entropy = max(0.0, budget.n_gen * weight * _neg_log2_pguess(c))
    hash_cost = 2.0 * math.log(1.0 / (2.0 * budget.epsilon)) / LN2
    raw_length = math.floor(min_entropy - hash_cost)

    if raw_length <= 0:
        logger.warning(f"⚠️ Длина l = {raw_length} ≤ 0 при C={c:.6g}: раунды отбрасываются")
        return EntropyReport(
            c_bound=c,
            p_guess=p_guess,
            min_entropy_bits=min_entropy,
            length_bits=0,
            rate_bps=0.0,
            aborted=True,
            abort_reason=AbortReason.NON_POSITIVE_LENGTH.value,
        )

    rate = raw_length * budget.sys_freq_hz / budget.n_total
    logger.debug(f"C={c:.6g} p_guess={p_guess:.8f} H_min={min_entropy:.6g} l={raw_length} rate={rate:.2f} bps")
    return EntropyReport(
        c_bound=c,
        p_guess=p_guess,
        min_entropy_bits=min_entropy,
        length_bits=int(raw_length),
        rate_bps=rate,
    )


def bound_from_expectations(ge: Sequence[float], budget: SecurityBudget,
                            conservative_eta: bool = False,
                            prefactor_variant: PrefactorVariant = "eta_plus_theta") -> EntropyReport:
    """c_bound_practical followed by final_length, aborts folded into the report"""
    ge0, ge1, ge2 = ge
    try:
        c = c_bound_practical(ge0, ge1, ge2, budget, prefactor_variant)
    except ProtocolAbort as e:
        logger.warning(f"⚠️ Оценка C не удалась: {e}")
        return EntropyReport(
            c_bound=0.0,
            p_guess=1.0,
            min_entropy_bits=0.0,
            length_bits=0,
            rate_bps=0.0,
            aborted=True,
            abort_reason=e.reason.value,
        )
    return final_length(c, budget, conservative_eta)


def asymptotic_rate_per_pulse(ge0: float, ge1: float, ge2: float, mu: float) -> float:
    """Infinite-N rate in bits per pulse: no fluctuation terms, no hashing penalty"""
    eta = eta_single_or_vacuum(mu)
    try:
        c = c_bound_practical(ge0, ge1, ge2, _ASYMPTOTIC_BUDGET, eta=eta, theta_t=0.0)
    except ProtocolAbort:
        return 0.0
    return eta * _neg_log2_pguess(c)


# θ-поля переопределяются, бюджет нужен только для сигнатуры
_ASYMPTOTIC_BUDGET = SecurityBudget(epsilon=0.5, n_total=4, n_gen=1, n_test_per_state=1,
                                    mu=0.0, sys_freq_hz=1.0)

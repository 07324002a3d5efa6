import hashlib
import json
import math
import os
from dataclasses import dataclass, asdict, fields, replace
from typing import Any, Dict, Optional

import psutil
from dotenv import load_dotenv
from loguru import logger

from services.entropy import SecurityBudget
from services.source_sim import DetectorModel, SourceModel
from utils.errors import ConfigError, QrngError


class Config:
    """Singleton для настроек окружения"""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(Config, cls).__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if self._initialized:
            return

        load_dotenv()

        self.config_path: str = os.getenv("QRNG_CONFIG_PATH", "qrng_config.json")
        self.db_path: str = os.getenv("QRNG_DB_PATH", "qrng_runs.db")
        self.log_level: str = os.getenv("QRNG_LOG_LEVEL", "INFO").upper()
        self.log_file: Optional[str] = os.getenv("QRNG_LOG_FILE") or None

        seed = os.getenv("QRNG_SEED", "").strip()
        self.seed_override: Optional[int] = None
        if seed:
            try:
                self.seed_override = int(seed, 0)
            except ValueError:
                raise ConfigError(f"QRNG_SEED должен быть целым числом, получено {seed!r}")

        workers = os.getenv("QRNG_WORKERS", "").strip()
        try:
            self.workers: int = int(workers) if workers else (psutil.cpu_count(logical=False) or 1)
        except ValueError:
            raise ConfigError(f"QRNG_WORKERS должен быть целым числом, получено {workers!r}")
        if self.workers < 1:
            raise ConfigError("QRNG_WORKERS должен быть ≥ 1")

        # Настройки соединений с базой данных
        self.max_db_connections: int = 5

        self._initialized = True

    @classmethod
    def reset(cls) -> None:
        """Forget the cached instance so the environment is read again"""
        cls._instance = None


@dataclass(frozen=True)
class RunConfig:
    # источник
    mu: float = 0.58
    p_gen: float = 0.1
    p_test: float = 0.3
    misalign1: float = math.pi / 28
    misalign2: float = math.pi / 28
    noise_range0: float = 0.0
    noise_range1: float = math.pi / 24
    noise_range2: float = math.pi / 24
    gen_azimuth: float = 0.0
    # наклон генерационного состояния, откалиброван по ячейке μ=0.58, Δθ_m=π/14
    gen_tilt: float = 0.299386
    photon_source: str = "coherent"
    # детекторы
    eff_h: float = 0.106
    eff_v: float = 0.137
    dark_h: float = 1.3e-6
    dark_v: float = 1.6e-6
    loss_model: str = "common"
    # бюджет безопасности
    epsilon: float = 1e-10
    n_total: int = 10 ** 10
    test_fraction: float = 2.7e-5
    sys_freq_hz: float = 1e7
    # симуляция и артефакты
    master_seed: int = 20240601
    n_rounds: int = 10 ** 7
    output_dir: str = "runs"
    block_bits: int = 1 << 20
    extract_mode: str = "packed"
    # переключатели
    conservative_eta: bool = False
    prefactor_variant: str = "eta_plus_theta"
    per_round_noise_sampling: bool = False
    # randtest / verify
    alpha: float = 0.01
    block_len: int = 128
    verify_samples: int = 10_000
    verify_grid_n: int = 64
    verify_tolerance: float = 1e-9

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ConfigError(f"n_rounds должен быть ≥ 1, получено {self.n_rounds}")
        if self.extract_mode not in ("naive", "packed"):
            raise ConfigError(f"Неизвестный режим извлечения: {self.extract_mode}")
        if self.prefactor_variant not in ("eta_plus_theta", "eta_only"):
            raise ConfigError(f"Неизвестный вариант префактора: {self.prefactor_variant}")
        if not 0 <= self.master_seed < 1 << 64:
            raise ConfigError(f"master_seed должен быть 64-битным, получено {self.master_seed}")
        try:
            self.source_model()
            self.detector_model()
            self.security_budget()
        except QrngError as e:
            raise ConfigError(f"Некорректная конфигурация: {e}") from e

    def source_model(self, **overrides) -> SourceModel:
        values = {f.name: getattr(self, f.name) for f in fields(SourceModel)}
        values.update(overrides)
        return SourceModel(**values)

    def detector_model(self) -> DetectorModel:
        return DetectorModel(**{f.name: getattr(self, f.name) for f in fields(DetectorModel)})

    def security_budget(self, mu: Optional[float] = None) -> SecurityBudget:
        return SecurityBudget.from_test_fraction(
            n_total=self.n_total,
            test_fraction=self.test_fraction,
            epsilon=self.epsilon,
            mu=self.mu if mu is None else mu,
            sys_freq_hz=self.sys_freq_hz,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, **overrides) -> "RunConfig":
        return replace(self, **_coerce(overrides))


_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(values: Dict[str, Any]) -> Dict[str, Any]:
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"Неизвестные ключи конфигурации: {', '.join(unknown)}")

    result = {}
    for key, value in values.items():
        expected = _FIELD_TYPES[key]
        if expected is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{key} должен быть true/false, получено {value!r}")
        elif expected is int:
            if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
                raise ConfigError(f"{key} должен быть целым, получено {value!r}")
            value = int(value)
        elif expected is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} должен быть числом, получено {value!r}")
            value = float(value)
        elif not isinstance(value, str):
            raise ConfigError(f"{key} должен быть строкой, получено {value!r}")
        result[key] = value
    return result


def _read_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        logger.info(f"Файл конфигурации {path} не найден, используются значения по умолчанию")
        return {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"Не удалось разобрать {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: ожидался JSON-объект")
    return data


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """File values, then flag overrides, then QRNG_SEED for the seed"""
    config = Config()
    values = _coerce(_read_config_file(path or config.config_path))
    values.update(_coerce({k: v for k, v in (overrides or {}).items() if v is not None}))
    if config.seed_override is not None:
        values["master_seed"] = config.seed_override
    return RunConfig(**values)

import json
import time
from abc import ABC, abstractmethod
from argparse import Namespace
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from loguru import logger

from database.repository import Repository
from utils.config import Config, RunConfig, load_run_config
from utils.errors import ArtifactIOError, QrngError

_RUN_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def write_json(path: Union[str, Path], data: Any) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
    except OSError as e:
        raise ArtifactIOError(f"Не удалось записать {path}: {e}") from e


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactIOError(f"Не удалось прочитать {path}: {e}") from e


def overrides_from_args(args: Namespace) -> Dict[str, Any]:
    """Flag values that map onto RunConfig fields; unset flags are None and skipped"""
    values = {k: v for k, v in vars(args).items() if k in _RUN_CONFIG_KEYS and v is not None}
    misalignment = getattr(args, "misalignment", None)
    if misalignment is not None:
        values["misalign1"] = values["misalign2"] = misalignment / 2
    epsilon_total = getattr(args, "epsilon_total", None)
    if epsilon_total is not None:
        values["epsilon"] = epsilon_total / 7
    return values


class Command(ABC):
    """Base command class implementing Command Pattern"""
    name: str = ""
    needs_run_config: bool = True
    recorded: bool = True

    def __init__(self):
        self.config = Config()
        self.run_config: Optional[RunConfig] = None
        self.artifacts: Dict[str, str] = {}
        self.table_cells: List[Dict[str, Any]] = []

    def output_dir(self, args: Namespace) -> Path:
        out = getattr(args, "out", None) or self.run_config.output_dir
        return Path(out)

    def add_artifact(self, key: str, path: Path) -> Path:
        self.artifacts[key] = str(path)
        return path

    async def execute(self, args: Namespace) -> int:
        """Run the command; returns the process exit code"""
        started = time.perf_counter()
        exit_code, error = 0, None
        try:
            if self.needs_run_config:
                self.run_config = load_run_config(getattr(args, "config", None), overrides_from_args(args))
            await self._handle(args)
        except QrngError as e:
            exit_code, error = e.exit_code, str(e)
            logger.error(f"❌ {self.name}: {e}")

        if self.recorded:
            await self._record(exit_code, error, time.perf_counter() - started)
        return exit_code

    async def _record(self, exit_code: int, error: Optional[str], duration: float) -> None:
        try:
            await Repository.init_db()
            run_id = await Repository.record_run(
                command=self.name,
                config_hash=self.run_config.config_hash() if self.run_config else None,
                master_seed=self.run_config.master_seed if self.run_config else None,
                artifacts=self.artifacts,
                exit_code=exit_code,
                duration_s=duration,
                error=error,
            )
            if self.table_cells:
                await Repository.add_table_cells(run_id, self.table_cells)
        except Exception as e:
            logger.warning(f"⚠️ Не удалось записать запуск в реестр: {e}")

    @abstractmethod
    async def _handle(self, args: Namespace) -> None:
        """Implementation of command handling"""
        pass

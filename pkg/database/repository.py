import asyncio
import json
from contextlib import asynccontextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import aiosqlite
from loguru import logger

from database import migration
from utils.config import Config

# сколько ждать свободного соединения, секунды
POOL_WAIT_TIMEOUT = 30


class DatabaseConnectionPool:
    """Small pool of aiosqlite connections to the run registry"""
    _active_connections: List[aiosqlite.Connection] = []

    @classmethod
    async def close_all(cls):
        """Close every pooled connection (end of a CLI invocation)"""
        logger.debug(f"Закрытие соединений с реестром: {len(cls._active_connections)}")
        for conn in cls._active_connections[:]:
            try:
                await conn.close()
            except Exception as e:
                logger.error(f"❌ Не удалось закрыть соединение с реестром: {e}")
            finally:
                cls._active_connections.remove(conn)

    @classmethod
    @asynccontextmanager
    async def get_connection(cls):
        """Borrow an idle connection, open a new one under the limit, or wait for one"""
        config = Config()
        max_connections = getattr(config, "max_db_connections", 5)
        connection = cls._take_idle()

        if connection is None and len(cls._active_connections) < max_connections:
            connection = await aiosqlite.connect(config.db_path)
            await connection.execute("PRAGMA foreign_keys = ON")
            connection.in_use = True
            cls._active_connections.append(connection)
            logger.debug(f"Открыто соединение с реестром {config.db_path}, всего {len(cls._active_connections)}")

        if connection is None:
            waiting_start = datetime.now()
            logger.warning(f"⚠️ Все {max_connections} соединений с реестром заняты, ожидание...")
            while connection is None:
                await asyncio.sleep(0.1)
                connection = cls._take_idle()
                if connection is None and (datetime.now() - waiting_start).total_seconds() > POOL_WAIT_TIMEOUT:
                    logger.error(f"❌ Нет свободного соединения с реестром за {POOL_WAIT_TIMEOUT} с")
                    raise TimeoutError("Превышено время ожидания соединения с реестром")

        try:
            yield connection
        finally:
            connection.in_use = False

    @classmethod
    def _take_idle(cls) -> Optional[aiosqlite.Connection]:
        for conn in cls._active_connections:
            if not getattr(conn, "in_use", True):
                conn.in_use = True
                return conn
        return None


class Repository:
    """Run registry: every CLI invocation and the table cells it produced"""

    @staticmethod
    async def close_db() -> None:
        await DatabaseConnectionPool.close_all()

    @staticmethod
    async def init_db() -> None:
        """Apply pending schema migrations"""
        try:
            version = await asyncio.to_thread(migration.run, Path(Config().db_path))
            logger.debug(f"✅ Реестр запусков готов, версия схемы {version}")
        except Exception as e:
            logger.error(f"❌ Не удалось подготовить реестр запусков: {e}")
            raise

    @staticmethod
    async def record_run(command: str, config_hash: Optional[str], master_seed: Optional[int],
                         artifacts: Dict[str, str], exit_code: int, duration_s: float,
                         error: Optional[str] = None) -> int:
        async with DatabaseConnectionPool.get_connection() as db:
            cursor = await db.execute(
                "INSERT INTO runs (command, config_hash, master_seed, artifacts, exit_code, error, duration_s) "
                "VALUES (?, ?, ?, ?, ?, ?, ?)",
                (command, config_hash, master_seed, json.dumps(artifacts, sort_keys=True),
                 exit_code, error, duration_s),
            )
            await db.commit()
            run_id = cursor.lastrowid
            logger.debug(f"📝 Запуск {command} записан в реестр под id={run_id}")
            return run_id

    @staticmethod
    async def get_runs(limit: int = 20, command: Optional[str] = None) -> List[Dict[str, Any]]:
        """Newest first"""
        query = ("SELECT id, command, config_hash, master_seed, artifacts, exit_code, error, duration_s, created_at "
                 "FROM runs")
        params: tuple = ()
        if command:
            query += " WHERE command = ?"
            params = (command,)
        query += " ORDER BY id DESC LIMIT ?"
        params += (limit,)

        async with DatabaseConnectionPool.get_connection() as db:
            async with db.execute(query, params) as cursor:
                rows = await cursor.fetchall()
        return [
            {
                "id": row[0],
                "command": row[1],
                "config_hash": row[2],
                "master_seed": row[3],
                "artifacts": json.loads(row[4]),
                "exit_code": row[5],
                "error": row[6],
                "duration_s": row[7],
                "created_at": row[8],
            }
            for row in rows
        ]

    @staticmethod
    async def add_table_cells(run_id: int, cells: Sequence[Dict[str, Any]]) -> None:
        async with DatabaseConnectionPool.get_connection() as db:
            await db.executemany(
                "INSERT OR REPLACE INTO table_cells (run_id, mu, misalignment, c_sim, rate_sim, aborted) "
                "VALUES (?, ?, ?, ?, ?, ?)",
                [(run_id, c["mu"], c["misalignment"], c["c_sim"], c["rate_sim"], int(c["aborted"]))
                 for c in cells],
            )
            await db.commit()
            logger.debug(f"📝 Сохранено {len(cells)} ячеек таблицы для запуска {run_id}")

    @staticmethod
    async def get_table_cells(run_id: int) -> List[Dict[str, Any]]:
        async with DatabaseConnectionPool.get_connection() as db:
            async with db.execute(
                "SELECT mu, misalignment, c_sim, rate_sim, aborted FROM table_cells WHERE run_id = ? ORDER BY id",
                (run_id,),
            ) as cursor:
                rows = await cursor.fetchall()
        return [
            {"mu": r[0], "misalignment": r[1], "c_sim": r[2], "rate_sim": r[3], "aborted": bool(r[4])}
            for r in rows
        ]

"""Schema migrations for the run registry.

Safe to run repeatedly: the applied version is tracked with SQLite's
PRAGMA user_version flag. `Repository.init_db` applies pending migrations
before first use; the module can also be run directly:

    python -m database.migration
"""

from __future__ import annotations

import sqlite3
import sys
from contextlib import closing
from pathlib import Path
from typing import Callable, Iterable, Optional, Tuple

from loguru import logger

ROOT_DIR = Path(__file__).resolve().parent.parent
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

Migration = Callable[[sqlite3.Connection], None]


def migration_create_runs_table(conn: sqlite3.Connection) -> None:
    """One row per CLI invocation."""
    logger.info("Ensuring runs table exists")
    conn.executescript(
        """
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            command TEXT NOT NULL,
            config_hash TEXT,
            master_seed INTEGER,
            artifacts TEXT NOT NULL DEFAULT '{}',
            exit_code INTEGER NOT NULL,
            error TEXT,
            duration_s REAL NOT NULL,
            created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
        );

        CREATE INDEX IF NOT EXISTS idx_runs_created ON runs(created_at);
        CREATE INDEX IF NOT EXISTS idx_runs_command ON runs(command);
        """
    )


def migration_create_table_cells(conn: sqlite3.Connection) -> None:
    """Per-cell results of the intensity x misalignment table."""
    logger.info("Ensuring table_cells table exists")
    conn.executescript(
        """
        CREATE TABLE IF NOT EXISTS table_cells (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id INTEGER NOT NULL REFERENCES runs(id) ON DELETE CASCADE,
            mu REAL NOT NULL,
            misalignment TEXT NOT NULL,
            c_sim REAL,
            rate_sim REAL,
            aborted INTEGER NOT NULL DEFAULT 0,
            UNIQUE(run_id, mu, misalignment)
        );

        CREATE INDEX IF NOT EXISTS idx_table_cells_run ON table_cells(run_id);
        """
    )


MIGRATIONS: Iterable[Tuple[int, Migration]] = (
    (1, migration_create_runs_table),
    (2, migration_create_table_cells),
)


def _get_db_path() -> Path:
    from utils.config import Config

    return Path(Config().db_path).expanduser().resolve()


def _apply_migrations(conn: sqlite3.Connection) -> int:
    current_version = conn.execute("PRAGMA user_version").fetchone()[0]
    logger.debug(f"Current database version: {current_version}")

    for version, migration in MIGRATIONS:
        if current_version >= version:
            continue

        logger.info(f"Applying migration {version}: {migration.__name__}")
        migration(conn)
        conn.execute(f"PRAGMA user_version = {version}")
        conn.commit()
        current_version = version
        logger.success(f"Migration {version} applied successfully")

    return current_version


def run(db_path: Optional[Path] = None) -> int:
    """Apply pending migrations, creating the database file if needed; returns the schema version"""
    db_path = Path(db_path) if db_path is not None else _get_db_path()
    db_path.parent.mkdir(parents=True, exist_ok=True)

    with closing(sqlite3.connect(db_path)) as conn:
        conn.execute("PRAGMA foreign_keys = ON")
        return _apply_migrations(conn)


if __name__ == "__main__":  # pragma: no cover
    try:
        run()
    except Exception as exc:
        logger.exception(f"Migration failed: {exc}")
        raise

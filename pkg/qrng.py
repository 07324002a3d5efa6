"""Semi-device-independent QRNG: simulation, bounds, extraction and checks from the command line."""

import argparse
import asyncio
import math
import multiprocessing
import re
import sys
from typing import List, Optional

from loguru import logger

from commands.commands import COMMANDS
from database.repository import Repository
from utils.config import Config
from utils.errors import QrngError

_ANGLE = re.compile(r"^\s*(?:(?P<num>[0-9.]+)\s*\*?\s*)?pi\s*(?:/\s*(?P<den>[0-9.]+))?\s*$", re.IGNORECASE)


def angle(text: str) -> float:
    """Radians from '0.224', 'pi/14' or '2pi/9'"""
    match = _ANGLE.match(text)
    if match:
        num = float(match.group("num") or 1.0)
        den = float(match.group("den") or 1.0)
        return num * math.pi / den
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"не угол: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrng", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON-файл конфигурации (по умолчанию QRNG_CONFIG_PATH)")
    common.add_argument("--out", help="каталог артефактов")
    common.add_argument("--seed", dest="master_seed", type=lambda s: int(s, 0), help="master seed")

    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("--mu", type=float, help="среднее число фотонов после потерь")
    source.add_argument("--n-rounds", dest="n_rounds", type=int)
    source.add_argument("--p-gen", dest="p_gen", type=float)
    source.add_argument("--p-test", dest="p_test", type=float)
    source.add_argument("--misalignment", type=angle, help="полная ошибка Δθ_m, делится поровну")
    source.add_argument("--photon-source", dest="photon_source", choices=("coherent", "single_photon"))
    source.add_argument("--loss-model", dest="loss_model", choices=("common", "per_arm"))
    source.add_argument("--per-round-noise", dest="per_round_noise_sampling", action="store_true", default=None)

    budget = argparse.ArgumentParser(add_help=False)
    budget.add_argument("--n-total", dest="n_total", type=float, help="N для конечной выборки")
    budget.add_argument("--test-fraction", dest="test_fraction", type=float)
    budget.add_argument("--epsilon-total", dest="epsilon_total", type=float, help="ε_t = 7ε")
    budget.add_argument("--conservative-eta", dest="conservative_eta", action="store_true", default=None)
    budget.add_argument("--prefactor-variant", dest="prefactor_variant", choices=("eta_plus_theta", "eta_only"))

    sub.add_parser("simulate", parents=[common, source], help="смоделировать раунды протокола")

    p = sub.add_parser("bound", parents=[common, budget], help="оценить C и длину l по статистике")
    p.add_argument("--stats", help="путь к stats.json")
    p.add_argument("--desk-budget", action="store_true", help="N, N_g, N_t из самой статистики")

    p = sub.add_parser("extract", parents=[common], help="извлечение хешированием Тёплица")
    p.add_argument("--raw")
    p.add_argument("--report")
    p.add_argument("--seed-file")
    p.add_argument("--new-seed", action="store_true", help="создать сид, если файла нет")
    p.add_argument("--allow-long-seed", action="store_true",
                   help="разрешить сид длиннее плана блоков (используется префикс)")
    p.add_argument("--block-bits", dest="block_bits", type=int)
    p.add_argument("--mode", dest="extract_mode", choices=("naive", "packed"))

    p = sub.add_parser("randtest", parents=[common], help="статистические тесты")
    p.add_argument("--bits")
    p.add_argument("--alpha", type=float)
    p.add_argument("--block-len", dest="block_len", type=int)

    p = sub.add_parser("verify", parents=[common], help="численная проверка оценок")
    p.add_argument("--samples", dest="verify_samples", type=int)
    p.add_argument("--grid-n", dest="verify_grid_n", type=int)
    p.add_argument("--tolerance", dest="verify_tolerance", type=float)
    p.add_argument("--check", choices=("c_bound", "p_guess"))

    p = sub.add_parser("table", parents=[common, source, budget], help="таблица μ × Δθ_m")
    p.add_argument("--curve", choices=("mu", "misalignment"))

    p = sub.add_parser("history", help="реестр запусков")
    p.add_argument("--limit", type=int, default=20)
    p.add_argument("--command", dest="filter_command", choices=tuple(c for c in COMMANDS if c != "history"))
    return parser


def configure_logging(config: Config) -> None:
    logger.remove()
    logger.add(sys.stderr, level=config.log_level)
    if config.log_file:
        logger.add(config.log_file, level=config.log_level, rotation="10 MB")


async def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = Config()
    except QrngError as e:
        logger.error(f"❌ {e}")
        return e.exit_code
    configure_logging(config)

    command = COMMANDS[args.command]()
    try:
        return await command.execute(args)
    finally:
        await Repository.close_db()


if __name__ == "__main__":
    multiprocessing.set_start_method("spawn", force=True)
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logger.info("Остановлено пользователем")
        sys.exit(130)

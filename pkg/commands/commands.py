import csv
import math
from argparse import Namespace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from .base_command import Command, read_json, write_json
from database.repository import Repository
from services.adversary import soundness_sweep, sweep_summary, verdicts_to_csv
from services.entropy import (
    EntropyReport,
    SecurityBudget,
    asymptotic_rate_per_pulse,
    bound_from_expectations,
)
from services.extractor import extract_blocks, ledger, plan_blocks, plan_seed_length
from services.randtests import run_all
from services.source_sim import (
    DetectorModel,
    ExpectationStats,
    SourceModel,
    analytic_expectations,
    run_protocol,
)
from utils.bitbuffer import BitBuffer, read_bits_file, write_bits_file
from utils.config import RunConfig
from utils.errors import (
    AbortedRun,
    AbortReason,
    ArtifactIOError,
    BoundViolation,
    ProtocolAbort,
)

MU_GRID = (0.21, 0.33, 0.49, 0.58, 0.78, 0.89)
MISALIGNMENTS: Dict[str, float] = {
    "pi/14": math.pi / 14,
    "pi/12": math.pi / 12,
    "pi/9": math.pi / 9,
}
# опубликованные значения (C, скорость в bps) по строкам Δθ_m
PUBLISHED: Dict[str, Tuple[Tuple[float, float], ...]] = {
    "pi/14": ((0.13572, 8874.4), (0.18477, 22204.7), (0.224949, 38934.8),
              (0.22938, 40415.4), (0.203536, 26480.1), (0.155877, 11425.8)),
    "pi/12": ((0.123149, 6607.6), (0.169014, 16952.3), (0.211249, 32176.2),
              (0.213496, 32505.6), (0.16917, 15119.8), (0.118635, 4986.6)),
    "pi/9": ((0.0989554, 3392.1), (0.135744, 8726.3), (0.161014, 14133.8),
             (0.158786, 13255.4), (0.0660784, 834.4), (0.0, 0.0)),
}
# наклон генерационного состояния по ячейкам: подобран так, чтобы аналитическое C
# совпало с опубликованным при шуме тестовых состояний π/24
GEN_TILT: Dict[str, Tuple[float, ...]] = {
    "pi/14": (0.102952, 0.231319, 0.278361, 0.299386, 0.311379, 0.309842),
    "pi/12": (0.229999, 0.304271, 0.310494, 0.324631, 0.335151, 0.322817),
    "pi/9": (0.377211, 0.411378, 0.400246, 0.391230, 0.374028, 0.374028),
}
TABLE_FIELDS = ("mu", "misalignment", "c_sim", "rate_sim", "c_analytic", "rate_analytic",
                "c_published", "rate_published", "aborted")
CURVE_FIELDS = ("x", "c_analytic", "rate_finite_bps", "rate_asymptotic_bps")
# поток Philox для сида экстрактора, не пересекается с шардами симуляции
SEED_STREAM = 1 << 32


class ProgressObserver:
    """Logs simulation progress roughly every tenth of the shards"""

    def __init__(self, label: str):
        self.label = label
        self._last_decile = -1

    def on_shard_done(self, shard_index: int, n_shards: int, stats: ExpectationStats) -> None:
        decile = (shard_index + 1) * 10 // n_shards
        if decile != self._last_decile:
            self._last_decile = decile
            logger.debug(f"🔄 {self.label}: шард {shard_index + 1}/{n_shards}")


def _stats_ge(stats: ExpectationStats) -> List[Optional[float]]:
    return [stats.ge_of(s) if stats.n_test(s) else None for s in range(3)]


def _aborted_report(reason: AbortReason) -> EntropyReport:
    return EntropyReport(c_bound=0.0, p_guess=1.0, min_entropy_bits=0.0, length_bits=0,
                         rate_bps=0.0, aborted=True, abort_reason=reason.value)


def _evaluate(ge_source, budget: SecurityBudget, conservative_eta: bool,
              prefactor_variant: str) -> EntropyReport:
    """Bound a cell from stats or analytic expectations; missing test data aborts the cell"""
    try:
        ge = ge_source.ge if isinstance(ge_source, ExpectationStats) else ge_source
    except ProtocolAbort as e:
        logger.warning(f"⚠️ {e}")
        return _aborted_report(e.reason)
    return bound_from_expectations(ge, budget, conservative_eta, prefactor_variant)


class SimulateCommand(Command):
    name = "simulate"

    async def _handle(self, args: Namespace) -> None:
        rc = self.run_config
        out = self.output_dir(args)
        source, det = rc.source_model(), rc.detector_model()

        raw, stats = run_protocol(
            source, det, rc.n_rounds, rc.master_seed,
            per_round_noise=rc.per_round_noise_sampling,
            workers=self.config.workers,
            observers=[ProgressObserver("simulate")],
        )
        write_bits_file(self.add_artifact("raw", out / "raw.bits"), raw)
        write_json(self.add_artifact("stats", out / "stats.json"), {
            "config_hash": rc.config_hash(),
            "master_seed": rc.master_seed,
            "n_rounds": rc.n_rounds,
            "per_round_noise_sampling": rc.per_round_noise_sampling,
            "source": source.to_dict(),
            "detector": det.to_dict(),
            "tallies": stats.to_dict(),
            "ge": _stats_ge(stats),
            "raw_bits": raw.bit_count,
        })
        logger.info(f"✅ Статистика и сырые биты записаны в {out}")


class BoundCommand(Command):
    name = "bound"

    async def _handle(self, args: Namespace) -> None:
        rc = self.run_config
        out = self.output_dir(args)
        stats_path = Path(args.stats or out / "stats.json")
        document = read_json(stats_path)
        try:
            stats = ExpectationStats.from_dict(document["tallies"])
            mu = float(document["source"]["mu"])
        except (KeyError, TypeError, ValueError) as e:
            raise ArtifactIOError(f"{stats_path}: повреждённый файл статистики ({e})") from e

        if args.desk_budget:
            budget = self._desk_budget(stats, mu)
        else:
            budget = rc.security_budget(mu)

        report = _evaluate(stats, budget, rc.conservative_eta, rc.prefactor_variant)
        write_json(self.add_artifact("report", out / "report.json"), {
            **report.to_dict(),
            "config_hash": rc.config_hash(),
            "stats_config_hash": document.get("config_hash"),
            "ge": _stats_ge(stats),
            "budget": {
                "epsilon": budget.epsilon,
                "epsilon_total": budget.epsilon_total,
                "n_total": budget.n_total,
                "n_gen": budget.n_gen,
                "n_test_per_state": budget.n_test_per_state,
                "eta": budget.eta,
                "theta_t": budget.theta_t,
                "theta_g": budget.theta_g,
                "sys_freq_hz": budget.sys_freq_hz,
                "desk": bool(args.desk_budget),
            },
            "conservative_eta": rc.conservative_eta,
            "prefactor_variant": rc.prefactor_variant,
            "n_test_rounds": sum(stats.n_test(s) for s in range(3)),
        })

        if report.aborted:
            raise ProtocolAbort(AbortReason(report.abort_reason), "раунды отброшены, см. report.json")
        logger.info(f"✅ C={report.c_bound:.6f}, l={report.length_bits}, скорость {report.rate_bps:.1f} bps")

    def _desk_budget(self, stats: ExpectationStats, mu: float) -> SecurityBudget:
        """Budget sized to the simulated run instead of the configured N"""
        n_test = min(stats.n_test(s) for s in range(3))
        if n_test == 0:
            raise ProtocolAbort(AbortReason.NO_TEST_DATA, "в статистике нет тестовых раундов")
        return SecurityBudget(
            epsilon=self.run_config.epsilon,
            n_total=stats.n_rounds,
            n_gen=stats.n_gen_rounds,
            n_test_per_state=n_test,
            mu=mu,
            sys_freq_hz=self.run_config.sys_freq_hz,
        )


class ExtractCommand(Command):
    name = "extract"

    async def _handle(self, args: Namespace) -> None:
        rc = self.run_config
        out = self.output_dir(args)
        report = read_json(args.report or out / "report.json")
        length = int(report.get("length_bits", 0))
        if report.get("aborted") or length <= 0:
            raise AbortedRun(AbortReason.NON_POSITIVE_LENGTH, "отчёт не допускает извлечения (l ≤ 0)")

        raw = read_bits_file(args.raw or out / "raw.bits")
        plan = plan_blocks(raw.bit_count, length, rc.block_bits)
        seed_path = Path(args.seed_file or out / "seed.bits")
        seed = self._seed(seed_path, plan_seed_length(plan), args.new_seed)

        final = extract_blocks(raw, length, seed, rc.block_bits, rc.extract_mode, self.config.workers,
                               allow_long_seed=args.allow_long_seed)
        write_bits_file(self.add_artifact("final", out / "final.bits"), final)

        entry = ledger(int(report.get("n_test_rounds", 0)), final.bit_count, plan_seed_length(plan))
        write_json(self.add_artifact("ledger", out / "ledger.json"), {
            **entry.to_dict(),
            "blocks": len(plan),
            "raw_bits": raw.bit_count,
            "config_hash": rc.config_hash(),
        })
        logger.info(f"✅ Извлечено {final.bit_count} бит, чистый прирост {entry.net_expansion}")

    def _seed(self, path: Path, needed: int, generate: bool) -> BitBuffer:
        if generate and not path.exists():
            seq = np.random.SeedSequence(entropy=self.run_config.master_seed, spawn_key=(SEED_STREAM,))
            seed = BitBuffer.random(np.random.Generator(np.random.Philox(seq)), needed)
            write_bits_file(path, seed)
            logger.info(f"📝 Сгенерирован сид экстрактора: {needed} бит в {path}")
        self.add_artifact("seed", path)
        return read_bits_file(path)


class RandtestCommand(Command):
    name = "randtest"

    async def _handle(self, args: Namespace) -> None:
        rc = self.run_config
        out = self.output_dir(args)
        bits = read_bits_file(args.bits or out / "final.bits")
        reports = run_all(bits, rc.alpha, rc.block_len)
        for report in reports:
            path = out / f"randtest_{report.test_name}.json"
            write_json(self.add_artifact(report.test_name, path), {**report.to_dict(), "bit_count": bits.bit_count})
        failed = [r.test_name for r in reports if not r.passed]
        if failed:
            logger.warning(f"⚠️ Тесты не пройдены при α={rc.alpha}: {', '.join(failed)}")
        else:
            logger.info(f"✅ Все {len(reports)} теста пройдены")


class VerifyCommand(Command):
    name = "verify"

    async def _handle(self, args: Namespace) -> None:
        rc = self.run_config
        out = self.output_dir(args)
        checks = (args.check,) if args.check else ("c_bound", "p_guess")
        verdicts = soundness_sweep(
            rc.verify_samples, rc.master_seed, rc.verify_tolerance, rc.verify_grid_n,
            checks=checks, workers=self.config.workers,
        )
        verdicts_to_csv(verdicts, self.add_artifact("verdicts", out / "verdicts.csv"))
        summary = sweep_summary(verdicts)
        if summary["violated"]:
            raise BoundViolation(f"{summary['violated']} нарушений из {summary['n_verdicts']} проверок")


class TableCommand(Command):
    name = "table"

    async def _handle(self, args: Namespace) -> None:
        rc = self.run_config
        out = self.output_dir(args)
        det = rc.detector_model()
        rows = []
        for label in MISALIGNMENTS:
            for mu, (c_pub, rate_pub) in zip(MU_GRID, PUBLISHED[label]):
                rows.append(self._cell(mu, label, det, c_pub, rate_pub))

        path = self.add_artifact("table", out / "table.csv")
        _write_csv(path, TABLE_FIELDS, rows)
        self.table_cells = [
            {"mu": r["mu"], "misalignment": r["misalignment"], "c_sim": r["c_sim"],
             "rate_sim": r["rate_sim"], "aborted": r["aborted"]}
            for r in rows
        ]
        logger.info(f"✅ Таблица из {len(rows)} ячеек записана в {path}")

        if args.curve:
            curve = analytic_curve(rc, args.curve, det)
            _write_csv(self.add_artifact("curve", out / f"curve_{args.curve}.csv"), CURVE_FIELDS, curve)

    def _cell(self, mu: float, label: str, det, c_pub: float, rate_pub: float) -> Dict:
        rc = self.run_config
        source = table_source(rc, mu, label)
        budget = rc.security_budget(mu)
        # одинаковый сид во всех ячейках: общие случайные числа для сравнения строк
        _, stats = run_protocol(source, det, rc.n_rounds, rc.master_seed,
                                per_round_noise=rc.per_round_noise_sampling,
                                workers=self.config.workers)
        sim = _evaluate(stats, budget, rc.conservative_eta, rc.prefactor_variant)
        analytic = _evaluate(analytic_expectations(source, det), budget,
                             rc.conservative_eta, rc.prefactor_variant)
        logger.info(f"📊 μ={mu}, Δθ_m={label}: C_sim={sim.c_bound:.5f}, rate_sim={sim.rate_bps:.1f} bps "
                    f"(опубликовано {c_pub}, {rate_pub})")
        return {
            "mu": mu,
            "misalignment": label,
            "c_sim": sim.c_bound,
            "rate_sim": sim.rate_bps,
            "c_analytic": analytic.c_bound,
            "rate_analytic": analytic.rate_bps,
            "c_published": c_pub,
            "rate_published": rate_pub,
            "aborted": sim.aborted,
        }


class HistoryCommand(Command):
    name = "history"
    needs_run_config = False
    recorded = False

    async def _handle(self, args: Namespace) -> None:
        await Repository.init_db()
        runs = await Repository.get_runs(limit=args.limit, command=args.filter_command)
        if not runs:
            print("Реестр запусков пуст")
            return
        for run in runs:
            status = "✅" if run["exit_code"] == 0 else f"❌ {run['exit_code']}"
            print(f"{run['id']:>5}  {run['created_at']}  {run['command']:<9} {status:<5} "
                  f"seed={run['master_seed']}  {run['duration_s']:.2f}s  {run['config_hash'] or ''}")


def table_source(rc: RunConfig, mu: float, label: str) -> SourceModel:
    """Source model of one table cell with its calibrated generation tilt"""
    delta_m = MISALIGNMENTS[label]
    tilt = GEN_TILT[label][MU_GRID.index(mu)]
    return rc.source_model(mu=mu, misalign1=delta_m / 2, misalign2=delta_m / 2, gen_tilt=tilt)


def analytic_table(rc: RunConfig, det: Optional[DetectorModel] = None) -> List[Dict]:
    """Exact-expectation C and rate for every table cell"""
    det = det or rc.detector_model()
    rows = []
    for label in MISALIGNMENTS:
        for mu in MU_GRID:
            ge = analytic_expectations(table_source(rc, mu, label), det)
            report = _evaluate(ge, rc.security_budget(mu), rc.conservative_eta, rc.prefactor_variant)
            rows.append({"mu": mu, "misalignment": label, "c_analytic": report.c_bound,
                         "rate_analytic": report.rate_bps, "aborted": report.aborted})
    return rows


def analytic_curve(rc: RunConfig, kind: str, det: Optional[DetectorModel] = None) -> List[Dict]:
    """Analytic finite-size and asymptotic rate along μ or along Δθ_m"""
    det = det or rc.detector_model()
    if kind == "mu":
        xs = np.round(np.linspace(0.05, 1.2, 47), 6)
        models = [(x, rc.source_model(mu=float(x))) for x in xs]
    else:
        xs = np.round(np.linspace(0.0, math.pi / 6, 41), 6)
        models = [(x, rc.source_model(misalign1=float(x) / 2, misalign2=float(x) / 2)) for x in xs]

    rows = []
    for x, source in models:
        ge = analytic_expectations(source, det)
        report = _evaluate(ge, rc.security_budget(source.mu), rc.conservative_eta, rc.prefactor_variant)
        rows.append({
            "x": float(x),
            "c_analytic": report.c_bound,
            "rate_finite_bps": report.rate_bps,
            "rate_asymptotic_bps": asymptotic_rate_per_pulse(*ge, source.mu) * rc.sys_freq_hz,
        })
    return rows


def _write_csv(path: Path, field_names, rows) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=field_names)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        raise ArtifactIOError(f"Не удалось записать {path}: {e}") from e


COMMANDS = {
    cls.name: cls
    for cls in (SimulateCommand, BoundCommand, ExtractCommand, RandtestCommand,
                VerifyCommand, TableCommand, HistoryCommand)
}

"""
Точка входа CLI экспериментов: gen, run, report.

Коды возврата: 0 - успех, 1 - ошибка использования, 2 - ошибка данных.
"""

import argparse
import logging
import sys

from config import DEFAULT_SEED, LOG_FILE, LOG_LEVEL, MODELS, MODES, SCENARIOS, build_run_config, load_config_file
from handlers import cmd_gen, cmd_report, cmd_run
from utils import PhimlError, UsageError

logger = logging.getLogger(__name__)


def setup_logging(verbose: bool = False) -> None:
    """Лог в файл и в stderr; stdout остаётся под отчёты."""
    handlers = [logging.StreamHandler(sys.stderr)]
    try:
        handlers.insert(0, logging.FileHandler(LOG_FILE, encoding='utf-8'))
    except OSError as e:
        print(f"Warning: не удалось открыть лог {LOG_FILE}: {e}", file=sys.stderr)
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=logging.DEBUG if verbose else LOG_LEVEL,
        handlers=handlers,
        force=True,
    )


class ArgumentParser(argparse.ArgumentParser):
    """Ошибки разбора аргументов превращаются в UsageError (код 1)."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="phiml",
        description="Эксперименты с логическими, причинными и Rawlsian-ограничениями",
    )
    parser.add_argument("--verbose", action="store_true", help="подробный лог (DEBUG)")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="сгенерировать набор данных сценария")
    gen.add_argument("--scenario", required=True, choices=SCENARIOS)
    gen.add_argument("--seed", type=int, default=DEFAULT_SEED)
    gen.add_argument("--n", type=int, default=None, help="число строк (для env-ensemble - на среду)")
    gen.add_argument("--out", default=None, help="путь .csv или .xlsx")

    run = commands.add_parser("run", help="прогнать сценарий и записать JSON-отчёт")
    run.add_argument("--scenario", choices=SCENARIOS)
    run.add_argument("--model", choices=MODELS)
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--config", default=None, help="файл key=value с параметрами")
    run.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--data", default=None, help="CSV, ранее выгруженный командой gen")
    run.add_argument("--out", default=None, help="путь JSON-отчёта (по умолчанию stdout)")
    run.add_argument("--save-model", default=None, help="путь JSON-файла модели")

    report = commands.add_parser("report", help="сводная таблица по отчётам")
    report.add_argument("inputs", nargs="*", help="JSON-отчёты")
    report.add_argument("--out", default=None, help="путь .csv или .xlsx")
    return parser


def dispatch(args) -> None:
    if args.command == "gen":
        cmd_gen(args.scenario, args.seed, args.n, args.out)
    elif args.command == "run":
        file_values = load_config_file(args.config) if args.config else {}
        config = build_run_config(
            file_values,
            {"scenario": args.scenario, "model": args.model, "mode": args.mode, "seed": args.seed},
            args.param,
        )
        cmd_run(config, args.out, args.data, args.save_model)
    else:
        cmd_report(args.inputs, args.out)


def main(argv=None) -> int:
    """Разбор аргументов, запуск команды, код возврата."""
    verbose = "--verbose" in (sys.argv[1:] if argv is None else argv)
    setup_logging(verbose)
    try:
        args = build_parser().parse_args(argv)
        dispatch(args)
    except PhimlError as e:
        logger.error(f"❌ {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"❌ Неожиданная ошибка: {e}", exc_info=True)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())

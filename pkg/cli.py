#!/usr/bin/env python3
"""
サイドリンク測位シミュレータのコマンドライン

  python cli.py run --config presets/fig3-bandwidth-sweep.json --out results/bw
  python cli.py sweep --config exp.json --set sweep.values=[20e6,100e6]
  python cli.py psl-check --results results/bw/results.csv
  python cli.py protocol-trace --session NslMoLr --method Tdoa --anchors 3

終了コード: 0 成功 / 1 実行時エラー (出力は削除) / 2 使い方・設定の誤り
"""

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from pydantic import ValidationError

import config_loader
from errors import CapabilityError, ConfigurationError, SlposError, UsageError
from estimators import EstimatorMethod
from excel_report import write_summary_workbook
from harness import (
    check_experiment,
    evaluate_psl,
    read_results_csv,
    run,
    summarize,
    summary_to_dict,
    sweep,
    write_measurements_csv,
    write_results_csv,
    write_summary_json,
)
from log_utils import build_logger
from measurement import RttKind
from protocol import ProtocolDelays, SessionKind, run_session, trace_to_jsonl

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SUBCOMMANDS = ("run", "sweep", "psl-check", "protocol-trace")


@dataclass
class CliInvocation:
    subcommand: str
    config_path: Path | None
    output_dir: Path
    overrides: list[str] = field(default_factory=list)
    worker_count: int = 1
    seed: int | None = None
    experiment: config_loader.ExperimentFile | None = None
    results_path: Path | None = None
    psl_table: Path | None = None
    psl_levels: list[str] = field(default_factory=list)
    session_kind: SessionKind = SessionKind.USL
    method: EstimatorMethod = EstimatorMethod.TDOA
    rtt_kind: RttKind = RttKind.DOUBLE_SIDED
    n_anchors: int = 3
    excel: bool = False
    dump_measurements: bool = False
    progress: bool = True


# ===============================================
#  引数の解析と検証
# ===============================================
def build_parser(default_workers: int = 1) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slpos", description="サイドリンク測位モンテカルロシミュレータ")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, config_required: bool):
        p.add_argument("--config", type=Path, required=config_required, help="実験設定 (JSON / YAML)")
        p.add_argument("--out", type=Path, default=Path("results"), help="出力ディレクトリ")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="設定の上書き (ドット区切り、複数指定可)")
        p.add_argument("--workers", type=int, default=default_workers, help="試行を並列に回すワーカー数")
        p.add_argument("--seed", type=int, default=None, help="master_seed の上書き")

    for name in ("run", "sweep"):
        p = sub.add_parser(name)
        common(p, config_required=True)
        p.add_argument("--excel", action="store_true", help="summary.xlsx も書き出す")
        p.add_argument("--dump-measurements", action="store_true", help="measurements.csv も書き出す")
        p.add_argument("--no-progress", action="store_true", help="進捗バーを出さない")

    p = sub.add_parser("psl-check")
    common(p, config_required=False)
    p.add_argument("--results", type=Path, required=True, help="run / sweep が書いた results.csv")
    p.add_argument("--psl-table", type=Path, default=None, help="PSL 表 (YAML)")
    p.add_argument("--levels", nargs="*", default=[], help="判定する PSL 名 (省略時は全部)")

    p = sub.add_parser("protocol-trace")
    common(p, config_required=False)
    p.add_argument("--session", type=SessionKind, default=None, choices=list(SessionKind))
    p.add_argument("--method", type=EstimatorMethod, default=None, choices=list(EstimatorMethod))
    p.add_argument("--rtt-kind", type=RttKind, default=None, choices=list(RttKind))
    p.add_argument("--anchors", type=int, default=None)
    return parser


def parse_and_validate(argv: Sequence[str]) -> CliInvocation:
    """計算を始める前に設定をすべて検証する。誤りは UsageError / ConfigurationError"""
    env = config_loader.load_env()
    try:
        args = build_parser(env["workers"]).parse_args(list(argv))
    except SystemExit as e:
        raise UsageError(f"引数を解釈できません (argparse 終了コード {e.code})")
    if args.workers < 1:
        raise UsageError(f"--workers は 1 以上: {args.workers}")

    inv = CliInvocation(
        subcommand=args.subcommand,
        config_path=args.config,
        output_dir=args.out,
        overrides=list(args.overrides),
        worker_count=args.workers,
        seed=args.seed,
    )
    if args.config is not None:
        inv.experiment = config_loader.load_experiment(args.config, inv.overrides, inv.seed)
    elif inv.overrides:
        raise UsageError("--set には --config が必要です")

    if inv.subcommand in ("run", "sweep"):
        inv.excel = args.excel
        inv.dump_measurements = args.dump_measurements
        inv.progress = not args.no_progress
        exp = inv.experiment
        if inv.subcommand == "sweep" and exp.sweep is None:
            raise ConfigurationError("sweep: 設定に sweep セクションがありません")
        check_experiment(exp.experiment())
        config_loader.select_levels(config_loader.load_psl_table(exp.psl_table), exp.psl_levels)

    elif inv.subcommand == "psl-check":
        inv.results_path = args.results
        inv.psl_table = args.psl_table
        inv.psl_levels = list(args.levels)
        if not inv.results_path.exists():
            raise UsageError(f"結果ファイルがありません: {inv.results_path}")

    else:
        exp = inv.experiment
        inv.session_kind = args.session or (exp.session_kind if exp else SessionKind.USL)
        inv.method = args.method or (exp.method if exp else EstimatorMethod.TDOA)
        inv.rtt_kind = args.rtt_kind or (exp.rtt_kind if exp else RttKind.DOUBLE_SIDED)
        inv.n_anchors = args.anchors or (exp.scenario.n_anchors if exp else 3)
        if inv.n_anchors < 1:
            raise UsageError(f"--anchors は 1 以上: {inv.n_anchors}")
    return inv


# ===============================================
#  実行
# ===============================================
def _print_table(title: str, rows, thresholds):
    print("=" * 80)
    print(title)
    print("=" * 80)
    head = f"{'label':<40} {'p90[m]':>9}" + "".join(f" {'P<=' + format(t, 'g'):>8}" for t in thresholds)
    print(head)
    print("-" * len(head))
    for label, s in rows:
        line = f"{label:<40} {s.horizontal.percentile(0.9):>9.3f}"
        line += "".join(f" {s.horizontal.availability(t):>8.3f}" for t in thresholds)
        print(line)


def _print_psl(reports_by_label):
    for label, reports in reports_by_label.items():
        for r in reports:
            mark = "✅ PASS" if r.passed else "❌ FAIL"
            flag = " (placeholder)" if r.placeholder else ""
            margins = ", ".join(f"{c.name} {c.margin:+.3f}" if c.evaluated else f"{c.name} 未評価" for c in r.clauses)
            note = f"  ※ {r.note}" if r.note else ""
            print(f"[{label or '-'}] {r.name}{flag}: {mark}  ({margins}){note}")


def _execute_experiment(inv: CliInvocation, created: list[Path]) -> int:
    exp = inv.experiment
    base = exp.experiment()
    out = inv.output_dir
    if inv.dump_measurements and not base.record_measurements:
        base = base.model_copy(update={"record_measurements": True})

    if exp.sweep is not None:
        rows = sweep(base, exp.sweep.axis, exp.sweep.values, workers=inv.worker_count, progress=inv.progress,
                     series_axis=exp.sweep.series_axis, series_values=exp.sweep.series_values)
        groups = [(r.label, r.records) for r in rows]
        summaries = [(r.label, r.summary) for r in rows]
        entries = [{"label": r.label, "axis": r.axis, "value": r.value,
                    "series_axis": r.series_axis or None, "series_value": r.series_value} for r in rows]
    else:
        records = run(base, workers=inv.worker_count, progress=inv.progress)
        label = exp.name or base.method.value
        groups = [(label, records)]
        summaries = [(label, summarize(records))]
        entries = [{"label": label}]

    levels = config_loader.select_levels(config_loader.load_psl_table(exp.psl_table), exp.psl_levels)
    reports = {label: [evaluate_psl(s, p) for p in levels] for label, s in summaries}

    results_csv = out / "results.csv"
    created.append(results_csv)
    write_results_csv(results_csv, groups)

    doc = {
        "name": exp.name,
        "method": base.method.value,
        "n_trials": base.n_trials,
        "master_seed": base.master_seed,
        "configs": [
            {**entry, **summary_to_dict(s, exp.thresholds_m, reports[label])}
            for entry, (label, s) in zip(entries, summaries)
        ],
    }
    summary_json = out / "summary.json"
    created.append(summary_json)
    write_summary_json(summary_json, doc)

    if base.record_measurements:
        m_csv = out / "measurements.csv"
        created.append(m_csv)
        write_measurements_csv(m_csv, groups)
    if inv.excel:
        xlsx = out / "summary.xlsx"
        created.append(xlsx)
        write_summary_workbook(xlsx, exp.name or base.method.value, summaries, exp.thresholds_m, reports)

    _print_table(f"📊 {exp.name or base.method.value} ({base.n_trials} 試行)", summaries, exp.thresholds_m)
    _print_psl(reports)
    return EXIT_OK


def _execute_psl_check(inv: CliInvocation) -> int:
    summaries = read_results_csv(inv.results_path)
    levels = config_loader.select_levels(config_loader.load_psl_table(inv.psl_table), inv.psl_levels)
    reports = {label: [evaluate_psl(s, p) for p in levels] for label, s in summaries.items()}
    _print_psl(reports)
    return EXIT_OK


def _execute_protocol_trace(inv: CliInvocation, created: list[Path]) -> int:
    delays = inv.experiment.protocol_delays if inv.experiment else ProtocolDelays()
    session = run_session(inv.session_kind, inv.method, inv.rtt_kind, inv.n_anchors, delays)
    text = trace_to_jsonl(session)
    path = inv.output_dir / "trace.jsonl"
    created.append(path)
    path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def execute(inv: CliInvocation) -> int:
    """失敗したら書きかけの出力を消して 1 を返す"""
    logger = build_logger(inv.output_dir if inv.subcommand != "psl-check" else None)
    created: list[Path] = []
    try:
        if inv.subcommand in ("run", "sweep"):
            inv.output_dir.mkdir(parents=True, exist_ok=True)
            return _execute_experiment(inv, created)
        if inv.subcommand == "psl-check":
            return _execute_psl_check(inv)
        inv.output_dir.mkdir(parents=True, exist_ok=True)
        return _execute_protocol_trace(inv, created)
    except (UsageError, ConfigurationError, CapabilityError) as e:
        logger.error(f"❌ 設定エラー: {e}")
        _cleanup(created)
        return EXIT_USAGE
    except (SlposError, OSError) as e:
        logger.error(f"❌ 実行エラー: {e}")
        _cleanup(created)
        return EXIT_RUNTIME


def _cleanup(paths: list[Path]):
    for p in paths:
        try:
            p.unlink(missing_ok=True)
        except OSError:
            pass


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        inv = parse_and_validate(argv)
    except (UsageError, ConfigurationError, CapabilityError, ValidationError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except SlposError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return execute(inv)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n⚠️ ユーザーによって中断されました")
        sys.exit(EXIT_RUNTIME)

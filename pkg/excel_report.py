"""
スイープ結果のサマリを Excel ファイルに出力
1 行 = 1 設定 (ラベル)。PSL 判定はシートを分けて並べる
"""
from pathlib import Path
from typing import Sequence

from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter

from harness import PERCENTILES, ExperimentSummary, PslReport

HEADER_FILL = PatternFill(start_color="DDDDDD", end_color="DDDDDD", fill_type="solid")
FAIL_FILL = PatternFill(start_color="F4CCCC", end_color="F4CCCC", fill_type="solid")
PASS_FILL = PatternFill(start_color="D9EAD3", end_color="D9EAD3", fill_type="solid")


def _header(ws, row: int, headers: list[str]):
    for col, header in enumerate(headers, 1):
        cell = ws.cell(row=row, column=col)
        cell.value = header
        cell.font = Font(bold=True)
        cell.fill = HEADER_FILL
        cell.alignment = Alignment(horizontal="center", vertical="center")


def write_summary_workbook(
    path: Path,
    title: str,
    rows: Sequence[tuple[str, ExperimentSummary]],
    thresholds_m: Sequence[float],
    psl_reports: dict[str, Sequence[PslReport]] | None = None,
) -> Path:
    wb = Workbook()
    ws = wb.active
    ws.title = "summary"

    headers = ["label", "n"] + [f"p{int(round(p * 100))} [m]" for p in PERCENTILES] \
        + [f"P(<={t:g} m)" for t in thresholds_m] + ["converged"]
    ws.merge_cells(start_row=1, start_column=1, end_row=1, end_column=len(headers))
    title_cell = ws.cell(row=1, column=1, value=title)
    title_cell.font = Font(size=14, bold=True)
    title_cell.alignment = Alignment(horizontal="center", vertical="center")
    ws.row_dimensions[1].height = 30
    _header(ws, 2, headers)

    for r, (label, s) in enumerate(rows, start=3):
        h = s.horizontal
        values = [label, h.n] + [h.percentile(p) for p in PERCENTILES] \
            + [h.availability(t) for t in thresholds_m] + [s.converged_fraction]
        for col, v in enumerate(values, 1):
            cell = ws.cell(row=r, column=col, value=v)
            if isinstance(v, float):
                cell.number_format = "0.000"

    for col in range(1, len(headers) + 1):
        ws.column_dimensions[get_column_letter(col)].width = 28 if col == 1 else 12

    if psl_reports:
        ws_psl = wb.create_sheet(title="psl")
        _header(ws_psl, 1, ["label", "PSL", "判定", "条項", "要求", "実績", "余裕", "備考"])
        r = 2
        for label, reports in psl_reports.items():
            for rep in reports:
                for clause in rep.clauses:
                    achieved = clause.achieved if clause.evaluated else "未評価"
                    margin = clause.margin if clause.evaluated else None
                    values = [label, rep.name, "PASS" if rep.passed else "FAIL", clause.name,
                              clause.required, achieved, margin,
                              ("placeholder " if rep.placeholder else "") + rep.note]
                    for col, v in enumerate(values, 1):
                        ws_psl.cell(row=r, column=col, value=v)
                    ws_psl.cell(row=r, column=3).fill = PASS_FILL if rep.passed else FAIL_FILL
                    r += 1
        for col in range(1, 9):
            ws_psl.column_dimensions[get_column_letter(col)].width = 20

    path = Path(path)
    wb.save(path)
    return path

"""Report files: canonical JSON, a CSV summary and per-unit training histories."""

from __future__ import annotations

import csv
from pathlib import Path

from .. import canonical
from .metrics import METRICS, MetricsReport


def write_history(history, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss"])
        for epoch, loss in history:
            w.writerow([epoch, format(loss, ".17g")])


def summary_rows(reports: list[MetricsReport]) -> list[list]:
    rows = []
    for r in reports:
        for m in METRICS:
            v = r.values(m)
            rows.append([r.name, m, r.mean(m) if v.size else None, r.std(m) if v.size else None])
    return rows


def _cell(x) -> str:
    return "" if x is None else format(x, ".17g")


def write_summary_csv(reports: list[MetricsReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "metric", "mean", "std"])
        for name, metric, mean, std in summary_rows(reports):
            w.writerow([name, metric, _cell(mean), _cell(std)])


def write_report(report: MetricsReport, out_dir: str | Path, stem: str = "report") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}.json"
    path.write_text(canonical.dumps(report.to_dict(), indent=1) + "\n")
    write_summary_csv([report], out / f"{stem}_summary.csv")
    return path


def load_report(path: str | Path) -> MetricsReport:
    d = canonical.loads(Path(path).read_text())
    extra = {k: v for k, v in d.items() if k not in ("name", "unit", "entries", "summary")}
    return MetricsReport(d["name"], d["unit"], d["entries"], extra)


def render(reports: list[MetricsReport], fmt: str = "md") -> str:
    """Wide table, one row per report: mean±std for each metric."""
    if fmt == "json":
        return canonical.dumps({r.name: r.summary() for r in reports}, indent=1)
    header = ["experiment"] + [m for m in METRICS]
    rows = []
    for r in reports:
        cells = [r.name]
        for m in METRICS:
            v = r.values(m)
            cells.append(f"{v.mean():.2f}±{v.std():.2f}" if v.size else "n/a")
        rows.append(cells)
    if fmt == "csv":
        lines = [",".join(header)]
        for r in reports:
            cells = [r.name]
            for m in METRICS:
                v = r.values(m)
                cells += [_cell(r.mean(m) if v.size else None)]
            lines.append(",".join(cells))
        return "\n".join(lines)
    if fmt != "md":
        raise ValueError(f"unknown format {fmt!r}")
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(c) + " |" for c in rows]
    return "\n".join(out)

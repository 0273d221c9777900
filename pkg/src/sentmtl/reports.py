"""Report bundles derived from serialized runs and grid-search trials.

Every table is reproducible from ``predictions.jsonl`` plus the stored
config; outputs are CSV and JSON with fixed field order and formatting so
repeated analysis of the same run is byte-identical. Heatmap and scatter
exports are small hand-built SVGs (no plotting dependency, no embedded
timestamps).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .corpus import TaskSpec
from .evaluation import (
    cross_head_correlation,
    prediction_distribution_kl,
    regress_alpha_to_f1,
)
from .gridsearch import GridResult, load_grid_result
from .trainer import RunRecord, load_run_record, metrics_from_dump
from .validation import ValidationError


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return f"{x:.6f}"


def _write_json(payload, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def _task_specs(record: RunRecord) -> dict[str, TaskSpec]:
    return {
        entry["name"]: TaskSpec(
            name=entry["name"],
            kind=entry["kind"],
            vocabulary=tuple(entry["vocabulary"]),
            loss=entry.get("loss", {"kind": "ce"}),
            alpha_default=entry.get("alpha_default", 1.0),
        )
        for entry in record.config["tasks"]
    }


# ---------------------------------------------------------------------------
# SVG helpers


def svg_heatmap(values: np.ndarray, row_labels: list[str], col_labels: list[str],
                path: Path, cell: int = 26, label_width: int = 130) -> None:
    """Green-strength cell grid; NaN cells stay white."""
    rows, cols = values.shape
    width = label_width + cols * cell + 10
    height = 30 + rows * cell + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        '<style>text{font-family:monospace;font-size:10px}</style>',
    ]
    for j, label in enumerate(col_labels):
        x = label_width + j * cell + 3
        parts.append(f'<text x="{x}" y="20">{label[:4]}</text>')
    finite = values[np.isfinite(values)]
    top = float(np.max(np.abs(finite))) if finite.size else 1.0
    top = top or 1.0
    for i, label in enumerate(row_labels):
        y = 30 + i * cell
        parts.append(f'<text x="2" y="{y + cell - 8}">{label[:16]}</text>')
        for j in range(cols):
            v = values[i, j]
            if not np.isfinite(v):
                fill = "rgb(255,255,255)"
            else:
                strength = int(round(200 * min(1.0, abs(v) / top)))
                fill = (
                    f"rgb({55 + (200 - strength)},255,{55 + (200 - strength)})"
                    if v >= 0
                    else f"rgb(255,{55 + (200 - strength)},{55 + (200 - strength)})"
                )
            x = label_width + j * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell - 2}" height="{cell - 2}" '
                f'fill="{fill}" stroke="rgb(120,120,120)"/>'
            )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


def svg_scatter(labels: list[str], series: dict[str, list[float]], path: Path,
                width: int = 480, height: int = 260) -> None:
    """Per-class scores as one polyline-with-markers per series."""
    margin = 40
    n = max(len(labels), 1)
    step = (width - 2 * margin) / max(n - 1, 1)
    palette = ["rgb(31,119,180)", "rgb(255,127,14)", "rgb(44,160,44)", "rgb(214,39,40)"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        '<style>text{font-family:monospace;font-size:10px}</style>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        'stroke="black"/>',
    ]
    for i, label in enumerate(labels):
        x = margin + i * step
        parts.append(f'<text x="{x - 6}" y="{height - margin + 14}">{label[:6]}</text>')
    for s, (name, values) in enumerate(sorted(series.items())):
        color = palette[s % len(palette)]
        points = []
        for i, v in enumerate(values):
            x = margin + i * step
            y = height - margin - v * (height - 2 * margin)
            points.append((x, y))
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{color}"/>')
        poly = " ".join(f"{x:.1f},{y:.1f}" for x, y in points)
        parts.append(f'<polyline points="{poly}" fill="none" stroke="{color}"/>')
        parts.append(
            f'<text x="{width - margin - 100}" y="{margin + 12 * s}" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Single-run analysis


def analyze_run(run_dir: str | Path, out_dir: str | Path,
                correlation_display_threshold: float = 0.1,
                probabilistic_correlations: bool = False) -> dict:
    """Full report bundle for one run directory; returns the summary dict."""
    record = load_run_record(run_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = _task_specs(record)
    primary = record.primary_task()

    recomputed = metrics_from_dump(record.predictions, specs)
    summary: dict = {"run": str(run_dir), "primary_task": primary, "tasks": sorted(specs)}

    # metric + confusion tables
    for task in sorted(recomputed):
        report = recomputed[task]
        with open(out / f"metrics_{task}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["label", "precision", "recall", "f1", "support"])
            for i, label in enumerate(report.labels):
                writer.writerow(
                    [label, _fmt(report.precision[i]), _fmt(report.recall[i]),
                     _fmt(report.f1[i]), report.support[i]]
                )
            writer.writerow(["macro_f1", "", "", _fmt(report.macro_f1), ""])
            writer.writerow(["micro_f1", "", "", _fmt(report.micro_f1), ""])
        if report.confusion is not None:
            with open(out / f"confusion_{task}.csv", "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["gold\\predicted", *report.labels])
                for label, row in zip(report.labels, report.confusion):
                    writer.writerow([label, *row])
    summary["metrics"] = {t: recomputed[t].to_dict() for t in sorted(recomputed)}

    # cross-head correlations
    heads = sorted(specs)
    if len(heads) < 2:
        summary["correlations"] = "not-applicable (single head)"
    else:
        correlation_files = []
        for aux in heads:
            if aux == primary:
                continue
            tags_a = list(specs[primary].vocabulary)
            tags_b = list(specs[aux].vocabulary)
            kwargs = {}
            if probabilistic_correlations:
                kwargs = {
                    "probabilistic": True,
                    "vocab_a": {t: i for i, t in enumerate(tags_a)},
                    "vocab_b": {t: i for i, t in enumerate(tags_b)},
                }
            rho = cross_head_correlation(
                record.predictions, primary, aux, tags_a, tags_b, **kwargs
            )
            name = f"correlations_{primary}__{aux}"
            with open(out / f"{name}.csv", "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow([f"{primary}\\{aux}", *tags_b])
                for i, tag in enumerate(tags_a):
                    row = [tag]
                    for j in range(len(tags_b)):
                        v = rho[i, j]
                        masked = (not np.isfinite(v)) or abs(v) < correlation_display_threshold
                        row.append("" if masked else _fmt(v))
                    writer.writerow(row)
            _write_json(
                {
                    "rows": tags_a,
                    "columns": tags_b,
                    "rho": [[None if not np.isfinite(v) else v for v in row] for row in rho],
                },
                out / f"{name}.json",
            )
            svg_heatmap(rho, tags_a, tags_b, out / f"{name}.svg")
            correlation_files.append(name)
        summary["correlations"] = correlation_files

    # prediction-distribution KL per multiclass head with gold coverage
    kl_rows = []
    for task in sorted(specs):
        spec = specs[task]
        if spec.kind != "multiclass":
            continue
        gold_counts = np.zeros(spec.k)
        pred_counts = np.zeros(spec.k)
        for row in record.predictions:
            entry = row["heads"].get(task)
            if entry is None or entry["gold"] is None:
                continue
            gold_counts[spec.label_id(entry["gold"])] += 1
            pred_counts[spec.label_id(entry["predicted"])] += 1
        if gold_counts.sum() == 0:
            continue
        kl = prediction_distribution_kl(pred_counts, gold_counts)
        kl_rows.append({"task": task, "kl_pred_vs_gold": kl})
    with open(out / "kl.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["task", "kl_pred_vs_gold"])
        for row in kl_rows:
            writer.writerow([row["task"], _fmt(row["kl_pred_vs_gold"])])
    summary["kl"] = kl_rows

    # per-class F1 scatter for the primary head
    if primary in recomputed:
        report = recomputed[primary]
        svg_scatter(
            list(report.labels), {"f1": list(report.f1)}, out / "scatter_class_f1.svg"
        )

    _write_json(summary, out / "report.json")
    return summary


# ---------------------------------------------------------------------------
# Trials analysis


def analyze_trials(trials_dir: str | Path, out_dir: str | Path) -> dict:
    """Report bundle for a grid-search trials directory."""
    result = load_grid_result(trials_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = result.task_order or sorted({t for trial in result.trials for t in trial.alpha})

    with open(out / "trials.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*(f"alpha_{t}" for t in tasks), "macro_f1", "micro_f1", "failed"])
        for trial in result.trials:
            writer.writerow(
                [
                    *(_fmt(trial.alpha.get(t, 0.0)) for t in tasks),
                    _fmt(trial.macro_f1),
                    _fmt(trial.micro_f1),
                    int(trial.failed),
                ]
            )

    best_payload = {
        "by_macro": result.best_by_macro.to_dict() if result.best_by_macro else None,
        "by_micro": result.best_by_micro.to_dict() if result.best_by_micro else None,
    }
    _write_json(best_payload, out / "best_alpha.json")

    with open(out / "per_tag_best_alpha.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tag", *(f"alpha_{t}" for t in tasks), "f1"])
        for tag in sorted(result.per_tag_best):
            entry = result.per_tag_best[tag]
            writer.writerow(
                [tag, *(_fmt(entry["alpha"].get(t, 0.0)) for t in tasks), _fmt(entry["f1"])]
            )

    regression: dict = {}
    for target in ("macro", "micro"):
        try:
            betas, intercept = regress_alpha_to_f1(result.trials, target=target)
            regression[target] = {"beta": betas, "intercept": intercept}
        except ValidationError as exc:
            regression[target] = {"not_applicable": str(exc)}
    _write_json(regression, out / "alpha_regression.json")
    with open(out / "alpha_regression.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target", *(f"beta_{t}" for t in tasks), "intercept", "note"])
        for target in ("macro", "micro"):
            entry = regression[target]
            if "not_applicable" in entry:
                writer.writerow([target, *("" for _ in tasks), "", entry["not_applicable"]])
            else:
                writer.writerow(
                    [
                        target,
                        *(_fmt(entry["beta"].get(t)) for t in tasks),
                        _fmt(entry["intercept"]),
                        "",
                    ]
                )

    usable = [t for t in result.trials if not t.failed]
    if usable:
        values = np.array([[t.alpha.get(task, 0.0) for task in tasks] for t in usable])
        row_labels = [f"trial {i} (mic {_fmt(t.micro_f1)})" for i, t in enumerate(usable)]
        svg_heatmap(values, row_labels, tasks, out / "heatmap_alpha.svg")

    summary = {
        "trials": len(result.trials),
        "failed": sum(1 for t in result.trials if t.failed),
        "best": best_payload,
        "regression": regression,
        "per_tag_best": result.per_tag_best,
    }
    _write_json(summary, out / "report.json")
    return summary

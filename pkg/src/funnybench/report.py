"""Machine-readable evaluation reports, radar charts, comparison tables.

The canonical report body excludes wall-clock timing, so two runs with the
same configuration and seed produce byte-identical canonical bodies (tested).
The radar chart is standalone SVG 1.1 built by direct path construction.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from . import __version__
from .protocols import ProtocolScores
from .util import canonical_json_bytes, sha256_hex

REPORT_SCHEMA_VERSION = "1.0"

RADAR_AXES = ["A", "BI", "CSDC", "PC", "DC", "D", "SD", "TS"]
_SERIES_COLORS = ["#2867b2", "#c23b22", "#2e8540", "#8e5ba6", "#b8860b", "#008080"]


def build_report(
    run_config: dict,
    scores: ProtocolScores,
    records: list[dict],
    dataset_hash: str,
    timing: dict | None = None,
) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "run_config": run_config,
        "dataset_hash": dataset_hash,
        "scores": scores.as_dict(),
        "per_sample": records,
        "timing": timing or {},
    }


def canonical_body_bytes(report: dict) -> bytes:
    body = {k: v for k, v in report.items() if k != "timing"}
    return canonical_json_bytes(body)


def write_report(path: str | Path, report: dict) -> None:
    payload = dict(report)
    payload["canonical_sha256"] = sha256_hex(canonical_body_bytes(report))
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=1, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def load_report(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)
    version = str(report.get("schema_version", ""))
    if version.split(".")[0] != REPORT_SCHEMA_VERSION.split(".")[0]:
        raise ValueError(f"unsupported report schema version {version!r}")
    return report


def dataset_hash(dataset_root: str | Path) -> str:
    manifest = Path(dataset_root) / "manifest.json"
    return sha256_hex(manifest.read_bytes())


# --- Radar chart ---------------------------------------------------------------


def radar_svg(series: list[tuple[str, dict]], size: int = 480) -> str:
    """Radar chart over the eight protocol axes; one polygon per series.

    `series` holds (label, scores-dict) pairs where the dict carries the
    RADAR_AXES keys plus "mX" (printed at the center).
    """
    cx = cy = size / 2.0
    radius = size * 0.36
    n = len(RADAR_AXES)

    def point(axis_idx: int, value: float) -> tuple[float, float]:
        angle = -math.pi / 2 + 2 * math.pi * axis_idx / n
        return (cx + radius * value * math.cos(angle), cy + radius * value * math.sin(angle))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for ring in (0.25, 0.5, 0.75, 1.0):
        ring_pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (point(i, ring) for i in range(n)))
        parts.append(
            f'<polygon points="{ring_pts}" fill="none" stroke="#cccccc" stroke-width="1"/>'
        )
    for i, axis in enumerate(RADAR_AXES):
        x, y = point(i, 1.0)
        lx, ly = point(i, 1.13)
        parts.append(
            f'<line x1="{cx}" y1="{cy}" x2="{x:.2f}" y2="{y:.2f}" stroke="#bbbbbb" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{lx:.2f}" y="{ly:.2f}" font-family="sans-serif" font-size="{size * 0.033:.1f}" '
            f'text-anchor="middle" dominant-baseline="middle">{axis}</text>'
        )
    for k, (label, scores) in enumerate(series):
        color = _SERIES_COLORS[k % len(_SERIES_COLORS)]
        pts = " ".join(
            f"{x:.2f},{y:.2f}"
            for x, y in (point(i, max(0.0, min(1.0, float(scores[a])))) for i, a in enumerate(RADAR_AXES))
        )
        parts.append(
            f'<polygon points="{pts}" fill="{color}" fill-opacity="0.18" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{size * 0.03:.1f}" y="{size * 0.05 + k * size * 0.045:.1f}" '
            f'font-family="sans-serif" font-size="{size * 0.033:.1f}" fill="{color}">{label}</text>'
        )
        parts.append(
            f'<text x="{cx:.1f}" y="{cy + (k - (len(series) - 1) / 2) * size * 0.045:.1f}" '
            f'font-family="sans-serif" font-size="{size * 0.038:.1f}" font-weight="bold" '
            f'fill="{color}" text-anchor="middle" dominant-baseline="middle">'
            f'{float(scores["mX"]):.2f}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def radar_from_reports(reports: list[dict]) -> str:
    series = []
    for report in reports:
        cfg = report.get("run_config", {})
        label = str(cfg.get("method", cfg.get("label", "run")))
        series.append((label, report["scores"]))
    return radar_svg(series)


# --- Comparison table ------------------------------------------------------------


COMPARE_METRICS = ["A", "BI", "CSDC", "PC", "DC", "D", "SD", "TS", "Com", "Cor", "Con", "mX"]


def compare_table(reports: list[dict]) -> str:
    """Side-by-side metric table; non-first columns show deltas vs the first."""
    labels = []
    for i, report in enumerate(reports):
        cfg = report.get("run_config", {})
        labels.append(str(cfg.get("method", f"run{i}")))
    width = max(12, max(len(s) for s in labels) + 8)
    header = "metric".ljust(8) + "".join(lbl.rjust(width) for lbl in labels)
    lines = [header, "-" * len(header)]
    base = reports[0]["scores"]
    for metric in COMPARE_METRICS:
        row = metric.ljust(8)
        for i, report in enumerate(reports):
            value = float(report["scores"][metric])
            cell = f"{value:.4f}"
            if i > 0:
                delta = value - float(base[metric])
                cell += f" ({delta:+.4f})"
            row += cell.rjust(width)
        lines.append(row)
    return "\n".join(lines)


def hashes_match(reports: list[dict]) -> bool:
    hashes = {report.get("dataset_hash") for report in reports}
    return len(hashes) == 1

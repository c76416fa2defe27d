"""Result serialization: curve/AUC CSV files, run summaries, and SVG plots.

The SVG is written by hand (no plotting dependency) so output is diff-able
and parseable as plain XML in tests.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from xml.sax.saxutils import escape

from .metrics import TradeoffCurve, TradeoffPoint, curve_auc

CURVE_COLUMNS = (
    "method",
    "param_label",
    "variant",
    "raw_accuracy",
    "balanced_accuracy",
    "privacy",
    "raw_utility",
    "utility",
)

_PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Curve CSV


def curves_to_csv(curves) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for curve in curves:
        for p in curve.points:
            writer.writerow(
                [
                    curve.method,
                    p.label,
                    p.variant,
                    repr(p.raw_accuracy),
                    repr(p.balanced_accuracy),
                    repr(p.privacy),
                    repr(p.raw_utility),
                    repr(p.utility),
                ]
            )
    return buf.getvalue()


def curves_from_csv(text: str) -> list[TradeoffCurve]:
    """Rebuild plottable curves from the CSV; chance level is not stored there."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CURVE_COLUMNS:
        raise ValueError("not a trade-off curve CSV")
    grouped: dict[tuple[str, str], list[TradeoffPoint]] = {}
    for row in rows[1:]:
        if not row:
            continue
        method, label, variant = row[0], row[1], row[2]
        point = TradeoffPoint(
            label=label,
            privacy=float(row[5]),
            utility=float(row[7]),
            raw_accuracy=float(row[3]),
            balanced_accuracy=float(row[4]),
            raw_utility=float(row[6]),
            variant=variant,
        )
        grouped.setdefault((method, variant), []).append(point)
    curves = []
    for (method, _variant), points in sorted(grouped.items()):
        ordered = tuple(sorted(points, key=lambda p: (p.privacy, p.label)))
        curves.append(
            TradeoffCurve(
                method=method,
                points=ordered,
                auc=curve_auc(ordered),
                chance_level=0.0,
                clear_utility=1.0,
            )
        )
    return curves


def auc_to_csv(curves_by_variant: dict[str, list[TradeoffCurve]], worst_case: dict[str, float]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "variant", "auc"])
    for variant in sorted(curves_by_variant):
        for curve in sorted(curves_by_variant[variant], key=lambda c: c.method):
            writer.writerow([curve.method, variant, repr(curve.auc)])
    for method in sorted(worst_case):
        writer.writerow([method, "worst_case", repr(worst_case[method])])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Single-run outputs


def result_json(result) -> str:
    return json.dumps(result.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def result_csv(result) -> str:
    """Per-probe rows for every variant and classifier, then summary rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "variant",
            "row",
            "identity",
            "instance",
            "predicted",
            "correct",
            "classifier",
            "accuracy",
            "balanced_accuracy",
            "privacy",
            "utility",
        ]
    )
    for variant in sorted(result.variants):
        outcome = result.variants[variant]
        for report in outcome.reports:
            for identity, instance, predicted, correct in report.predictions:
                writer.writerow(
                    [
                        variant,
                        "probe",
                        identity,
                        instance,
                        predicted,
                        int(correct),
                        report.classifier,
                        "",
                        "",
                        "",
                        "",
                    ]
                )
        for report in outcome.reports:
            writer.writerow(
                [
                    variant,
                    "classifier",
                    "",
                    "",
                    "",
                    "",
                    report.classifier,
                    repr(report.accuracy),
                    repr(report.balanced_accuracy),
                    "",
                    "",
                ]
            )
        writer.writerow(
            [
                variant,
                "best",
                "",
                "",
                "",
                "",
                outcome.best.classifier,
                repr(outcome.best.accuracy),
                repr(outcome.best.balanced_accuracy),
                repr(outcome.point.privacy),
                repr(outcome.point.utility),
            ]
        )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# SVG plot

_WIDTH, _HEIGHT = 720, 480
_X0, _X1 = 70, 470  # privacy axis in plot pixels
_Y0, _Y1 = 420, 40  # utility axis (SVG y grows downward)


def _px(privacy: float) -> float:
    return _X0 + privacy * (_X1 - _X0)


def _py(utility: float) -> float:
    return _Y0 + utility * (_Y1 - _Y0)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def tradeoff_svg(curves_by_variant: dict[str, list[TradeoffCurve]]) -> str:
    """Privacy on x, utility on y, one series per (method, variant).

    Dotted guides mark chance-level recognition (privacy 1.0) and clear-data
    utility; every trade-off point gets a circle marker with class "pt".
    """
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        "<title>privacy-utility trade-off</title>",
        f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
    ]
    # axes
    parts.append(
        f'<line x1="{_X0}" y1="{_Y0}" x2="{_X1}" y2="{_Y0}" stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{_X0}" y1="{_Y0}" x2="{_X0}" y2="{_Y1}" stroke="black" stroke-width="1"/>'
    )
    for i in range(5):
        t = i / 4.0
        x, y = _px(t), _py(t)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{_Y0}" x2="{_fmt(x)}" y2="{_Y0 + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{_Y0 + 20}" font-size="11" text-anchor="middle">{t:g}</text>'
        )
        parts.append(
            f'<line x1="{_X0 - 5}" y1="{_fmt(y)}" x2="{_X0}" y2="{_fmt(y)}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_X0 - 9}" y="{_fmt(y + 4)}" font-size="11" text-anchor="end">{t:g}</text>'
        )
    parts.append(
        f'<text x="{_fmt((_X0 + _X1) / 2)}" y="{_Y0 + 40}" font-size="13" '
        'text-anchor="middle">privacy</text>'
    )
    parts.append(
        f'<text x="18" y="{_fmt((_Y0 + _Y1) / 2)}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 18 {_fmt((_Y0 + _Y1) / 2)})">utility</text>'
    )

    clear_utility = 1.0
    for curves in curves_by_variant.values():
        for curve in curves:
            clear_utility = curve.clear_utility
    # dotted guides: chance-level recognition sits at privacy 1.0
    parts.append(
        f'<line class="guide guide-chance" x1="{_fmt(_px(1.0))}" y1="{_Y0}" '
        f'x2="{_fmt(_px(1.0))}" y2="{_Y1}" stroke="#555555" stroke-dasharray="2 4"/>'
    )
    parts.append(
        f'<line class="guide guide-clear" x1="{_X0}" y1="{_fmt(_py(clear_utility))}" '
        f'x2="{_X1}" y2="{_fmt(_py(clear_utility))}" stroke="#555555" stroke-dasharray="2 4"/>'
    )

    series = []
    for variant in sorted(curves_by_variant):
        for curve in sorted(curves_by_variant[variant], key=lambda c: c.method):
            series.append((curve.method, variant, curve))
    legend_y = _Y1 + 10
    for idx, (method, variant, curve) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        dash = "" if variant == "without_deanon" else ' stroke-dasharray="7 3"'
        pts = " ".join(f"{_fmt(_px(p.privacy))},{_fmt(_py(p.utility))}" for p in curve.points)
        if len(curve.points) > 1:
            parts.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>'
            )
        for p in curve.points:
            title = escape(f"{p.label} [{variant}] privacy={p.privacy:.4f} utility={p.utility:.4f}")
            parts.append(
                f'<circle class="pt" cx="{_fmt(_px(p.privacy))}" cy="{_fmt(_py(p.utility))}" '
                f'r="3.5" fill="{color}"><title>{title}</title></circle>'
            )
        label = escape(f"{method} ({variant}, AUC={curve.auc:.3f})")
        parts.append(
            f'<line x1="{_X1 + 20}" y1="{legend_y}" x2="{_X1 + 44}" y2="{legend_y}" '
            f'stroke="{color}" stroke-width="1.5"{dash}/>'
        )
        parts.append(
            f'<text x="{_X1 + 50}" y="{legend_y + 4}" font-size="11">{label}</text>'
        )
        legend_y += 18
    parts.append(
        f'<text x="{_X1 + 20}" y="{legend_y + 4}" font-size="10" fill="#555555">dotted: '
        "chance privacy / clear utility</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

import json
import os
import xml.etree.ElementTree as ET

import pytest

from anonbench.metrics import TradeoffCurve, TradeoffPoint, curve_auc
from anonbench.pipeline import RunResult, VariantOutcome
from anonbench.recognize import RecognitionReport
from anonbench.report import (
    CURVE_COLUMNS,
    atomic_write_text,
    auc_to_csv,
    curves_from_csv,
    curves_to_csv,
    result_csv,
    result_json,
    tradeoff_svg,
)

SVG_NS = {"svg": "http://www.w3.org/2000/svg"}


def make_point(label, privacy, utility, variant="without_deanon"):
    return TradeoffPoint(
        label=label,
        privacy=privacy,
        utility=utility,
        raw_accuracy=1.0 - privacy / 2.0,
        balanced_accuracy=1.0 - privacy / 2.0,
        raw_utility=utility,
        variant=variant,
    )


def make_curve(method, points):
    return TradeoffCurve(
        method=method,
        points=tuple(sorted(points, key=lambda p: (p.privacy, p.label))),
        auc=curve_auc(points),
        chance_level=0.25,
        clear_utility=1.0,
    )


def sample_curves():
    without = [
        make_curve(
            "gaussian_blur",
            [
                make_point("gaussian_blur:kernel=3", 0.2, 0.9),
                make_point("gaussian_blur:kernel=9", 0.6, 0.5),
            ],
        ),
        make_curve("eye_mask", [make_point("eye_mask:band_px=8", 0.4, 0.7)]),
    ]
    with_ = [
        make_curve(
            "gaussian_blur",
            [
                make_point("gaussian_blur:kernel=3", 0.1, 0.9, "with_deanon"),
                make_point("gaussian_blur:kernel=9", 0.5, 0.5, "with_deanon"),
            ],
        )
    ]
    return {"without_deanon": without, "with_deanon": with_}


class TestAtomicWrite:
    def test_writes_and_overwrites(self, tmp_path):
        target = tmp_path / "deep" / "file.txt"
        atomic_write_text(target, "one")
        assert target.read_text() == "one"
        atomic_write_text(target, "two")
        assert target.read_text() == "two"

    def test_no_temp_leftovers(self, tmp_path):
        target = tmp_path / "file.txt"
        atomic_write_text(target, "data")
        assert os.listdir(tmp_path) == ["file.txt"]


class TestCurveCsv:
    def test_roundtrip(self):
        curves = sample_curves()["without_deanon"]
        text = curves_to_csv(curves)
        lines = text.strip().split("\n")
        assert lines[0] == ",".join(CURVE_COLUMNS)
        assert len(lines) == 1 + 3  # three points across the two curves
        back = curves_from_csv(text)
        assert [c.method for c in back] == ["eye_mask", "gaussian_blur"]
        by_method = {c.method: c for c in back}
        for original in curves:
            restored = by_method[original.method]
            assert restored.points == original.points
            assert restored.auc == original.auc

    def test_floats_roundtrip_bit_exact(self):
        point = make_point("gaussian_blur:kernel=3", 1.0 / 3.0, 2.0 / 3.0)
        text = curves_to_csv([make_curve("gaussian_blur", [point])])
        back = curves_from_csv(text)
        assert back[0].points[0].privacy == 1.0 / 3.0
        assert back[0].points[0].utility == 2.0 / 3.0

    def test_mixed_variants_stay_separate_curves(self):
        curves = sample_curves()
        text = curves_to_csv(curves["without_deanon"] + curves["with_deanon"])
        back = curves_from_csv(text)
        assert len(back) == 3
        variants = {c.points[0].variant for c in back if c.method == "gaussian_blur"}
        assert variants == {"without_deanon", "with_deanon"}

    def test_rejects_foreign_csv(self):
        with pytest.raises(ValueError, match="not a trade-off curve CSV"):
            curves_from_csv("a,b,c\n1,2,3\n")


class TestAucCsv:
    def test_rows_and_worst_case(self):
        curves = sample_curves()
        text = auc_to_csv(curves, {"gaussian_blur": 0.25})
        lines = text.strip().split("\n")
        assert lines[0] == "method,variant,auc"
        assert lines[1].startswith("gaussian_blur,with_deanon,")
        assert lines[2].startswith("eye_mask,without_deanon,")
        assert lines[3].startswith("gaussian_blur,without_deanon,")
        assert lines[4] == "gaussian_blur,worst_case,0.25"
        for line, curve in (
            (lines[1], curves["with_deanon"][0]),
            (lines[3], curves["without_deanon"][0]),
        ):
            assert float(line.split(",")[2]) == curve.auc


def fake_result():
    reports = (
        RecognitionReport(
            classifier="knn5",
            accuracy=0.5,
            balanced_accuracy=0.5,
            n_identities=2,
            predictions=(("a", "1", "a", True), ("b", "1", "a", False)),
        ),
        RecognitionReport(
            classifier="nearest_centroid",
            accuracy=1.0,
            balanced_accuracy=1.0,
            n_identities=2,
            predictions=(("a", "1", "a", True), ("b", "1", "b", True)),
        ),
    )
    outcome = VariantOutcome(
        reports=reports,
        best=reports[1],
        utility=0.75,
        raw_utility=0.75,
        point=make_point("gaussian_blur:kernel=5", 0.0, 0.75),
    )
    return RunResult(
        config={"master_seed": 0},
        label="gaussian_blur:kernel=5",
        n_identities=2,
        chance_level=0.5,
        variants={"without_deanon": outcome},
        provenance=[{"stage": "anonymize", "label": "anonymize:evaluation"}],
    )


class TestRunOutputs:
    def test_result_json_is_canonical(self):
        text = result_json(fake_result())
        assert text.endswith("\n")
        parsed = json.loads(text)
        assert list(parsed) == sorted(parsed)
        assert parsed["label"] == "gaussian_blur:kernel=5"
        assert parsed["variants"]["without_deanon"]["best"]["classifier"] == "nearest_centroid"
        assert text == result_json(fake_result())

    def test_result_csv_rows(self):
        lines = result_csv(fake_result()).strip().split("\n")
        assert lines[0].startswith("variant,row,identity")
        probe_rows = [l for l in lines[1:] if l.split(",")[1] == "probe"]
        classifier_rows = [l for l in lines[1:] if l.split(",")[1] == "classifier"]
        best_rows = [l for l in lines[1:] if l.split(",")[1] == "best"]
        assert len(probe_rows) == 4  # two classifiers x two probes
        assert len(classifier_rows) == 2
        assert len(best_rows) == 1
        assert best_rows[0].split(",")[6] == "nearest_centroid"
        assert probe_rows[0].split(",")[5] in {"0", "1"}


class TestSvg:
    def parse(self, curves_by_variant):
        text = tradeoff_svg(curves_by_variant)
        return text, ET.fromstring(text)

    def test_marker_per_point(self):
        curves = sample_curves()
        text, root = self.parse(curves)
        markers = [
            c for c in root.iter("{http://www.w3.org/2000/svg}circle")
            if c.get("class") == "pt"
        ]
        total_points = sum(len(c.points) for v in curves.values() for c in v)
        assert len(markers) == total_points == 5

    def test_dotted_guides_present(self):
        _, root = self.parse(sample_curves())
        lines = root.findall("svg:line", SVG_NS)
        guides = [l for l in lines if (l.get("class") or "").startswith("guide")]
        assert len(guides) == 2
        classes = {l.get("class") for l in guides}
        assert classes == {"guide guide-chance", "guide guide-clear"}
        for guide in guides:
            assert guide.get("stroke-dasharray") == "2 4"
        chance = next(l for l in guides if "chance" in l.get("class"))
        assert chance.get("x1") == chance.get("x2") == "470.00"
        clear = next(l for l in guides if "clear" in l.get("class"))
        assert clear.get("y1") == clear.get("y2") == "40.00"

    def test_with_variant_series_dashed(self):
        _, root = self.parse(sample_curves())
        polylines = root.findall("svg:polyline", SVG_NS)
        assert len(polylines) == 2  # the single-point curve draws no line
        dashes = {p.get("stroke-dasharray") for p in polylines}
        assert dashes == {None, "7 3"}

    def test_legend_mentions_auc(self):
        text, _ = self.parse(sample_curves())
        assert "AUC=" in text
        assert "dotted: chance privacy / clear utility" in text

    def test_labels_are_escaped(self):
        curve = make_curve("method<&>", [make_point("label<&>", 0.5, 0.5)])
        text, root = self.parse({"without_deanon": [curve]})
        assert "method<&>" not in text
        assert "method&lt;&amp;&gt;" in text
        assert root is not None  # parseable despite hostile names

    def test_single_point_curve_has_marker_but_no_line(self):
        curve = make_curve("eye_mask", [make_point("eye_mask:band_px=8", 0.4, 0.7)])
        text, root = self.parse({"without_deanon": [curve]})
        assert len(root.findall("svg:polyline", SVG_NS)) == 0
        markers = [
            c for c in root.iter("{http://www.w3.org/2000/svg}circle")
            if c.get("class") == "pt"
        ]
        assert len(markers) == 1

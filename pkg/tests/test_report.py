import json

import pytest

from src.models import report as effects
from src.models.report import (
    RAW,
    SD_UNITS,
    EffectEstimate,
    EffectReport,
    format_comparison,
    format_table,
    to_sd_units,
)
from src.utils.errors import MedsimError


def natural_report(**metadata):
    estimates = {
        effects.ATE: EffectEstimate(0.6, 0.4, 0.8),
        effects.MNDE: EffectEstimate(0.2, 0.1, 0.3),
        effects.MNIE: EffectEstimate(0.4, 0.2, 0.5),
        effects.PSE_DY: EffectEstimate(0.2, 0.1, 0.3),
        effects.PSE_DLY: EffectEstimate(0.25, 0.1, 0.4),
        effects.PSE_DXY: EffectEstimate(0.15, 0.05, 0.2),
    }
    return EffectReport(estimates, marginal_means={"psi(1,1,1)": 0.7},
                        metadata={"mode": "natural-pse", **metadata})


def interventional_report():
    estimates = {effects.OE: EffectEstimate(0.0), effects.IDE: EffectEstimate(0.1),
                 effects.IIE: EffectEstimate(-0.1)}
    return EffectReport(estimates, metadata={"mode": "interventional"})


class TestEstimate:
    def test_interval_needs_both_bounds(self):
        with pytest.raises(MedsimError):
            EffectEstimate(0.1, lower=0.0)

    def test_interval_contains_point(self):
        with pytest.raises(MedsimError):
            EffectEstimate(1.0, 0.0, 0.5)


class TestSDUnits:
    def test_division(self):
        report = to_sd_units(EffectReport({effects.ATE: EffectEstimate(-0.5)}), 2.0)
        assert report[effects.ATE].point == -0.25
        assert report.scale == SD_UNITS
        assert report.metadata["outcome_sd"] == 2.0

    def test_unit_sd_keeps_values(self):
        report = natural_report()
        scaled = to_sd_units(report, 1.0)
        assert scaled.estimates == report.estimates

    def test_bounds_are_scaled(self):
        scaled = to_sd_units(natural_report(), 2.0)
        assert (scaled[effects.ATE].lower, scaled[effects.ATE].upper) == (0.2, 0.4)

    @pytest.mark.parametrize("sd", [0.0, -1.0, float("nan")])
    def test_non_positive_sd(self, sd):
        with pytest.raises(MedsimError):
            to_sd_units(natural_report(), sd)

    def test_not_applied_twice(self):
        with pytest.raises(MedsimError, match="already"):
            to_sd_units(to_sd_units(natural_report(), 2.0), 2.0)


class TestReport:
    def test_merge_marks_both_modes(self):
        merged = natural_report(J=10).merge(interventional_report())
        assert merged.metadata["mode"] == "both"
        assert merged.metadata["J"] == 10
        assert len(merged.estimates) == 9
        assert merged.ordered_names()[:3] == [effects.OE, effects.IDE, effects.IIE]

    def test_merge_rejects_mixed_scales(self):
        with pytest.raises(MedsimError):
            to_sd_units(natural_report(), 2.0).merge(interventional_report())

    def test_proportions(self):
        shares = natural_report().merge(interventional_report()).proportions()
        assert shares[effects.PSE_DLY] == pytest.approx(0.25 / 0.6)
        assert shares[effects.IDE] is None
        assert effects.ATE not in shares

    def test_json_omits_missing_intervals(self):
        data = json.loads(interventional_report().to_json())
        assert data["estimates"][effects.IDE] == {"point": 0.1}
        assert list(data["estimates"]) == [effects.OE, effects.IDE, effects.IIE]
        assert data["scale"] == RAW

    def test_json_is_stable(self):
        assert natural_report().to_json() == natural_report().to_json()

    def test_dict_round_trip(self):
        report = natural_report(J=5)
        assert EffectReport.from_dict(json.loads(report.to_json())) == report

    def test_with_intervals_keeps_other_estimates(self):
        report = interventional_report().with_intervals({effects.IDE: (0.0, 0.2)}, {"B": 50})
        assert report[effects.IDE].has_interval
        assert not report[effects.OE].has_interval
        assert report.metadata == {"mode": "interventional", "B": 50}


class TestFormatting:
    def test_table_rows_in_display_order(self):
        table = format_table(natural_report().merge(interventional_report()))
        lines = table.splitlines()
        assert lines[0].startswith("Estimand")
        assert lines[2].startswith("Overall effect (OE)")
        assert "0.600 [0.400, 0.800]" in table
        assert lines[-1] == "Scale: raw"

    def test_comparison_marks_missing_estimands(self):
        text = format_comparison({"glm": natural_report(), "other": interventional_report()})
        header, _, first = text.splitlines()[:3]
        assert header.split()[-2:] == ["glm", "other"]
        assert first.startswith("Overall effect (OE)")
        assert first.split()[-2] == "-"

    def test_comparison_needs_reports(self):
        with pytest.raises(MedsimError):
            format_comparison({})

"""
Effect Reports
Point estimates with percentile intervals, their JSON form and the aligned effect tables.
"""

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

from src.utils.errors import MedsimError

OE = "OE"
IDE = "IDE"
IIE = "IIE"
ATE = "ATE"
MNDE = "MNDE"
MNIE = "MNIE"
PSE_DY = "PSE_DY"
PSE_DLY = "PSE_DLY"
PSE_DXY = "PSE_DXY"

NATURAL_ESTIMANDS = (ATE, MNDE, MNIE, PSE_DY, PSE_DLY, PSE_DXY)
INTERVENTIONAL_ESTIMANDS = (OE, IDE, IIE)

# Display order of the effect table.
TABLE_ORDER = (OE, IDE, IIE, ATE, MNDE, MNIE, PSE_DY, PSE_DLY, PSE_DXY)

LABELS = {
    OE: "Overall effect (OE)",
    IDE: "Interventional direct (IDE)",
    IIE: "Interventional indirect (IIE)",
    ATE: "Total effect (ATE)",
    MNDE: "Natural direct (MNDE)",
    MNIE: "Natural indirect (MNIE)",
    PSE_DY: "PSE D->Y",
    PSE_DLY: "PSE D->L~>Y",
    PSE_DXY: "PSE D->X->Y",
}

# Denominator of each effect's share of the total.
SHARE_OF = {
    IDE: OE, IIE: OE,
    MNDE: ATE, MNIE: ATE,
    PSE_DY: ATE, PSE_DLY: ATE, PSE_DXY: ATE,
}

RAW = "raw"
SD_UNITS = "sd-units"


@dataclass(frozen=True)
class EffectEstimate:
    """A point estimate with an optional percentile interval."""
    point: float
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        if (self.lower is None) != (self.upper is None):
            raise MedsimError("An interval needs both bounds")
        if self.lower is not None and not (self.lower <= self.point <= self.upper):
            raise MedsimError(f"Interval [{self.lower}, {self.upper}] does not contain {self.point}")

    @property
    def has_interval(self) -> bool:
        return self.lower is not None

    def scaled(self, factor: float) -> "EffectEstimate":
        if not self.has_interval:
            return EffectEstimate(self.point / factor)
        return EffectEstimate(self.point / factor, self.lower / factor, self.upper / factor)

    def to_dict(self) -> Dict[str, float]:
        data = {"point": self.point}
        if self.has_interval:
            data["lower"] = self.lower
            data["upper"] = self.upper
        return data


@dataclass(frozen=True)
class EffectReport:
    """Estimates keyed by estimand name, plus the marginal means they were formed from."""
    estimates: Dict[str, EffectEstimate]
    scale: str = RAW
    marginal_means: Dict[str, float] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, name: str) -> EffectEstimate:
        return self.estimates[name]

    def __contains__(self, name: str) -> bool:
        return name in self.estimates

    def points(self) -> Dict[str, float]:
        return {name: est.point for name, est in self.estimates.items()}

    def ordered_names(self) -> List[str]:
        return [name for name in TABLE_ORDER if name in self.estimates]

    def with_intervals(self, intervals: Mapping[str, Tuple[float, float]],
                       metadata: Optional[Mapping[str, Any]] = None) -> "EffectReport":
        """Attach interval bounds; estimands without an entry keep theirs."""
        estimates = dict(self.estimates)
        for name, (lower, upper) in intervals.items():
            estimates[name] = EffectEstimate(self.estimates[name].point, lower, upper)
        merged = dict(self.metadata)
        merged.update(metadata or {})
        return replace(self, estimates=estimates, metadata=merged)

    def merge(self, other: "EffectReport") -> "EffectReport":
        """Combine the natural/path-specific and interventional reports of one run."""
        if self.scale != other.scale:
            raise MedsimError(f"Cannot merge reports on scales {self.scale} and {other.scale}")
        estimates = dict(self.estimates)
        estimates.update(other.estimates)
        means = dict(self.marginal_means)
        means.update(other.marginal_means)
        metadata = dict(self.metadata)
        for key, value in other.metadata.items():
            if key == "mode" and key in metadata and metadata[key] != value:
                metadata[key] = "both"
            else:
                metadata.setdefault(key, value)
        return EffectReport(estimates, self.scale, means, metadata)

    def proportions(self) -> Dict[str, Optional[float]]:
        """Each effect as a share of its total (ATE or OE); None when the total is 0."""
        shares: Dict[str, Optional[float]] = {}
        for name in self.ordered_names():
            total_name = SHARE_OF.get(name)
            if total_name is None or total_name not in self.estimates:
                continue
            total = self.estimates[total_name].point
            shares[name] = None if total == 0 else self.estimates[name].point / total
        return shares

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scale": self.scale,
            "estimates": {name: self.estimates[name].to_dict() for name in self.ordered_names()},
            "proportions": self.proportions(),
            "marginal_means": dict(self.marginal_means),
            "metadata": dict(self.metadata),
        }

    def to_json(self) -> str:
        """Deterministic JSON text (fixed key order, no timestamps)."""
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EffectReport":
        estimates = {
            name: EffectEstimate(est["point"], est.get("lower"), est.get("upper"))
            for name, est in data.get("estimates", {}).items()
        }
        return cls(estimates, data.get("scale", RAW), dict(data.get("marginal_means", {})),
                   dict(data.get("metadata", {})))


def to_sd_units(report: EffectReport, sd: float) -> EffectReport:
    """Divide every point and bound by the outcome SD.

    Args:
        report: Report on the raw outcome scale
        sd: Outcome standard deviation, must be positive

    Returns:
        EffectReport: Report tagged as SD units
    """
    if report.scale != RAW:
        raise MedsimError(f"Report is already on the '{report.scale}' scale")
    if not (sd > 0 and math.isfinite(sd)):
        raise MedsimError(f"Outcome SD must be positive to rescale, got {sd}")
    estimates = {name: est.scaled(sd) for name, est in report.estimates.items()}
    metadata = dict(report.metadata)
    metadata["outcome_sd"] = sd
    return replace(report, estimates=estimates, scale=SD_UNITS, metadata=metadata)


def _fmt(value: Optional[float], digits: int) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def _cell(est: Optional[EffectEstimate], digits: int) -> str:
    if est is None:
        return "-"
    if not est.has_interval:
        return _fmt(est.point, digits)
    return f"{_fmt(est.point, digits)} [{_fmt(est.lower, digits)}, {_fmt(est.upper, digits)}]"


def format_table(report: EffectReport, digits: int = 3) -> str:
    """Plain-text effect table: one row per estimand in display order."""
    names = report.ordered_names()
    label_width = max([len(LABELS[n]) for n in names] + [len("Estimand")])
    cells = [_cell(report.estimates[n], digits) for n in names]
    value_width = max([len(c) for c in cells] + [len("Estimate [95% CI]")])
    lines = [f"{'Estimand':<{label_width}}  {'Estimate [95% CI]':>{value_width}}",
             "-" * (label_width + 2 + value_width)]
    for name, cell in zip(names, cells):
        lines.append(f"{LABELS[name]:<{label_width}}  {cell:>{value_width}}")
    lines.append(f"Scale: {report.scale}")
    return "\n".join(lines) + "\n"


def format_comparison(reports: Mapping[str, EffectReport], digits: int = 3) -> str:
    """Several reports side by side, one column each, rows in display order."""
    if not reports:
        raise MedsimError("Nothing to compare")
    names = [n for n in TABLE_ORDER if any(n in r for r in reports.values())]
    columns = {label: [_cell(r.estimates.get(n), digits) for n in names] for label, r in reports.items()}
    label_width = max([len(LABELS[n]) for n in names] + [len("Estimand")])
    widths = {label: max([len(c) for c in cells] + [len(label)]) for label, cells in columns.items()}
    header = f"{'Estimand':<{label_width}}" + "".join(f"  {label:>{widths[label]}}" for label in columns)
    lines = [header, "-" * len(header)]
    for i, name in enumerate(names):
        lines.append(f"{LABELS[name]:<{label_width}}"
                     + "".join(f"  {columns[label][i]:>{widths[label]}}" for label in columns))
    return "\n".join(lines) + "\n"

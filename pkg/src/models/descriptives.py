"""
Descriptive Statistics
Per-variable summaries used for reporting and for scaling effects to SD units.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from src.models.schema import CausalDataset, VariableKind


@dataclass(frozen=True)
class VariableSummary:
    """Summary of one column. ``sd`` is None when n < 2."""
    name: str
    kind: str
    n: int
    mean: float
    sd: Optional[float]
    minimum: float
    maximum: float
    frequencies: Dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "n": self.n,
            "mean": self.mean,
            "sd": self.sd,
            "min": self.minimum,
            "max": self.maximum,
            "frequencies": {str(k): v for k, v in self.frequencies.items()},
        }


def summarize(dataset: CausalDataset) -> Dict[str, VariableSummary]:
    """Summarize every schema variable.

    Args:
        dataset: Validated dataset

    Returns:
        Dict mapping variable name to its summary, in causal order
    """
    summaries: Dict[str, VariableSummary] = {}
    for var in dataset.schema.variables:
        values = pd.Series(dataset.column(var.name))
        n = int(values.size)
        sd = float(values.std(ddof=1)) if n >= 2 else None
        frequencies: Dict[int, int] = {}
        if var.is_discrete:
            counts = values.round().astype(np.int64).value_counts()
            if var.kind in (VariableKind.BINARY, VariableKind.ORDINAL):
                levels = range(var.levels)
            else:
                levels = sorted(int(k) for k in counts.index)
            frequencies = {int(k): int(counts.get(k, 0)) for k in levels}
        summaries[var.name] = VariableSummary(
            name=var.name,
            kind=var.kind.value,
            n=n,
            mean=float(values.mean()),
            sd=sd,
            minimum=float(values.min()),
            maximum=float(values.max()),
            frequencies=frequencies,
        )
    return summaries


def summary_frame(summaries: Dict[str, VariableSummary]) -> pd.DataFrame:
    """Tabular view (one row per variable) for CSV output."""
    rows: List[Dict[str, Any]] = []
    for s in summaries.values():
        row = s.to_dict()
        row["frequencies"] = ";".join(f"{k}:{v}" for k, v in s.frequencies.items())
        rows.append(row)
    return pd.DataFrame(rows, columns=["name", "kind", "n", "mean", "sd", "min", "max", "frequencies"])

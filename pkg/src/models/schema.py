"""
Causal Schema and Dataset
Declares the roles V, D, L, X, Y, their kinds, and the validated dataset container.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.utils.errors import DataValidationError, ParseError, SchemaError

# Discrete codes are stored as floats but must be integers within this tolerance.
INTEGER_TOLERANCE = 1e-9

NATURAL_PSE = "natural-pse"
INTERVENTIONAL = "interventional"
MODES = (NATURAL_PSE, INTERVENTIONAL)


class VariableKind(Enum):
    """Measurement type of a variable."""
    CONTINUOUS = "continuous"
    BINARY = "binary"
    ORDINAL = "ordinal"
    COUNT = "count"

    @property
    def is_discrete(self) -> bool:
        return self is not VariableKind.CONTINUOUS


@dataclass(frozen=True)
class Variable:
    """A named variable with its kind.

    Binary variables are stored as ordinal with two levels but keep their own tag.
    """
    name: str
    kind: VariableKind
    levels: Optional[int] = None

    def __post_init__(self):
        if not self.name:
            raise SchemaError("Variable name is empty")
        if self.kind is VariableKind.BINARY:
            if self.levels not in (None, 2):
                raise SchemaError(f"Binary variable '{self.name}' must have 2 levels, got {self.levels}")
            object.__setattr__(self, "levels", 2)
        elif self.kind is VariableKind.ORDINAL:
            if self.levels is None or self.levels < 2:
                raise SchemaError(f"Ordinal variable '{self.name}' needs levels >= 2, got {self.levels}")
        elif self.levels is not None:
            raise SchemaError(f"Variable '{self.name}' of kind {self.kind.value} takes no levels")

    @property
    def is_discrete(self) -> bool:
        return self.kind.is_discrete

    def support_bounds(self) -> Tuple[float, float]:
        """Smallest and largest admissible value."""
        if self.kind in (VariableKind.BINARY, VariableKind.ORDINAL):
            return 0.0, float(self.levels - 1)
        if self.kind is VariableKind.COUNT:
            return 0.0, math.inf
        return -math.inf, math.inf

    def out_of_support(self, values: np.ndarray) -> np.ndarray:
        """Boolean mask of entries that are not valid values of this variable."""
        values = np.asarray(values, dtype=float)
        bad = ~np.isfinite(values)
        if self.is_discrete:
            low, high = self.support_bounds()
            rounded = np.round(values)
            with np.errstate(invalid="ignore"):
                bad |= np.abs(values - rounded) > INTEGER_TOLERANCE
                bad |= (rounded < low) | (rounded > high)
        return bad

    def is_valid_value(self, value: float) -> bool:
        return not bool(self.out_of_support(np.array([value]))[0])

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"name": self.name, "kind": self.kind.value}
        if self.kind is VariableKind.ORDINAL:
            data["levels"] = self.levels
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Variable":
        try:
            kind = VariableKind(data.get("kind", "continuous"))
        except ValueError:
            raise SchemaError(f"Unknown variable kind '{data.get('kind')}' for '{data.get('name')}'")
        return cls(name=str(data.get("name", "")), kind=kind, levels=data.get("levels"))


@dataclass(frozen=True)
class CausalSchema:
    """Roles of a two-mediator causal model: V -> D -> L -> X -> Y.

    The mediator order is fixed at construction: ``mediators[0]`` is L,
    ``mediators[1]`` is X.
    """
    confounders: Tuple[Variable, ...]
    treatment: Variable
    contrast: Tuple[float, float]
    mediators: Tuple[Variable, Variable]
    outcome: Variable

    def __post_init__(self):
        object.__setattr__(self, "confounders", tuple(self.confounders))
        object.__setattr__(self, "mediators", tuple(self.mediators))
        object.__setattr__(self, "contrast", (float(self.contrast[0]), float(self.contrast[1])))
        if len(self.mediators) != 2:
            raise SchemaError(f"Exactly two mediators are required, got {len(self.mediators)}")
        names = [v.name for v in self.variables]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise SchemaError(f"Variable names must be distinct: {', '.join(duplicates)}")
        d, d_star = self.contrast
        if d == d_star:
            raise SchemaError(f"Contrast values must differ, got d = d* = {d}")
        for value in (d, d_star):
            if not self.treatment.is_valid_value(value):
                raise SchemaError(f"Contrast value {value} is not valid for treatment '{self.treatment.name}'")

    @property
    def d(self) -> float:
        return self.contrast[0]

    @property
    def d_star(self) -> float:
        return self.contrast[1]

    @property
    def first_mediator(self) -> Variable:
        return self.mediators[0]

    @property
    def second_mediator(self) -> Variable:
        return self.mediators[1]

    @property
    def variables(self) -> Tuple[Variable, ...]:
        """All variables in causal order V..., D, L, X, Y."""
        return self.confounders + (self.treatment,) + self.mediators + (self.outcome,)

    @property
    def names(self) -> List[str]:
        return [v.name for v in self.variables]

    @property
    def confounder_names(self) -> List[str]:
        return [v.name for v in self.confounders]

    def variable(self, name: str) -> Variable:
        for var in self.variables:
            if var.name == name:
                return var
        raise SchemaError(f"Unknown variable '{name}'", column=name)

    def role_variable(self, role: str) -> Variable:
        """Variable playing role 'L', 'X' or 'Y'."""
        roles = {"L": self.first_mediator, "X": self.second_mediator, "Y": self.outcome}
        if role not in roles:
            raise SchemaError(f"Unknown role '{role}'")
        return roles[role]

    def parents_of(self, role: str, mode: str = NATURAL_PSE) -> List[str]:
        """Conditioning set of the model for ``role`` under ``mode``.

        In interventional mode the focal mediator X is modelled without L.
        """
        base = self.confounder_names + [self.treatment.name]
        if role == "L":
            return base
        if role == "X":
            if mode == INTERVENTIONAL:
                return base
            return base + [self.first_mediator.name]
        if role == "Y":
            return base + [self.first_mediator.name, self.second_mediator.name]
        raise SchemaError(f"Unknown role '{role}'")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "confounders": [v.to_dict() for v in self.confounders],
            "treatment": self.treatment.to_dict(),
            "contrast": [self.d, self.d_star],
            "mediators": [v.to_dict() for v in self.mediators],
            "outcome": self.outcome.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CausalSchema":
        """Build a schema from its JSON form.

        Args:
            data: Mapping with confounders, treatment, contrast, mediators, outcome

        Returns:
            CausalSchema: The validated schema
        """
        for key in ("treatment", "contrast", "mediators", "outcome"):
            if key not in data:
                raise SchemaError(f"Schema is missing '{key}'")
        contrast = data["contrast"]
        if not isinstance(contrast, (list, tuple)) or len(contrast) != 2:
            raise SchemaError("Schema 'contrast' must be a pair [d, d*]")
        return cls(
            confounders=tuple(Variable.from_dict(v) for v in data.get("confounders", [])),
            treatment=Variable.from_dict(data["treatment"]),
            contrast=(contrast[0], contrast[1]),
            mediators=tuple(Variable.from_dict(v) for v in data["mediators"]),
            outcome=Variable.from_dict(data["outcome"]),
        )


def check_support(schema: CausalSchema, columns: Mapping[str, np.ndarray], row_offset: int = 0):
    """Raise DataValidationError at the first value outside its variable's support.

    Args:
        schema: Declared causal schema
        columns: Numeric columns keyed by variable name
        row_offset: Added to 0-based row positions in the error
    """
    for var in schema.variables:
        values = np.asarray(columns[var.name], dtype=np.float64)
        bad = np.flatnonzero(var.out_of_support(values))
        if bad.size:
            row = int(bad[0]) + row_offset
            raise DataValidationError(
                f"Value {values[bad[0]]:g} of '{var.name}' at row {row} is outside "
                f"the support of a {var.kind.value} variable",
                row=row, column=var.name,
            )


def parse_float_cells(text: pd.Series) -> np.ndarray:
    """Parse string cells to float64 exactly as ``float()`` would.

    pandas' vectorised parser can land one ULP away from the written
    value, so cells go through numpy's object-to-float cast instead.
    Unparseable cells come back as NaN for the caller to report.
    """
    cells = text.to_numpy(dtype=object)
    try:
        return cells.astype(np.float64)
    except ValueError:
        numbers = np.empty(cells.shape, dtype=np.float64)
        for k, cell in enumerate(cells):
            try:
                numbers[k] = float(cell)
            except ValueError:
                numbers[k] = np.nan
        return numbers


@dataclass(frozen=True)
class CausalDataset:
    """Complete-case data keyed by schema variable name.

    Columns are read-only float64 arrays; the object is safe to share.
    """
    schema: CausalSchema
    columns: Mapping[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        frozen: Dict[str, np.ndarray] = {}
        lengths = set()
        for var in self.schema.variables:
            if var.name not in self.columns:
                raise SchemaError(f"Missing column '{var.name}'", column=var.name)
            arr = np.array(self.columns[var.name], dtype=np.float64)
            if arr.ndim != 1:
                raise DataValidationError(f"Column '{var.name}' must be one-dimensional", column=var.name)
            arr.setflags(write=False)
            frozen[var.name] = arr
            lengths.add(arr.shape[0])
        if len(lengths) != 1:
            raise DataValidationError(f"Columns have different lengths: {sorted(lengths)}")
        if lengths.pop() < 1:
            raise DataValidationError("Dataset has no rows")
        object.__setattr__(self, "columns", frozen)
        check_support(self.schema, frozen)

    @property
    def n(self) -> int:
        return int(next(iter(self.columns.values())).shape[0])

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise SchemaError(f"Unknown column '{name}'", column=name)
        return self.columns[name]

    def take(self, indices: Sequence[int]) -> "CausalDataset":
        """Dataset made of the given rows (with repetition), e.g. a bootstrap resample."""
        idx = np.asarray(indices, dtype=np.int64)
        return CausalDataset(self.schema, {name: arr[idx] for name, arr in self.columns.items()})

    def records(self) -> Iterator[Dict[str, float]]:
        names = self.schema.names
        for i in range(self.n):
            yield {name: float(self.columns[name][i]) for name in names}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: self.columns[name] for name in self.schema.names})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, schema: CausalSchema, row_offset: int = 0) -> "CausalDataset":
        """Validate a numeric frame against the schema.

        Args:
            frame: DataFrame with (at least) one column per schema variable
            schema: Declared causal schema
            row_offset: Added to 0-based row positions in error messages

        Returns:
            CausalDataset: The validated dataset
        """
        columns = {}
        for var in schema.variables:
            if var.name not in frame.columns:
                raise SchemaError(f"Missing column '{var.name}'", column=var.name)
            columns[var.name] = frame[var.name].to_numpy(dtype=np.float64)
        check_support(schema, columns, row_offset=row_offset)
        return cls(schema, columns)

    @classmethod
    def from_text_frame(cls, raw: pd.DataFrame, schema: CausalSchema, row_offset: int = 2) -> "CausalDataset":
        """Parse and validate a frame of strings (as read from a file).

        Blank cells are rejected, never imputed. ``row_offset`` converts
        0-based data positions into file row numbers (header is row 1).
        """
        parsed = {}
        for var in schema.variables:
            if var.name not in raw.columns:
                raise SchemaError(f"Missing column '{var.name}'", column=var.name)
            text = raw[var.name].astype(str).str.strip()
            blank = ((text == "") | raw[var.name].isna()).to_numpy()
            if blank.any():
                row = int(np.flatnonzero(blank)[0]) + row_offset
                raise DataValidationError(
                    f"Missing value in column '{var.name}' at row {row}", row=row, column=var.name)
            numbers = parse_float_cells(text)
            unparsed = ~np.isfinite(numbers)
            if unparsed.any():
                pos = int(np.flatnonzero(unparsed)[0])
                row = pos + row_offset
                raise ParseError(
                    f"Cannot parse {text.iloc[pos]!r} in column '{var.name}' at row {row}",
                    row=row, column=var.name)
            parsed[var.name] = numbers
        return cls.from_frame(pd.DataFrame(parsed), schema, row_offset=row_offset)

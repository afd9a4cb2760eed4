"""
Linear Predictor Terms
Products of powered variables plus an implicit intercept, and their design matrices.
"""

import itertools
import re
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.errors import ConfigError, SchemaError

Factor = Tuple[str, int]

_FACTOR_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_.]*)\s*(?:(?:\^|\*\*)\s*(\d+))?\s*$")


@dataclass(frozen=True)
class Term:
    """A product of (variable, power) factors, stored in canonical order."""
    factors: Tuple[Factor, ...]

    def __post_init__(self):
        merged: Dict[str, int] = {}
        for name, power in self.factors:
            if int(power) != power or power < 1:
                raise ConfigError(f"Power of '{name}' must be an integer >= 1, got {power}")
            merged[name] = merged.get(name, 0) + int(power)
        if not merged:
            raise ConfigError("A term needs at least one factor")
        object.__setattr__(self, "factors", tuple(sorted(merged.items())))

    @property
    def variables(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.factors)

    @property
    def label(self) -> str:
        return "*".join(name if power == 1 else f"{name}^{power}" for name, power in self.factors)

    @classmethod
    def parse(cls, text: str) -> "Term":
        """Parse ``"d"``, ``"d*l"``, ``"d:l"`` or ``"l^2"`` (``**`` also accepted)."""
        normalized = text.replace("**", "^").replace(":", "*")
        factors = []
        for part in normalized.split("*"):
            match = _FACTOR_RE.match(part)
            if not match:
                raise ConfigError(f"Cannot parse term '{text}'")
            factors.append((match.group(1), int(match.group(2) or 1)))
        return cls(tuple(factors))

    def evaluate(self, columns: Mapping[str, Union[float, np.ndarray]]) -> Union[float, np.ndarray]:
        value: Union[float, np.ndarray] = 1.0
        for name, power in self.factors:
            if name not in columns:
                raise SchemaError(f"Missing variable '{name}' for term '{self.label}'", column=name)
            x = columns[name]
            value = value * (x if power == 1 else np.power(x, power))
        return value


@dataclass(frozen=True)
class TermSpec:
    """Ordered list of distinct terms; the intercept is implicit."""
    terms: Tuple[Term, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        seen = set()
        for term in self.terms:
            if term.factors in seen:
                raise ConfigError(f"Duplicate term '{term.label}'")
            seen.add(term.factors)

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def labels(self) -> List[str]:
        return [t.label for t in self.terms]

    @property
    def variables(self) -> List[str]:
        """Distinct referenced variables in order of first appearance."""
        ordered: List[str] = []
        for term in self.terms:
            for name in term.variables:
                if name not in ordered:
                    ordered.append(name)
        return ordered

    def references(self, name: str) -> bool:
        return name in self.variables

    def check_variables(self, allowed: Iterable[str], context: str = "model"):
        """Raise ConfigError when a term uses a variable outside ``allowed``."""
        allowed = set(allowed)
        unknown = [v for v in self.variables if v not in allowed]
        if unknown:
            raise ConfigError(f"Terms of the {context} use variables outside its conditioning set: "
                              f"{', '.join(unknown)}")

    @classmethod
    def parse(cls, texts: Sequence[str]) -> "TermSpec":
        return cls(tuple(Term.parse(t) for t in texts))

    @classmethod
    def additive(cls, names: Sequence[str]) -> "TermSpec":
        return cls(tuple(Term(((n, 1),)) for n in names))

    @classmethod
    def treatment_interactions(cls, names: Sequence[str], treatment: str,
                               mediators: Sequence[str]) -> "TermSpec":
        """Additive terms plus treatment x mediator products for mediators among ``names``."""
        terms = [Term(((n, 1),)) for n in names]
        if treatment in names:
            terms += [Term(((treatment, 1), (m, 1))) for m in mediators if m in names]
        return cls(tuple(terms))

    @classmethod
    def two_way(cls, names: Sequence[str]) -> "TermSpec":
        """Additive terms plus every pairwise product."""
        terms = [Term(((n, 1),)) for n in names]
        terms += [Term(((a, 1), (b, 1))) for a, b in itertools.combinations(names, 2)]
        return cls(tuple(terms))

    @classmethod
    def saturated(cls, names: Sequence[str]) -> "TermSpec":
        """Every product of distinct variables; saturated when all are binary."""
        terms = []
        for size in range(1, len(names) + 1):
            terms += [Term(tuple((n, 1) for n in combo)) for combo in itertools.combinations(names, size)]
        return cls(tuple(terms))

    @classmethod
    def from_config(cls, value: Union[str, Sequence[str], None], parents: Sequence[str],
                    treatment: str, mediators: Sequence[str]) -> "TermSpec":
        """Resolve a config entry: a term list or one of the shorthands."""
        if value is None or value == "additive":
            return cls.additive(parents)
        if value == "treatment-interactions":
            return cls.treatment_interactions(parents, treatment, mediators)
        if value == "two-way":
            return cls.two_way(parents)
        if value == "saturated":
            return cls.saturated(parents)
        if isinstance(value, str):
            raise ConfigError(f"Unknown term shorthand '{value}'")
        return cls.parse(list(value))


def design_row(terms: TermSpec, record: Mapping[str, float]) -> np.ndarray:
    """Evaluate ``[1, term values...]`` for one record.

    Args:
        terms: Term specification
        record: Mapping from variable name to value

    Returns:
        numpy.ndarray: Design row in declared term order
    """
    row = np.empty(len(terms) + 1, dtype=np.float64)
    row[0] = 1.0
    for k, term in enumerate(terms.terms, start=1):
        row[k] = float(term.evaluate(record))
    return row


def design_matrix(terms: TermSpec, columns: Mapping[str, Union[float, np.ndarray]],
                  n: Optional[int] = None) -> np.ndarray:
    """Evaluate the design matrix; scalar columns are broadcast to ``n`` rows."""
    if n is None:
        lengths = [np.size(columns[v]) for v in terms.variables if np.ndim(columns.get(v, 0.0)) > 0]
        n = lengths[0] if lengths else 1
    matrix = np.empty((n, len(terms) + 1), dtype=np.float64)
    matrix[:, 0] = 1.0
    for k, term in enumerate(terms.terms, start=1):
        matrix[:, k] = np.broadcast_to(term.evaluate(columns), (n,))
    return matrix

"""
Mediation Simulation Estimators
Monte Carlo potential-outcome simulation under counterfactual treatment assignments,
marginal means, and the natural, path-specific and interventional effect contrasts.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from src.models import report as effects
from src.models.glm import Family, fit_mle
from src.models.random_streams import SLOT_L, SLOT_X, SLOT_Y, RandomStreams, block_ranges
from src.models.report import EffectEstimate, EffectReport
from src.models.schema import INTERVENTIONAL, MODES, NATURAL_PSE, CausalDataset, CausalSchema
from src.models.terms import TermSpec
from src.utils.errors import ConfigError, MedsimError, SamplingError

logger = logging.getLogger(__name__)

ROLES = ("L", "X", "Y")


@runtime_checkable
class ConditionalModel(Protocol):
    """Anything that maps (parent columns, uniform innovations) to draws of its target."""

    @property
    def target(self) -> str: ...

    @property
    def parents(self) -> Tuple[str, ...]: ...

    def sample_innovations(self, columns: Mapping[str, Any], u: np.ndarray) -> np.ndarray: ...


def _check_treatment(schema: CausalSchema, values: Sequence[float], kind: str):
    allowed = (schema.d, schema.d_star)
    for value in values:
        if value not in allowed:
            raise ConfigError(f"{kind} value {value} is not one of the contrast values {allowed}")


@dataclass(frozen=True)
class PsiAssignment:
    """Treatment values fed to L (d1), X (d2) and Y (d3)."""
    d1: float
    d2: float
    d3: float

    @property
    def key(self) -> str:
        return f"psi({self.d1:g},{self.d2:g},{self.d3:g})"


@dataclass(frozen=True)
class LambdaAssignment:
    """``d1`` feeds the randomized focal-mediator draw; ``d2`` feeds L and Y."""
    d1: float
    d2: float

    @property
    def key(self) -> str:
        return f"lambda({self.d1:g},{self.d2:g})"


@dataclass(frozen=True)
class ModelBundle:
    """Fitted models for L, X and Y whose conditioning sets match ``mode``."""
    mode: str
    schema: CausalSchema
    model_L: ConditionalModel
    model_X: ConditionalModel
    model_Y: ConditionalModel

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode '{self.mode}'")
        for role, model in zip(ROLES, self.models):
            expected = self.schema.role_variable(role).name
            if model.target != expected:
                raise ConfigError(f"Model for role {role} targets '{model.target}', expected '{expected}'")
            allowed = set(self.schema.parents_of(role, self.mode))
            outside = [p for p in model.parents if p not in allowed]
            if outside:
                raise ConfigError(f"Model for role {role} in {self.mode} mode conditions on "
                                  f"{', '.join(outside)}, outside its parents {sorted(allowed)}")

    @property
    def models(self) -> Tuple[ConditionalModel, ConditionalModel, ConditionalModel]:
        return self.model_L, self.model_X, self.model_Y


def fit_bundle(dataset: CausalDataset, mode: str,
               specs: Mapping[str, Tuple[Family, TermSpec]]) -> ModelBundle:
    """Fit the three parametric models of one mode.

    Args:
        dataset: Data to fit on
        mode: ``natural-pse`` or ``interventional``
        specs: Role ('L', 'X', 'Y') to (family, terms)

    Returns:
        ModelBundle: The fitted bundle
    """
    schema = dataset.schema
    fitted = {}
    for role in ROLES:
        if role not in specs:
            raise ConfigError(f"No model specification for role {role}")
        family, terms = specs[role]
        terms.check_variables(schema.parents_of(role, mode), context=f"{role} model ({mode})")
        try:
            fitted[role] = fit_mle(family, terms, schema.role_variable(role).name, dataset)
        except MedsimError as e:
            raise e.add_context(f"{role} model ({mode})")
    return ModelBundle(mode, schema, fitted["L"], fitted["X"], fitted["Y"])


def _locate_failure(model: ConditionalModel, columns: Dict[str, Any], u: np.ndarray) -> Optional[int]:
    """Index of the first draw that fails on its own, or None."""
    for k in range(u.size):
        single = {name: value[k:k + 1] if np.ndim(value) else value for name, value in columns.items()}
        try:
            model.sample_innovations(single, u[k:k + 1])
        except (ValueError, ArithmeticError):
            return k
    return None


def _draw(model: ConditionalModel, columns: Dict[str, Any], u: np.ndarray, start: int, J: int,
          role: str) -> np.ndarray:
    stop = start + u.size // J
    try:
        values = np.asarray(model.sample_innovations(columns, u), dtype=np.float64)
    except MedsimError as e:
        raise e.add_context(f"sampling {role} for rows {start}-{stop - 1}")
    except (ValueError, ArithmeticError) as e:
        k = _locate_failure(model, columns, u)
        if k is None:
            raise SamplingError(f"Sampling {role} failed for rows {start}-{stop - 1}: {e}", row=start)
        row, replicate = start + k // J, k % J
        raise SamplingError(f"Sampling {role} failed at row {row}, replicate {replicate}: {e}",
                            row=row, replicate=replicate)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        row, replicate = start + int(bad[0]) // J, int(bad[0]) % J
        raise SamplingError(f"Non-finite draw of {role} at row {row}, replicate {replicate}",
                            row=row, replicate=replicate)
    return values


def _block_sum(bundle: ModelBundle, dataset: CausalDataset, J: int, streams: RandomStreams,
               block: int, start: int, stop: int, d_L: float, d_X: float, d_Y: float,
               x_sees_L: bool) -> float:
    schema = bundle.schema
    rows = stop - start
    base = {name: np.repeat(dataset.column(name)[start:stop], J) for name in schema.confounder_names}
    treatment = schema.treatment.name
    L_name, X_name = schema.first_mediator.name, schema.second_mediator.name

    u_L = streams.uniforms("simulate", SLOT_L, block, (rows, J)).ravel()
    u_X = streams.uniforms("simulate", SLOT_X, block, (rows, J)).ravel()
    u_Y = streams.uniforms("simulate", SLOT_Y, block, (rows, J)).ravel()

    L = _draw(bundle.model_L, {**base, treatment: d_L}, u_L, start, J, "L")
    x_columns = {**base, treatment: d_X}
    if x_sees_L:
        x_columns[L_name] = L
    X = _draw(bundle.model_X, x_columns, u_X, start, J, "X")
    Y = _draw(bundle.model_Y, {**base, treatment: d_Y, L_name: L, X_name: X}, u_Y, start, J, "Y")
    return float(np.sum(Y))


def _simulate_mean(bundle: ModelBundle, dataset: CausalDataset, J: int, streams: RandomStreams,
                   treatments: Tuple[float, float, float], x_sees_L: bool, threads: int) -> float:
    if J < 1:
        raise ConfigError(f"J must be at least 1, got {J}")
    blocks = list(block_ranges(dataset.n))

    def run(block):
        index, start, stop = block
        return _block_sum(bundle, dataset, J, streams, index, start, stop, *treatments, x_sees_L)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sums = list(pool.map(run, blocks))
    else:
        sums = [run(block) for block in blocks]
    # Summed in block order so the result does not depend on the schedule.
    return math.fsum(sums) / (dataset.n * J)


def simulate_psi(bundle: ModelBundle, dataset: CausalDataset, assignment: PsiAssignment, J: int,
                 streams: RandomStreams, threads: int = 1) -> float:
    """Estimate psi(d1, d2, d3) by sequential simulation of L, X and Y.

    Args:
        bundle: Natural-pse bundle
        dataset: Rows whose confounders are averaged over
        assignment: Treatment values for L, X and Y
        J: Replicates per row
        streams: Random streams; innovations are shared across assignments
        threads: Worker threads for row blocks

    Returns:
        float: Grand mean of the simulated outcomes
    """
    if bundle.mode != NATURAL_PSE:
        raise ConfigError("simulate_psi needs a natural-pse bundle")
    _check_treatment(bundle.schema, (assignment.d1, assignment.d2, assignment.d3), "PsiAssignment")
    value = _simulate_mean(bundle, dataset, J, streams,
                           (assignment.d1, assignment.d2, assignment.d3), True, threads)
    logger.debug("%s = %.10f", assignment.key, value)
    return value


def simulate_lambda(bundle: ModelBundle, dataset: CausalDataset, assignment: LambdaAssignment, J: int,
                    streams: RandomStreams, threads: int = 1) -> float:
    """Estimate lambda(d1, d2); the focal mediator is drawn given (V, d1) only."""
    if bundle.mode != INTERVENTIONAL:
        raise ConfigError("simulate_lambda needs an interventional bundle")
    _check_treatment(bundle.schema, (assignment.d1, assignment.d2), "LambdaAssignment")
    value = _simulate_mean(bundle, dataset, J, streams,
                           (assignment.d2, assignment.d1, assignment.d2), False, threads)
    logger.debug("%s = %.10f", assignment.key, value)
    return value


def psi_assignments(d: float, d_star: float) -> Tuple[PsiAssignment, ...]:
    return (PsiAssignment(d_star, d_star, d), PsiAssignment(d_star, d_star, d_star),
            PsiAssignment(d_star, d, d), PsiAssignment(d, d, d))


def lambda_assignments(d: float, d_star: float) -> Tuple[LambdaAssignment, ...]:
    return LambdaAssignment(d_star, d), LambdaAssignment(d_star, d_star), LambdaAssignment(d, d)


def natural_pse_effects(psi: Mapping[PsiAssignment, float], d: float, d_star: float) -> Dict[str, float]:
    """Path-specific and multivariate natural effects from four psi values."""
    direct = psi[PsiAssignment(d_star, d_star, d)] - psi[PsiAssignment(d_star, d_star, d_star)]
    via_x = psi[PsiAssignment(d_star, d, d)] - psi[PsiAssignment(d_star, d_star, d)]
    via_l = psi[PsiAssignment(d, d, d)] - psi[PsiAssignment(d_star, d, d)]
    indirect = via_x + via_l
    return {
        effects.ATE: direct + indirect,
        effects.MNDE: direct,
        effects.MNIE: indirect,
        effects.PSE_DY: direct,
        effects.PSE_DLY: via_l,
        effects.PSE_DXY: via_x,
    }


def interventional_effects(lam: Mapping[LambdaAssignment, float], d: float, d_star: float) -> Dict[str, float]:
    """Interventional direct, indirect and overall effects from three lambda values."""
    direct = lam[LambdaAssignment(d_star, d)] - lam[LambdaAssignment(d_star, d_star)]
    indirect = lam[LambdaAssignment(d, d)] - lam[LambdaAssignment(d_star, d)]
    return {effects.OE: direct + indirect, effects.IDE: direct, effects.IIE: indirect}


def _resolve_contrast(schema: CausalSchema, contrast: Optional[Tuple[float, float]]) -> Tuple[float, float]:
    if contrast is None:
        return schema.d, schema.d_star
    _check_treatment(schema, contrast, "Contrast")
    if contrast[0] == contrast[1]:
        raise ConfigError("Contrast values must differ")
    return float(contrast[0]), float(contrast[1])


def estimate_natural_pse(bundle: ModelBundle, dataset: CausalDataset, J: int, streams: RandomStreams,
                         contrast: Optional[Tuple[float, float]] = None, threads: int = 1) -> EffectReport:
    """Simulate the four psi values once each and form the natural and path-specific effects."""
    d, d_star = _resolve_contrast(bundle.schema, contrast)
    psi = {a: simulate_psi(bundle, dataset, a, J, streams, threads) for a in psi_assignments(d, d_star)}
    estimates = {name: EffectEstimate(value) for name, value in natural_pse_effects(psi, d, d_star).items()}
    means = {a.key: value for a, value in psi.items()}
    metadata = {"mode": NATURAL_PSE, "J": J, "seed": streams.seed, "n": dataset.n}
    return EffectReport(estimates, marginal_means=means, metadata=metadata)


def estimate_interventional(bundle: ModelBundle, dataset: CausalDataset, J: int, streams: RandomStreams,
                            contrast: Optional[Tuple[float, float]] = None, threads: int = 1) -> EffectReport:
    """Simulate the three lambda values once each and form IDE, IIE and OE."""
    d, d_star = _resolve_contrast(bundle.schema, contrast)
    lam = {a: simulate_lambda(bundle, dataset, a, J, streams, threads) for a in lambda_assignments(d, d_star)}
    estimates = {name: EffectEstimate(value) for name, value in interventional_effects(lam, d, d_star).items()}
    means = {a.key: value for a, value in lam.items()}
    metadata = {"mode": INTERVENTIONAL, "J": J, "seed": streams.seed, "n": dataset.n}
    return EffectReport(estimates, marginal_means=means, metadata=metadata)

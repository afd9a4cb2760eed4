"""
Parametric Conditional Models
Gaussian, Bernoulli-logit, ordinal-logit and Poisson-log GLMs fitted by Newton-Raphson
maximum likelihood and sampled by inversion of a single uniform innovation.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.special import expit, gammaln, ndtri

from src.models.schema import CausalDataset, VariableKind
from src.models.terms import TermSpec, design_matrix, design_row
from src.utils.errors import ConvergenceError, ModelFitError, SchemaError, SeparationError

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 100
# Convergence is judged on the per-row mean score: max |gradient| / n.
MEAN_SCORE_TOLERANCE = 1e-8
STEP_TOLERANCE = 1e-6
SEPARATION_PROBABILITY = 1e-10
SEPARATION_NORM = 10.0
MAX_STEP_HALVINGS = 60


class Family(Enum):
    """Conditional distribution family with its canonical link."""
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"
    ORDINAL = "ordinal"
    POISSON = "poisson"

    @property
    def response_kind(self) -> VariableKind:
        return {
            Family.GAUSSIAN: VariableKind.CONTINUOUS,
            Family.BERNOULLI: VariableKind.BINARY,
            Family.ORDINAL: VariableKind.ORDINAL,
            Family.POISSON: VariableKind.COUNT,
        }[self]

    @classmethod
    def for_kind(cls, kind: VariableKind) -> "Family":
        """Default family for a response kind."""
        for family in cls:
            if family.response_kind is kind:
                return family
        raise ModelFitError(f"No family for kind '{kind.value}'")


@dataclass(frozen=True)
class FittedGLM:
    """A fitted conditional distribution that can be sampled.

    ``coefficients`` is aligned with ``design_row`` (intercept first). For the
    ordinal family the intercept is absorbed by ``thresholds`` and fixed at 0.
    """
    family: Family
    terms: TermSpec
    response: str
    coefficients: Tuple[float, ...]
    log_likelihood: float
    converged: bool
    iterations: int
    n_obs: int
    dispersion: Optional[float] = None
    thresholds: Optional[Tuple[float, ...]] = None
    # max |d loglik / d theta| / n_obs at the returned estimates
    gradient_norm: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if len(self.coefficients) != len(self.terms) + 1:
            raise ModelFitError(f"Expected {len(self.terms) + 1} coefficients, got {len(self.coefficients)}")
        if self.family is Family.GAUSSIAN and not (self.dispersion is not None and self.dispersion > 0):
            raise ModelFitError(f"Gaussian dispersion must be positive, got {self.dispersion}")
        if self.family is Family.ORDINAL:
            if not self.thresholds:
                raise ModelFitError("Ordinal model needs at least one threshold")
            tau = np.asarray(self.thresholds, dtype=float)
            if np.any(np.diff(tau) <= 0):
                raise ModelFitError(f"Ordinal thresholds must be strictly increasing: {list(tau)}")
            object.__setattr__(self, "thresholds", tuple(float(t) for t in tau))

    @property
    def target(self) -> str:
        return self.response

    @property
    def parents(self) -> Tuple[str, ...]:
        return tuple(self.terms.variables)

    @property
    def levels(self) -> Optional[int]:
        return len(self.thresholds) + 1 if self.thresholds else None

    @property
    def beta(self) -> np.ndarray:
        return np.asarray(self.coefficients, dtype=np.float64)

    def linear_predictor(self, columns: Mapping[str, Any], n: Optional[int] = None) -> np.ndarray:
        return design_matrix(self.terms, columns, n) @ self.beta

    def sample_innovations(self, columns: Mapping[str, Any], u: np.ndarray) -> np.ndarray:
        """Draw one value per uniform innovation ``u`` in (0, 1).

        Args:
            columns: Predictor values (arrays of len(u) or scalars)
            u: Uniform innovations, one per draw

        Returns:
            numpy.ndarray: Sampled responses
        """
        u = np.asarray(u, dtype=np.float64).ravel()
        eta = self.linear_predictor(columns, u.size)
        return _draw(self, eta, u)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family.value,
            "response": self.response,
            "terms": self.terms.labels,
            "coefficients": list(self.coefficients),
            "dispersion": self.dispersion,
            "thresholds": list(self.thresholds) if self.thresholds else None,
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_obs": self.n_obs,
            "gradient_norm": self.gradient_norm,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FittedGLM":
        thresholds = data.get("thresholds")
        return cls(
            family=Family(data["family"]),
            terms=TermSpec.parse(data.get("terms", [])),
            response=data["response"],
            coefficients=tuple(data["coefficients"]),
            log_likelihood=float(data["log_likelihood"]),
            converged=bool(data["converged"]),
            iterations=int(data["iterations"]),
            n_obs=int(data.get("n_obs", 0)),
            dispersion=data.get("dispersion"),
            thresholds=tuple(thresholds) if thresholds else None,
            gradient_norm=float(data.get("gradient_norm", 0.0)),
        )


def _draw(model: FittedGLM, eta: np.ndarray, u: np.ndarray) -> np.ndarray:
    if model.family is Family.GAUSSIAN:
        return eta + np.sqrt(model.dispersion) * ndtri(u)
    if model.family is Family.BERNOULLI:
        return (u < expit(eta)).astype(np.float64)
    if model.family is Family.ORDINAL:
        cumulative = expit(np.asarray(model.thresholds)[None, :] - eta[:, None])
        return np.sum(u[:, None] > cumulative, axis=1).astype(np.float64)
    return stats.poisson.ppf(u, np.exp(eta)).astype(np.float64)


def sample(model: FittedGLM, record: Mapping[str, float], rng: np.random.Generator) -> float:
    """Draw one value from the fitted conditional distribution at ``record``."""
    if not model.converged:
        raise ModelFitError(f"Model for '{model.response}' did not converge; refusing to sample")
    u = max(rng.random(), np.finfo(float).tiny)
    eta = float(design_row(model.terms, record) @ model.beta)
    return float(_draw(model, np.array([eta]), np.array([u]))[0])


def predict_proba(model: FittedGLM, columns: Mapping[str, Any], n: Optional[int] = None) -> np.ndarray:
    """Category probabilities, one row per record (bernoulli and ordinal families)."""
    eta = model.linear_predictor(columns, n)
    if model.family is Family.BERNOULLI:
        p = expit(eta)
        return np.column_stack([1.0 - p, p])
    if model.family is Family.ORDINAL:
        cumulative = expit(np.asarray(model.thresholds)[None, :] - eta[:, None])
        padded = np.column_stack([np.zeros(eta.size), cumulative, np.ones(eta.size)])
        return np.diff(padded, axis=1)
    raise ModelFitError(f"Family '{model.family.value}' has no finite category probabilities")


def predict_mean(model: FittedGLM, columns: Mapping[str, Any], n: Optional[int] = None) -> np.ndarray:
    """Conditional mean of the response."""
    if model.family is Family.GAUSSIAN:
        return model.linear_predictor(columns, n)
    if model.family is Family.POISSON:
        return np.exp(model.linear_predictor(columns, n))
    probs = predict_proba(model, columns, n)
    return probs @ np.arange(probs.shape[1], dtype=np.float64)


def log_likelihood(model: FittedGLM, dataset: CausalDataset) -> float:
    """Pointwise log-likelihood of ``dataset`` under ``model`` (scipy densities)."""
    y = dataset.column(model.response)
    eta = model.linear_predictor(dataset.columns, dataset.n)
    if model.family is Family.GAUSSIAN:
        return float(np.sum(stats.norm.logpdf(y, loc=eta, scale=np.sqrt(model.dispersion))))
    if model.family is Family.BERNOULLI:
        return float(np.sum(stats.bernoulli.logpmf(y.astype(np.int64), expit(eta))))
    if model.family is Family.POISSON:
        return float(np.sum(stats.poisson.logpmf(y.astype(np.int64), np.exp(eta))))
    probs = predict_proba(model, dataset.columns, dataset.n)
    return float(np.sum(np.log(probs[np.arange(y.size), y.astype(np.int64)])))


def fit_mle(family: Family, terms: TermSpec, response: str, dataset: CausalDataset,
            max_iterations: int = MAX_ITERATIONS) -> FittedGLM:
    """Fit a GLM by maximum likelihood.

    Newton-Raphson with step halving, started at zero coefficients (ordinal
    thresholds at the empirical cumulative logits). Deterministic.

    Args:
        family: Distribution family
        terms: Linear predictor specification
        response: Response variable name
        dataset: Data to fit
        max_iterations: Newton iteration cap

    Returns:
        FittedGLM: The converged model
    """
    var = dataset.schema.variable(response)
    if var.kind is not family.response_kind:
        raise ModelFitError(f"Family '{family.value}' needs a {family.response_kind.value} response; "
                            f"'{response}' is {var.kind.value}")
    if terms.references(response):
        raise ModelFitError(f"Terms for '{response}' reference the response itself")
    for name in terms.variables:
        if name not in dataset.columns:
            raise SchemaError(f"Term variable '{name}' is not in the dataset", column=name)
    X = design_matrix(terms, dataset.columns, dataset.n)
    y = np.asarray(dataset.column(response), dtype=np.float64)
    n, p = X.shape
    n_params = p + (var.levels - 2 if family is Family.ORDINAL else 0) + (1 if family is Family.GAUSSIAN else 0)
    if n <= n_params:
        raise ModelFitError(f"Need more rows than parameters for '{response}': n={n}, parameters={n_params}")
    logger.debug("Fitting %s model for '%s' with %d terms on %d rows", family.value, response, p - 1, n)

    if family is Family.GAUSSIAN:
        model = _fit_gaussian(terms, response, X, y)
    elif family is Family.ORDINAL:
        model = _fit_ordinal(terms, response, X, y, var.levels, max_iterations)
    else:
        model = _fit_canonical(family, terms, response, X, y, max_iterations)
    logger.info("Fitted %s model for '%s': log-likelihood %.6f after %d iteration(s)",
                family.value, response, model.log_likelihood, model.iterations)
    return model


def _newton(theta: np.ndarray, loglik: Callable[[np.ndarray], float],
            grad_hess: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]],
            n: int, max_iterations: int, label: str,
            separation_check: Optional[Callable[[np.ndarray, np.ndarray], None]] = None):
    """Maximize a concave log-likelihood. Returns (theta, ll, iterations, gradient_norm).

    Converged means a flat gradient and a negligible Newton step; a flat gradient
    alone is also what a diverging fit under separation looks like.
    """
    ll = loglik(theta)
    if not np.isfinite(ll):
        raise ModelFitError(f"Log-likelihood of '{label}' is not finite at the starting values")
    for iteration in range(1, max_iterations + 1):
        g, H = grad_hess(theta)
        g_norm = float(np.max(np.abs(g))) / n
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, g, rcond=None)[0]
        if g_norm <= MEAN_SCORE_TOLERANCE and float(np.max(np.abs(step))) <= STEP_TOLERANCE:
            return theta, ll, iteration - 1, g_norm
        t = 1.0
        for _ in range(MAX_STEP_HALVINGS):
            candidate = theta + t * step
            candidate_ll = loglik(candidate)
            if np.isfinite(candidate_ll) and candidate_ll >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            raise ConvergenceError(f"Line search failed for '{label}' at iteration {iteration}",
                                   last_iterate=theta.copy(), iterations=iteration)
        old_norm = float(np.linalg.norm(theta))
        theta, ll = candidate, candidate_ll
        logger.debug("%s iteration %d: log-likelihood %.10f, step %.3g", label, iteration, ll, t)
        if separation_check is not None:
            separation_check(theta, np.array([old_norm]))
    g, _ = grad_hess(theta)
    g_norm = float(np.max(np.abs(g))) / n
    raise ConvergenceError(f"Model for '{label}' did not converge in {max_iterations} iterations "
                           f"(gradient {g_norm:.3g})", last_iterate=theta.copy(), iterations=max_iterations)


def _fit_gaussian(terms: TermSpec, response: str, X: np.ndarray, y: np.ndarray) -> FittedGLM:
    n = X.shape[0]
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    iterations = 1
    residual = y - X @ beta
    sigma2 = float(residual @ residual) / n
    if not sigma2 > 0:
        raise ModelFitError(f"Gaussian model for '{response}' fits the data exactly; dispersion is 0")
    g_norm = float(np.max(np.abs(X.T @ residual))) / sigma2 / n
    if g_norm > MEAN_SCORE_TOLERANCE:
        # One refinement step on the residuals removes round-off from the first solve.
        beta = beta + np.linalg.lstsq(X, residual, rcond=None)[0]
        iterations = 2
        residual = y - X @ beta
        sigma2 = float(residual @ residual) / n
        g_norm = float(np.max(np.abs(X.T @ residual))) / sigma2 / n
    if g_norm > MEAN_SCORE_TOLERANCE:
        raise ConvergenceError(f"Least squares for '{response}' left gradient {g_norm:.3g}",
                               last_iterate=beta, iterations=iterations)
    ll = -0.5 * n * (np.log(2.0 * np.pi * sigma2) + 1.0)
    return FittedGLM(Family.GAUSSIAN, terms, response, tuple(beta), float(ll), True, iterations, n,
                     dispersion=sigma2, gradient_norm=g_norm)


def _fit_canonical(family: Family, terms: TermSpec, response: str, X: np.ndarray, y: np.ndarray,
                   max_iterations: int) -> FittedGLM:
    n, p = X.shape
    log_y_factorial = gammaln(y + 1.0) if family is Family.POISSON else None

    def loglik(beta):
        eta = X @ beta
        if family is Family.BERNOULLI:
            return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        with np.errstate(over="ignore"):
            return float(np.sum(y * eta - np.exp(eta) - log_y_factorial))

    def grad_hess(beta):
        eta = X @ beta
        mean = expit(eta) if family is Family.BERNOULLI else np.exp(eta)
        weight = mean * (1.0 - mean) if family is Family.BERNOULLI else mean
        return X.T @ (y - mean), -(X.T * weight) @ X

    def separation_check(beta, old_norm):
        if family is not Family.BERNOULLI:
            return
        prob = expit(X @ beta)
        norm = float(np.linalg.norm(beta))
        extreme = np.minimum(prob, 1.0 - prob) < SEPARATION_PROBABILITY
        if extreme.any() and norm > SEPARATION_NORM and norm > old_norm[0]:
            raise SeparationError(
                f"Quasi-complete separation in the model for '{response}': {int(extreme.sum())} fitted "
                f"probabilities within {SEPARATION_PROBABILITY:g} of 0/1, coefficient norm {norm:.1f}")

    beta, ll, iterations, g_norm = _newton(np.zeros(p), loglik, grad_hess, n, max_iterations, response,
                                           separation_check)
    return FittedGLM(family, terms, response, tuple(beta), ll, True, iterations, n, gradient_norm=g_norm)


def _ordinal_pieces(tau: np.ndarray, eta: np.ndarray, y: np.ndarray):
    """Per-observation upper/lower CDF values, densities and slopes of the logistic."""
    n_thresholds = tau.size
    k = y.astype(np.int64)
    has_upper = k < n_thresholds
    has_lower = k > 0
    a = np.where(has_upper, tau[np.minimum(k, n_thresholds - 1)] - eta, np.inf)
    b = np.where(has_lower, tau[np.maximum(k - 1, 0)] - eta, -np.inf)
    F_a, F_b = expit(a), expit(b)
    # Subtract in the tail that avoids cancellation.
    p = np.where(b > 0, expit(-b) - expit(-a), F_a - F_b)
    g_a = np.where(has_upper, F_a * (1.0 - F_a), 0.0)
    g_b = np.where(has_lower, F_b * (1.0 - F_b), 0.0)
    h_a = g_a * (1.0 - 2.0 * F_a)
    h_b = g_b * (1.0 - 2.0 * F_b)
    return k, has_upper, has_lower, p, g_a, g_b, h_a, h_b


def _fit_ordinal(terms: TermSpec, response: str, X: np.ndarray, y: np.ndarray, levels: int,
                 max_iterations: int) -> FittedGLM:
    n = X.shape[0]
    Z = X[:, 1:]
    n_thresholds = levels - 1
    counts = np.bincount(y.astype(np.int64), minlength=levels)
    if np.any(counts == 0):
        missing = [int(c) for c in np.flatnonzero(counts == 0)]
        raise SeparationError(f"Ordinal response '{response}' never takes level(s) {missing}; "
                              f"thresholds are not identified")
    cumulative = np.cumsum(counts)[:-1] / n
    tau0 = np.log(cumulative / (1.0 - cumulative))
    theta0 = np.concatenate([tau0, np.zeros(Z.shape[1])])

    A = np.zeros((n, n_thresholds))
    B = np.zeros((n, n_thresholds))
    k_obs = y.astype(np.int64)
    rows = np.arange(n)
    A[rows[k_obs < n_thresholds], k_obs[k_obs < n_thresholds]] = 1.0
    B[rows[k_obs > 0], k_obs[k_obs > 0] - 1] = 1.0

    def split(theta):
        return theta[:n_thresholds], theta[n_thresholds:]

    def loglik(theta):
        tau, beta = split(theta)
        if np.any(np.diff(tau) <= 0):
            return -np.inf
        p = _ordinal_pieces(tau, Z @ beta, y)[3]
        if np.any(p <= 0):
            return -np.inf
        return float(np.sum(np.log(p)))

    def grad_hess(theta):
        tau, beta = split(theta)
        _, _, _, p, g_a, g_b, h_a, h_b = _ordinal_pieces(tau, Z @ beta, y)
        p2 = p * p
        d_eta = -(g_a - g_b) / p
        grad = np.concatenate([A.T @ (g_a / p) - B.T @ (g_b / p), Z.T @ d_eta])
        w_aa = h_a / p - g_a * g_a / p2
        w_bb = -h_b / p - g_b * g_b / p2
        w_ab = g_a * g_b / p2
        H_tt = (A.T * w_aa) @ A + (B.T * w_bb) @ B + (A.T * w_ab) @ B + (B.T * w_ab) @ A
        c_a = -h_a / p + g_a * (g_a - g_b) / p2
        c_b = h_b / p - g_b * (g_a - g_b) / p2
        H_tb = (A.T * c_a) @ Z + (B.T * c_b) @ Z
        c_eta = (h_a - h_b) / p - (g_a - g_b) ** 2 / p2
        H_bb = (Z.T * c_eta) @ Z
        H = np.block([[H_tt, H_tb], [H_tb.T, H_bb]])
        return grad, H

    def separation_check(theta, old_norm):
        tau, beta = split(theta)
        p = _ordinal_pieces(tau, Z @ beta, y)[3]
        norm = float(np.linalg.norm(beta))
        extreme = p > 1.0 - SEPARATION_PROBABILITY
        if extreme.any() and norm > SEPARATION_NORM and float(np.linalg.norm(theta)) > old_norm[0]:
            raise SeparationError(
                f"Quasi-complete separation in the ordinal model for '{response}': coefficient norm {norm:.1f}")

    theta, ll, iterations, g_norm = _newton(theta0, loglik, grad_hess, n, max_iterations, response,
                                            separation_check)
    tau, beta = split(theta)
    coefficients = (0.0,) + tuple(beta)
    return FittedGLM(Family.ORDINAL, terms, response, coefficients, ll, True, iterations, n,
                     thresholds=tuple(tau), gradient_norm=g_norm)

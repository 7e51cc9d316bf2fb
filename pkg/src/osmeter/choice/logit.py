"""Maximum likelihood for binary and multinomial logit.

Both estimators use Newton-Raphson from a zero start with step halving. The
log-likelihood of a logit is concave, so a full Newton step is accepted
whenever it does not decrease the objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from osmeter.choice.design import ASC, Design

log = logging.getLogger(__name__)

MAX_ITER = 100
GRAD_TOL = 1e-6
SEPARATION_BOUND = 50.0
MAX_HALVINGS = 40
SINGULAR_COND = 1e12


class EstimationError(RuntimeError):
    pass


class SeparationError(EstimationError):
    def __init__(self, parameter: str, value: float):
        super().__init__(f"separation: coefficient {parameter!r} diverged to {value:.3g}")
        self.parameter = parameter
        self.value = value


class SingularHessianError(EstimationError):
    def __init__(self, condition: float):
        super().__init__(f"singular Hessian (condition number {condition:.3g})")
        self.condition = condition


class NestingError(EstimationError):
    pass


@dataclass
class ChoiceModelResult:
    param_names: tuple[str, ...]
    estimates: np.ndarray
    classical_se: np.ndarray
    robust_se: np.ndarray
    loglik_final: float
    loglik_null: float
    K: int
    n_params: int
    n_obs: int
    converged: bool
    gradient_norm: float
    iterations: int
    hessian: np.ndarray = field(repr=False)
    scores: np.ndarray = field(repr=False)
    param_alternatives: tuple[tuple[str, ...], ...] = ()
    alternatives: tuple[str, ...] = ()
    loglik_path: tuple[float, ...] = field(default=(), repr=False)

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.param_names, map(float, self.estimates)))

    @property
    def robust_z(self) -> np.ndarray:
        return self.estimates / self.robust_se

    @property
    def p_values(self) -> np.ndarray:
        return special.erfc(np.abs(self.robust_z) / np.sqrt(2.0))

    @property
    def rho2_adjusted(self) -> float:
        return adjusted_rho2(self.loglik_final, self.loglik_null, self.K)

    def table(self) -> list[dict]:
        rows = []
        for i, name in enumerate(self.param_names):
            p = float(self.p_values[i])
            rows.append({
                "parameter": name,
                "alternatives": "+".join(self.param_alternatives[i]) if self.param_alternatives else "",
                "estimate": float(self.estimates[i]),
                "classical_se": float(self.classical_se[i]),
                "robust_se": float(self.robust_se[i]),
                "robust_z": float(self.robust_z[i]),
                "p_value": p,
                "stars": stars(p),
            })
        return rows

    def fit_block(self) -> dict[str, float | int | bool]:
        return {
            "L(c)": self.loglik_null,
            "L(beta)": self.loglik_final,
            "K": self.K,
            "n_free_params": self.n_params,
            "N": self.n_obs,
            "rho2_adjusted": self.rho2_adjusted,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
        }


def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def adjusted_rho2(loglik_final: float, loglik_null: float, K: int) -> float:
    """1 - (L(beta) - K) / L(c)."""
    return 1.0 - (loglik_final - K) / loglik_null


def chi2_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution via the regularized incomplete gamma."""
    if df <= 0:
        return 1.0 if x <= 0 else 0.0
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


# -- likelihoods -------------------------------------------------------------------


def binary_probabilities(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return special.expit(X @ beta)


def binary_loglik(X: np.ndarray, y: np.ndarray, beta: np.ndarray):
    """Log-likelihood, gradient, Hessian and per-observation scores."""
    eta = X @ beta
    # log P = -log(1 + e^-eta), log(1 - P) = -log(1 + e^eta)
    ll = float(np.sum(-y * np.logaddexp(0.0, -eta) - (1 - y) * np.logaddexp(0.0, eta)))
    p = special.expit(eta)
    scores = X * (y - p)[:, None]
    grad = scores.sum(axis=0)
    hess = -(X * (p * (1 - p))[:, None]).T @ X
    return ll, grad, hess, scores


def mnl_probabilities(Z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """(J, N) choice probabilities; reference slices of Z are zero."""
    V = Z @ beta
    V -= V.max(axis=0, keepdims=True)
    expV = np.exp(V)
    return expV / expV.sum(axis=0, keepdims=True)


def mnl_loglik(Z: np.ndarray, y: np.ndarray, beta: np.ndarray):
    J, N, _ = Z.shape
    V = Z @ beta
    logsum = special.logsumexp(V, axis=0)
    rows = np.arange(N)
    ll = float(np.sum(V[y, rows] - logsum))
    P = np.exp(V - logsum)
    Zbar = np.einsum("jn,jnp->np", P, Z)
    scores = Z[y, rows, :] - Zbar
    grad = scores.sum(axis=0)
    hess = -(np.einsum("jn,jnp,jnq->pq", P, Z, Z) - Zbar.T @ Zbar)
    return ll, grad, hess, scores


def mnl_null_loglik(y: np.ndarray, J: int) -> float:
    """Constants-only log-likelihood in closed form: sum n_j log(n_j / N)."""
    counts = np.bincount(y, minlength=J).astype(float)
    n = counts.sum()
    nz = counts[counts > 0]
    return float(np.sum(nz * np.log(nz / n)))


# -- Newton-Raphson ----------------------------------------------------------------


@dataclass
class NewtonTrace:
    beta: np.ndarray
    loglik: float
    grad: np.ndarray
    hess: np.ndarray
    scores: np.ndarray
    converged: bool
    iterations: int
    path: list[float]


def _solve(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        cond = np.linalg.cond(hess)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularHessianError(float(cond))
    return np.linalg.solve(hess, grad)


def newton(
    objective: Callable[[np.ndarray], tuple],
    n_params: int,
    names: Sequence[str],
    max_iter: int = MAX_ITER,
    tol: float = GRAD_TOL,
) -> NewtonTrace:
    beta = np.zeros(n_params)
    ll, grad, hess, scores = objective(beta)
    path = [ll]
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad), initial=0.0) < tol:
            return NewtonTrace(beta, ll, grad, hess, scores, True, it - 1, path)
        step = -_solve(hess, grad)
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = beta + t * step
            c_ll, c_grad, c_hess, c_scores = objective(cand)
            if np.isfinite(c_ll) and c_ll >= ll:
                break
            t *= 0.5
        else:
            log.warning("line search failed at iteration %d", it)
            return NewtonTrace(beta, ll, grad, hess, scores, False, it, path)
        beta, ll, grad, hess, scores = cand, c_ll, c_grad, c_hess, c_scores
        path.append(ll)
        big = np.abs(beta) > SEPARATION_BOUND
        if big.any():
            i = int(np.argmax(np.abs(beta)))
            raise SeparationError(names[i], float(beta[i]))
    converged = bool(np.max(np.abs(grad), initial=0.0) < tol)
    return NewtonTrace(beta, ll, grad, hess, scores, converged, max_iter, path)


def sandwich(hessian: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Robust covariance H^-1 G H^-1 with G the outer product of per-observation scores."""
    try:
        cond = np.linalg.cond(hessian)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularHessianError(float(cond))
    h_inv = np.linalg.inv(hessian)
    G = scores.T @ scores
    return h_inv @ G @ h_inv


def robust_se(result: ChoiceModelResult, scores: np.ndarray | None = None) -> np.ndarray:
    cov = sandwich(result.hessian, result.scores if scores is None else scores)
    return np.sqrt(np.diag(cov))


def _classical_se(hessian: np.ndarray) -> np.ndarray:
    return np.sqrt(np.diag(np.linalg.inv(-hessian)))


def _finish(trace: NewtonTrace, names, alternatives, param_alts, null_ll, K, n_obs) -> ChoiceModelResult:
    if trace.converged:
        rse = np.sqrt(np.diag(sandwich(trace.hess, trace.scores)))
        cse = _classical_se(trace.hess)
    else:
        log.warning("estimation did not converge after %d iterations", trace.iterations)
        rse = np.full(len(names), np.nan)
        cse = np.full(len(names), np.nan)
    return ChoiceModelResult(
        param_names=tuple(names),
        estimates=trace.beta,
        classical_se=cse,
        robust_se=rse,
        loglik_final=trace.loglik,
        loglik_null=null_ll,
        K=K,
        n_params=len(names),
        n_obs=n_obs,
        converged=trace.converged,
        gradient_norm=float(np.max(np.abs(trace.grad), initial=0.0)),
        iterations=trace.iterations,
        hessian=trace.hess,
        scores=trace.scores,
        param_alternatives=tuple(param_alts),
        alternatives=tuple(alternatives),
        loglik_path=tuple(trace.path),
    )


def fit_binary_logit(
    design: Design | np.ndarray,
    outcome: np.ndarray | None = None,
    names: Sequence[str] | None = None,
    max_iter: int = MAX_ITER,
) -> ChoiceModelResult:
    """Binary logit P = exp(v) / (1 + exp(v)).

    ``design`` is either a two-alternative :class:`Design` (the non-reference
    alternative is the positive outcome) or a plain (N, K) matrix whose
    intercept column, if any, is supplied by the caller together with a 0/1
    ``outcome``.
    """
    if isinstance(design, Design):
        if len(design.alternatives) != 2:
            raise EstimationError("binary logit needs exactly two alternatives")
        pos = 1 - design.reference
        X = design.Z[pos]
        y = (design.y == pos).astype(float)
        names = design.param_names
        explanatory = int(design.explanatory.sum())
        alternatives, param_alts = design.alternatives, design.param_alternatives
        has_const = not design.explanatory.all()
    else:
        X = np.asarray(design, dtype=float)
        if outcome is None:
            raise EstimationError("outcome is required with a plain design matrix")
        y = np.asarray(outcome, dtype=float)
        names = tuple(names or (f"x{i}" for i in range(X.shape[1])))
        const = np.all(X == 1.0, axis=0)
        explanatory = int((~const).sum())
        alternatives, param_alts = ("0", "1"), ()
        has_const = bool(const.any())
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise EstimationError("binary outcome must be 0/1")
    trace = newton(lambda b: binary_loglik(X, y, b), X.shape[1], names, max_iter)
    n = len(y)
    null_ll = mnl_null_loglik(y.astype(np.int64), 2) if has_const else n * np.log(0.5)
    return _finish(trace, names, alternatives, param_alts, null_ll, explanatory, n)


def fit_multinomial_logit(design: Design, max_iter: int = MAX_ITER) -> ChoiceModelResult:
    """Multinomial logit with utilities Z[j] @ beta and the reference fixed at zero."""
    J = len(design.alternatives)
    trace = newton(lambda b: mnl_loglik(design.Z, design.y, b), design.n_params,
                   design.param_names, max_iter)
    has_const = ASC in design.param_columns
    null_ll = mnl_null_loglik(design.y, J) if has_const else design.n_obs * np.log(1.0 / J)
    return _finish(trace, design.param_names, design.alternatives, design.param_alternatives,
                   null_ll, int(design.explanatory.sum()), design.n_obs)


def fit(design: Design, max_iter: int = MAX_ITER) -> ChoiceModelResult:
    if len(design.alternatives) == 2:
        return fit_binary_logit(design, max_iter=max_iter)
    return fit_multinomial_logit(design, max_iter)


def lr_test(restricted: ChoiceModelResult, full: ChoiceModelResult) -> tuple[float, int, float]:
    """Likelihood ratio test of a nested restriction: (statistic, df, p)."""
    if full.loglik_final < restricted.loglik_final - 1e-6:
        raise NestingError(
            f"full model log-likelihood {full.loglik_final:.6f} is below the restricted "
            f"{restricted.loglik_final:.6f}; the models are not nested")
    df = full.n_params - restricted.n_params
    stat = max(0.0, 2.0 * (full.loglik_final - restricted.loglik_final))
    if df < 0:
        raise NestingError("restricted model has more free parameters than the full model")
    if df == 0:
        return stat, 0, 1.0
    return stat, df, chi2_sf(stat, df)

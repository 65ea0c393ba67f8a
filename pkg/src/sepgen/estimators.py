"""PATE and SATE estimators given a separating set.

The weighting route follows the case-weighted stacked-logistic sampling
model: experiment rows get weight 1, population rows get m/(N - n) where N
is the declared size of the actual target population (N = n + m turns the
adjustment off). Generalization weights are

    pi_i = 1 / Pr(S=1 | W_i) * Pr(S=0 | W_i) / Pr(S=0)

with Pr(S=0) the case-weighted mean of the fitted complement probabilities;
the Hajek ratio form makes that normalizer irrelevant to the point estimate.
The outcome-model route fits per-arm least squares on the experiment and
averages predicted contrasts over population rows; the augmented estimator
combines both and is consistent when either component is right.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import StackedDataset, expand_design
from .errors import (
    DegenerateArmError,
    NonConvergenceError,
    RankDeficiencyError,
    SampleSizeError,
    SeparationError,
)

logger = logging.getLogger(__name__)

IPW = "ipw"
OUTCOME_MODEL = "outcome_model"
AIPW = "aipw"
SATE_DIM = "sate_dim"

_ESTIMATOR_KINDS = (IPW, OUTCOME_MODEL, AIPW, SATE_DIM)

_ETA_CLIP = 30.0
_PROB_EPS = 1e-12
_GRAD_TOL = 1e-8


@dataclass(frozen=True)
class PateEstimate:
    """Point estimate in outcome units, with bootstrap uncertainty if attached."""

    estimator: str
    point: float
    n_used: int
    m_used: int
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    set_used: tuple[str, ...] = ()

    def __post_init__(self):
        if self.estimator not in _ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.estimator!r}")
        if self.se is not None and self.se < 0:
            raise ValueError("standard error must be nonnegative")
        if (self.ci_low is None) != (self.ci_high is None):
            raise ValueError("confidence bounds must come as a pair")
        if self.ci_low is not None:
            if self.ci_low > self.ci_high:
                raise ValueError("ci_low must not exceed ci_high")
            if not (self.ci_low <= self.point <= self.ci_high):
                logger.warning(
                    "point estimate %.6g outside the percentile interval [%.6g, %.6g]",
                    self.point,
                    self.ci_low,
                    self.ci_high,
                )

    def to_json_dict(self, outcome: str | None = None) -> dict:
        row = {
            "estimator": self.estimator,
            "point": self.point,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "set_used": list(self.set_used),
        }
        if outcome is not None:
            row = {"outcome": outcome, **row}
        return row


@dataclass(frozen=True)
class SamplingModel:
    """Case-weighted logistic fit of the sampling indicator on a separating set."""

    w_names: tuple[str, ...]
    column_labels: tuple[str, ...]
    coefficients: np.ndarray
    fitted_probabilities: np.ndarray
    case_weights: np.ndarray
    sampling_indicator: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.fitted_probabilities, dtype=np.float64)
        if (probs <= 0).any() or (probs >= 1).any():
            raise ValueError("fitted probabilities must lie strictly inside (0, 1)")
        if not np.isfinite(np.asarray(self.coefficients)).all():
            raise ValueError("coefficients must be finite")


def treatment_probabilities(dataset: StackedDataset, constant: float | None = None) -> np.ndarray:
    """Per-experiment-row treatment probability p_i.

    Uses the given constant when supplied; otherwise the observed treated
    share within each stratum (when strata labels exist) or overall. Shares
    of 0 or 1 are degenerate because both arms must carry weight.
    """
    exp = dataset.experiment_rows
    t = dataset.t[exp]
    if constant is not None:
        if not 0.0 < constant < 1.0:
            raise ValueError("treatment probability must be strictly between 0 and 1")
        return np.full(len(exp), float(constant))
    if dataset.strata is not None:
        labels = np.asarray(dataset.strata)[exp]
        p = np.empty(len(exp))
        for lab in dict.fromkeys(labels.tolist()):
            mask = labels == lab
            share = float(t[mask].mean())
            if not 0.0 < share < 1.0:
                raise DegenerateArmError(f"stratum {lab!r} has a single treatment arm")
            p[mask] = share
        return p
    share = float(t.mean())
    if not 0.0 < share < 1.0:
        raise DegenerateArmError("experiment has a single treatment arm")
    return np.full(len(exp), share)


def _check_population_measured(dataset: StackedDataset, w_names) -> tuple[str, ...]:
    w_names = tuple(w_names)
    bad = [n for n in w_names if not dataset.spec_of(n).measured_in_population]
    if bad:
        raise ValueError(f"separating-set variables not measured in the population: {bad}")
    return w_names


def _drop_constant_columns(design: np.ndarray, labels: list[str]):
    keep = [j for j in range(design.shape[1]) if design[:, j].std() > 0]
    return design[:, keep], [labels[j] for j in keep]


def fit_sampling_model(
    dataset: StackedDataset,
    w_names,
    population_size_n: int | None = None,
) -> SamplingModel:
    """Weighted logistic regression of the sampling indicator on the set W.

    Newton iterations run until the infinity norm of the weighted score drops
    below 1e-8. Diverging linear predictors are reported as perfect
    separation with a hint to shrink W.
    """
    w_names = _check_population_measured(dataset, w_names)
    n = dataset.n_experiment
    m = dataset.m_population
    big_n = dataset.population_size_n if population_size_n is None else int(population_size_n)
    if big_n < n + m:
        raise ValueError("population size N must be at least n + m")
    pop_weight = m / (big_n - n) if big_n > n else 1.0
    s = dataset.s.astype(np.float64)
    cw = np.where(dataset.s == 1, 1.0, pop_weight)

    all_rows = np.arange(len(s))
    raw, labels = expand_design(dataset, w_names, all_rows)
    raw, labels = _drop_constant_columns(raw, labels)
    d = raw.shape[1]
    loc = raw.mean(axis=0) if d else np.zeros(0)
    scale = raw.std(axis=0) if d else np.zeros(0)
    xs = (raw - loc) / scale if d else raw
    design = np.column_stack([np.ones(len(s)), xs]) if d else np.ones((len(s), 1))

    beta = np.zeros(design.shape[1])
    eta = design @ beta

    def loglik(eta_now):
        mu_now = 1.0 / (1.0 + np.exp(-np.clip(eta_now, -_ETA_CLIP, _ETA_CLIP)))
        mu_now = np.clip(mu_now, _PROB_EPS, 1.0 - _PROB_EPS)
        return float(cw @ (s * np.log(mu_now) + (1.0 - s) * np.log(1.0 - mu_now)))

    converged = False
    current_ll = loglik(eta)
    for _ in range(100):
        mu = 1.0 / (1.0 + np.exp(-np.clip(eta, -_ETA_CLIP, _ETA_CLIP)))
        grad = design.T @ (cw * (s - mu))
        if np.abs(grad).max() < _GRAD_TOL:
            converged = True
            break
        wts = cw * np.maximum(mu * (1.0 - mu), 1e-10)
        hess = design.T @ (wts[:, None] * design)
        try:
            direction = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise RankDeficiencyError(
                "singular information matrix in the sampling model; W may be collinear",
                columns=labels,
            ) from None
        if np.abs(grad).max() < 1e-3:
            # inside the quadratic basin the likelihood's float resolution is
            # coarser than the remaining improvements; take plain Newton steps
            beta = beta + direction
            current_ll = loglik(design @ beta)
        else:
            step = 1.0
            for _half in range(40):
                cand = beta + step * direction
                cand_ll = loglik(design @ cand)
                if cand_ll >= current_ll - 1e-12:
                    beta, current_ll = cand, cand_ll
                    break
                step /= 2.0
            else:
                break
        eta = design @ beta
        if np.abs(beta).max() > 1e8:
            raise SeparationError(
                "sampling-model coefficients diverged (perfect separation); try a smaller W"
            )
    mu = 1.0 / (1.0 + np.exp(-np.clip(eta, -_ETA_CLIP, _ETA_CLIP)))
    if np.abs(s - mu).max() < 1e-4:
        # every row classified essentially perfectly: the likelihood has no
        # interior maximum and the coefficients diverge
        raise SeparationError(
            "sampling model separates the samples perfectly; try a smaller W"
        )
    if not converged:
        grad = design.T @ (cw * (s - mu))
        if np.abs(grad).max() < _GRAD_TOL:
            converged = True
        elif np.abs(eta).max() > 25.0:
            raise SeparationError(
                "sampling model separates the samples perfectly; try a smaller W"
            )
        else:
            raise NonConvergenceError(
                "sampling-model IRLS did not converge",
                achieved_tolerance=float(np.abs(grad).max()),
            )

    probs = np.clip(
        1.0 / (1.0 + np.exp(-np.clip(eta, -_ETA_CLIP, _ETA_CLIP))),
        _PROB_EPS,
        1.0 - _PROB_EPS,
    )
    coefficients = np.empty(d + 1)
    if d:
        slopes = beta[1:] / scale
        coefficients[0] = beta[0] - float(loc @ slopes)
        coefficients[1:] = slopes
    else:
        coefficients[0] = beta[0]
    return SamplingModel(
        w_names=w_names,
        column_labels=tuple(labels),
        coefficients=coefficients,
        fitted_probabilities=probs,
        case_weights=cw,
        sampling_indicator=dataset.s.copy(),
    )


def compute_weights(model: SamplingModel, cap: float | None = None) -> np.ndarray:
    """Generalization weights for experiment rows, in dataset row order."""
    probs = model.fitted_probabilities
    cw = model.case_weights
    pr_s0 = float(cw @ (1.0 - probs)) / float(cw.sum())
    exp = model.sampling_indicator == 1
    pi = (1.0 / probs[exp]) * ((1.0 - probs[exp]) / pr_s0)
    if cap is not None:
        if cap <= 0:
            raise ValueError("weight cap must be positive")
        pi = np.minimum(pi, cap)
    return pi


def _experiment_arrays(dataset: StackedDataset):
    exp = dataset.experiment_rows
    return exp, dataset.t[exp], dataset.y[exp]


def _as_prob_vector(p, n: int) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0:
        p = np.full(n, float(p))
    if p.shape != (n,):
        raise ValueError("treatment probabilities must be a scalar or one value per experiment row")
    if not np.isfinite(p).all() or (p <= 0).any() or (p >= 1).any():
        raise ValueError("treatment probabilities must lie strictly between 0 and 1")
    return p


def ipw_pate(dataset: StackedDataset, pi, p) -> PateEstimate:
    """Hajek inverse-probability-weighted PATE.

    Treated rows carry weight pi * p * T and control rows pi * (1-p) * (1-T);
    each arm is normalized by its total weight, so rescaling pi leaves the
    estimate unchanged.
    """
    exp, t, y = _experiment_arrays(dataset)
    n = len(exp)
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (n,):
        raise ValueError("pi must have one entry per experiment row")
    if (pi <= 0).any() or not np.isfinite(pi).all():
        raise ValueError("weights must be positive and finite")
    p = _as_prob_vector(p, n)
    wt = pi * p * t
    wc = pi * (1.0 - p) * (1.0 - t)
    denom_t = float(wt.sum())
    denom_c = float(wc.sum())
    if denom_t <= 0 or denom_c <= 0:
        raise DegenerateArmError("a treatment arm received zero total weight")
    point = float(wt @ y) / denom_t - float(wc @ y) / denom_c
    return PateEstimate(IPW, point, n_used=n, m_used=dataset.m_population)


def _arm_design(dataset: StackedDataset, w_names, rows):
    block, labels = expand_design(dataset, w_names, rows)
    return np.column_stack([np.ones(len(rows)), block]), ["(intercept)", *labels]


def _name_collinear(design: np.ndarray, labels) -> list[str]:
    bad = []
    rank = 0
    for j in range(design.shape[1]):
        new_rank = np.linalg.matrix_rank(design[:, : j + 1])
        if new_rank == rank:
            bad.append(labels[j])
        rank = new_rank
    return bad


def _fit_arm_models(dataset: StackedDataset, w_names):
    """Per-arm least squares of the outcome on W over experiment rows."""
    w_names = _check_population_measured(dataset, w_names)
    exp, t, y = _experiment_arrays(dataset)
    betas = {}
    designs = {}
    for arm in (1, 0):
        rows = exp[t == arm]
        if len(rows) < len(w_names) + 2:
            raise SampleSizeError(
                f"arm {arm} has {len(rows)} experiment rows; need at least {len(w_names) + 2}"
            )
        A, labels = _arm_design(dataset, w_names, rows)
        if np.linalg.matrix_rank(A) < A.shape[1]:
            raise RankDeficiencyError(
                f"collinear outcome-model design in arm {arm}",
                columns=_name_collinear(A, labels),
            )
        yy = dataset.y[rows]
        betas[arm] = np.linalg.solve(A.T @ A, A.T @ yy)
        designs[arm] = (rows, A)
    return w_names, betas, designs


def _population_contrast(dataset: StackedDataset, w_names, betas) -> float:
    pop = dataset.population_rows
    A_pop, _ = _arm_design(dataset, w_names, pop)
    return float(np.mean(A_pop @ betas[1] - A_pop @ betas[0]))


def outcome_model_pate(dataset: StackedDataset, w_names) -> PateEstimate:
    """Fully interacted outcome model: per-arm least squares, averaged over
    population rows."""
    w_names, betas, _ = _fit_arm_models(dataset, w_names)
    point = _population_contrast(dataset, w_names, betas)
    return PateEstimate(
        OUTCOME_MODEL,
        point,
        n_used=dataset.n_experiment,
        m_used=dataset.m_population,
        set_used=w_names,
    )


def aipw_pate(dataset: StackedDataset, w_names, pi, p) -> PateEstimate:
    """Augmented IPW: population-averaged model contrast plus Hajek-weighted
    residual corrections per arm. Equals the outcome model exactly when the
    residuals vanish, and the IPW estimator when the outcome model is zero."""
    w_names, betas, designs = _fit_arm_models(dataset, w_names)
    exp, t, y = _experiment_arrays(dataset)
    n = len(exp)
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (n,):
        raise ValueError("pi must have one entry per experiment row")
    p = _as_prob_vector(p, n)
    point = _population_contrast(dataset, w_names, betas)
    resid = np.zeros(n)
    for arm in (1, 0):
        rows, A = designs[arm]
        mask = t == arm
        resid[mask] = dataset.y[rows] - A @ betas[arm]
    wt = pi * p * t
    wc = pi * (1.0 - p) * (1.0 - t)
    denom_t = float(wt.sum())
    denom_c = float(wc.sum())
    if denom_t <= 0 or denom_c <= 0:
        raise DegenerateArmError("a treatment arm received zero total weight")
    correction = float(wt @ resid) / denom_t - float(wc @ resid) / denom_c
    return PateEstimate(
        AIPW,
        point + correction,
        n_used=n,
        m_used=dataset.m_population,
        set_used=w_names,
    )


def sate_dim(dataset: StackedDataset) -> PateEstimate:
    """Unweighted difference in means within the experiment."""
    _, t, y = _experiment_arrays(dataset)
    if (t == 1).sum() == 0 or (t == 0).sum() == 0:
        raise DegenerateArmError("both treatment arms are required")
    point = float(y[t == 1].mean() - y[t == 0].mean())
    return PateEstimate(SATE_DIM, point, n_used=len(t), m_used=dataset.m_population)

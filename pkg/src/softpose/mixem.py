"""Multimodal orientation extraction with an EM-fitted mixture over grid activations.

Each component θ_j = (q_j, σ_j², p(θ_j)) induces a distribution over the grid
bins: the kernel centered at q_j with variance σ_j², normalized over the bins,
which is exactly the soft-assignment encoding of q_j. Memberships, the
log-likelihood and the M-step updates are all expressed against that
distribution, so every EM iteration is monotone in the log-likelihood.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import logsumexp, softmax

from .rotcore import ArrayLike, compose, from_rotvec, normalized_distance
from .softcodec import KernelParams, SoftAssignment, average_quaternions
from .sogrid import OrientationGrid

logger = logging.getLogger(__name__)

VARIANCE_CEILING = 10.0


@dataclass
class MixtureComponent:
    """One orientation hypothesis: mean, kernel variance and prior."""

    mean: np.ndarray
    variance: float
    prior: float
    spread: float = float("nan")  # weighted second moment Σ w d²

    def to_dict(self) -> Dict[str, Any]:
        return {
            "q": [float(v) for v in self.mean],
            "sigma_sq": float(self.variance),
            "prior": float(self.prior),
            "spread": float(self.spread),
        }


@dataclass
class MixtureModel:
    """Mixture components sorted by descending prior."""

    components: List[MixtureComponent]
    log_likelihood: float = float("-inf")
    iterations: int = 0
    ll_history: List[float] = field(default_factory=list)
    degenerate_bins: int = 0

    def __post_init__(self):
        if not self.components:
            raise ValueError("a mixture needs at least one component")
        self.components = sorted(self.components, key=lambda c: -c.prior)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def variances(self) -> np.ndarray:
        return np.array([c.variance for c in self.components])

    @property
    def priors(self) -> np.ndarray:
        return np.array([c.prior for c in self.components])

    def hypotheses(self, n: int) -> List[np.ndarray]:
        """Means of the n strongest components."""
        return [c.mean for c in self.components[:n]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": self.k,
            "components": [c.to_dict() for c in self.components],
            "log_likelihood": float(self.log_likelihood),
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class EMConfig:
    """EM and model-selection settings. None radius means 2σ of the kernel."""

    k_max: int = 4
    nms_radius: Optional[float] = None
    ll_threshold: float = 0.01
    max_iter: int = 100
    mean_tol: float = 1e-4
    variance_floor: float = 1e-4
    prior_floor: float = 1e-3

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")
        if self.mean_tol <= 0:
            raise ValueError("mean_tol must be positive")
        if not 0 <= self.prior_floor < 1:
            raise ValueError("prior_floor must lie in [0, 1)")

    def radius(self, params: KernelParams) -> float:
        if self.nms_radius is not None:
            return self.nms_radius
        return 2.0 * math.sqrt(params.sigma_sq)


def _values(activations: Union[SoftAssignment, ArrayLike]) -> np.ndarray:
    if isinstance(activations, SoftAssignment):
        return activations.values
    return np.asarray(activations, dtype=float)


def _log_kernel_pmf(d2: np.ndarray, variance: float) -> np.ndarray:
    logits = -d2 / (2.0 * variance)
    return logits - logsumexp(logits, axis=-1, keepdims=True)


def component_log_likelihoods(grid: OrientationGrid, model: MixtureModel) -> np.ndarray:
    """log p(b_i|θ_j) as a (K, N) array."""
    d2 = normalized_distance(grid.bins[None, :, :], model.means[:, None, :]) ** 2
    logits = -d2 / (2.0 * model.variances[:, None])
    return logits - logsumexp(logits, axis=1, keepdims=True)


def _e_step(grid: OrientationGrid, activations, model: MixtureModel) -> Tuple[np.ndarray, int]:
    with np.errstate(divide="ignore"):
        log_joint = component_log_likelihoods(grid, model) + np.log(model.priors)[:, None]
    log_norm = logsumexp(log_joint, axis=0)
    membership = np.exp(log_joint - log_norm)
    bad = ~np.isfinite(log_norm)
    if np.any(bad):
        logger.warning(f"E-step: {int(bad.sum())} bins with zero total likelihood; using uniform membership")
        membership[:, bad] = 1.0 / model.k
    return membership, int(bad.sum())


def e_step(grid: OrientationGrid, activations: Union[SoftAssignment, ArrayLike],
           model: MixtureModel) -> np.ndarray:
    """Membership p(θ_j|b_i) as a (K, N) array whose columns sum to 1."""
    membership, _ = _e_step(grid, activations, model)
    return membership


def log_likelihood(grid: OrientationGrid, activations: Union[SoftAssignment, ArrayLike],
                   model: MixtureModel) -> float:
    """L = Σ_i a_i · log Σ_j p(b_i|θ_j) p(θ_j)."""
    a = _values(activations)
    with np.errstate(divide="ignore"):
        log_joint = component_log_likelihoods(grid, model) + np.log(model.priors)[:, None]
    log_mix = logsumexp(log_joint, axis=0)
    active = a > 0
    return float(np.dot(a[active], log_mix[active]))


def _expected_ll(bins: np.ndarray, weights: np.ndarray, q: np.ndarray, variance: float) -> float:
    d2 = normalized_distance(bins, q) ** 2
    return float(weights @ _log_kernel_pmf(d2, variance))


def _update_mean(bins: np.ndarray, weights: np.ndarray, current: np.ndarray, variance: float) -> np.ndarray:
    # weighted average first, then a local refinement of the component objective
    try:
        seed = average_quaternions(bins, weights)
    except ValueError:
        seed = current
    step = float(np.clip(0.25 * np.pi * math.sqrt(variance), 1e-3, 0.2))
    simplex = np.vstack([np.zeros(3), step * np.eye(3)])
    result = minimize(
        lambda v: -_expected_ll(bins, weights, compose(seed, from_rotvec(v)), variance),
        np.zeros(3),
        method="Nelder-Mead",
        options={"initial_simplex": simplex, "xatol": 1e-7, "fatol": 1e-12, "maxiter": 2000},
    )
    candidate = compose(seed, from_rotvec(result.x))
    if _expected_ll(bins, weights, candidate, variance) >= _expected_ll(bins, weights, current, variance):
        return candidate
    return current


def _second_moment(d2: np.ndarray, variance: float) -> float:
    return float(softmax(-d2 / (2.0 * variance)) @ d2)


def match_variance(d2: np.ndarray, target: float, floor: float,
                   ceiling: float = VARIANCE_CEILING) -> float:
    """Kernel variance whose grid-normalized second moment equals ``target``."""
    if _second_moment(d2, floor) >= target:
        return floor
    if _second_moment(d2, ceiling) <= target:
        return ceiling
    log_var = brentq(lambda x: _second_moment(d2, math.exp(x)) - target,
                     math.log(floor), math.log(ceiling), xtol=1e-12)
    return math.exp(log_var)


def m_step(grid: OrientationGrid, activations: Union[SoftAssignment, ArrayLike],
           membership: np.ndarray, model: MixtureModel, config: EMConfig = EMConfig()) -> MixtureModel:
    """
    Update priors, means and variances from the memberships.

    p(θ_j) = Σ_i a_i p(θ_j|b_i); w_ji = a_i p(θ_j|b_i) / p(θ_j); the mean
    maximizes the w_ji-weighted log-likelihood starting from the weighted
    quaternion average; Σ_i w_ji d(b_i, q_j)² is kept as the spread and the
    variance is the one whose kernel reproduces that spread. Components whose
    prior falls under ``prior_floor`` are dropped and the rest renormalized.
    """
    a = _values(activations)
    responsibility = membership * a[None, :]
    priors = responsibility.sum(axis=1)
    keep = priors >= config.prior_floor
    if not np.any(keep):
        keep[int(np.argmax(priors))] = True
    if not np.all(keep):
        logger.warning(f"M-step: dropping {int((~keep).sum())} component(s) below prior floor {config.prior_floor}")

    components = []
    for j in np.flatnonzero(keep):
        weights = responsibility[j] / priors[j]
        old = model.components[j]
        mean = _update_mean(grid.bins, weights, old.mean, old.variance)
        d2 = normalized_distance(grid.bins, mean) ** 2
        spread = float(weights @ d2)
        variance = match_variance(d2, spread, config.variance_floor)
        components.append(MixtureComponent(mean, variance, float(priors[j]), spread))

    total = sum(c.prior for c in components)
    for c in components:
        c.prior /= total
    return MixtureModel(components)


def nms_peaks(grid: OrientationGrid, activations: Union[SoftAssignment, ArrayLike],
              k: int, radius: float) -> List[int]:
    """Up to k strongest bins, each farther than ``radius`` from stronger picks."""
    a = _values(activations)
    picked: List[int] = []
    for index in np.argsort(-a, kind="stable"):
        if len(picked) == k or a[index] <= 0:
            break
        if picked and np.min(normalized_distance(grid.bins[picked], grid.bins[index])) <= radius:
            continue
        picked.append(int(index))
    return picked


class MixtureFitter:
    """EM fitting of orientation mixtures on one grid."""

    def __init__(self, grid: OrientationGrid, params: KernelParams, config: Optional[EMConfig] = None):
        self.grid = grid
        self.params = params
        self.config = config or EMConfig()

    def initial_model(self, activations, k: int) -> MixtureModel:
        peaks = nms_peaks(self.grid, activations, k, self.config.radius(self.params))
        if not peaks:
            raise ValueError("activations have no positive entry")
        return MixtureModel([
            MixtureComponent(self.grid.bins[i].copy(), self.params.sigma_sq, 1.0 / len(peaks))
            for i in peaks
        ])

    def run(self, activations, model: MixtureModel) -> MixtureModel:
        """Alternate E and M steps from ``model`` until the means settle."""
        values = _values(activations)
        history = [log_likelihood(self.grid, values, model)]
        degenerate = 0
        iterations = 0
        for iterations in range(1, self.config.max_iter + 1):
            membership, degenerate = _e_step(self.grid, values, model)
            updated = m_step(self.grid, values, membership, model, self.config)
            history.append(log_likelihood(self.grid, values, updated))
            settled = updated.k == model.k and max(
                float(normalized_distance(new.mean, old.mean))
                for new, old in zip(updated.components, model.components)
            ) < self.config.mean_tol
            model = updated
            if settled:
                break
        logger.debug(f"EM K={model.k}: {iterations} iterations, log-likelihood {history[-1]:.6f}")
        model.log_likelihood = history[-1]
        model.ll_history = history
        model.iterations = iterations
        model.degenerate_bins = degenerate
        return model

    def fit_k(self, activations: Union[SoftAssignment, ArrayLike], k: int) -> MixtureModel:
        """EM with K fixed (capped at the number of NMS peaks)."""
        return self.run(activations, self.initial_model(activations, k))

    def fit(self, activations: Union[SoftAssignment, ArrayLike]) -> MixtureModel:
        """
        Fit K = 1, 2, … and keep the smallest K whose successor gains no more
        than ``ll_threshold`` in log-likelihood.
        """
        values = _values(activations)
        if isinstance(activations, SoftAssignment):
            activations.check_grid(self.grid)
        elif len(values) != self.grid.n_bins:
            raise ValueError(f"got {len(values)} activations for {self.grid.n_bins} bins")

        radius = self.config.radius(self.params)
        k_cap = min(self.config.k_max, len(nms_peaks(self.grid, values, self.config.k_max, radius)))
        best = self.fit_k(values, 1)
        for k in range(2, k_cap + 1):
            candidate = self.fit_k(values, k)
            gain = candidate.log_likelihood - best.log_likelihood
            logger.debug(f"K={k}: log-likelihood gain {gain:.6f}")
            if gain <= self.config.ll_threshold:
                break
            best = candidate
        return best


def fit_mixture(grid: OrientationGrid, activations: Union[SoftAssignment, ArrayLike],
                params: KernelParams, config: Optional[EMConfig] = None) -> MixtureModel:
    """Fit an orientation mixture with automatic selection of K."""
    return MixtureFitter(grid, params, config).fit(activations)

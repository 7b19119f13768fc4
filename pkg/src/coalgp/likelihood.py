"""Coalescent likelihoods: exact, conditional-intensity, and augmented forms.

Everything is computed in log space; the sigmoid link and its complement go
through softplus so that f excursions far beyond +-30 stay finite.  The
augmented form is the density of the thinning construction: one accepted
point per coalescent event, a Poisson exposure term per interval, sigmoid
acceptance factors at coalescent points and complementary-sigmoid factors at
latent points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .errors import ValidationError
from .genealogy import CoalescentData, IntervalGrid, build_interval_grid
from .gp_prior import LatentField
from .trajectories import Trajectory


def sigmoid(f):
    return expit(f)


def log_sigmoid(f):
    return log_expit(f)


def ne_from_f(f, lam: float):
    """Population size under the sigmoidal link: (1 + exp(-f)) / lam.

    Always exceeds 1/lam.  Computed as exp(softplus(-f))/lam, which stays
    monotone and finite until the true value overflows float64.
    """
    if np.any(np.asarray(lam) <= 0):
        raise ValidationError("lam must be positive")
    with np.errstate(over="ignore"):  # saturates to inf below f ~ -745
        return np.exp(np.logaddexp(0.0, np.negative(f))) / lam


def inv_ne_from_f(f, lam: float):
    """Bounded inverse population size lam * sigmoid(f), in (0, lam)."""
    return lam * expit(f)


def conditional_intensity(t: float, grid: IntervalGrid, ne) -> float:
    """Step-function event rate at t: pair count over N_e(t).

    ``ne`` is a Trajectory or a plain callable of backward time.  Times
    outside the genealogy's span raise ValidationError.
    """
    ne_fn = ne.ne if isinstance(ne, Trajectory) else ne
    j = grid.interval_of(t)
    return float(grid.coal_factor[j] / ne_fn(t))


def log_coalescent_likelihood(
    d: CoalescentData, traj: Trajectory, grid: IntervalGrid | None = None
) -> float:
    """Exact log density of the observed coalescent times under ``traj``.

    Sum over events of the log intensity at the event minus the integrated
    intensity over the full inter-event span; integrals use the trajectory's
    closed form where available, adaptive quadrature otherwise.
    """
    if grid is None:
        grid = build_interval_grid(d)
    hazard = 0.0
    for a, b, c in zip(grid.starts, grid.ends, grid.coal_factor):
        if c > 0:
            hazard += c * traj.inv_ne_integral(float(a), float(b))
    ends = grid.ends[grid.ends_with_coal]
    factors = grid.coal_factor[grid.ends_with_coal]
    points = float(np.sum(np.log(factors) - np.log(traj.ne(ends))))
    return points - hazard


def log_augmented_likelihood(field: LatentField, grid: IntervalGrid, lam: float) -> float:
    """Log density of (coalescent times, latent points) given f-values and lam.

    The field must carry an f-value at every coalescent event of the grid and
    at every latent point; latent points must fall inside the grid's span.
    """
    if lam <= 0:
        return -math.inf
    coal_t = field.coal_times()
    if len(coal_t) != grid.n_events or not np.array_equal(coal_t, grid.coal_event_times):
        raise ValidationError(
            "field coalescent times do not match the interval grid; an f-value "
            "is required at every coalescent event"
        )
    total = -lam * grid.total_hazard_weight
    f_coal = field.values[field.is_coal]
    factors = grid.coal_factor[grid.ends_with_coal]
    total += float(np.sum(np.log(lam * factors)) + np.sum(log_expit(f_coal)))
    latent_t = field.latent_times()
    if len(latent_t):
        j = grid.interval_of_many(latent_t)
        f_lat = field.values[~field.is_coal]
        with np.errstate(divide="ignore"):
            total += float(np.sum(np.log(lam * grid.coal_factor[j])))
        total += float(np.sum(log_expit(-f_lat)))
    return total


@dataclass(frozen=True)
class LambdaPrior:
    """Mixture prior for the thinning bound: uniform mass eps below the best
    guess ``lam_hat``, an exponential tail with scale ``lam_hat`` above it."""

    lam_hat: float = 10.0
    eps: float = 0.01

    def __post_init__(self):
        if self.lam_hat <= 0:
            raise ValidationError("lam_hat must be positive")
        if not 0.0 < self.eps < 1.0:
            raise ValidationError("eps must lie strictly between 0 and 1")


def lambda_log_prior(lam: float, prior: LambdaPrior) -> float:
    """Log density of the bound prior; -inf for lam <= 0.

    The boundary lam == lam_hat belongs to the exponential branch.
    """
    if lam <= 0:
        return -math.inf
    if lam < prior.lam_hat:
        return math.log(prior.eps) - math.log(prior.lam_hat)
    return (
        math.log1p(-prior.eps)
        - math.log(prior.lam_hat)
        - (lam - prior.lam_hat) / prior.lam_hat
    )


def sample_lambda_prior(prior: LambdaPrior, rng: np.random.Generator) -> float:
    """One draw from the bound prior (used by generative checks)."""
    if rng.random() < prior.eps:
        return float(rng.uniform(0.0, prior.lam_hat))
    return float(prior.lam_hat + rng.exponential(prior.lam_hat))

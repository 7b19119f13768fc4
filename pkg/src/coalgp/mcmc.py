"""Augmented-posterior MCMC for the sigmoidal-GP coalescent model.

One iteration cycles five invariant kernels in a fixed order: a
reversible-jump add/remove pass over every inter-event interval (latent point
counts), a Metropolis relocation of latent points, one elliptical slice
transition on the full f-vector, a Gibbs draw of the GP precision theta, and
a reflected-uniform Metropolis step on the thinning bound lambda.  All
acceptance ratios are evaluated in log space; any proposal whose log ratio is
non-finite is rejected.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import gammaln, log_expit

from .errors import McmcError
from .genealogy import CoalescentData, IntervalGrid, build_interval_grid
from .gp_prior import (
    GPKernel,
    LatentField,
    build_precision,
    conditional_draw_at,
    kernel_from_json,
    kernel_to_json,
    log_prior_density,
)
from .likelihood import LambdaPrior, lambda_log_prior, log_augmented_likelihood

_TWO_PI = 2.0 * math.pi
_MAX_SLICE_SHRINKS = 10_000


def _softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


@dataclass
class McmcConfig:
    iterations: int = 10_000
    burn_in: int = 1_000
    thin: int = 1
    seed: int = 0
    theta_alpha: float = 0.001
    theta_beta: float = 0.001
    lambda_hat: float = 10.0
    lambda_eps: float = 0.01
    lambda_halfwidth: float | None = None
    rj_sweeps: int = 1
    location_moves: int = 1

    def __post_init__(self):
        if self.iterations <= 0 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("iterations, burn_in, thin must be positive (burn_in >= 0)")
        if self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        for name in ("theta_alpha", "theta_beta", "lambda_hat", "lambda_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.rj_sweeps < 0 or self.location_moves < 0:
            raise ValueError("per-iteration move counts must be non-negative")

    @property
    def halfwidth(self) -> float:
        return self.lambda_halfwidth if self.lambda_halfwidth is not None else 0.1 * self.lambda_hat

    @property
    def lambda_prior(self) -> LambdaPrior:
        return LambdaPrior(self.lambda_hat, self.lambda_eps)


@dataclass
class ChainState:
    """One point of the augmented-posterior chain."""

    field: LatentField
    theta: float
    lam: float
    latent_count: np.ndarray  # latent points per grid interval

    @classmethod
    def initial(cls, grid: IntervalGrid, cfg: McmcConfig) -> "ChainState":
        coal = grid.coal_event_times
        field = LatentField(coal, np.zeros(len(coal)), np.ones(len(coal), dtype=bool))
        theta = cfg.theta_alpha / cfg.theta_beta
        if not math.isfinite(theta) or theta <= 0:
            theta = 1.0
        return cls(
            field=field,
            theta=theta,
            lam=cfg.lambda_hat,
            latent_count=np.zeros(grid.n_intervals, dtype=int),
        )

    def copy(self) -> "ChainState":
        return ChainState(self.field.copy(), self.theta, self.lam, self.latent_count.copy())


@dataclass
class ChainDraw:
    iteration: int
    theta: float
    lam: float
    times: np.ndarray
    values: np.ndarray
    is_coal: np.ndarray
    log_posterior: float

    def to_field(self) -> LatentField:
        return LatentField(self.times, self.values, self.is_coal)

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "theta": self.theta,
            "lambda": self.lam,
            "n_latent": int(np.sum(~self.is_coal)),
            "times": self.times.tolist(),
            "values": self.values.tolist(),
            "is_coal": self.is_coal.astype(int).tolist(),
            "log_posterior": self.log_posterior,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ChainDraw":
        return cls(
            iteration=int(obj["iteration"]),
            theta=float(obj["theta"]),
            lam=float(obj["lambda"]),
            times=np.asarray(obj["times"], dtype=float),
            values=np.asarray(obj["values"], dtype=float),
            is_coal=np.asarray(obj["is_coal"], dtype=bool),
            log_posterior=float(obj["log_posterior"]),
        )


@dataclass
class ChainOutput:
    draws: list
    acceptance: dict
    log_posterior_trace: np.ndarray
    config: McmcConfig
    kernel: GPKernel

    def write_jsonl(self, fh):
        import json

        header = {
            "type": "header",
            "config": asdict(self.config),
            "kernel": kernel_to_json(self.kernel),
            "acceptance": self.acceptance,
            "n_draws": len(self.draws),
        }
        fh.write(json.dumps(header) + "\n")
        for d in self.draws:
            fh.write(json.dumps(d.to_json()) + "\n")

    @classmethod
    def read_jsonl(cls, fh) -> "ChainOutput":
        import json

        header = json.loads(fh.readline())
        if header.get("type") != "header":
            raise ValueError("chain file does not start with a header line")
        draws = [ChainDraw.from_json(json.loads(line)) for line in fh if line.strip()]
        cfg_dict = dict(header["config"])
        return cls(
            draws=draws,
            acceptance=header.get("acceptance", {}),
            log_posterior_trace=np.zeros(0),
            config=McmcConfig(**cfg_dict),
            kernel=kernel_from_json(header["kernel"]),
        )


def rj_log_accept_add(length: float, lam: float, factor: float, m: int, f_star: float) -> float:
    """Log acceptance ratio for inserting a latent point into an interval
    currently holding m of them."""
    with np.errstate(divide="ignore"):
        return float(np.log(length * lam * factor)) - math.log(m + 1) - _softplus(f_star)


def rj_log_accept_remove(length: float, lam: float, factor: float, m: int, f_removed: float) -> float:
    """Log acceptance ratio for deleting one of the m latent points of an
    interval; exact inverse of the matching insertion."""
    with np.errstate(divide="ignore"):
        return math.log(m) + _softplus(f_removed) - float(np.log(length * lam * factor))


def _latent_indices_in(field: LatentField, grid: IntervalGrid, j: int) -> np.ndarray:
    lo = int(np.searchsorted(field.times, grid.starts[j], side="right"))
    hi = int(np.searchsorted(field.times, grid.ends[j], side="right"))
    return lo + np.flatnonzero(~field.is_coal[lo:hi])


def rj_update(
    state: ChainState,
    grid: IntervalGrid,
    kernel: GPKernel,
    rng: np.random.Generator,
    counters: dict | None = None,
) -> ChainState:
    """One add-or-remove proposal per interval, in time order.

    Insertions draw the location uniformly and its f-value from the GP
    conditional; removals pick uniformly among the interval's latent points.
    Removal from an empty interval is an automatic reject.
    """
    kern = kernel.with_theta(state.theta)
    field = state.field
    for j in range(grid.n_intervals):
        factor = float(grid.coal_factor[j])
        length = float(grid.ends[j] - grid.starts[j])
        if factor == 0.0 or length <= 0.0:
            continue
        m = int(state.latent_count[j])
        if rng.random() < 0.5:
            if counters is not None:
                counters["rj_add"][1] += 1
            x = rng.uniform(grid.starts[j], grid.ends[j])
            pos = int(np.searchsorted(field.times, x))
            if pos < field.size and field.times[pos] == x:
                continue
            f_star = conditional_draw_at(field, x, kern, rng)
            log_a = rj_log_accept_add(length, state.lam, factor, m, f_star)
            if math.log(rng.random()) < log_a:
                field.insert(x, f_star, is_coal=False)
                state.latent_count[j] = m + 1
                if counters is not None:
                    counters["rj_add"][0] += 1
        else:
            if counters is not None:
                counters["rj_remove"][1] += 1
            if m == 0:
                continue
            idx = _latent_indices_in(field, grid, j)
            pick = int(idx[rng.integers(m)])
            log_a = rj_log_accept_remove(length, state.lam, factor, m, float(field.values[pick]))
            if math.log(rng.random()) < log_a:
                field.remove(pick)
                state.latent_count[j] = m - 1
                if counters is not None:
                    counters["rj_remove"][0] += 1
    return state


def location_update(
    state: ChainState,
    grid: IntervalGrid,
    kernel: GPKernel,
    rng: np.random.Generator,
    counters: dict | None = None,
) -> ChainState:
    """Move one latent point within its interval (no-op when none exist).

    The interval is chosen among those holding latent points with probability
    proportional to its length; the new location is uniform and its f-value
    comes from the GP conditional given the current field, giving the
    sigmoid-ratio acceptance probability.
    """
    eligible = np.flatnonzero(state.latent_count > 0)
    if len(eligible) == 0:
        return state
    kern = kernel.with_theta(state.theta)
    field = state.field
    weights = grid.lengths[eligible]
    j = int(eligible[rng.choice(len(eligible), p=weights / weights.sum())])
    if counters is not None:
        counters["location"][1] += 1
    idx = _latent_indices_in(field, grid, j)
    pick = int(idx[rng.integers(len(idx))])
    x_new = rng.uniform(grid.starts[j], grid.ends[j])
    pos = int(np.searchsorted(field.times, x_new))
    if pos < field.size and field.times[pos] == x_new:
        return state
    f_new = conditional_draw_at(field, x_new, kern, rng)
    log_a = _softplus(float(field.values[pick])) - _softplus(f_new)
    if math.log(rng.random()) < log_a:
        field.remove(pick)
        field.insert(x_new, f_new, is_coal=False)
        if counters is not None:
            counters["location"][0] += 1
    return state


def thinning_log_lik(field: LatentField) -> float:
    """Product of sigmoid acceptance terms at coalescent points and
    complementary terms at latent points (the f-dependent likelihood)."""
    return float(
        np.sum(log_expit(field.values[field.is_coal]))
        + np.sum(log_expit(-field.values[~field.is_coal]))
    )


def elliptical_slice_step(f, nu, loglik, rng: np.random.Generator):
    """One elliptical slice transition for any log-likelihood.

    Rotates the current point toward the auxiliary prior draw ``nu`` and
    shrinks the angle bracket until the rotated point clears the slice
    threshold; terminates with probability one for continuous positive
    likelihoods.
    """
    log_y = loglik(f) + math.log(rng.random())
    ang = rng.uniform(0.0, _TWO_PI)
    lo, hi = ang - _TWO_PI, ang
    for _ in range(_MAX_SLICE_SHRINKS):
        proposal = f * math.cos(ang) + nu * math.sin(ang)
        if loglik(proposal) > log_y:
            return proposal
        if ang < 0.0:
            lo = ang
        else:
            hi = ang
        ang = rng.uniform(lo, hi)
    raise McmcError("elliptical slice sampler failed to terminate")


def ess_update(
    state: ChainState,
    grid: IntervalGrid,
    kernel: GPKernel,
    rng: np.random.Generator,
    counters: dict | None = None,
    likelihood_off: bool = False,
) -> ChainState:
    """One elliptical slice transition on the full f-vector."""
    field = state.field
    if field.size == 0:
        return state
    kern = kernel.with_theta(state.theta)
    prec = build_precision(field.times, kern)
    nu = prec.sample_zero_mean(rng)

    if likelihood_off:
        loglik = lambda v: 0.0  # noqa: E731 - prior-only diagnostics
    else:
        signs = np.where(field.is_coal, 1.0, -1.0)
        loglik = lambda v: float(np.sum(log_expit(signs * v)))  # noqa: E731

    field.values = elliptical_slice_step(field.values, nu, loglik, rng)
    if counters is not None:
        counters["ess"][0] += 1
        counters["ess"][1] += 1
    return state


def theta_full_conditional(field: LatentField, kernel: GPKernel, alpha: float, beta: float):
    """Shape and rate of the Gamma full conditional of the GP precision."""
    quad = 0.0
    if field.size:
        quad = kernel.structure_tridiag(field.times).quad_form(field.values)
    return alpha + 0.5 * field.size, beta + 0.5 * quad


def gibbs_theta(
    state: ChainState,
    kernel: GPKernel,
    alpha: float,
    beta: float,
    rng: np.random.Generator,
) -> ChainState:
    """Exact Gamma draw of the precision given f (conjugate full conditional)."""
    shape, rate = theta_full_conditional(state.field, kernel, alpha, beta)
    if not math.isfinite(rate) or rate <= 0:
        raise McmcError(f"theta full conditional has rate {rate}", _state_dump(state))
    theta = rng.gamma(shape, 1.0 / rate)
    if theta <= 0:
        raise McmcError("theta draw underflowed to 0", _state_dump(state))
    state.theta = float(theta)
    return state


def lambda_log_ratio(
    lam: float,
    prop: float,
    n_points: int,
    total_hazard_weight: float,
    prior: LambdaPrior,
) -> float:
    """Log Metropolis ratio for the bound update: prior ratio, the point-count
    power of the bound, and the exposure term over all intervals."""
    log_ratio = lambda_log_prior(prop, prior) - lambda_log_prior(lam, prior)
    log_ratio += n_points * (math.log(prop) - math.log(lam))
    log_ratio -= (prop - lam) * total_hazard_weight
    return log_ratio


def mh_lambda(
    state: ChainState,
    prior: LambdaPrior,
    halfwidth: float,
    grid: IntervalGrid,
    rng: np.random.Generator,
    counters: dict | None = None,
    likelihood_off: bool = False,
) -> ChainState:
    """Reflected-uniform Metropolis step on the thinning bound lambda."""
    if counters is not None:
        counters["lambda"][1] += 1
    prop = state.lam + rng.uniform(-halfwidth, halfwidth)
    if prop < 0:
        prop = -prop
    if prop <= 0:
        return state
    if likelihood_off:
        log_ratio = lambda_log_prior(prop, prior) - lambda_log_prior(state.lam, prior)
    else:
        log_ratio = lambda_log_ratio(
            state.lam, prop, state.field.size, grid.total_hazard_weight, prior
        )
    if math.isfinite(log_ratio) and math.log(rng.random()) < log_ratio:
        state.lam = float(prop)
        if counters is not None:
            counters["lambda"][0] += 1
    return state


def mcmc_sweep(
    state: ChainState,
    grid: IntervalGrid,
    kernel: GPKernel,
    cfg: McmcConfig,
    rng: np.random.Generator,
    counters: dict | None = None,
    likelihood_off: bool = False,
) -> ChainState:
    """One full iteration: RJ sweep(s), relocations, slice, theta, lambda."""
    if not likelihood_off:
        for _ in range(cfg.rj_sweeps):
            rj_update(state, grid, kernel, rng, counters)
        for _ in range(cfg.location_moves):
            location_update(state, grid, kernel, rng, counters)
    ess_update(state, grid, kernel, rng, counters, likelihood_off=likelihood_off)
    gibbs_theta(state, kernel, cfg.theta_alpha, cfg.theta_beta, rng)
    mh_lambda(
        state, cfg.lambda_prior, cfg.halfwidth, grid, rng, counters,
        likelihood_off=likelihood_off,
    )
    return state


def gamma_log_pdf(x: float, alpha: float, beta: float) -> float:
    if x <= 0:
        return -math.inf
    return alpha * math.log(beta) - gammaln(alpha) + (alpha - 1.0) * math.log(x) - beta * x


def log_augmented_posterior(
    state: ChainState, grid: IntervalGrid, kernel: GPKernel, cfg: McmcConfig,
    likelihood_off: bool = False,
) -> float:
    kern = kernel.with_theta(state.theta)
    lp = log_prior_density(state.field.times, state.field.values, kern)
    lp += gamma_log_pdf(state.theta, cfg.theta_alpha, cfg.theta_beta)
    lp += lambda_log_prior(state.lam, cfg.lambda_prior)
    if not likelihood_off:
        lp += log_augmented_likelihood(state.field, grid, state.lam)
    return lp


def state_from_field(
    field: LatentField, grid: IntervalGrid, theta: float, lam: float
) -> ChainState:
    """Wrap an existing field (e.g. simulator output) as a chain state."""
    counts = np.zeros(grid.n_intervals, dtype=int)
    latent = field.latent_times()
    if len(latent):
        np.add.at(counts, grid.interval_of_many(latent), 1)
    return ChainState(field.copy(), theta, lam, counts)


def _state_dump(state: ChainState) -> dict:
    vals = state.field.values
    return {
        "theta": state.theta,
        "lambda": state.lam,
        "field_size": state.field.size,
        "n_latent": int(np.sum(~state.field.is_coal)),
        "f_min": float(vals.min()) if len(vals) else None,
        "f_max": float(vals.max()) if len(vals) else None,
    }


def _new_counters() -> dict:
    return {k: [0, 0] for k in ("rj_add", "rj_remove", "location", "ess", "lambda")}


def run_chain(
    data: CoalescentData,
    cfg: McmcConfig,
    kernel: GPKernel,
    progress=None,
    likelihood_off: bool = False,
) -> ChainOutput:
    """Run the full sampler and return retained post-burn-in draws.

    ``progress`` is an optional callable invoked as progress(iteration,
    total, acceptance_dict) every ~5% of the run.  With ``likelihood_off``
    every data term is dropped (latent moves skipped), leaving the prior as
    the target; used by prior-recovery diagnostics.
    """
    grid = build_interval_grid(data)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    state = ChainState.initial(grid, cfg)
    counters = _new_counters()
    trace = np.empty(cfg.iterations)
    draws: list[ChainDraw] = []
    report_every = max(1, cfg.iterations // 20)
    for it in range(cfg.iterations):
        mcmc_sweep(state, grid, kernel, cfg, rng, counters, likelihood_off=likelihood_off)
        lp = log_augmented_posterior(state, grid, kernel, cfg, likelihood_off=likelihood_off)
        if not math.isfinite(lp):
            dump = _state_dump(state)
            dump["iteration"] = it
            raise McmcError(f"non-finite log posterior at iteration {it}", dump)
        trace[it] = lp
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            draws.append(
                ChainDraw(
                    iteration=it,
                    theta=state.theta,
                    lam=state.lam,
                    times=state.field.times.copy(),
                    values=state.field.values.copy(),
                    is_coal=state.field.is_coal.copy(),
                    log_posterior=lp,
                )
            )
        if progress is not None and (it + 1) % report_every == 0:
            progress(it + 1, cfg.iterations, acceptance_rates(counters))
    return ChainOutput(
        draws=draws,
        acceptance=acceptance_rates(counters),
        log_posterior_trace=trace,
        config=cfg,
        kernel=kernel,
    )


def acceptance_rates(counters: dict) -> dict:
    return {k: (v[0] / v[1] if v[1] else 0.0) for k, v in counters.items()}


def log_gamma_draw(shape: float, rng: np.random.Generator) -> float:
    """log of one Gamma(shape, 1) draw, exact even for tiny shapes.

    Uses G = G' * U^(1/shape) with G' ~ Gamma(shape + 1): the log survives
    where the draw itself would underflow (log G spreads over ~1/shape).
    """
    gprime = 0.0
    while gprime <= 0.0:
        gprime = rng.gamma(shape + 1.0, 1.0)
    return math.log(gprime) + math.log(rng.random()) / shape


def run_prior_chain(cfg: McmcConfig, kernel: GPKernel, times=()) -> dict:
    """Prior-recovery chain: every data term off, hyperparameters only.

    With no data there are no latent points and no f, so the theta update's
    full conditional is the prior itself, drawn exactly in log space (the
    default Gamma(0.001, 0.001) has most of its mass below float64 range);
    lambda moves through the production reflected-uniform kernel.  Passing
    ``times`` adds a whitened f-block (g = f * sqrt(theta)) so the
    theta <-> f alternation is exercised too; note that alternation mixes
    across log-theta in unit steps, so diffuse hyperpriors need of the order
    of Var[log theta] sweeps to converge.
    Returns thinned post-burn-in draws of log(theta) and lambda.
    """
    times = np.asarray(times, dtype=float)
    d = len(times)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    struct = kernel.structure_tridiag(times) if d else None
    g = struct.sample_zero_mean(rng) if d else None
    log_theta = 0.0
    prior = cfg.lambda_prior
    lam_state = ChainState(LatentField(), 1.0, cfg.lambda_hat, np.zeros(0, dtype=int))
    shape = cfg.theta_alpha + 0.5 * d
    out_log_theta: list[float] = []
    out_lam: list[float] = []
    for it in range(cfg.iterations):
        if d:
            nu = struct.sample_zero_mean(rng)
            ang = rng.uniform(0.0, _TWO_PI)
            g = g * math.cos(ang) + nu * math.sin(ang)
            log_quad = math.log(0.5 * struct.quad_form(g)) - log_theta
            log_rate = float(np.logaddexp(math.log(cfg.theta_beta), log_quad))
            new_log_theta = log_gamma_draw(shape, rng) - log_rate
            g = g * math.exp(0.5 * (new_log_theta - log_theta))
            log_theta = new_log_theta
        else:
            log_theta = log_gamma_draw(shape, rng) - math.log(cfg.theta_beta)
        mh_lambda(lam_state, prior, cfg.halfwidth, None, rng, likelihood_off=True)
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            out_log_theta.append(log_theta)
            out_lam.append(lam_state.lam)
    return {"log_theta": np.asarray(out_log_theta), "lambda": np.asarray(out_lam)}

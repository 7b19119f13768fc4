"""Thinning simulators against the time-transform oracle and closed forms."""

import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit, logit

from coalgp.errors import CoalgpError, SimulationError
from coalgp.gp_prior import BrownianMotionKernel, OrnsteinUhlenbeckKernel
from coalgp.likelihood import inv_ne_from_f
from coalgp.simulate import (
    DeterministicSpec,
    SimulationRecord,
    ks_against_oracle,
    simulate_hetero_thinning,
    simulate_hetero_thinning_gp,
    simulate_iso_thinning,
    simulate_iso_thinning_gp,
    simulate_time_transform,
    time_transform_replicates,
)
from coalgp.trajectories import BoomBustTrajectory, ConstantTrajectory, ExpGrowthTrajectory


class _FixedExponentials:
    """Stub generator feeding predetermined unit-exponential draws."""

    def __init__(self, values):
        self.values = list(values)

    def exponential(self, scale=1.0, size=None):
        assert size is None
        return self.values.pop(0) * scale


class TestTimeTransform:
    def test_constant_identity_hazard(self):
        # unit draw 0.5 with N_e = 1 and two samples lands at exactly 0.5
        out = simulate_time_transform(ConstantTrajectory(1.0), _FixedExponentials([0.5]), n=2)
        assert out[0] == pytest.approx(0.5, abs=1e-12)

    def test_expgrowth_closed_form(self):
        out = simulate_time_transform(ExpGrowthTrajectory(25.0, 5.0), _FixedExponentials([1.0]), n=2)
        assert out[0] == pytest.approx(math.log(126.0) / 5.0, abs=1e-10)

    def test_constant_scaling(self, rng):
        # with N_e = c the root time of a pair is Exponential(1/c)
        c = 3.0
        reps = time_transform_replicates(2, ConstantTrajectory(c), 4000, rng)
        ks = stats.kstest(reps[:, 0], "expon", args=(0.0, c)).statistic
        assert ks < 0.03

    def test_replicates_match_sequential(self):
        rng1 = np.random.default_rng(5)
        reps = time_transform_replicates(6, BoomBustTrajectory(), 400, rng1)
        assert reps.shape == (400, 5)
        assert np.all(np.diff(reps, axis=1) > 0)


class TestIsoThinning:
    def test_tight_bound_accepts_first_proposal(self, rng):
        spec = DeterministicSpec(ConstantTrajectory(1.0), lam=1.0)
        rec = simulate_iso_thinning(2, spec, rng)
        assert rec.n_proposals == 1
        assert len(rec.coal_times) == 1

    def test_pair_time_is_unit_exponential(self, rng):
        spec = DeterministicSpec(ConstantTrajectory(1.0), lam=1.0)
        draws = np.array([simulate_iso_thinning(2, spec, rng).coal_times[0] for _ in range(4000)])
        assert stats.kstest(draws, "expon").statistic < 0.03

    def test_kingman_interval_rates(self, rng):
        # constant size 1 with a tight bound: gaps are Exponential(binom(k, 2))
        spec = DeterministicSpec(ConstantTrajectory(1.0), lam=1.0)
        mat = np.array([simulate_iso_thinning(10, spec, rng).coal_times for _ in range(3000)])
        gaps = np.diff(np.concatenate([np.zeros((3000, 1)), mat], axis=1), axis=1)
        for j, k in enumerate(range(10, 1, -1)):
            rate = k * (k - 1) / 2
            ks = stats.kstest(gaps[:, j], "expon", args=(0.0, 1.0 / rate)).statistic
            assert ks < 0.04, (k, ks)

    def test_loose_bound_same_law(self, rng):
        # an inflated bound changes efficiency, not the law
        tight = DeterministicSpec(ConstantTrajectory(1.0), lam=1.0)
        loose = DeterministicSpec(ConstantTrajectory(1.0), lam=7.0)
        a = np.array([simulate_iso_thinning(6, tight, rng).coal_times for _ in range(2500)])
        b = np.array([simulate_iso_thinning(6, loose, rng).coal_times for _ in range(2500)])
        assert np.max(ks_against_oracle(a, b)) < 0.05

    def test_windowed_envelope_matches_oracle(self, rng):
        # exponential growth has unbounded 1/N_e: only the local envelope works
        traj = ExpGrowthTrajectory(25.0, 5.0)
        spec = DeterministicSpec(traj)
        thinned = np.array([simulate_iso_thinning(10, spec, rng).coal_times for _ in range(2500)])
        oracle = time_transform_replicates(10, traj, 25_000, rng)
        assert np.max(ks_against_oracle(thinned, oracle)) < 0.045

    def test_proposal_cap_raises(self, rng):
        spec = DeterministicSpec(ConstantTrajectory(1.0), lam=1e6)
        with pytest.raises(SimulationError, match="cap"):
            simulate_iso_thinning(2, spec, rng, proposal_cap=500)

    def test_bound_violation_detected(self, rng):
        # lam certifies 1/N_e <= 0.5 but the trajectory dips below N_e = 2
        spec = DeterministicSpec(ConstantTrajectory(1.0), lam=0.5)
        with pytest.raises(SimulationError, match="bound violated"):
            simulate_iso_thinning(4, spec, rng)

    def test_latent_points_form_thinned_poisson(self, rng):
        # constant case: rejected points are Poisson with rate C*lam*(1 - 1/(N_e*lam))
        lam, c = 4.0, 1.0
        spec = DeterministicSpec(ConstantTrajectory(c), lam=lam)
        counts, expected = [], []
        for _ in range(2000):
            rec = simulate_iso_thinning(2, spec, rng, record_latent=True)
            counts.append(len(rec.latent_by_interval[0]))
            expected.append(lam * (1 - 1 / (c * lam)) * rec.coal_times[0])
        total, exp_total = np.sum(counts), np.sum(expected)
        assert abs(total - exp_total) < 4 * math.sqrt(exp_total)


class TestHeteroThinning:
    def test_single_batch_is_bit_identical_to_iso(self):
        spec = DeterministicSpec(BoomBustTrajectory())
        for seed in range(5):
            a = simulate_iso_thinning(8, spec, np.random.default_rng(seed))
            b = simulate_hetero_thinning([0.0], [8], spec, np.random.default_rng(seed))
            assert np.array_equal(a.coal_times, b.coal_times)

    def test_first_epoch_survival_probability(self, rng):
        # two lineages on (0, 0.5] at rate 1: no coalescence there w.p. e^{-0.5}
        spec = DeterministicSpec(ConstantTrajectory(1.0), lam=1.0)
        reps = 4000
        none_before = 0
        for _ in range(reps):
            rec = simulate_hetero_thinning([0.0, 0.5], [2, 1], spec, rng)
            none_before += rec.coal_times[0] > 0.5
        p = math.exp(-0.5)
        se = math.sqrt(p * (1 - p) / reps)
        assert abs(none_before / reps - p) < 4 * se

    def test_matches_hetero_oracle(self, rng):
        traj = ConstantTrajectory(0.8)
        spec = DeterministicSpec(traj, lam=1.25)
        st, sc = [0.0, 0.4, 0.9], [3, 2, 2]
        thinned = np.array(
            [simulate_hetero_thinning(st, sc, spec, rng).coal_times for _ in range(2500)]
        )
        oracle = np.array(
            [simulate_time_transform(traj, rng, samp_times=st, samp_counts=sc) for _ in range(2500)]
        )
        assert np.max(ks_against_oracle(thinned, oracle)) < 0.05

    def test_single_lineage_forever_rejected(self, rng):
        # a schedule that can never coalesce fails fast at validation
        spec = DeterministicSpec(ConstantTrajectory(1.0), lam=1.0)
        with pytest.raises(CoalgpError):
            simulate_hetero_thinning([0.0], [1], spec, rng)


class TestGpThinning:
    def test_record_structure(self, rng):
        kernel = BrownianMotionKernel(theta=2.0, init_var=1.0)
        rec = simulate_iso_thinning_gp(8, kernel, 3.0, rng)
        assert len(rec.coal_times) == 7
        assert np.all(np.diff(rec.coal_times) > 0)
        fld = rec.gp_field
        assert np.array_equal(fld.times[fld.is_coal], rec.coal_times)
        assert np.array_equal(np.sort(np.concatenate([rec.coal_times, rec.latent_times])), fld.times)
        bounds = np.concatenate([[0.0], rec.coal_times])
        for j, group in enumerate(rec.latent_by_interval):
            assert np.all(group > bounds[j]) and np.all(group < bounds[j + 1])

    def test_saturated_sigmoid_reduces_to_constant(self, rng):
        # a nearly degenerate OU keeps f at 0, so acceptance is 1/2 and the
        # law collapses to a constant trajectory with N_e = 2/lam
        lam = 2.0
        kernel = OrnsteinUhlenbeckKernel(theta=1e8, phi=1.0)
        draws = np.array(
            [simulate_iso_thinning_gp(2, kernel, lam, rng).coal_times[0] for _ in range(3000)]
        )
        assert stats.kstest(draws, "expon", args=(0.0, 2.0 / lam)).statistic < 0.035

    def test_lambda_doubling_compensation(self, rng):
        # doubling lam while halving sigmoid(f) leaves the intensity unchanged
        f = rng.standard_normal(1000) * 3.0
        lam = 1.7
        f_comp = logit(expit(f) / 2.0)
        assert np.allclose(inv_ne_from_f(f_comp, 2 * lam), inv_ne_from_f(f, lam), rtol=1e-12)

    def test_gp_single_batch_bit_identical_to_iso(self):
        kernel = BrownianMotionKernel(theta=1.0, init_var=2.0)
        for seed in range(5):
            a = simulate_iso_thinning_gp(6, kernel, 2.0, np.random.default_rng(seed))
            b = simulate_hetero_thinning_gp([0.0], [6], kernel, 2.0, np.random.default_rng(seed))
            assert np.array_equal(a.coal_times, b.coal_times)
            assert np.array_equal(a.gp_field.values, b.gp_field.values)

    def test_hetero_gp_runs_and_respects_epochs(self, rng):
        kernel = BrownianMotionKernel(theta=1.0, init_var=1.0)
        rec = simulate_hetero_thinning_gp([0.0, 0.3, 0.8], [3, 2, 2], kernel, 3.0, rng)
        assert len(rec.coal_times) == 6
        # latent points recorded only inside epochs, never beyond the root
        assert np.all(rec.latent_times < rec.coal_times[-1])


class TestSurvivalCurve:
    def test_survival_matches_integrated_hazard(self, rng):
        # pairwise survival P(t_1 > t) = exp(-(e^{5t} - 1)/125) for the
        # exponential-growth trajectory, checked at five time points
        traj = ExpGrowthTrajectory(25.0, 5.0)
        spec = DeterministicSpec(traj)
        reps = 4000
        draws = np.array([simulate_iso_thinning(2, spec, rng).coal_times[0] for _ in range(reps)])
        for t in (0.15, 0.3, 0.5, 0.7, 0.9):
            p = math.exp(-(math.exp(5 * t) - 1) / 125.0)
            se = math.sqrt(p * (1 - p) / reps)
            assert abs(np.mean(draws > t) - p) < 4 * se, t


def test_record_json_round_trip(rng):
    kernel = BrownianMotionKernel(theta=1.0, init_var=1.0)
    rec = simulate_iso_thinning_gp(5, kernel, 2.0, rng)
    rec2 = SimulationRecord.from_json(rec.to_json())
    assert np.array_equal(rec.coal_times, rec2.coal_times)
    assert np.array_equal(rec.gp_field.times, rec2.gp_field.times)
    assert np.array_equal(rec.gp_field.values, rec2.gp_field.values)
    spec = DeterministicSpec(ConstantTrajectory(1.0), lam=1.0)
    rec3 = simulate_iso_thinning(5, spec, rng, record_latent=True)
    rec4 = SimulationRecord.from_json(rec3.to_json())
    assert np.array_equal(rec3.latent_times, rec4.latent_times)

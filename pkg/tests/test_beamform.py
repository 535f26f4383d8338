# tests/test_beamform.py

import math

import numpy as np
import pytest

from beamcast.beamform import (BeamformTrace, SchemeParams, TransmitCluster,
                               achieved_broadcast_rate, amplification_factor,
                               budgeted_amplification, compensated_gain,
                               distance_sandwich_check, empirical_hoeffding_frequency, full_gain,
                               gain_lower_bound, hoeffding_tail, hoeffding_threshold,
                               integration_by_parts_check, interference_expectation_bound,
                               interference_sum, measure_scheme_constants, oscillatory_integral,
                               plan_scheme, run_back_and_forth, scheme_regime_ok, select_rounds,
                               served_field, slot_spacing)
from beamcast.errors import RegimeError
from beamcast.netgeom import (PairSchedule, ScheduledPair, build_pair_schedule, generate_network,
                              partition_clusters, scheme_layout)
from beamcast.rng import derive_rng
from beamcast.scaling import boundary_gamma
from beamcast.settings import SimulationConfig

# Hand-built pair: partner node at x = 3 in column 0, served node at x = 9 in
# column 2, cells 4 wide and 1 high on a 16 x 16 square. Both offsets are 1 and
# the inner edges are 4 apart, so the hop coefficient is exactly 1/6.
PARTNER = (3.0, 0.5)
SERVED = (9.0, 0.5)
HOP = 1 / 6


def _schedule(nodes, pairs):
    layout = partition_clusters(nodes, 4.0, 1.0)
    scheduled = [ScheduledPair(pair_id=i, row=layout.row_col(rx)[0], tx_cell=tx, rx_cell=rx,
                               tdma_round=0)
                 for i, (tx, rx) in enumerate(pairs)]
    return PairSchedule(pairs=scheduled, d=4.0, vertical_gap=10.0, n_pairs=len(pairs),
                        row_stride=1, rounds={rx: 0 for _, rx in pairs}, rounds_total=1,
                        layout=layout)


@pytest.fixture(scope="module")
def single_pair(make_nodes):
    nodes = make_nodes([PARTNER, SERVED])
    return nodes, _schedule(nodes, [(0, 2)])


def _params(t, amp, snr_floor=0.25, phase1_noise=None):
    return SchemeParams(t=t, amp_factor=amp, tau=1, k1=1.0, k2=0.0, snr_floor=snr_floor,
                        phase1_noise=phase1_noise)


class TestGain:

    def test_single_transmitter(self, make_nodes):
        nodes = make_nodes([[0.0, 0.0], [3.7, 0.0]])
        assert compensated_gain(nodes, [0], 1) == pytest.approx(1 / 3.7)

    def test_colocated_transmitters_add_coherently(self, make_nodes):
        nodes = make_nodes([[0.0, 0.0]] * 3 + [[5.0, 0.0]])
        assert compensated_gain(nodes, [0, 1, 2], 3) == pytest.approx(3 / 5)

    def test_receiver_inside_cluster(self, make_nodes):
        nodes = make_nodes([[0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ValueError):
            compensated_gain(nodes, [0, 1], 1)

    def test_bounds_on_scheme_geometry(self, scheme_network, scheme_config):
        schedule = build_pair_schedule(scheme_layout(scheme_network), scheme_config)
        layout = schedule.layout
        for pair in schedule.pairs[::7]:
            if not layout.counts[pair.tx_cell]:
                continue
            tx = TransmitCluster.from_cell(layout, pair.tx_cell, pair.rx_cell)
            for j in layout.cells[pair.rx_cell]:
                gain = compensated_gain(scheme_network, tx, int(j))
                assert gain >= gain_lower_bound(scheme_network, tx, int(j), 2.0) * (1 - 1e-12)
                assert gain <= full_gain(scheme_network, tx, int(j)) * (1 + 1e-12)


class TestDistanceSandwich:

    def test_collinear_geometry(self, make_nodes):
        nodes = make_nodes([[1.0, 0.5], [3.0, 0.5], [8.0, 0.5]])
        report = distance_sandwich_check(nodes, [0, 1], 2, d=4.0, c1=2.0)
        assert report.max_deviation == 0.0
        assert report.min_deviation == 0.0
        assert report.geometry_conforming

    def test_scheme_geometry_within_eighth(self, scheme_network, scheme_config):
        schedule = build_pair_schedule(scheme_layout(scheme_network), scheme_config)
        layout = schedule.layout
        for pair in schedule.pairs[::5]:
            if not layout.counts[pair.tx_cell]:
                continue
            tx = TransmitCluster.from_cell(layout, pair.tx_cell, pair.rx_cell)
            for j in layout.cells[pair.rx_cell]:
                report = distance_sandwich_check(scheme_network, tx, int(j),
                                                 scheme_config.pair_gap, 2.0)
                assert report.geometry_conforming
                assert report.upper == 0.125
                assert report.within

    def test_tall_geometry_is_flagged(self, make_nodes):
        nodes = make_nodes([[1.0, 0.5], [3.0, 0.5], [8.0, 5.5]])
        report = distance_sandwich_check(nodes, [0, 1], 2, d=4.0, c1=2.0)
        assert not report.geometry_conforming
        assert report.min_deviation >= 0


class TestInterference:

    def test_no_interferers(self, make_nodes):
        nodes = make_nodes([[0.0, 0.0], [3.0, 0.0]])
        assert interference_sum(nodes, [], 1) == 0.0

    def test_distant_cluster_magnitude(self, make_nodes):
        pts = derive_rng(1).uniform(0, 1, size=(10, 2))
        nodes = make_nodes(np.vstack([pts, [[30.0, 0.0]]]), side=32.0)
        closest = np.hypot(*(pts - [30.0, 0.0]).T).min()
        assert interference_sum(nodes, [range(10)], 10) <= 10 / closest

    def test_expectation_bound_scales_with_offset(self):
        one = interference_expectation_bound(1, 2.0, 1.0, 4096, 1.0, 0.1)
        two = interference_expectation_bound(2, 2.0, 1.0, 4096, 1.0, 0.1)
        assert two == pytest.approx(one / 2)
        assert one == pytest.approx(9 * 2.0 / math.pi / (16 * 4096 ** 0.1))

    def test_expectation_bound_regime(self):
        with pytest.raises(RegimeError):
            interference_expectation_bound(1, 2.0, 1.0, 4096, 0.2, 0.1)
        with pytest.raises(ValueError):
            interference_expectation_bound(0, 2.0, 1.0, 4096, 1.0, 0.1)

    def test_empty_interval(self):
        assert oscillatory_integral(10.0, 3.0, 3.0) == (0.0, 0.0)

    def test_quadrature_within_bound(self):
        report = integration_by_parts_check(SimulationConfig(n=4096, nu=1.0, seed=0), samples=100)
        assert report.fraction_within == 1.0
        assert report.max_abs_integral <= report.bound

    @pytest.mark.slow
    def test_quadrature_thousand_samples(self):
        report = integration_by_parts_check(SimulationConfig(n=4096, nu=1.0, seed=0), samples=1000)
        assert report.fraction_within >= 0.999


class TestHoeffding:

    def test_vacuous_at_zero(self):
        assert hoeffding_tail(1.0, 10, 0.0) == 2.0

    def test_two_over_e(self):
        # span 2/d with d = 4, m = 8, t = 1/8 gives m d^2 t^2 = 2
        assert hoeffding_tail(0.5, 8, 0.125) == pytest.approx(2 / math.e)

    def test_threshold_gives_stretched_tail(self):
        n, d = 4096, 16.0
        t = hoeffding_threshold(n, d, 0.1, 0.05)
        assert hoeffding_tail(2 / d, n ** 0.9, t) == pytest.approx(2 * math.exp(-n ** 0.05))

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            hoeffding_tail(0.0, 10, 0.1)

    def test_empirical_frequency_under_bound(self):
        report = empirical_hoeffding_frequency(2.0, 50, 0.3, trials=10_000, seed=4)
        assert report.frequency <= report.bound


class TestSchemeArithmetic:

    def test_unit_snr_amplification(self):
        assert amplification_factor(4.0, 1.0, 3) == pytest.approx(0.25)

    def test_amplification_value(self):
        assert amplification_factor(100.0, 1e-4, 2) == pytest.approx(0.1)

    def test_amplification_identity(self):
        rng = derive_rng(6)
        for g, snr, t in zip(rng.uniform(0.01, 100, 50), rng.uniform(1e-6, 1, 50),
                             rng.integers(1, 20, 50)):
            A = amplification_factor(g, snr, int(t))
            assert (A * g) ** (2 * int(t)) * snr == pytest.approx(1.0, rel=1e-12)

    def test_amplification_rejects_zero(self):
        with pytest.raises(ValueError):
            amplification_factor(0.0, 0.5, 1)

    def test_round_selection(self):
        assert select_rounds(2.0, 1024, 0.1) == (1, False)
        assert select_rounds(0.125, 1024, 0.1) == (3, False)
        assert select_rounds(1e-300, 1024, 0.1, max_rounds=64) == (64, True)

    def test_slack_cancellation(self):
        spacing = slot_spacing(P=0.01, d=8.0, M=11.3, n=1024, nu=1.0, t=3, snr_floor=0.125,
                               epsilon=0.1)
        assert spacing.tau == math.ceil((8.0 / 11.3) ** 2 / 0.01)

    def test_boundary_power_spacing_is_flat(self):
        taus = []
        for n in (1024, 4096, 16384):
            cfg = SimulationConfig(n=n, nu=1.0, gamma=0.5)
            spacing = slot_spacing(cfg.power, cfg.pair_gap, cfg.cluster_area, n, 1.0, 2,
                                   n ** -0.2, 0.1)
            taus.append(spacing.tau)
        assert taus == [16, 16, 16]

    def test_duty_cycle_and_identity(self):
        spacing = slot_spacing(P=0.01, d=8.0, M=11.3, n=1024, nu=1.0, t=3, snr_floor=0.125,
                               epsilon=0.1, n_pairs=2)
        assert spacing.duty_cycle == pytest.approx(2 * 11.3 / 1024)
        assert spacing.power_identity_ratio == pytest.approx(
            spacing.amp_from_power / spacing.amp_from_signal)
        assert spacing.feasible == (spacing.amp_from_power >= spacing.amp_from_signal)

    def test_amplification_within_budget_is_untouched(self):
        spacing = slot_spacing(P=0.01, d=8.0, M=11.3, n=1024, nu=1.0, t=3, snr_floor=0.125,
                               epsilon=0.1, n_pairs=2)
        amp, clamped = budgeted_amplification(11.3 / 8.0, 0.125, 3, spacing)
        assert not clamped
        assert amp == pytest.approx(spacing.amp_from_signal, rel=1e-12)
        assert amp <= spacing.amp_from_power

    def test_weak_gain_is_clamped_to_power_budget(self):
        spacing = slot_spacing(P=0.01, d=8.0, M=11.3, n=1024, nu=1.0, t=3, snr_floor=0.125,
                               epsilon=0.1, n_pairs=2)
        amp, clamped = budgeted_amplification(1e-6, 0.125, 3, spacing)
        assert clamped
        assert amp == spacing.amp_from_power

    def test_regime_window(self):
        assert scheme_regime_ok(SimulationConfig(n=1024, nu=1.0), 1.0)
        assert not scheme_regime_ok(SimulationConfig(n=1024, nu=1.95), 1.0)
        assert not scheme_regime_ok(SimulationConfig(n=1024, nu=1.0), 1e-6)


class TestBackAndForth:

    def test_single_hop_matches_closed_form(self, single_pair):
        """t = 1: SINR = A^2 g^2 snr / (A^2 g^2 + 1) with g the hop gain."""
        nodes, schedule = single_pair
        trace = run_back_and_forth(nodes, schedule, _params(1, 2.0), nodes.config)
        gain_sq = (2.0 * HOP) ** 2
        assert list(trace.final_sinr) == [1]
        assert trace.final_sinr[1] == pytest.approx(gain_sq * 0.25 / (gain_sq + 1), rel=1e-12)
        assert trace.final_sinr[1] == pytest.approx(0.025, rel=1e-12)

    def test_noiseless_signal_power(self, single_pair):
        nodes, schedule = single_pair
        amp = amplification_factor(HOP, 0.25, 2)
        trace = run_back_and_forth(nodes, schedule, _params(2, amp), nodes.config,
                                   inject_noise=False)
        last = [r for r in trace.records if r.step == 2]
        assert [r.rx_index for r in last] == [1]
        assert last[0].signal_mag ** 2 == pytest.approx(1.0, rel=1e-12)
        assert trace.final_sinr[1] == math.inf

    def test_relay_bounces_through_partner(self, single_pair):
        nodes, schedule = single_pair
        trace = run_back_and_forth(nodes, schedule, _params(3, 1.0), nodes.config)
        assert [r.rx_index for r in trace.records] == [1, 0, 1]
        assert [r.step for r in trace.records] == [1, 2, 3]

    def test_noise_accumulates_monotonically(self, single_pair):
        nodes, schedule = single_pair
        amp = amplification_factor(HOP, 0.25, 3)
        trace = run_back_and_forth(nodes, schedule, _params(3, amp), nodes.config)
        g2 = 0.25 ** (-1 / 3)
        expected = [g2 + 1, g2 * (g2 + 1) + 1, g2 * (g2 * (g2 + 1) + 1) + 1]
        assert [r.noise_power for r in trace.records] == pytest.approx(expected, rel=1e-12)
        assert trace.noise_monotone
        assert trace.noise_bound == 2.0 * 4

    def test_phase_one_noise_seeds_covariance(self, single_pair):
        nodes, schedule = single_pair
        params = _params(1, 2.0, phase1_noise=np.array([0.5, 0.0]))
        trace = run_back_and_forth(nodes, schedule, params, nodes.config)
        gain_sq = (2.0 * HOP) ** 2
        assert trace.records[0].noise_power == pytest.approx(gain_sq * 0.5 + 1, rel=1e-12)

    def test_simultaneous_pair_interferes(self, make_nodes):
        nodes = make_nodes([PARTNER, SERVED, (3.0, 12.5), (9.0, 12.5)])
        schedule = _schedule(nodes, [(0, 2), (48, 50)])
        trace = run_back_and_forth(nodes, schedule, _params(1, 2.0), nodes.config)
        record = next(r for r in trace.records if r.rx_index == 1)
        assert record.interference_mag == pytest.approx(1 / math.hypot(6.0, 12.0), rel=1e-12)
        other = TransmitCluster.from_cell(schedule.layout, 48, 50)
        assert interference_sum(nodes, [other], 1) == pytest.approx(record.interference_mag)

    def test_empty_partner_leaves_receivers_unserved(self, make_nodes):
        nodes = make_nodes([SERVED, (9.0, 3.5)])
        schedule = _schedule(nodes, [(0, 2)])
        trace = run_back_and_forth(nodes, schedule, _params(1, 2.0), nodes.config)
        assert trace.final_sinr == {}
        assert trace.unserved == [0]

    def test_rejects_invalid_params(self, single_pair):
        nodes, schedule = single_pair
        with pytest.raises(ValueError):
            run_back_and_forth(nodes, schedule, _params(0, 2.0), nodes.config)


class TestSchemeOnNetwork:

    @pytest.fixture(scope="class")
    def boundary_run(self):
        cfg = SimulationConfig(n=256, nu=1.0, gamma=0.5, seed=7)
        nodes = generate_network(cfg)
        schedule = build_pair_schedule(scheme_layout(nodes), cfg)
        params = plan_scheme(nodes, schedule, cfg)
        trace = run_back_and_forth(nodes, schedule, params, cfg)
        return cfg, nodes, schedule, params, trace

    def test_plan_is_consistent(self, boundary_run):
        cfg, nodes, schedule, params, _ = boundary_run
        assert params.t >= 1 and params.tau >= 1
        assert 0 <= params.source < cfg.n
        assert params.phase1_noise[params.source] == 0.0
        assert np.all(params.phase1_noise <= 1.0 + 1e-12)
        assert params.amp_factor <= params.spacing.amp_from_power * (1 + 1e-12)
        if params.spacing.feasible:
            target = (params.amp_factor * cfg.gain_base) ** (2 * params.t) * params.snr_floor
            assert target == pytest.approx(1.0, rel=1e-9)
        constants = measure_scheme_constants(nodes, schedule, cfg)
        assert params.k1 == pytest.approx(constants.k1)

    def test_noise_stays_within_bound(self, boundary_run):
        *_, trace = boundary_run
        assert trace.max_noise <= trace.noise_bound
        assert trace.noise_within_bound

    def test_every_node_accounted_for(self, boundary_run):
        cfg, _, _, _, trace = boundary_run
        assert len(trace.final_sinr) + len(trace.unserved) == cfg.n
        assert not set(trace.final_sinr) & set(trace.unserved)

    def test_trace_covers_every_hop(self, boundary_run):
        _, _, schedule, params, trace = boundary_run
        hops = {(r.tdma_round, r.step) for r in trace.records}
        rounds = {r for r, _ in hops}
        assert rounds <= set(range(schedule.rounds_total))
        assert {s for _, s in hops} == set(range(1, params.t + 1))

    def test_rate_is_positive(self, boundary_run):
        _, _, schedule, params, trace = boundary_run
        assert achieved_broadcast_rate(trace, params.tau, schedule.rounds_total) > 0

    def test_served_field_shapes(self, boundary_run):
        _, nodes, schedule, _, _ = boundary_run
        field = served_field(nodes, schedule)
        assert field.rx.size == field.gain.size == field.interference.size
        assert np.all(field.gain > 0)

    def test_threads_do_not_change_trace(self, boundary_run):
        cfg, nodes, schedule, params, trace = boundary_run
        again = run_back_and_forth(nodes, schedule, params, cfg, threads=4)
        assert again.records == trace.records

    def test_plan_needs_two_nodes(self):
        cfg = SimulationConfig(n=1, nu=1.0)
        nodes = generate_network(cfg)
        with pytest.raises(ValueError):
            plan_scheme(nodes, None, cfg)

    @pytest.mark.slow
    def test_boundary_power_rates(self):
        served, good = 0, 0
        for seed in range(10):
            cfg = SimulationConfig(n=4096, nu=1.0, gamma=0.5, seed=seed)
            nodes = generate_network(cfg)
            schedule = build_pair_schedule(scheme_layout(nodes), cfg)
            trace = run_back_and_forth(nodes, schedule, plan_scheme(nodes, schedule, cfg), cfg)
            rates = list(trace.rates.values())
            served += len(rates)
            good += sum(r >= 0.1 for r in rates)
        assert good / served >= 0.99

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", [0, 1])
    def test_boundary_power_noise_at_scale(self, seed):
        cfg = SimulationConfig(n=4096, nu=1.0, gamma=boundary_gamma(1.0), seed=seed)
        nodes = generate_network(cfg)
        schedule = build_pair_schedule(scheme_layout(nodes), cfg)
        params = plan_scheme(nodes, schedule, cfg)
        trace = run_back_and_forth(nodes, schedule, params, cfg)
        assert params.amp_factor <= params.spacing.amp_from_power * (1 + 1e-12)
        assert trace.max_noise <= trace.noise_bound


class TestAchievedRate:

    def _trace(self, sinr):
        return BeamformTrace(records=[], t=1, final_sinr=sinr, unserved=[], noise_bound=4.0)

    def test_unit_sinr(self):
        trace = self._trace({0: 1.0, 1: 1.0, 2: 1.0})
        assert achieved_broadcast_rate(trace, 1, 1, sources=3) == pytest.approx(3.0)

    def test_single_source_by_default(self):
        trace = self._trace({0: 1.0, 1: 1.0})
        assert achieved_broadcast_rate(trace, 1, 1) == pytest.approx(1.0)

    def test_rejects_zero_sources(self):
        with pytest.raises(ValueError):
            achieved_broadcast_rate(self._trace({0: 1.0}), 1, 1, sources=0)

    def test_spacing_halves_rate(self):
        trace = self._trace({0: 3.0, 1: 7.0})
        assert achieved_broadcast_rate(trace, 2, 5) == pytest.approx(
            achieved_broadcast_rate(trace, 1, 5) / 2)

    def test_nothing_served(self):
        assert achieved_broadcast_rate(self._trace({}), 1, 1) == 0.0

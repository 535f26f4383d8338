# tests/test_netgeom.py

import math

import numpy as np
import pytest

from beamcast.errors import GeometryError
from beamcast.netgeom import (build_pair_schedule, chernoff_deviation_bound, chernoff_exponent,
                              cluster_pair_count, empirical_count_deviation, generate_network,
                              lower_chernoff_exponent, partition_clusters, scheme_layout,
                              square_layout)
from beamcast.scaling import fit_exponent
from beamcast.settings import SimulationConfig


class TestGenerateNetwork:

    def test_single_node_on_unit_square(self):
        nodes = generate_network(SimulationConfig(n=1, nu=2.0, seed=11))
        assert nodes.side == pytest.approx(1.0)
        assert len(nodes) == 1
        assert np.all((nodes.positions >= 0) & (nodes.positions <= 1))

    def test_points_inside_square(self):
        nodes = generate_network(SimulationConfig(n=4, nu=2.0))
        assert nodes.side == pytest.approx(4.0)
        assert np.all((nodes.positions >= 0) & (nodes.positions <= 4))

    def test_same_seed_same_placement(self, small_config):
        a = generate_network(small_config)
        b = generate_network(small_config)
        assert np.array_equal(a.positions, b.positions)

    def test_trial_changes_placement(self, small_config):
        a = generate_network(small_config, trial=0)
        b = generate_network(small_config, trial=1)
        assert not np.array_equal(a.positions, b.positions)

    def test_positions_are_read_only(self, small_network):
        with pytest.raises(ValueError):
            small_network.positions[0, 0] = 1.0

    def test_mean_x_near_centre(self):
        """Mean x of 10^4 uniform points lies within 3 sigma of L/2 = 50."""
        nodes = generate_network(SimulationConfig(n=10_000, nu=1.0, seed=0))
        sigma = nodes.side / math.sqrt(12 * len(nodes))
        assert abs(nodes.x.mean() - 50.0) <= 3 * sigma


class TestPartitionClusters:

    def test_origin_lands_in_first_cell(self, make_nodes):
        nodes = make_nodes([[0.0, 0.0], [3.0, 3.0]], side=4.0)
        layout = partition_clusters(nodes, 2.0, 2.0)
        assert layout.cell_of[0] == layout.index(0, 0)

    def test_boundary_belongs_to_higher_cell(self, make_nodes):
        nodes = make_nodes([[2.0, 0.5], [1.0, 1.0]], side=4.0)
        layout = partition_clusters(nodes, 2.0, 2.0)
        assert layout.row_col(int(layout.cell_of[0])) == (0, 1)

    def test_partition_is_complete_and_disjoint(self, small_network):
        layout = partition_clusters(small_network, 3.0, 5.0)
        flat = np.concatenate(layout.cells)
        assert np.array_equal(np.sort(flat), np.arange(len(small_network)))
        assert int(layout.counts.sum()) == len(small_network)

    def test_trailing_cells_flagged_partial(self, small_network):
        layout = partition_clusters(small_network, 5.0, 4.0)
        assert layout.cols == 4 and layout.rows == 4
        grid = layout.partial.reshape(layout.rows, layout.cols)
        assert grid[:, -1].all()
        assert not grid[:, :-1].any()

    def test_mean_occupancy(self):
        nodes = generate_network(SimulationConfig(n=10_000, nu=1.0, seed=2))
        layout = square_layout(nodes, 10)
        assert layout.cell_area == pytest.approx(100.0)
        assert layout.counts.mean() == pytest.approx(100.0, rel=0.01)

    @pytest.mark.parametrize("width,height", [(0.0, 1.0), (1.0, -2.0)])
    def test_rejects_non_positive_cells(self, small_network, width, height):
        with pytest.raises(GeometryError):
            partition_clusters(small_network, width, height)


class TestPairSchedule:

    def test_pair_count_formula(self):
        assert cluster_pair_count(100.0, 5.0, 20.0) == 4

    def test_gap_wider_than_square_is_rejected(self):
        cfg = SimulationConfig(n=256, nu=1.0, c2=10.0)
        nodes = generate_network(cfg)
        with pytest.raises(GeometryError, match="no cluster pair fits"):
            build_pair_schedule(scheme_layout(nodes), cfg)

    def test_layout_must_match_pair_geometry(self, small_network, small_config):
        with pytest.raises(GeometryError, match="do not match"):
            build_pair_schedule(square_layout(small_network, 4), small_config)

    def test_every_cluster_served_once(self, scheme_network, scheme_config):
        layout = scheme_layout(scheme_network)
        schedule = build_pair_schedule(layout, scheme_config)
        served = [p.rx_cell for p in schedule.pairs]
        assert sorted(served) == list(range(layout.n_cells))
        assert set(schedule.rounds) == set(range(layout.n_cells))

    def test_pairs_use_facing_columns(self, scheme_network, scheme_config):
        schedule = build_pair_schedule(scheme_layout(scheme_network), scheme_config)
        layout = schedule.layout
        for pair in schedule.pairs:
            row_rx, col_rx = layout.row_col(pair.rx_cell)
            row_tx, col_tx = layout.row_col(pair.tx_cell)
            assert row_rx == row_tx == pair.row
            assert abs(col_rx - col_tx) == 2

    def test_simultaneous_pairs_keep_vertical_gap(self, scheme_network, scheme_config):
        schedule = build_pair_schedule(scheme_layout(scheme_network), scheme_config)
        h = scheme_config.cluster_height
        for r in range(schedule.rounds_total):
            rows = sorted(p.row for p in schedule.round_pairs(r))
            for lower, upper in zip(rows, rows[1:]):
                assert (upper - lower - 1) * h >= scheme_config.vertical_gap - 1e-9

    def test_round_count(self, scheme_network, scheme_config):
        schedule = build_pair_schedule(scheme_layout(scheme_network), scheme_config)
        assert schedule.row_stride == 9
        assert schedule.rounds_total == 4 * min(schedule.row_stride, schedule.layout.rows)
        assert schedule.max_active_pairs <= schedule.n_pairs + 1

    def test_rounds_grow_like_n_to_the_epsilon(self):
        points = []
        for k in range(10, 15):
            cfg = SimulationConfig(n=2 ** k, nu=1.0, epsilon=0.1, seed=1)
            schedule = build_pair_schedule(scheme_layout(generate_network(cfg)), cfg)
            points.append((cfg.n, schedule.rounds_total))
        assert fit_exponent(points).slope == pytest.approx(0.1, abs=0.05)

    def test_schedule_is_deterministic(self, scheme_config):
        a = build_pair_schedule(scheme_layout(generate_network(scheme_config)), scheme_config)
        b = build_pair_schedule(scheme_layout(generate_network(scheme_config)), scheme_config)
        assert a.pairs == b.pairs
        assert a.rounds == b.rounds


class TestChernoff:

    def test_exponent_at_zero(self):
        assert chernoff_exponent(0.0) == 0.0

    def test_exponent_at_one(self):
        assert chernoff_exponent(1.0) == pytest.approx(2 * math.log(2) - 1, abs=1e-12)

    def test_exponent_increasing(self):
        assert chernoff_exponent(0.5) < chernoff_exponent(1.0)

    def test_lower_exponent(self):
        assert lower_chernoff_exponent(0.5) == pytest.approx(0.5 * math.log(0.5) + 0.5)
        assert lower_chernoff_exponent(1.0) == pytest.approx(1.0)
        assert lower_chernoff_exponent(1.5) == math.inf

    def test_bound_rejects_non_positive_delta(self):
        with pytest.raises(ValueError):
            chernoff_deviation_bound(100.0, 1000, 1.0, 0.0)

    def test_two_sided_adds_lower_tail(self):
        one = chernoff_deviation_bound(256.0, 4096, 1.0, 0.5)
        two = chernoff_deviation_bound(256.0, 4096, 1.0, 0.5, two_sided=True)
        assert two > one


class TestCountDeviation:

    def test_single_cluster_never_deviates(self):
        cfg = SimulationConfig(n=64, nu=1.0, seed=4)
        report = empirical_count_deviation(cfg, 64.0, 0.3, trials=20)
        assert report.frequency == 0.0

    def test_upper_violation_impossible(self):
        cfg = SimulationConfig(n=64, nu=1.0, seed=4)
        report = empirical_count_deviation(cfg, 16.0, 4.0, trials=50)
        assert report.upper_frequency == 0.0

    def test_frequency_dominated_by_bound(self):
        cfg = SimulationConfig(n=4096, nu=1.0, seed=0)
        report = empirical_count_deviation(cfg, 256.0, 0.5, trials=200, threads=2)
        assert report.dominated

    def test_rejects_oversized_cluster(self):
        with pytest.raises(GeometryError):
            empirical_count_deviation(SimulationConfig(n=64, nu=1.0), 65.0, 0.5, trials=1)

    @pytest.mark.slow
    def test_thousand_trial_dominance(self):
        cfg = SimulationConfig(n=4096, nu=1.0, seed=0)
        report = empirical_count_deviation(cfg, 256.0, 0.5, trials=1000, threads=4)
        assert report.frequency <= report.bound + 3 * report.stderr

import unittest

import numpy as np
import numpy.testing as npt
import pandas.testing as pdt
import pandas as pd
from sklearn.utils import check_random_state

from antroute.ants import RoutingTable, init_routing_table
from antroute.errors import ParameterError, ValidationError
from antroute.tests import get_data_path, shortest_path_tables
from antroute.topology import (
    Link, Topology, generate_waxman, read_topology, velcro_preset)
from antroute.traffic import (
    Outcome, Packet, PathRecord, TrafficConfig, TrafficMetrics, record_visit,
    resolve_phi, route_packet, run_traffic_experiment, select_pairs,
    top_phi_distribution, traffic_distribution_buckets)


def uniform_tables(topology):
    return [init_routing_table(i, topology)
            for i in range(topology.node_count)]


class TestTopPhi(unittest.TestCase):

    def test_truncate(self):
        cands, probs = top_phi_distribution([0.4, 0.2, 0.15, 0.15], 2)
        npt.assert_array_equal(cands, [0, 1])
        npt.assert_allclose(probs, [2 / 3, 1 / 3])

    def test_ties(self):
        cands, probs = top_phi_distribution([0.25, 0.25, 0.5], 2)
        npt.assert_array_equal(cands, [2, 0])
        npt.assert_allclose(probs, [2 / 3, 1 / 3])
        cands, _ = top_phi_distribution([0.3, 0.1, 0.3, 0.3], 3)
        npt.assert_array_equal(cands, [0, 2, 3])

    def test_phi_above_degree(self):
        cands, probs = top_phi_distribution([0.1, 0.9], 5)
        npt.assert_array_equal(cands, [1, 0])
        npt.assert_allclose(probs, [0.9, 0.1])

    def test_zero_row(self):
        cands, probs = top_phi_distribution([0., 0., 0.], 2)
        npt.assert_array_equal(cands, [0, 1])
        npt.assert_allclose(probs, [0.5, 0.5])

    def test_bad_phi(self):
        with self.assertRaises(ParameterError):
            top_phi_distribution([1.], 0)

    def test_resolve_phi(self):
        velcro = velcro_preset('costly-direct')
        self.assertEqual(resolve_phi('max', velcro), 4)
        self.assertEqual(resolve_phi('MAX', velcro), 4)
        self.assertEqual(resolve_phi('3', velcro), 3)
        self.assertEqual(resolve_phi(2, velcro), 2)
        with self.assertRaises(ParameterError):
            resolve_phi('most', velcro)
        with self.assertRaises(ParameterError):
            resolve_phi(0, velcro)


class TestLoopDetection(unittest.TestCase):

    def test_record_visit(self):
        packet = Packet(0, 5)
        for node in (1, 2, 1):
            record_visit(packet, node)
        self.assertEqual(packet.loop_count, 1)
        self.assertEqual(packet.visited_stack, [0, 1])
        self.assertEqual(packet.path_trace, [0, 1, 2, 1])

    def test_revisit_then_continue(self):
        packet = Packet(0, 3)
        for node in (1, 2, 1, 3):
            record_visit(packet, node)
        self.assertEqual(packet.loop_count, 1)
        self.assertEqual(packet.visited_stack, [0, 1, 3])

    def test_pop_to_earlier_node(self):
        packet = Packet(0, 9)
        for node in (1, 2, 3, 4, 2, 5, 0):
            record_visit(packet, node)
        self.assertEqual(packet.loop_count, 2)
        self.assertEqual(packet.visited_stack, [0])
        self.assertEqual(len(packet.path_trace), 8)


class TestRoutePacket(unittest.TestCase):

    def setUp(self):
        self.triangle = read_topology(get_data_path('triangle.topo'))

    def _tables(self, next_hops):
        """ Tables routing destination 2 via the given interface per node. """
        tables = uniform_tables(self.triangle)
        for node, k in next_hops.items():
            row = np.zeros(2)
            row[k] = 1.
            tables[node].probabilities[2] = row
        return tables

    def test_deterministic_path(self):
        tables = self._tables({0: 0, 1: 1})
        state = check_random_state(0)
        routed = route_packet(Packet(0, 2), tables, self.triangle,
                              TrafficConfig(phi=1), state)
        self.assertIs(routed.outcome, Outcome.DELIVERED)
        self.assertEqual(routed.packet.path_trace, [0, 1, 2])
        self.assertEqual(routed.packet.ttl, 253)
        self.assertFalse(routed.packet.multipath_flag)

    def test_single_candidate_draws_nothing(self):
        tables = self._tables({0: 0, 1: 1})
        state = check_random_state(4)
        route_packet(Packet(0, 2), tables, self.triangle,
                     TrafficConfig(phi=1), state)
        self.assertEqual(state.random_sample(),
                         check_random_state(4).random_sample())

    def test_absorbed_at_source(self):
        tables = self._tables({0: 0, 1: 0})
        routed = route_packet(Packet(0, 2), tables, self.triangle,
                              TrafficConfig(phi=1), check_random_state(0))
        self.assertIs(routed.outcome, Outcome.ABSORBED_AT_SOURCE)
        self.assertEqual(routed.packet.loop_count, 1)
        self.assertEqual(routed.packet.path_trace, [0, 1, 0])

    def test_ttl_expired_without_absorption(self):
        tables = self._tables({0: 0, 1: 0})
        config = TrafficConfig(phi=1, source_absorption=False)
        routed = route_packet(Packet(0, 2), tables, self.triangle, config,
                              check_random_state(0))
        self.assertIs(routed.outcome, Outcome.TTL_EXPIRED)
        self.assertEqual(routed.packet.ttl, 0)
        self.assertEqual(routed.packet.loop_count, 127)

    def test_multipath_flag(self):
        tables = uniform_tables(self.triangle)
        routed = route_packet(Packet(0, 2), tables, self.triangle,
                              TrafficConfig(phi=2), check_random_state(0))
        self.assertTrue(routed.packet.multipath_flag)

    def test_zero_probability_candidate_is_not_multipath(self):
        tables = self._tables({0: 0, 1: 1})
        routed = route_packet(Packet(0, 2), tables, self.triangle,
                              TrafficConfig(phi=2), check_random_state(0))
        self.assertFalse(routed.packet.multipath_flag)
        self.assertEqual(routed.packet.path_trace, [0, 1, 2])


class TestTrafficConfig(unittest.TestCase):

    def test_validate(self):
        TrafficConfig(phi='max').validate()
        for kwargs in ({'phi': 0}, {'phi': 'most'}, {'phi': 1.5},
                       {'packets_per_pair': 0}, {'ttl': 0}):
            with self.assertRaises(ParameterError):
                TrafficConfig(**kwargs).validate()


class TestTrafficExperiment(unittest.TestCase):

    def setUp(self):
        self.triangle = read_topology(get_data_path('triangle.topo'))
        self.waxman = generate_waxman(12, cost_range=(1, 5), seed=3)

    def test_shortest_path_tables(self):
        tables = shortest_path_tables(self.triangle)
        metrics, record = run_traffic_experiment(
            self.triangle, tables, TrafficConfig(packets_per_pair=10))
        self.assertEqual(metrics.packets, 60)
        self.assertEqual(metrics.success_pct, 100.)
        self.assertEqual(metrics.loop_pct, 0.)
        self.assertEqual(metrics.multipath_pct, 0.)
        self.assertEqual(metrics.loop_histogram, {0: 60})
        df = record.to_frame()
        self.assertEqual(len(df), 6)
        self.assertEqual(df.loc[(df.source == 0) & (df.destination == 2),
                                'path'].item(), '0-1-2')
        buckets, excluded = traffic_distribution_buckets(record)
        self.assertEqual(excluded, 0)
        self.assertEqual(buckets.frequency_sum.iloc[0], 60)
        self.assertEqual(buckets.frequency_sum.sum(), 60)

    def test_uniform_tables_multipath(self):
        metrics, _ = run_traffic_experiment(
            self.triangle, uniform_tables(self.triangle),
            TrafficConfig(phi=2, packets_per_pair=20))
        self.assertEqual(metrics.multipath_pct, 100.)

    def test_no_absorption(self):
        config = TrafficConfig(phi='max', source_absorption=False,
                               packets_per_pair=20, ttl=16)
        metrics, _ = run_traffic_experiment(
            self.waxman, uniform_tables(self.waxman), config)
        self.assertEqual(metrics.absorbed, 0)
        self.assertAlmostEqual(metrics.success_pct,
                               100. - 100. * metrics.ttl_drops /
                               metrics.packets)

    def test_histogram_counts(self):
        metrics, _ = run_traffic_experiment(
            self.waxman, uniform_tables(self.waxman),
            TrafficConfig(phi='max', packets_per_pair=10, ttl=32))
        self.assertEqual(sum(metrics.loop_histogram.values()),
                         metrics.delivered + metrics.absorbed)
        self.assertEqual(metrics.packets, metrics.delivered +
                         metrics.absorbed + metrics.ttl_drops)
        self.assertGreaterEqual(metrics.total_loops, metrics.looped)

    def test_pair_order_independent(self):
        pairs = select_pairs(self.waxman)
        config = TrafficConfig(phi=2, packets_per_pair=5, seed=11)
        tables = uniform_tables(self.waxman)
        m1, r1 = run_traffic_experiment(self.waxman, tables, config,
                                        pair_selection=pairs)
        m2, r2 = run_traffic_experiment(self.waxman, tables, config,
                                        pair_selection=pairs[::-1])
        self.assertEqual(m1, m2)
        pdt.assert_frame_equal(r1.to_frame(), r2.to_frame())

    def test_tables_untouched(self):
        tables = uniform_tables(self.waxman)
        before = [t.probabilities.copy() for t in tables]
        run_traffic_experiment(self.waxman, tables,
                               TrafficConfig(packets_per_pair=2))
        for t, b in zip(tables, before):
            npt.assert_array_equal(t.probabilities, b)

    def test_table_mismatch(self):
        pair = Topology(2, [Link(0, 1, 1, 1)])
        with self.assertRaises(ValidationError):
            run_traffic_experiment(pair, uniform_tables(self.triangle))
        tables = uniform_tables(self.triangle)
        tables[1] = RoutingTable(1, np.full((3, 3), 1 / 3))
        with self.assertRaises(ValidationError):
            run_traffic_experiment(self.triangle, tables)

    def test_select_pairs(self):
        self.assertEqual(len(select_pairs(self.triangle)), 6)
        sample = select_pairs(self.waxman, 10, seed=1)
        self.assertEqual(len(sample), 10)
        self.assertEqual(len(set(sample)), 10)
        self.assertEqual(sample, select_pairs(self.waxman, 10, seed=1))
        self.assertEqual(select_pairs(self.triangle, [(2, 0)]), [(2, 0)])
        with self.assertRaises(ParameterError):
            select_pairs(self.triangle, [(1, 1)])
        with self.assertRaises(ParameterError):
            select_pairs(self.triangle, 0)


class TestBuckets(unittest.TestCase):

    def test_two_paths(self):
        record = PathRecord()
        for _ in range(5):
            record.add(0, 2, (0, 1, 2), 2.)
            record.add(0, 2, (0, 2), 3.)
        buckets, excluded = traffic_distribution_buckets(record)
        self.assertEqual(excluded, 0)
        exp = np.zeros(10, dtype=np.int64)
        exp[0] = 5
        exp[5] = 5
        npt.assert_array_equal(buckets.frequency_sum.values, exp)
        npt.assert_array_equal(buckets.bucket_index.values,
                               np.arange(1, 11))

    def test_equal_costs_rank_by_frequency(self):
        record = PathRecord()
        record.add(0, 3, (0, 1, 3), 2.)
        for _ in range(3):
            record.add(0, 3, (0, 2, 3), 2.)
        buckets, _ = traffic_distribution_buckets(record)
        self.assertEqual(buckets.frequency_sum.iloc[0], 3)
        self.assertEqual(buckets.frequency_sum.iloc[5], 1)

    def test_excluded_pair(self):
        record = PathRecord()
        record.add(0, 1, (0, 1), 1.)
        record.register(1, 0)
        with self.assertWarns(UserWarning):
            buckets, excluded = traffic_distribution_buckets(record)
        self.assertEqual(excluded, 1)
        self.assertEqual(buckets.frequency_sum.sum(), 1)

    def test_record_frame(self):
        record = PathRecord()
        record.add(1, 0, [1, 2, 0], 4.)
        record.add(1, 0, [1, 2, 0], 4.)
        exp = pd.DataFrame([(1, 0, '1-2-0', 2, 4.)],
                           columns=['source', 'destination', 'path',
                                    'frequency', 'cost'])
        pdt.assert_frame_equal(record.to_frame(), exp)
        self.assertEqual(record.delivered(1, 0), 2)


class TestMetrics(unittest.TestCase):

    def test_frame(self):
        metrics = TrafficMetrics(packets=4, delivered=3, looped=1,
                                 multipath=2, total_loops=2, ttl_drops=1)
        df = metrics.to_frame(phi=1)
        self.assertEqual(list(df.columns),
                         ['phi', 'success_pct', 'loop_pct', 'multipath_pct',
                          'total_loops', 'ttl_drops'])
        npt.assert_allclose(df.iloc[0, 1:4].astype(float).values,
                            [75., 25., 50.])

    def test_empty(self):
        self.assertEqual(TrafficMetrics().success_pct, 0.)


if __name__ == "__main__":
    unittest.main()

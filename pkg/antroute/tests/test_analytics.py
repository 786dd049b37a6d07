import unittest
from collections import Counter
from unittest import mock

import networkx as nx
import numpy as np
import numpy.testing as npt
import pandas as pd
import pandas.testing as pdt
from scipy.stats import spearmanr

from antroute.analytics import (
    FitResult, dijkstra_oracle, fit_kappa, fit_report_frame,
    kappa_from_length, loop_frequency_histogram, measure_avg_shortest_path,
    operating_curve, operating_curve_frame, shortest_path_comparison,
    shortest_path_fit, theoretical_path_length)
from antroute.ants import (
    eligible_interfaces, init_routing_table, select_interface_controlled)
from antroute.errors import DomainError, ParameterError
from antroute.simulation import (
    ExplorationSimulator, SimConfig, run_exploration)
from antroute.tests import get_data_path, shortest_path_tables
from antroute.topology import (
    Link, Topology, generate_clique_grid, generate_waxman, read_topology,
    velcro_preset)
from antroute.traffic import (
    TrafficConfig, TrafficMetrics, run_traffic_experiment,
    traffic_distribution_buckets)


def _short_config(**kwargs):
    kwargs.setdefault('duration', 50000)
    kwargs.setdefault('ant_period', 100)
    kwargs.setdefault('link_delay', 10)
    return SimConfig(**kwargs)


def _star(leaves):
    return Topology(leaves + 1, [Link(0, i, 1, 1)
                                 for i in range(1, leaves + 1)])


class TestOracle(unittest.TestCase):

    def test_pair(self):
        df = dijkstra_oracle(read_topology(get_data_path('pair.topo')), 0)
        self.assertEqual(df.loc[1, 'cost'], 5.)
        self.assertEqual(df.loc[1, 'hops'], 1)
        self.assertEqual(df.loc[0, 'hops'], 0)

    def test_triangle(self):
        df = dijkstra_oracle(read_topology(get_data_path('triangle.topo')), 0)
        self.assertEqual(df.loc[2, 'cost'], 2.)
        self.assertEqual(df.loc[2, 'hops'], 2)

    def test_hop_tie_break(self):
        t = Topology(3, [Link(0, 1, 1, 1), Link(1, 2, 1, 1),
                         Link(0, 2, 2, 2)])
        df = dijkstra_oracle(t, 0)
        self.assertEqual(df.loc[2, 'cost'], 2.)
        self.assertEqual(df.loc[2, 'hops'], 1)

    def test_grid(self):
        df = dijkstra_oracle(generate_clique_grid(3, 4), 0)
        exp = [r + c for r in range(3) for c in range(4)]
        npt.assert_array_equal(df['cost'].values, exp)
        npt.assert_array_equal(df['hops'].values, exp)

    def test_exhaustive_small_graphs(self):
        state = np.random.RandomState(0)
        topologies = [generate_clique_grid(2, 3)]
        for seed in range(12):
            n = int(state.randint(3, 9))
            alpha = (0.3, 0.6, 1.)[seed % 3]
            topologies.append(generate_waxman(
                n, alpha, 0.5, seed=seed, cost_range=(1, 4)))
        for t in topologies:
            g = t.to_networkx()
            for source in range(t.node_count):
                df = dijkstra_oracle(t, source)
                for dest in range(t.node_count):
                    if dest == source:
                        continue
                    paths = [(nx.path_weight(g, p, 'cost'), len(p) - 1)
                             for p in nx.all_simple_paths(g, source, dest)]
                    cheapest = min(c for c, _ in paths)
                    fewest = min(h for c, h in paths if c == cheapest)
                    self.assertEqual(df.loc[dest, 'cost'], cheapest)
                    self.assertEqual(df.loc[dest, 'hops'], fewest)

    def test_asymmetric(self):
        t = Topology(2, [Link(0, 1, 2, 7)])
        self.assertEqual(dijkstra_oracle(t, 1).loc[0, 'cost'], 7.)


class TestPathLengthFormula(unittest.TestCase):

    def test_value(self):
        a = np.exp(0.5) - 1
        exp = 1 + (np.log(40) + np.log(a)) / (np.log(2) - np.log(a))
        self.assertAlmostEqual(theoretical_path_length(40, 2.), exp)

    def test_monotone_in_N(self):
        lengths = theoretical_path_length(np.array([20, 40, 60, 80, 100]),
                                          1.5)
        self.assertTrue((np.diff(lengths) > 0).all())

    def test_domain(self):
        with self.assertRaises(DomainError):
            theoretical_path_length(40, 0.5)
        with self.assertRaises(ParameterError):
            theoretical_path_length(1, 2.)
        with self.assertRaises(ParameterError):
            theoretical_path_length(40, 0.)

    def test_inverse(self):
        for N in (20, 40, 100):
            for length in (2.5, 4., 6.):
                kappa = kappa_from_length(N, length)
                self.assertAlmostEqual(theoretical_path_length(N, kappa),
                                       length, places=9)

    def test_closed_form(self):
        self.assertAlmostEqual(kappa_from_length(2, 4., exact=False),
                               2 / np.log(2))
        with self.assertRaises(DomainError):
            kappa_from_length(100, 2., exact=False)
        with self.assertRaises(DomainError):
            kappa_from_length(40, 0.)
        with self.assertRaises(ParameterError):
            kappa_from_length(1, 3.)


class TestFitKappa(unittest.TestCase):

    def test_recover(self):
        Ns = [20, 40, 60, 80, 100]
        samples = [(n, theoretical_path_length(n, 1.5)) for n in Ns]
        res = fit_kappa(samples)
        self.assertAlmostEqual(res.kappa, 1.5, places=5)
        self.assertAlmostEqual(res.r_squared, 1., places=9)
        self.assertEqual(len(res.samples), 5)

    def test_noisy(self):
        Ns = [20, 40, 60, 80, 100]
        noise = [0.01, -0.01, 0.01, -0.01, 0.01]
        samples = [(n, theoretical_path_length(n, 1.5) + e)
                   for n, e in zip(Ns, noise)]
        res = fit_kappa(samples)
        self.assertGreater(res.r_squared, 0.99)
        self.assertLess(res.r_squared, 1.)
        self.assertAlmostEqual(res.kappa, 1.5, places=1)

    def test_errors(self):
        with self.assertRaises(ParameterError):
            fit_kappa([(20, 3.), (40, 3.5)])
        with self.assertRaises(ParameterError):
            fit_kappa([(20, 3.), (20, 3.1), (40, 3.5)])

    def test_report(self):
        res = FitResult(1.5, 0.9, [(20, 5., 4.9), (40, 5.5, 5.6)])
        df = fit_report_frame(res)
        self.assertEqual(list(df.columns),
                         ['N', 'measured', 'theoretical', 'residual'])
        npt.assert_allclose(df['residual'].values, [0.1, -0.1])


class TestShortestPathMeasure(unittest.TestCase):

    def test_pair(self):
        pair = read_topology(get_data_path('pair.topo'))
        tables = [init_routing_table(i, pair) for i in range(2)]
        self.assertEqual(measure_avg_shortest_path(pair, tables), 1.)

    def test_star(self):
        star = _star(4)
        avg = measure_avg_shortest_path(star, shortest_path_tables(star))
        self.assertAlmostEqual(avg, 1.6)

    def test_comparison(self):
        triangle = read_topology(get_data_path('triangle.topo'))
        df = shortest_path_comparison(triangle,
                                      shortest_path_tables(triangle))
        self.assertEqual(len(df), 6)
        npt.assert_array_equal(df['cost'].values, df['oracle_cost'].values)
        npt.assert_array_equal(df['hops'].values, df['oracle_hops'].values)

    def test_deficiency(self):
        triangle = read_topology(get_data_path('triangle.topo'))
        tables = shortest_path_tables(triangle)
        tables[0].probabilities[2] = [0., 1.]
        with self.assertWarns(UserWarning):
            avg, deficient = measure_avg_shortest_path(
                triangle, tables, return_deficiencies=True)
        self.assertEqual(len(deficient), 1)
        row = deficient.iloc[0]
        self.assertEqual((row.source, row.destination), (0, 2))
        self.assertEqual(row.cost, 3.)
        self.assertAlmostEqual(avg, 7 / 6)

    def test_explored_waxman_matches_oracle(self):
        t = generate_waxman(12, seed=4)
        res = run_exploration(t, SimConfig(duration=2 * 10 ** 6,
                                           ant_period=2000, seed=4))
        df = shortest_path_comparison(t, res.tables)
        self.assertTrue((df.outcome == 'delivered').all())
        matched = df.cost == df.oracle_cost
        self.assertGreaterEqual(matched.mean(), 0.9)
        npt.assert_array_equal(df.hops[matched], df.oracle_hops[matched])

    def test_small_fit(self):
        res = shortest_path_fit(sizes=(8, 10, 12),
                                sim_config=_short_config(), seed=1)
        self.assertEqual([s[0] for s in res.samples], [8, 10, 12])
        self.assertEqual(set(res.deficiencies), {8, 10, 12})
        self.assertGreater(res.kappa, 1 / np.log(3))
        self.assertLessEqual(res.kappa, 1000.)
        self.assertTrue(0 <= res.r_squared <= 1)


class TestOperatingCurve(unittest.TestCase):

    def setUp(self):
        self.triangle = read_topology(get_data_path('triangle.topo'))
        self.traffic = TrafficConfig(packets_per_pair=5)

    def test_points(self):
        points = operating_curve(self.triangle, [0.5, 1.],
                                 sim_config=_short_config(),
                                 traffic_config=self.traffic)
        self.assertEqual([p.tau for p in points], [0.5, 1.])
        for p in points:
            self.assertTrue(0 <= p.loop_pct <= 100)
            self.assertTrue(0 <= p.multipath_pct <= 100)
            self.assertEqual(p.model_in_force, p.fallback_fraction < 1e-3)
        df = operating_curve_frame(points)
        self.assertEqual(list(df.columns),
                         ['tau', 'loop_pct', 'multipath_pct', 'success_pct',
                          'model_in_force', 'fallback_fraction',
                          'source_absorption'])

    def test_both_absorption_modes(self):
        traffic = TrafficConfig(packets_per_pair=5, source_absorption=None)
        points = operating_curve(self.triangle, [0.5, 1.],
                                 sim_config=_short_config(),
                                 traffic_config=traffic)
        self.assertEqual([(p.tau, p.source_absorption) for p in points],
                         [(0.5, True), (0.5, False), (1., True),
                          (1., False)])

    def test_workers(self):
        kwargs = dict(sim_config=_short_config(),
                      traffic_config=self.traffic)
        serial = operating_curve(self.triangle, [0.25, 0.75], **kwargs)
        parallel = operating_curve(self.triangle, [0.25, 0.75], workers=2,
                                   **kwargs)
        pdt.assert_frame_equal(operating_curve_frame(serial),
                               operating_curve_frame(parallel))

    def test_bad_grid(self):
        for grid in ([], [0.5, 0.2], [0.5, 1.5], [-0.1]):
            with self.assertRaises(ParameterError):
                operating_curve(self.triangle, grid)
        with self.assertRaises(ParameterError):
            operating_curve(self.triangle, [0.5], workers=0)

    def test_loop_histogram(self):
        metrics = TrafficMetrics(loop_histogram=Counter({0: 3, 2: 1}))
        exp = pd.DataFrame({'loop_count': [0, 1, 2],
                            'packet_count': [3, 0, 1]})
        pdt.assert_frame_equal(loop_frequency_histogram(metrics), exp,
                               check_dtype=False)
        empty = loop_frequency_histogram(TrafficMetrics())
        self.assertEqual(empty['packet_count'].tolist(), [0])


class TestRoutingBenchmark(unittest.TestCase):

    @unittest.skip("Only for benchmarking")
    def test_phi_one_matches_oracle(self):
        for seed in range(5):
            t = generate_waxman(20, cost_range=(1, 1), seed=seed)
            res = run_exploration(t, SimConfig(seed=seed))
            df = shortest_path_comparison(t, res.tables)
            self.assertTrue((df.outcome == 'delivered').all())
            matched = df.cost == df.oracle_cost
            self.assertGreaterEqual(matched.mean(), 0.95)
            npt.assert_array_equal(df.hops[matched],
                                   df.oracle_hops[matched])
            metrics, _ = run_traffic_experiment(
                t, res.tables, TrafficConfig(phi=1, packets_per_pair=5))
            self.assertEqual(metrics.success_pct, 100.)
            self.assertEqual(metrics.looped, 0)
            self.assertEqual(metrics.multipath, 0)

    @unittest.skip("Only for benchmarking")
    def test_velcro_entries_ineligible(self):
        velcro = velcro_preset('costly-direct')
        sim = ExplorationSimulator(velcro, SimConfig())
        entries = {f: (velcro.interface_to(f, f + 1),
                       velcro.interface_to(f, f + 5)) for f in (1, 7, 13)}
        counts = Counter()

        def controlled(node, destination, arrival, model, tau, *args,
                       **kwargs):
            if node in entries and not node < destination < node + 6:
                eligible = set(eligible_interfaces(
                    model, destination, tau, arrival,
                    kwargs.get('no_return', True)))
                for k in entries[node]:
                    counts['selections'] += 1
                    counts['ineligible'] += k not in eligible
            return select_interface_controlled(
                node, destination, arrival, model, tau, *args, **kwargs)

        with mock.patch('antroute.simulation.select_interface_controlled',
                        side_effect=controlled):
            res = sim.run()
        self.assertGreater(counts['selections'], 0)
        self.assertGreaterEqual(counts['ineligible'] / counts['selections'],
                                0.99)
        for f, ks in entries.items():
            outside = [d for d in range(velcro.node_count)
                       if not f <= d < f + 6]
            sent = res.models[f].sent[np.ix_(outside, ks)].sum()
            returned = res.models[f].returned[np.ix_(outside, ks)].sum()
            self.assertGreaterEqual(returned / sent, 0.95)

    @unittest.skip("Only for benchmarking")
    def test_velcro_loops_vanish(self):
        velcro = velcro_preset('costly-direct')
        config = TrafficConfig(phi='max', packets_per_pair=100)
        for absorb in (True, False):
            config.source_absorption = absorb
            res = run_exploration(velcro, SimConfig())
            metrics, _ = run_traffic_experiment(velcro, res.tables, config)
            self.assertLessEqual(metrics.loop_pct, 1.)

    @unittest.skip("Only for benchmarking")
    def test_waxman_operating_curve(self):
        t = generate_waxman(40, seed=7)
        points = operating_curve(t, traffic_config=TrafficConfig(
            packets_per_pair=20), workers=4)
        df = operating_curve_frame(points)
        top = df[df.tau == 1.].iloc[0]
        self.assertGreaterEqual(top.multipath_pct, 90.)
        self.assertLessEqual(top.loop_pct, 30.)
        in_force = df[df.model_in_force]
        if len(in_force):
            self.assertLessEqual(in_force.loop_pct.iloc[0], 1.)

    @unittest.skip("Only for benchmarking")
    def test_grid_operating_curve(self):
        grid = generate_clique_grid(8, 5)
        points = operating_curve(grid, traffic_config=TrafficConfig(
            packets_per_pair=20), workers=4)
        df = operating_curve_frame(points)
        self.assertEqual(df.multipath_pct.iloc[-1], df.multipath_pct.max())
        self.assertLess(df.loop_pct.iloc[0], 1.)
        self.assertGreater(df.model_in_force.sum(), 0)

    @unittest.skip("Only for benchmarking")
    def test_no_ttl_drops_without_absorption(self):
        for seed in range(3):
            t = generate_waxman(40, seed=seed)
            res = run_exploration(t, SimConfig(
                params={'tau': 1.}, seed=seed))
            metrics, _ = run_traffic_experiment(t, res.tables, TrafficConfig(
                phi='max', source_absorption=False, packets_per_pair=20))
            self.assertEqual(metrics.ttl_drops, 0)
            self.assertEqual(metrics.success_pct, 100.)

    @unittest.skip("Only for benchmarking")
    def test_loop_histogram_decays(self):
        t = generate_waxman(40, seed=7)
        res = run_exploration(t, SimConfig(params={'tau': 1.}))
        metrics, _ = run_traffic_experiment(t, res.tables, TrafficConfig(
            phi='max', source_absorption=False, packets_per_pair=100))
        counts = loop_frequency_histogram(metrics).packet_count.values
        self.assertGreaterEqual(counts[:3].sum(), 0.8 * counts.sum())
        # allow sampling noise on small counts
        for k in range(1, len(counts) - 1):
            slack = max(10, 2 * np.sqrt(counts[k]))
            self.assertLessEqual(counts[k + 1], counts[k] + slack)

    @unittest.skip("Only for benchmarking")
    def test_traffic_favors_cheap_paths(self):
        t = generate_waxman(60, cost_range=(1, 10), seed=0)
        res = run_exploration(t, SimConfig())
        _, record = run_traffic_experiment(
            t, res.tables, TrafficConfig(phi='max', packets_per_pair=100))
        buckets, _ = traffic_distribution_buckets(record)
        sums = buckets.frequency_sum.values
        self.assertEqual(sums.argmax(), 0)
        rho, _ = spearmanr(buckets.bucket_index, sums)
        self.assertLessEqual(rho, -0.7)

    @unittest.skip("Only for benchmarking")
    def test_kappa_fit(self):
        res = shortest_path_fit(workers=4)
        self.assertGreaterEqual(res.r_squared, 0.9)


if __name__ == "__main__":
    unittest.main()

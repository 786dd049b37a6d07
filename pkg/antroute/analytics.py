import heapq
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar
from tqdm import tqdm

from antroute.errors import DomainError, FitError, ParameterError
from antroute.simulation import SimConfig, run_exploration
from antroute.topology import generate_waxman
from antroute.traffic import (
    Outcome, Packet, TrafficConfig, route_packet, run_traffic_experiment)
from antroute.util import derive_seed


logger = logging.getLogger(__name__)

DEFAULT_TAU_GRID = tuple(np.round(np.arange(1, 21) * 0.05, 2))
DEFAULT_FIT_SIZES = (20, 40, 60, 80, 100)

# lower end of the kappa domain, where e^(1/kappa) - 1 reaches 2
_KAPPA_MIN = 1. / np.log(3.)
_KAPPA_MAX = 1000.


@dataclass
class OperatingPoint:
    tau: float
    loop_pct: float
    multipath_pct: float
    success_pct: float
    model_in_force: bool
    fallback_fraction: float
    source_absorption: bool = True


@dataclass
class FitResult:
    """ Least squares estimate of kappa.

    ``samples`` holds ``(N, measured, theoretical)`` triples.
    """
    kappa: float
    r_squared: float
    samples: List[tuple] = field(default_factory=list)
    deficiencies: Optional[dict] = None


def _check_tau_grid(tau_grid):
    grid = [float(t) for t in tau_grid]
    if len(grid) == 0:
        raise ParameterError('The tau grid is empty.')
    if any(t < 0 or t > 1 for t in grid):
        raise ParameterError('tau values must lie in [0, 1].')
    if any(b <= a for a, b in zip(grid[:-1], grid[1:])):
        raise ParameterError('The tau grid must be sorted ascending.')
    return grid


def _operating_point(topology, tau, sim_config, traffic_config, epsilon):
    sim_config = replace(sim_config, params=replace(sim_config.params,
                                                    tau=tau))
    result = run_exploration(topology, sim_config)
    fraction = result.stats.fallback_fraction
    in_force = fraction < epsilon
    if traffic_config.source_absorption is None:
        modes = (True, False)
    else:
        modes = (bool(traffic_config.source_absorption),)
    points = []
    for absorb in modes:
        config = replace(traffic_config, phi='max', source_absorption=absorb)
        metrics, _ = run_traffic_experiment(topology, result.tables, config)
        points.append(OperatingPoint(
            tau, metrics.loop_pct, metrics.multipath_pct,
            metrics.success_pct, in_force, fraction, absorb))
    logger.info('tau=%.3f: fallback fraction %.4g, model %s', tau, fraction,
                'in force' if in_force else 'not in force')
    return points


def operating_curve(topology, tau_grid=DEFAULT_TAU_GRID, sim_config=None,
                    traffic_config=None, epsilon=1e-3, workers=1,
                    progress=False):
    """ Loop and multipath percentages as the threshold factor varies.

    Parameters
    ----------
    topology : Topology
        Network to explore.
    tau_grid : list of float
        Threshold factors in [0, 1], sorted ascending.
    sim_config : SimConfig
        Exploration parameters; its ``tau`` is replaced by each grid value.
    traffic_config : TrafficConfig
        Traffic parameters; ``phi`` is forced to the maximum degree.  A
        ``source_absorption`` of ``None`` evaluates both absorption modes.
    epsilon : float
        The model is in force at a point when less than this fraction of the
        controlled decisions fell back to a default.
    workers : int
        Number of worker processes.
    progress : bool
        Show a progress bar over grid points.

    Returns
    -------
    list of OperatingPoint
        Ordered by tau, then by absorption mode.
    """
    grid = _check_tau_grid(tau_grid)
    sim_config = sim_config if sim_config is not None else SimConfig()
    sim_config.validate()
    traffic_config = traffic_config if traffic_config is not None \
        else TrafficConfig()
    if workers < 1:
        raise ParameterError('workers must be >= 1.')

    args = [(topology, tau, sim_config, traffic_config, epsilon)
            for tau in grid]
    if workers == 1:
        results = (_operating_point(*a) for a in args)
        points = [p for ps in tqdm(results, total=len(grid),
                                   disable=not progress) for p in ps]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = executor.map(_operating_point, *zip(*args))
            points = [p for ps in tqdm(results, total=len(grid),
                                       disable=not progress) for p in ps]
    return points


def operating_curve_frame(points):
    """
    Returns
    -------
    pd.DataFrame
        tau, loop_pct, multipath_pct, success_pct, model_in_force,
        fallback_fraction, source_absorption
    """
    columns = ['tau', 'loop_pct', 'multipath_pct', 'success_pct',
               'model_in_force', 'fallback_fraction', 'source_absorption']
    return pd.DataFrame([asdict(p) for p in points], columns=columns)


def loop_frequency_histogram(metrics):
    """ Packets per loop count, from 0 to the largest count observed. """
    hist = metrics.loop_histogram
    top = max(hist) if hist else 0
    ks = np.arange(top + 1)
    return pd.DataFrame({'loop_count': ks,
                         'packet_count': [hist.get(k, 0) for k in ks]})


def dijkstra_oracle(topology, source):
    """ Cheapest forward cost and its hop count from ``source``.

    Among equally cheap paths the one with fewer hops wins.

    Parameters
    ----------
    topology : Topology
        Connected network with positive costs.
    source : int
        Start node.

    Returns
    -------
    pd.DataFrame
        Indexed by destination, with columns ``cost`` and ``hops``.
    """
    n = topology.node_count
    best = [None] * n
    heap = [(0., 0, source)]
    while heap:
        cost, hops, node = heapq.heappop(heap)
        if best[node] is not None:
            continue
        best[node] = (cost, hops)
        for k, nbr in enumerate(topology.adjacency[node]):
            if best[nbr] is None:
                heapq.heappush(heap, (cost + topology.out_costs[node][k],
                                      hops + 1, nbr))
    df = pd.DataFrame(best, columns=['cost', 'hops'])
    df.index.name = 'destination'
    return df


def theoretical_path_length(N, kappa):
    """ Average shortest path length of an N-node random graph.

    Evaluates ``1 + (ln N + ln a) / (ln 2 - ln a)`` with
    ``a = e^(1/kappa) - 1``.

    Parameters
    ----------
    N : int or np.array
        Number of nodes, at least 2.
    kappa : float
        Degree distribution cutoff, positive.

    Raises
    ------
    DomainError
        When ``a >= 2``, where the formula does not hold.
    """
    N = np.asarray(N, dtype=np.float64)
    if (N < 2).any():
        raise ParameterError('N must be >= 2.')
    if not kappa > 0:
        raise ParameterError('kappa must be positive, got %r.' % kappa)
    a = np.expm1(1. / kappa)
    if not a < 2:
        raise DomainError(
            'kappa=%r gives e^(1/kappa) - 1 = %r >= 2.' % (kappa, a))
    log_a = np.log(a)
    length = 1 + (np.log(N) + log_a) / (np.log(2) - log_a)
    return float(length) if length.ndim == 0 else length


def kappa_from_length(N, length, exact=True):
    """ Kappa that yields an average path length ``length`` on N nodes.

    With ``exact`` this inverts ``theoretical_path_length``:
    ``kappa = 1 / ln(1 + a)`` where ``a = 2^((l - 1) / l) / N^(1 / l)``.
    Otherwise the closed form ``1 / ln(a)`` is evaluated, which needs
    ``a > 1``.

    Raises
    ------
    DomainError
        Outside the domain of the chosen form.
    """
    if N < 2:
        raise ParameterError('N must be >= 2.')
    if not length > 0:
        raise DomainError('Path length must be positive, got %r.' % length)
    log_a = ((length - 1) * np.log(2) - np.log(N)) / length
    if exact:
        return float(1. / np.log1p(np.exp(log_a)))
    if not log_a > 0:
        raise DomainError(
            'No positive kappa for N=%r, l=%r in closed form.' % (N, length))
    return float(1. / log_a)


def fit_kappa(samples):
    """ Least squares fit of kappa to measured path lengths.

    Parameters
    ----------
    samples : list of (int, float)
        ``(N, measured average shortest path length)`` pairs; at least
        three distinct N.

    Returns
    -------
    FitResult

    Raises
    ------
    FitError
        If the bounded minimizer does not converge.
    """
    samples = [(int(n), float(l)) for n, l in samples]
    Ns = np.array([n for n, _ in samples], dtype=np.float64)
    measured = np.array([l for _, l in samples])
    if len(samples) < 3:
        raise ParameterError('fit_kappa needs at least 3 samples.')
    if len(set(Ns)) != len(Ns):
        raise ParameterError('fit_kappa needs distinct N values.')

    def loss(kappa):
        return np.sum((theoretical_path_length(Ns, kappa) - measured) ** 2)

    lower = _KAPPA_MIN * (1 + 1e-9)
    res = minimize_scalar(loss, bounds=(lower, _KAPPA_MAX), method='bounded',
                          options={'xatol': 1e-12, 'maxiter': 2000})
    if not res.success or not np.isfinite(res.fun):
        raise FitError('kappa fit did not converge: %s' % res.message,
                       diagnostics=dict(res))
    kappa = float(res.x)
    theoretical = theoretical_path_length(Ns, kappa)
    ss_res = float(np.sum((measured - theoretical) ** 2))
    ss_tot = float(np.sum((measured - measured.mean()) ** 2))
    if ss_tot > 0:
        r_squared = 1 - ss_res / ss_tot
    else:
        r_squared = 1. if ss_res == 0 else 0.
    r_squared = float(np.clip(r_squared, 0, 1))
    return FitResult(kappa, r_squared,
                     [(int(n), l, float(t))
                      for n, l, t in zip(Ns, measured, theoretical)])


def shortest_path_comparison(topology, tables, seed=0):
    """ phi = 1 path of every ordered pair next to the oracle optimum.

    Returns
    -------
    pd.DataFrame
        source, destination, outcome, hops, cost, oracle_hops, oracle_cost
    """
    config = TrafficConfig(phi=1, source_absorption=True, seed=seed)
    state = np.random.RandomState(derive_seed(seed))
    records = []
    for source in range(topology.node_count):
        oracle = dijkstra_oracle(topology, source)
        for destination in range(topology.node_count):
            if destination == source:
                continue
            packet = Packet(source, destination, ttl=config.ttl)
            routed = route_packet(packet, tables, topology, config, state,
                                  phi=1)
            trace = routed.packet.path_trace
            records.append((source, destination, routed.outcome.value,
                            len(trace) - 1, topology.path_cost(trace),
                            int(oracle.loc[destination, 'hops']),
                            float(oracle.loc[destination, 'cost'])))
    return pd.DataFrame(records, columns=['source', 'destination', 'outcome',
                                          'hops', 'cost', 'oracle_hops',
                                          'oracle_cost'])


def measure_avg_shortest_path(topology, tables, seed=0,
                              return_deficiencies=False):
    """ Mean phi = 1 hop count over all ordered pairs.

    Pairs whose phi = 1 path is not delivered or costs more than the
    oracle's optimum are convergence deficiencies; they are reported with a
    warning and undelivered pairs are left out of the mean.

    Parameters
    ----------
    topology : Topology
        Network, normally with uniform link costs.
    tables : list of RoutingTable
        Converged tables.
    seed : int
        Random seed; phi = 1 routing only draws when a row has ties.
    return_deficiencies : bool
        Also return the deficient rows of ``shortest_path_comparison``.

    Returns
    -------
    float
        Average hop count.
    pd.DataFrame, optional
        Deficient pairs.
    """
    df = shortest_path_comparison(topology, tables, seed)
    delivered = df['outcome'] == Outcome.DELIVERED.value
    deficient = df.loc[~delivered |
                       (df['cost'] > df['oracle_cost'] + 1e-9)]
    if len(deficient) > 0:
        warnings.warn('%d of %d pairs did not follow a cheapest path at '
                      'phi=1.' % (len(deficient), len(df)), UserWarning)
    average = float(df.loc[delivered, 'hops'].mean()) if delivered.any() \
        else float('nan')
    if return_deficiencies:
        return average, deficient
    return average


def _fit_sample(N, sim_config, seed, waxman_kwargs):
    topology = generate_waxman(N, cost_mode='uniform', cost_range=(1, 1),
                               seed=derive_seed(seed, N, 0), **waxman_kwargs)
    config = replace(sim_config, seed=derive_seed(seed, N, 1))
    result = run_exploration(topology, config)
    average, deficient = measure_avg_shortest_path(
        topology, result.tables, seed=derive_seed(seed, N, 2),
        return_deficiencies=True)
    logger.info('N=%d: average phi=1 path length %.4f, %d deficient pairs',
                N, average, len(deficient))
    return N, average, len(deficient)


def shortest_path_fit(sizes=DEFAULT_FIT_SIZES, sim_config=None, seed=0,
                      workers=1, progress=False, **waxman_kwargs):
    """ Fits kappa to phi = 1 path lengths on uniform-cost Waxman graphs.

    One topology per size is generated, explored and measured.

    Parameters
    ----------
    sizes : list of int
        Node counts, at least three distinct values.
    sim_config : SimConfig
        Exploration parameters.
    seed : int
        Root seed; topologies and runs use streams derived from it.
    workers : int
        Number of worker processes.
    progress : bool
        Show a progress bar over sizes.
    **waxman_kwargs
        Passed to ``generate_waxman``.

    Returns
    -------
    FitResult
        With ``deficiencies`` mapping each N to its deficient pair count.
    """
    sizes = [int(n) for n in sizes]
    sim_config = sim_config if sim_config is not None else SimConfig()
    sim_config.validate()
    args = [(n, sim_config, seed, waxman_kwargs) for n in sizes]
    if workers == 1:
        measured = [_fit_sample(*a)
                    for a in tqdm(args, disable=not progress)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            measured = list(tqdm(executor.map(_fit_sample, *zip(*args)),
                                 total=len(args), disable=not progress))
    result = fit_kappa([(n, l) for n, l, _ in measured])
    result.deficiencies = {n: d for n, _, d in measured}
    return result


def fit_report_frame(result):
    """
    Returns
    -------
    pd.DataFrame
        N, measured, theoretical, residual
    """
    df = pd.DataFrame(result.samples, columns=['N', 'measured',
                                               'theoretical'])
    df['residual'] = df['measured'] - df['theoretical']
    return df

import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from sklearn.utils import check_random_state
from tqdm import tqdm

from antroute.errors import ParameterError, ValidationError
from antroute.util import derive_seed


logger = logging.getLogger(__name__)

# renormalized candidates below this probability do not count as a choice
_MULTIPATH_EPS = 1e-12


class Outcome(Enum):
    DELIVERED = 'delivered'
    ABSORBED_AT_SOURCE = 'absorbed'
    TTL_EXPIRED = 'ttl_expired'


@dataclass
class Packet:
    """ Data packet routed over frozen tables.

    ``visited_stack`` starts with the source and never holds a node twice;
    ``path_trace`` keeps the full visit order.
    """
    source: int
    destination: int
    ttl: int = 255
    visited_stack: List[int] = field(default_factory=list)
    loop_count: int = 0
    multipath_flag: bool = False
    path_trace: List[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.visited_stack:
            self.visited_stack = [self.source]
        if not self.path_trace:
            self.path_trace = list(self.visited_stack)


@dataclass
class RoutedPacket:
    outcome: Outcome
    packet: Packet


@dataclass
class TrafficConfig:
    """ Parameters of a traffic experiment.

    Parameters
    ----------
    phi : int or 'max'
        Reachability factor, the number of best interfaces a packet may
        choose among at each node.
    source_absorption : bool
        Destroy packets that come back to their source.
    packets_per_pair : int
        Packets routed for every (source, destination) pair.
    seed : int
        Random seed.
    ttl : int
        Initial hop budget of every packet.
    """
    phi: Union[int, str] = 1
    source_absorption: Optional[bool] = True
    packets_per_pair: int = 100
    seed: int = 0
    ttl: int = 255

    def validate(self):
        if self.phi != 'max' and not (isinstance(self.phi, (int, np.integer))
                                      and self.phi >= 1):
            raise ParameterError(
                "phi must be an integer >= 1 or 'max', got %r." % self.phi)
        if self.packets_per_pair < 1:
            raise ParameterError('packets_per_pair must be >= 1.')
        if self.ttl < 1:
            raise ParameterError('ttl must be >= 1.')
        return self

    def to_dict(self):
        return {'phi': self.phi, 'source_absorption': self.source_absorption,
                'packets_per_pair': self.packets_per_pair, 'seed': self.seed,
                'ttl': self.ttl}


@dataclass
class TrafficMetrics:
    """ Aggregate outcome of a traffic experiment.

    Percentages are taken over all injected packets.  ``loop_histogram``
    maps a loop count to the number of delivered or absorbed packets with
    that many loops; TTL drops are only counted in ``ttl_drops``.
    """
    packets: int = 0
    delivered: int = 0
    absorbed: int = 0
    ttl_drops: int = 0
    looped: int = 0
    multipath: int = 0
    total_loops: int = 0
    loop_histogram: Counter = field(default_factory=Counter)

    def _pct(self, count):
        return 100. * count / self.packets if self.packets else 0.

    @property
    def success_pct(self):
        return self._pct(self.delivered)

    @property
    def loop_pct(self):
        return self._pct(self.looped)

    @property
    def multipath_pct(self):
        return self._pct(self.multipath)

    def add(self, routed):
        packet = routed.packet
        self.packets += 1
        self.total_loops += packet.loop_count
        self.looped += packet.loop_count > 0
        self.multipath += packet.multipath_flag
        if routed.outcome is Outcome.TTL_EXPIRED:
            self.ttl_drops += 1
            return self
        if routed.outcome is Outcome.DELIVERED:
            self.delivered += 1
        else:
            self.absorbed += 1
        self.loop_histogram[packet.loop_count] += 1
        return self

    def merge(self, other):
        """ Adds the counts of ``other``; the merge is order independent. """
        self.packets += other.packets
        self.delivered += other.delivered
        self.absorbed += other.absorbed
        self.ttl_drops += other.ttl_drops
        self.looped += other.looped
        self.multipath += other.multipath
        self.total_loops += other.total_loops
        self.loop_histogram.update(other.loop_histogram)
        return self

    def to_frame(self, **labels):
        """ One-row DataFrame; ``labels`` (e.g. phi, tau) come first. """
        row = dict(labels)
        row.update(success_pct=self.success_pct, loop_pct=self.loop_pct,
                   multipath_pct=self.multipath_pct,
                   total_loops=self.total_loops, ttl_drops=self.ttl_drops)
        return pd.DataFrame([row])


class PathRecord(object):

    def __init__(self):
        """ Unique delivered paths per (source, destination) pair.

        Each path keeps its delivery frequency and its forward cost.  Pairs
        are registered even when nothing was delivered so that they can be
        reported as excluded.
        """
        self.paths = {}

    def register(self, source, destination):
        self.paths.setdefault((source, destination), {})

    def add(self, source, destination, path, cost):
        entries = self.paths.setdefault((source, destination), {})
        path = tuple(path)
        if path in entries:
            entries[path][0] += 1
        else:
            entries[path] = [1, cost]

    def merge(self, other):
        for (s, d), entries in other.paths.items():
            self.register(s, d)
            for path, (frequency, cost) in entries.items():
                mine = self.paths[s, d].setdefault(path, [0, cost])
                mine[0] += frequency
        return self

    def delivered(self, source, destination):
        return sum(f for f, _ in self.paths.get((source, destination),
                                                {}).values())

    def to_frame(self):
        """
        Returns
        -------
        pd.DataFrame
            source : int
            destination : int
            path : str
                Visited nodes joined by ``-``.
            frequency : int
            cost : float
        """
        records = [(s, d, '-'.join(map(str, path)), f, c)
                   for (s, d), entries in sorted(self.paths.items())
                   for path, (f, c) in sorted(entries.items())]
        return pd.DataFrame(records, columns=['source', 'destination',
                                              'path', 'frequency', 'cost'])


def resolve_phi(phi, topology):
    """ Turns ``'max'`` into the largest node degree of ``topology``. """
    if isinstance(phi, str):
        if phi.strip().lower() == 'max':
            return topology.max_degree
        try:
            phi = int(phi)
        except ValueError:
            raise ParameterError("phi must be an integer or 'max', got %r."
                                 % phi)
    if phi < 1:
        raise ParameterError('phi must be >= 1, got %r.' % phi)
    return int(phi)


def top_phi_distribution(row, phi):
    """ Keeps the ``phi`` most probable interfaces of a table row.

    Parameters
    ----------
    row : np.array
        Probabilities over the interfaces of a node for one destination.
    phi : int
        Reachability factor.

    Returns
    -------
    candidates : np.array of int
        Interfaces sorted by probability, highest first; ties go to the
        lower interface index.
    probabilities : np.array
        Candidate probabilities rescaled to sum to 1.
    """
    if phi < 1:
        raise ParameterError('phi must be >= 1, got %r.' % phi)
    row = np.asarray(row, dtype=np.float64)
    candidates = np.argsort(-row, kind='stable')[:phi]
    probs = row[candidates]
    total = probs.sum()
    if total > 0:
        probs = probs / total
    else:
        probs = np.full(len(candidates), 1. / len(candidates))
    return candidates, probs


def record_visit(packet, node):
    """ Loop detection with the visited stack.

    Revisiting a node on the stack counts one loop and pops the stack back to
    that node; a new node is pushed.
    """
    stack = packet.visited_stack
    if node in stack:
        packet.loop_count += 1
        del stack[stack.index(node) + 1:]
    else:
        stack.append(node)
    packet.path_trace.append(node)
    return packet


def route_packet(packet, tables, topology, config, state, phi=None):
    """ Forwards ``packet`` hop by hop until it is delivered or dropped.

    Parameters
    ----------
    packet : Packet
        Packet positioned at its source.
    tables : list of RoutingTable
        Frozen routing tables, one per node.
    topology : Topology
        Network.
    config : TrafficConfig
        Absorption mode and reachability factor.
    state : np.random.RandomState
        Random state.
    phi : int, optional
        Already resolved reachability factor; defaults to ``config.phi``.

    Returns
    -------
    RoutedPacket
    """
    if phi is None:
        phi = resolve_phi(config.phi, topology)
    absorb = bool(config.source_absorption)
    node = packet.source
    destination = packet.destination
    while packet.ttl > 0:
        row = tables[node].probabilities[destination]
        candidates, probs = top_phi_distribution(row, phi)
        if len(candidates) == 1:
            k = candidates[0]
        else:
            if np.count_nonzero(probs > _MULTIPATH_EPS) >= 2:
                packet.multipath_flag = True
            i = np.searchsorted(np.cumsum(probs), state.random_sample(),
                                side='right')
            k = candidates[min(i, len(candidates) - 1)]
        node = topology.adjacency[node][k]
        packet.ttl -= 1
        record_visit(packet, node)
        if node == destination:
            return RoutedPacket(Outcome.DELIVERED, packet)
        if node == packet.source and absorb:
            return RoutedPacket(Outcome.ABSORBED_AT_SOURCE, packet)
    return RoutedPacket(Outcome.TTL_EXPIRED, packet)


def _check_tables(tables, topology):
    if len(tables) != topology.node_count:
        raise ValidationError(
            'Got tables for %d nodes, the topology has %d.'
            % (len(tables), topology.node_count))
    for table in tables:
        shape = (topology.node_count, topology.degree(table.node))
        if table.probabilities.shape != shape:
            raise ValidationError(
                'Table of node %d has shape %s, expected %s.'
                % (table.node, table.probabilities.shape, shape))


def select_pairs(topology, pair_selection=None, seed=0):
    """ Ordered (source, destination) pairs of a traffic experiment.

    Parameters
    ----------
    topology : Topology
        Network.
    pair_selection : None, int or iterable of pairs
        ``None`` selects every ordered pair, an integer samples that many
        pairs without replacement, an iterable is used as given.
    seed : int
        Seed of the sample.
    """
    n = topology.node_count
    pairs = [(s, d) for s in range(n) for d in range(n) if s != d]
    if pair_selection is None:
        return pairs
    if isinstance(pair_selection, (int, np.integer)):
        if pair_selection < 1:
            raise ParameterError('pair_selection must be >= 1.')
        if pair_selection >= len(pairs):
            return pairs
        state = check_random_state(derive_seed(seed, n))
        picked = state.choice(len(pairs), size=pair_selection, replace=False)
        return [pairs[i] for i in sorted(picked)]
    selected = [(int(s), int(d)) for s, d in pair_selection]
    for s, d in selected:
        if s == d or not (0 <= s < n and 0 <= d < n):
            raise ParameterError('Invalid pair (%d, %d).' % (s, d))
    return selected


def route_pair(topology, tables, config, phi, source, destination):
    """ Routes ``packets_per_pair`` packets from source to destination.

    The random stream depends only on ``(config.seed, source,
    destination)``, so pairs can be routed in any order or in parallel.

    Returns
    -------
    TrafficMetrics, PathRecord
    """
    state = check_random_state(derive_seed(config.seed, source, destination))
    metrics = TrafficMetrics()
    record = PathRecord()
    record.register(source, destination)
    for _ in range(config.packets_per_pair):
        packet = Packet(source, destination, ttl=config.ttl)
        routed = route_packet(packet, tables, topology, config, state, phi)
        metrics.add(routed)
        if routed.outcome is Outcome.DELIVERED:
            record.add(source, destination, packet.path_trace,
                       topology.path_cost(packet.path_trace))
    return metrics, record


def run_traffic_experiment(topology, tables, config=None, pair_selection=None,
                           progress=False):
    """ Routes packets over frozen tables and collects statistics.

    Parameters
    ----------
    topology : Topology
        Network.
    tables : list of RoutingTable
        Tables learned by exploration; they are not modified.
    config : TrafficConfig
        Experiment parameters.
    pair_selection : None, int or iterable of pairs
        See ``select_pairs``.
    progress : bool
        Show a progress bar over pairs.

    Returns
    -------
    TrafficMetrics
        Outcome counts over all packets.
    PathRecord
        Unique delivered paths per pair.
    """
    config = (config if config is not None else TrafficConfig()).validate()
    _check_tables(tables, topology)
    phi = resolve_phi(config.phi, topology)
    pairs = select_pairs(topology, pair_selection, config.seed)
    logger.info('Routing %d packets per pair over %d pairs, phi=%d, '
                'absorption=%s', config.packets_per_pair, len(pairs), phi,
                bool(config.source_absorption))
    metrics = TrafficMetrics()
    record = PathRecord()
    for source, destination in tqdm(pairs, disable=not progress):
        m, r = route_pair(topology, tables, config, phi, source, destination)
        logger.debug('pair %d->%d: %d/%d delivered, %d loops', source,
                     destination, m.delivered, m.packets, m.total_loops)
        metrics.merge(m)
        record.merge(r)
    logger.info('Traffic done: success %.2f%%, loops %.2f%%, '
                'multipath %.2f%%, %d TTL drops', metrics.success_pct,
                metrics.loop_pct, metrics.multipath_pct, metrics.ttl_drops)
    return metrics, record


def traffic_distribution_buckets(record):
    """ Delivery frequencies summed over cost deciles of the paths.

    For each pair the ``m`` unique paths are ranked by cost, cheapest first
    (equal costs: more frequent first, then by node sequence), and rank
    ``r`` falls into decile ``floor(10 * (r - 1) / m)``.

    Parameters
    ----------
    record : PathRecord
        Delivered paths.

    Returns
    -------
    pd.DataFrame
        bucket_index : int
            1 for the cheapest tenth of the paths, up to 10.
        frequency_sum : int
    int
        Number of pairs excluded because nothing was delivered.
    """
    sums = np.zeros(10, dtype=np.int64)
    excluded = 0
    for entries in record.paths.values():
        if not entries:
            excluded += 1
            continue
        ranked = sorted(entries.items(),
                        key=lambda item: (item[1][1], -item[1][0], item[0]))
        m = len(ranked)
        for r, (_, (frequency, _)) in enumerate(ranked):
            sums[(10 * r) // m] += frequency
    if excluded:
        warnings.warn('%d pairs had no delivered packets and were excluded '
                      'from the traffic distribution.' % excluded,
                      UserWarning)
    buckets = pd.DataFrame({'bucket_index': np.arange(1, 11),
                            'frequency_sum': sums})
    return buckets, excluded

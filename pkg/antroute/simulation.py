import heapq
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, Optional

import pandas as pd
from sklearn.utils import check_random_state

from antroute.ants import (
    Ant, AntPolicy, FallbackCase, ReinforcementParams, RoutingTable,
    StatModel, accumulate_reverse_cost, compute_delta_p, init_routing_table,
    init_stat_model, select_interface_controlled, select_interface_regular,
    select_interface_uncontrolled, update_model_on_return,
    update_model_on_send, update_route_table)
from antroute.errors import ConsistencyError, ParameterError


logger = logging.getLogger(__name__)


class EventKind(Enum):
    ANT_GENERATION = 'generation'
    ANT_ARRIVAL = 'arrival'


@dataclass
class SimEvent:
    """ Scheduled action; dispatched in ``(fire_time, sequence)`` order. """
    fire_time: int
    sequence: int
    kind: EventKind
    node: int
    ant: Optional[Ant] = None
    arrival_interface: Optional[int] = None


class EventQueue(object):

    def __init__(self):
        """ Priority queue of SimEvents that also keeps the clock.

        ``now`` is the simulated time in microseconds; it only moves when an
        event is dispatched and never goes backwards.
        """
        self._heap = []
        self._sequence = 0
        self.now = 0
        self.dispatched = 0

    def __len__(self):
        return len(self._heap)

    def schedule(self, fire_time, kind, node, ant=None,
                 arrival_interface=None):
        """ Queues an event; events at equal times keep insertion order.

        Raises
        ------
        ConsistencyError
            If ``fire_time`` lies before the current time.
        """
        if fire_time < self.now:
            raise ConsistencyError(
                'Cannot schedule an event at t=%d, clock is at t=%d.'
                % (fire_time, self.now))
        event = SimEvent(int(fire_time), self._sequence, kind, node, ant,
                         arrival_interface)
        self._sequence += 1
        heapq.heappush(self._heap, (event.fire_time, event.sequence, event))
        return event

    def peek_time(self):
        return self._heap[0][0] if self._heap else None

    def dispatch(self):
        """ Pops the next event and advances the clock to its time. """
        fire_time, _, event = heapq.heappop(self._heap)
        self.now = fire_time
        self.dispatched += 1
        return event

    def pending(self):
        return [entry[2] for entry in self._heap]


@dataclass
class SimConfig:
    """ Parameters of an exploration run; times are in microseconds.

    Parameters
    ----------
    duration : int
        Simulated time after which the run stops.
    ant_period : int
        Each node emits one ant per period.
    uncontrolled_fraction : float
        Share of ``duration`` spent in uncontrolled exploration.
    params : ReinforcementParams
        Reinforcement strength, cost function and threshold.
    ant_policy : AntPolicy or str
        ``'model'``, ``'uniform'`` or ``'regular'``.
    subpath_reinforcement : bool
        Whether intermediate nodes update their tables.
    controlled_no_return : bool
        Whether controlled selection avoids the arrival interface.
    link_delay : int
        Transit time of every link.
    ant_ttl : int
        Hops after which a wandering ant is dropped.
    invariant_check_interval : int
        Re-validate the updated row every that many table updates
        (0 disables the check).
    seed : int
        Random seed.
    """
    duration: int = 10 ** 7
    ant_period: int = 10000
    uncontrolled_fraction: float = 1. / 8
    params: ReinforcementParams = field(default_factory=ReinforcementParams)
    ant_policy: AntPolicy = AntPolicy.MODEL_BASED
    subpath_reinforcement: bool = True
    controlled_no_return: bool = True
    link_delay: int = 100
    ant_ttl: int = 4096
    invariant_check_interval: int = 0
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.ant_policy, AntPolicy):
            try:
                self.ant_policy = AntPolicy(self.ant_policy)
            except ValueError:
                raise ParameterError(
                    'Unknown ant policy %r; choose from %s.'
                    % (self.ant_policy, [p.value for p in AntPolicy]))
        if isinstance(self.params, dict):
            self.params = ReinforcementParams(**self.params)

    @property
    def phase_boundary(self):
        """ Time at which controlled exploration starts. """
        return self.duration * self.uncontrolled_fraction

    def validate(self):
        if not (0 < self.uncontrolled_fraction < 1):
            raise ParameterError(
                'uncontrolled_fraction must lie in (0, 1), got %r.'
                % self.uncontrolled_fraction)
        if self.ant_period <= 0:
            raise ParameterError('ant_period must be positive.')
        if self.duration <= self.ant_period:
            raise ParameterError(
                'duration (%r) must exceed ant_period (%r).'
                % (self.duration, self.ant_period))
        if self.link_delay <= 0:
            raise ParameterError('link_delay must be positive.')
        if self.ant_ttl < 1:
            raise ParameterError('ant_ttl must be >= 1.')
        if self.invariant_check_interval < 0:
            raise ParameterError('invariant_check_interval must be >= 0.')
        self.params.validate()
        return self

    def to_dict(self):
        d = asdict(self)
        d['ant_policy'] = self.ant_policy.value
        return d


@dataclass
class ExplorationStats:
    """ Counters gathered during an exploration run. """
    ants_generated: int = 0
    ants_absorbed: int = 0
    ants_returned: int = 0
    ants_expired: int = 0
    ants_in_flight: int = 0
    events_dispatched: int = 0
    uncontrolled_decisions: int = 0
    controlled_decisions: int = 0
    regular_decisions: int = 0
    leaf_fallbacks: int = 0
    send_back_fallbacks: int = 0
    source_fallbacks: int = 0
    route_updates: int = 0
    sent_back_arrivals: int = 0

    @property
    def fallback_fraction(self):
        """ Share of controlled decisions taken by a send-back or source
        default rather than by the model. """
        if self.controlled_decisions == 0:
            return 0.
        return ((self.send_back_fallbacks + self.source_fallbacks) /
                self.controlled_decisions)

    def to_frame(self):
        d = asdict(self)
        d['fallback_fraction'] = self.fallback_fraction
        return pd.DataFrame({'statistic': list(d), 'value': list(d.values())})


@dataclass
class ExplorationResult:
    tables: List[RoutingTable]
    models: List[StatModel]
    stats: ExplorationStats
    config: SimConfig


def transit_ant(queue, topology, ant, from_node, interface, link_delay):
    """ Puts ``ant`` on the link behind ``interface`` of ``from_node``.

    The arrival is scheduled ``link_delay`` later at the neighbor, on the
    neighbor's interface for the same link.  Links never drop or reorder.

    Returns
    -------
    SimEvent
        The scheduled arrival.
    """
    neighbor = topology.adjacency[from_node][interface]
    arrival = topology.reverse_interfaces[from_node][interface]
    ant.hops += 1
    return queue.schedule(queue.now + link_delay, EventKind.ANT_ARRIVAL,
                          neighbor, ant, arrival)


class ExplorationSimulator(object):

    def __init__(self, topology, config=None):
        """ Discrete-event simulation of ants exploring a topology.

        Parameters
        ----------
        topology : Topology
            Network to explore.
        config : SimConfig
            Run parameters.

        Notes
        -----
        Each node emits an ant every ``ant_period`` towards a destination
        drawn uniformly among the other nodes, starting at ``node %
        ant_period``.  Under the model-based policy ants are routed
        uncontrolled before ``config.phase_boundary`` and controlled after;
        the policy is evaluated at every hop, so ants in flight switch too.
        """
        config = config if config is not None else SimConfig()
        config.validate()
        self.topology = topology
        self.config = config
        self.state = check_random_state(config.seed)
        self.tables = [init_routing_table(i, topology)
                       for i in range(topology.node_count)]
        self.models = [init_stat_model(i, topology)
                       for i in range(topology.node_count)]
        self.queue = EventQueue()
        self.stats = ExplorationStats()
        self._controlled_logged = False

    def run(self):
        """ Runs until ``config.duration``; returns an ExplorationResult. """
        config = self.config
        logger.info('Exploring %r for %d us with policy %s, tau=%g, seed=%r',
                    self.topology, config.duration, config.ant_policy.value,
                    config.params.tau, config.seed)
        for node in range(self.topology.node_count):
            self.queue.schedule(node % config.ant_period,
                                EventKind.ANT_GENERATION, node)
        queue = self.queue
        while len(queue) > 0 and queue.peek_time() < config.duration:
            event = queue.dispatch()
            if event.kind is EventKind.ANT_ARRIVAL:
                self._receive(event.ant, event.node, event.arrival_interface)
            else:
                self._generate(event.node)

        stats = self.stats
        stats.events_dispatched = queue.dispatched
        stats.ants_in_flight = sum(
            1 for e in queue.pending() if e.kind is EventKind.ANT_ARRIVAL)
        logger.info('Exploration done: %d ants generated, %d absorbed, '
                    '%d returned, %d expired, %d in flight',
                    stats.ants_generated, stats.ants_absorbed,
                    stats.ants_returned, stats.ants_expired,
                    stats.ants_in_flight)
        return ExplorationResult(self.tables, self.models, stats, config)

    def _generate(self, node):
        n = self.topology.node_count
        destination = int(self.state.randint(n - 1))
        if destination >= node:
            destination += 1
        ant = Ant(node, destination)
        k = self._select(node, ant, None)
        ant.origin_interface = k
        update_model_on_send(self.models[node], destination, k)
        self.stats.ants_generated += 1
        transit_ant(self.queue, self.topology, ant, node, k,
                    self.config.link_delay)
        self.queue.schedule(self.queue.now + self.config.ant_period,
                            EventKind.ANT_GENERATION, node)

    def _receive(self, ant, node, arrival_interface):
        if node == ant.source:
            update_model_on_return(self.models[node], ant.destination,
                                   ant.origin_interface)
            self.stats.ants_returned += 1
            return
        accumulate_reverse_cost(ant, arrival_interface, node, self.topology)
        if node == ant.destination:
            self._reinforce(node, ant, arrival_interface)
            self.stats.ants_absorbed += 1
            return
        if ant.sent_back:
            self.stats.sent_back_arrivals += 1
        elif self.config.subpath_reinforcement:
            self._reinforce(node, ant, arrival_interface)
        if ant.hops >= self.config.ant_ttl:
            self.stats.ants_expired += 1
            return
        k = self._select(node, ant, arrival_interface)
        ant.sent_back = k == arrival_interface
        transit_ant(self.queue, self.topology, ant, node, k,
                    self.config.link_delay)

    def _reinforce(self, node, ant, arrival_interface):
        delta_p = compute_delta_p(ant.cost, self.config.params)
        table = self.tables[node]
        update_route_table(table, ant.source, arrival_interface, delta_p)
        self.stats.route_updates += 1
        interval = self.config.invariant_check_interval
        if interval and self.stats.route_updates % interval == 0:
            table.validate(rows=ant.source)

    def _select(self, node, ant, arrival_interface):
        config = self.config
        stats = self.stats
        policy = config.ant_policy
        if policy is AntPolicy.REGULAR:
            stats.regular_decisions += 1
            return select_interface_regular(node, ant.destination,
                                            self.tables[node], self.state)
        if policy is AntPolicy.UNIFORM or \
           self.queue.now < config.phase_boundary:
            stats.uncontrolled_decisions += 1
            return select_interface_uncontrolled(
                node, self.topology, arrival_interface, self.state)

        if not self._controlled_logged:
            logger.debug('Switching to controlled exploration at t=%d',
                         self.queue.now)
            self._controlled_logged = True
        k, case = select_interface_controlled(
            node, ant.destination, arrival_interface, self.models[node],
            config.params.tau, self.state, self.topology,
            no_return=config.controlled_no_return)
        stats.controlled_decisions += 1
        if case is FallbackCase.LEAF:
            stats.leaf_fallbacks += 1
        elif case is FallbackCase.SEND_BACK:
            stats.send_back_fallbacks += 1
        elif case is FallbackCase.SOURCE_UNCONTROLLED:
            stats.source_fallbacks += 1
        return k


def run_exploration(topology, config=None):
    """ Explores ``topology`` with ants and returns the learned state.

    Parameters
    ----------
    topology : Topology
        Connected network.
    config : SimConfig
        Run parameters; defaults to ``SimConfig()``.

    Returns
    -------
    ExplorationResult
        Per-node routing tables and statistics models, plus run counters.
    """
    return ExplorationSimulator(topology, config).run()

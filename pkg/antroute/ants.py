from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional

import numpy as np
import pandas as pd

from antroute.errors import ConsistencyError, ParameterError


_cost_functions = {
    'linear': lambda c: c,
    'quadratic': lambda c: c * c,
}


class AntPolicy(Enum):
    """ How ants pick their outgoing interfaces. """
    MODEL_BASED = 'model'
    UNIFORM = 'uniform'
    REGULAR = 'regular'


class FallbackCase(IntEnum):
    """ Which default, if any, decided a controlled selection. """
    NONE = 0
    LEAF = 1
    SEND_BACK = 2
    SOURCE_UNCONTROLLED = 3


@dataclass
class ReinforcementParams:
    """ Reinforcement strength and eligibility threshold.

    Parameters
    ----------
    lam : float
        Reinforcement scale, the probability nudge is ``lam / f(cost)``.
    cost_fn : str
        Non-decreasing ``f``: ``'linear'`` or ``'quadratic'``.
    tau : float
        Threshold on the returned/sent ratio, in [0, 1].
    """
    lam: float = 0.1
    cost_fn: str = 'linear'
    tau: float = 0.5

    def validate(self):
        if not self.lam > 0:
            raise ParameterError('lam must be positive, got %r.' % self.lam)
        if self.cost_fn not in _cost_functions:
            raise ParameterError(
                'cost_fn must be one of %s, got %r.'
                % (sorted(_cost_functions), self.cost_fn))
        if not (0 <= self.tau <= 1):
            raise ParameterError(
                'tau must lie in [0, 1], got %r.' % self.tau)
        return self


@dataclass
class Ant:
    """ Exploration agent ``[source, destination, cost, origin_interface]``.

    ``origin_interface`` is set once by the source; ``hops`` only bounds the
    lifetime of ants caught bouncing between nodes.  ``sent_back`` marks an
    ant whose last hop returned it on the interface it had arrived on; the
    node receiving it learns nothing from that hop.
    """
    source: int
    destination: int
    cost: float = 0.
    origin_interface: Optional[int] = None
    hops: int = 0
    sent_back: bool = False


class RoutingTable(object):

    def __init__(self, node, probabilities):
        """ Forwarding probabilities of a node.

        Parameters
        ----------
        node : int
            Owner of the table.
        probabilities : np.array
            ``node_count x degree`` matrix; row ``j`` is the distribution
            over interfaces used to reach destination ``j``.
        """
        self.node = node
        self.probabilities = np.asarray(probabilities, dtype=np.float64)

    @property
    def node_count(self):
        return self.probabilities.shape[0]

    @property
    def degree(self):
        return self.probabilities.shape[1]

    def row(self, destination):
        return self.probabilities[destination]

    def copy(self):
        return RoutingTable(self.node, self.probabilities.copy())

    def validate(self, atol=1e-9, rows=None):
        """ Raises ConsistencyError unless the rows are distributions. """
        probs = self.probabilities if rows is None else \
            self.probabilities[rows]
        if (probs < 0).any():
            raise ConsistencyError(
                'Negative probability in the table of node %d.' % self.node)
        sums = np.atleast_1d(probs.sum(axis=-1))
        bad = np.flatnonzero(np.abs(sums - 1) > atol)
        if len(bad) > 0:
            raise ConsistencyError(
                'Rows of node %d do not sum to 1 (first offender sums to '
                '%r).' % (self.node, sums[bad[0]]))
        return self


class StatModel(object):

    def __init__(self, node, sent, returned):
        """ Sent and returned ant counters of a source node.

        Parameters
        ----------
        node : int
            Owner of the counters.
        sent : np.array
            ``node_count x degree`` counts of ants sent per destination
            and interface.
        returned : np.array
            Counts of those ants that came back to ``node``.
        """
        self.node = node
        self.sent = np.asarray(sent, dtype=np.int64)
        self.returned = np.asarray(returned, dtype=np.int64)

    @classmethod
    def empty(cls, node, node_count, degree):
        shape = (node_count, degree)
        return cls(node, np.zeros(shape, dtype=np.int64),
                   np.zeros(shape, dtype=np.int64))

    def ratios(self, destination):
        """ returned / sent per interface, 0 where nothing was sent. """
        sent = self.sent[destination]
        out = np.zeros(len(sent))
        np.divide(self.returned[destination], sent, out=out, where=sent > 0)
        return out

    def validate(self):
        if (self.returned > self.sent).any() or (self.returned < 0).any():
            raise ConsistencyError(
                'Model of node %d has more returns than sends.' % self.node)
        return self


def init_routing_table(node, topology):
    """ Uniform table: every destination spread evenly over the interfaces.

    Parameters
    ----------
    node : int
        Node owning the table.
    topology : Topology
        Network the node belongs to.

    Returns
    -------
    RoutingTable
    """
    degree = topology.degree(node)
    probs = np.full((topology.node_count, degree), 1. / degree)
    return RoutingTable(node, probs)


def init_stat_model(node, topology):
    return StatModel.empty(node, topology.node_count, topology.degree(node))


def update_route_table(table, ant_source, arrival_interface, delta_p):
    """ Nudges the row of ``ant_source`` towards ``arrival_interface``.

    The reinforced entry becomes ``(p + delta_p) / (1 + delta_p)`` and every
    other entry ``p / (1 + delta_p)``.  The table is updated in place.

    Parameters
    ----------
    table : RoutingTable
        Table of the node the ant arrived at.
    ant_source : int
        Source of the ant; the row that is reinforced.
    arrival_interface : int
        Interface the ant arrived on.
    delta_p : float
        Reinforcement, non-negative.

    Returns
    -------
    RoutingTable
        The same table.
    """
    if delta_p < 0:
        raise ParameterError('delta_p must be >= 0, got %r.' % delta_p)
    row = table.probabilities[ant_source]
    row[arrival_interface] += delta_p
    row /= 1. + delta_p
    return table


def compute_delta_p(cost, params):
    """ ``lam / f(cost)``; non-increasing in the cost. """
    if not cost > 0:
        raise ParameterError(
            'Accumulated cost must be positive, got %r.' % cost)
    return params.lam / _cost_functions[params.cost_fn](cost)


def accumulate_reverse_cost(ant, arrival_interface, at_node, topology):
    """ Adds the cost of the arrival link in the reverse direction.

    An ant hopping from ``y`` to ``at_node`` pays ``cost(at_node -> y)``, so
    at the destination it carries the cost of reaching its source.
    """
    ant.cost += topology.out_costs[at_node][arrival_interface]
    return ant


def select_interface_uncontrolled(node, topology, arrival_interface, state):
    """ Uniform choice, never the arrival interface unless it is the only one.

    Parameters
    ----------
    node : int
        Node forwarding the ant.
    topology : Topology
        Network.
    arrival_interface : int or None
        Interface the ant arrived on, ``None`` at the ant's source.
    state : np.random.RandomState
        Random state.

    Returns
    -------
    int
        Outgoing interface.
    """
    degree = len(topology.adjacency[node])
    if arrival_interface is None:
        return int(state.randint(degree))
    if degree == 1:
        return arrival_interface
    k = int(state.randint(degree - 1))
    return k + 1 if k >= arrival_interface else k


def eligible_interfaces(model, destination, tau, arrival_interface=None,
                        no_return=True):
    """ Interfaces whose returned/sent ratio is below ``tau``.

    With ``no_return`` the arrival interface is dropped whenever another
    interface is eligible.

    Returns
    -------
    np.array of int
    """
    eligible = np.flatnonzero(model.ratios(destination) < tau)
    if no_return and arrival_interface is not None and len(eligible) > 1:
        eligible = eligible[eligible != arrival_interface]
    return eligible


def select_interface_controlled(node, destination, arrival_interface, model,
                                tau, state, topology, no_return=True):
    """ Uniform choice among the interfaces the model still trusts.

    Parameters
    ----------
    node : int
        Node forwarding the ant.
    destination : int
        Destination of the ant.
    arrival_interface : int or None
        Interface the ant arrived on, ``None`` at the ant's source.
    model : StatModel
        Counters of ``node``.
    tau : float
        Eligibility threshold.
    state : np.random.RandomState
        Random state.
    topology : Topology
        Network.
    no_return : bool
        Exclude the arrival interface when alternatives are eligible.

    Returns
    -------
    interface : int
        Outgoing interface.
    fallback : FallbackCase
        ``LEAF`` and ``SEND_BACK`` return the ant on its arrival interface;
        ``SOURCE_UNCONTROLLED`` means the source had to pick uniformly.
    """
    if arrival_interface is not None and len(topology.adjacency[node]) == 1:
        return arrival_interface, FallbackCase.LEAF
    eligible = eligible_interfaces(model, destination, tau,
                                   arrival_interface, no_return)
    if len(eligible) == 0:
        if arrival_interface is None:
            k = select_interface_uncontrolled(node, topology, None, state)
            return k, FallbackCase.SOURCE_UNCONTROLLED
        return arrival_interface, FallbackCase.SEND_BACK
    return int(eligible[state.randint(len(eligible))]), FallbackCase.NONE


def select_interface_regular(node, destination, table, state):
    """ Samples an interface from the routing table row of ``destination``. """
    cumulative = np.cumsum(table.probabilities[destination])
    k = np.searchsorted(cumulative, state.random_sample() * cumulative[-1],
                        side='right')
    return int(min(k, table.degree - 1))


def update_model_on_send(model, destination, interface):
    model.sent[destination, interface] += 1
    return model


def update_model_on_return(model, destination, interface):
    """ Records that an ant sent on ``interface`` came back to its source.

    Raises
    ------
    ConsistencyError
        If there is no matching send.
    """
    if model.returned[destination, interface] >= \
       model.sent[destination, interface]:
        raise ConsistencyError(
            'Node %d recorded a return to %d on interface %d without a '
            'matching send.' % (model.node, destination, interface))
    model.returned[destination, interface] += 1
    return model


def discarded_interfaces(topology, models, tau):
    """ Interfaces ruled out by the model of each node.

    Parameters
    ----------
    topology : Topology
        Network.
    models : list of StatModel
        One model per node.
    tau : float
        Eligibility threshold.

    Returns
    -------
    pd.DataFrame
        node : int
        destination : int
        interface : int
        neighbor : int
            Node on the other side of the interface.
        sent : int
        returned : int
        ratio : float
            Only rows with ``sent > 0`` and ``ratio >= tau`` are listed.
    """
    records = []
    for model in models:
        node = model.node
        for dest in range(topology.node_count):
            if dest == node:
                continue
            ratios = model.ratios(dest)
            for k in np.flatnonzero((model.sent[dest] > 0) & (ratios >= tau)):
                records.append((node, dest, int(k),
                                topology.adjacency[node][k],
                                int(model.sent[dest, k]),
                                int(model.returned[dest, k]),
                                float(ratios[k])))
    return pd.DataFrame(records, columns=['node', 'destination', 'interface',
                                          'neighbor', 'sent', 'returned',
                                          'ratio'])

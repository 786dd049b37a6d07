import logging
from collections import Counter
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform
from sklearn.utils import check_random_state

from antroute.errors import (
    ParameterError, TopologySyntaxError, ValidationError)


logger = logging.getLogger(__name__)

_velcro_presets = {
    # direct path 0-19 versus the 4-link chain through the fulcrums
    'costly-direct': (10., 4.),
    'equal': (4., 4.),
    'cheap-direct': (2., 4.),
}


@dataclass(frozen=True)
class Link:
    """ Point-to-point link with one cost per direction. """
    endpoint_a: int
    endpoint_b: int
    cost_ab: float
    cost_ba: float

    def normalized(self):
        """ Returns the same link with ``endpoint_a < endpoint_b``. """
        if self.endpoint_a > self.endpoint_b:
            return Link(self.endpoint_b, self.endpoint_a,
                        self.cost_ba, self.cost_ab)
        return self


class Topology(object):

    def __init__(self, node_count, links):
        """ Network of nodes joined by point-to-point links.

        Parameters
        ----------
        node_count : int
            Number of nodes, numbered densely from 0.
        links : iterable of Link
            Links of the network.  Orientation is irrelevant; links are
            stored with the smaller endpoint first.

        Raises
        ------
        ValidationError
            On self-links, duplicate links, non-positive costs, endpoints
            out of range or a disconnected graph.

        Notes
        -----
        Interface ``k`` of node ``i`` is the link to the ``k``-th smallest
        neighbor id of ``i``.
        """
        node_count = int(node_count)
        if node_count < 2:
            raise ValidationError(
                'A topology needs at least 2 nodes, got %d.' % node_count)
        self.node_count = node_count

        seen = set()
        normalized = []
        for link in links:
            link = link.normalized()
            a, b = link.endpoint_a, link.endpoint_b
            if a == b:
                raise ValidationError('Self-link at node %d.' % a)
            if a < 0 or b >= node_count:
                raise ValidationError(
                    'Link %d-%d references a node outside [0, %d).'
                    % (a, b, node_count))
            if (a, b) in seen:
                raise ValidationError('Duplicate link %d-%d.' % (a, b))
            if not (np.isfinite(link.cost_ab) and link.cost_ab > 0 and
                    np.isfinite(link.cost_ba) and link.cost_ba > 0):
                raise ValidationError(
                    'Link %d-%d has non-positive cost (%r, %r).'
                    % (a, b, link.cost_ab, link.cost_ba))
            seen.add((a, b))
            normalized.append(Link(int(a), int(b), float(link.cost_ab),
                                   float(link.cost_ba)))
        self.links = tuple(
            sorted(normalized, key=lambda x: (x.endpoint_a, x.endpoint_b)))

        costs = {}
        for link in self.links:
            costs[link.endpoint_a, link.endpoint_b] = link.cost_ab
            costs[link.endpoint_b, link.endpoint_a] = link.cost_ba
        self._costs = costs

        # flat per-node lists keep the simulator's inner loop cheap
        self.adjacency = [[] for _ in range(node_count)]
        for (a, b) in costs:
            self.adjacency[a].append(b)
        for nbrs in self.adjacency:
            nbrs.sort()
        self._interfaces = {
            (i, j): k
            for i, nbrs in enumerate(self.adjacency)
            for k, j in enumerate(nbrs)
        }
        self.out_costs = [[costs[i, j] for j in nbrs]
                          for i, nbrs in enumerate(self.adjacency)]
        self.reverse_interfaces = [
            [self._interfaces[j, i] for j in nbrs]
            for i, nbrs in enumerate(self.adjacency)]

        if not self.is_connected():
            raise ValidationError(
                'Topology with %d nodes is not connected.' % node_count)

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (self.node_count == other.node_count and
                self.links == other.links)

    __hash__ = None

    def __repr__(self):
        return 'Topology(node_count=%d, links=%d)' % (
            self.node_count, len(self.links))

    def degree(self, node):
        return len(self.adjacency[node])

    @property
    def degrees(self):
        return np.array([len(nbrs) for nbrs in self.adjacency])

    @property
    def max_degree(self):
        return int(self.degrees.max())

    def degree_counts(self):
        """ Returns a dict mapping degree to the number of nodes with it. """
        return dict(Counter(int(d) for d in self.degrees))

    def neighbor(self, node, interface):
        return self.adjacency[node][interface]

    def interface_to(self, node, neighbor):
        """ Interface index of ``node`` whose link leads to ``neighbor``. """
        try:
            return self._interfaces[node, neighbor]
        except KeyError:
            raise ValidationError(
                'Nodes %d and %d are not adjacent.' % (node, neighbor))

    def cost(self, source, target):
        """ Cost of traversing the link from ``source`` to ``target``. """
        try:
            return self._costs[source, target]
        except KeyError:
            raise ValidationError(
                'Nodes %d and %d are not adjacent.' % (source, target))

    def path_cost(self, path):
        """ Forward cost of a node sequence, revisits included. """
        return float(sum(self.cost(a, b) for a, b in zip(path[:-1], path[1:])))

    def is_connected(self):
        rows = [link.endpoint_a for link in self.links]
        cols = [link.endpoint_b for link in self.links]
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)),
                           shape=(self.node_count, self.node_count))
        n_components, _ = connected_components(graph, directed=False)
        return n_components == 1

    def to_networkx(self):
        """ Directed graph with a ``cost`` attribute per direction. """
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.node_count))
        for link in self.links:
            graph.add_edge(link.endpoint_a, link.endpoint_b, cost=link.cost_ab)
            graph.add_edge(link.endpoint_b, link.endpoint_a, cost=link.cost_ba)
        return graph


def _check_cost_range(cost_range):
    try:
        low, high = cost_range
    except (TypeError, ValueError):
        raise ParameterError(
            'cost_range must be a (min, max) pair, got %r.' % (cost_range,))
    if not (0 < low <= high):
        raise ParameterError(
            'cost_range must satisfy 0 < min <= max, got %r.' % (cost_range,))
    return float(low), float(high)


def _draw_cost(cost_range, state):
    low, high = cost_range
    if low.is_integer() and high.is_integer():
        return float(state.randint(int(low), int(high) + 1))
    return float(state.uniform(low, high))


def _random_link(a, b, cost_range, state):
    return Link(a, b, _draw_cost(cost_range, state),
                _draw_cost(cost_range, state))


def generate_tree(node_count, max_children=2, cost_range=(1, 1), seed=None):
    """ Random tree where each node has at most ``max_children`` children.

    Parameters
    ----------
    node_count : int
        Number of nodes (at least 2).
    max_children : int
        Maximum number of children per node.
    cost_range : tuple of float
        Costs are drawn per direction, uniformly from ``[min, max]``
        (integers when both bounds are integral).
    seed : int or np.random.RandomState
        Random seed.

    Returns
    -------
    Topology
    """
    if node_count < 2:
        raise ParameterError('node_count must be >= 2, got %r.' % node_count)
    if max_children < 1:
        raise ParameterError(
            'max_children must be >= 1, got %r.' % max_children)
    cost_range = _check_cost_range(cost_range)
    state = check_random_state(seed)
    children = np.zeros(node_count, dtype=int)
    links = []
    for i in range(1, node_count):
        open_parents = np.flatnonzero(children[:i] < max_children)
        parent = int(open_parents[state.randint(len(open_parents))])
        children[parent] += 1
        links.append(_random_link(parent, i, cost_range, state))
    return Topology(node_count, links)


def generate_clique_grid(rows, cols, cost_range=(1, 1), seed=None):
    """ ``rows`` x ``cols`` lattice; node ``r * cols + c`` sits at (r, c). """
    if rows < 2 or cols < 2:
        raise ParameterError(
            'rows and cols must be >= 2, got %r x %r.' % (rows, cols))
    cost_range = _check_cost_range(cost_range)
    state = check_random_state(seed)
    links = []
    for r in range(rows):
        for c in range(cols):
            node = r * cols + c
            if c + 1 < cols:
                links.append(_random_link(node, node + 1, cost_range, state))
            if r + 1 < rows:
                links.append(
                    _random_link(node, node + cols, cost_range, state))
    return Topology(rows * cols, links)


def generate_ring(node_count, cost_range=(1, 1), seed=None):
    if node_count < 3:
        raise ParameterError('A ring needs >= 3 nodes, got %r.' % node_count)
    cost_range = _check_cost_range(cost_range)
    state = check_random_state(seed)
    links = [_random_link(i, (i + 1) % node_count, cost_range, state)
             for i in range(node_count)]
    return Topology(node_count, links)


def generate_mesh(node_count, cost_range=(1, 1), seed=None):
    """ Fully connected mesh. """
    if node_count < 2:
        raise ParameterError('node_count must be >= 2, got %r.' % node_count)
    cost_range = _check_cost_range(cost_range)
    state = check_random_state(seed)
    links = [_random_link(a, b, cost_range, state)
             for a in range(node_count) for b in range(a + 1, node_count)]
    return Topology(node_count, links)


def generate_dumbbell(bell_size, bar_length=1, cost_range=(1, 1), seed=None):
    """ Two full meshes joined by a path of ``bar_length`` links.

    The left bell holds nodes ``0 .. bell_size - 1``; the bar starts at the
    last node of the left bell and ends at the first node of the right bell.
    """
    if bell_size < 2 or bar_length < 1:
        raise ParameterError(
            'bell_size must be >= 2 and bar_length >= 1, got %r and %r.'
            % (bell_size, bar_length))
    cost_range = _check_cost_range(cost_range)
    state = check_random_state(seed)
    links = [_random_link(a, b, cost_range, state)
             for a in range(bell_size) for b in range(a + 1, bell_size)]
    bar = [bell_size - 1] + list(
        range(bell_size, bell_size + bar_length - 1))
    right = bell_size + bar_length - 1
    bar.append(right)
    links += [_random_link(a, b, cost_range, state)
              for a, b in zip(bar[:-1], bar[1:])]
    links += [_random_link(right + a, right + b, cost_range, state)
              for a in range(bell_size) for b in range(a + 1, bell_size)]
    return Topology(right + bell_size, links)


def generate_velcro(branch_costs=(10., 4.), fulcrum_count=3, loop_size=6,
                    loop_link_cost=1.):
    """ Direct path plus a chain of fulcrums, each pivoting a useless loop.

    Parameters
    ----------
    branch_costs : tuple of float
        ``(main_path_cost, loop_path_cost)``: cost of the direct
        source-sink link and total cost of the chain through the fulcrums,
        split evenly over its ``fulcrum_count + 1`` links.
    fulcrum_count : int
        Number of fulcrums on the chain.
    loop_size : int
        Number of nodes on each attached cycle, fulcrum included.
    loop_link_cost : float
        Cost of every link on the attached cycles.

    Returns
    -------
    Topology
        Node 0 is the source and the last node is the sink.  Fulcrum ``j``
        (0-based) is node ``1 + j * loop_size``, followed by the other nodes
        of its cycle.  With the defaults the numbering matches the classic
        20-node layout (fulcrums 1, 7 and 13, sink 19).

    Notes
    -----
    All links are symmetric.
    """
    try:
        main_cost, chain_cost = (float(c) for c in branch_costs)
    except (TypeError, ValueError):
        raise ParameterError(
            'branch_costs must be a (main, loop) pair, got %r.'
            % (branch_costs,))
    if main_cost <= 0 or chain_cost <= 0 or loop_link_cost <= 0:
        raise ParameterError('velcro costs must be positive.')
    if fulcrum_count < 1:
        raise ParameterError(
            'fulcrum_count must be >= 1, got %r.' % fulcrum_count)
    if loop_size < 3:
        raise ParameterError('loop_size must be >= 3, got %r.' % loop_size)

    sink = 1 + fulcrum_count * loop_size
    fulcrums = [1 + j * loop_size for j in range(fulcrum_count)]
    hop_cost = chain_cost / (fulcrum_count + 1)

    links = [Link(0, sink, main_cost, main_cost)]
    chain = [0] + fulcrums + [sink]
    links += [Link(a, b, hop_cost, hop_cost)
              for a, b in zip(chain[:-1], chain[1:])]
    for f in fulcrums:
        cycle = list(range(f, f + loop_size)) + [f]
        links += [Link(a, b, loop_link_cost, loop_link_cost)
                  for a, b in zip(cycle[:-1], cycle[1:])]
    return Topology(sink + 1, links)


def velcro_preset(name):
    """ One of the three classic velcro cost ratios.

    Parameters
    ----------
    name : str
        ``'costly-direct'``, ``'equal'`` or ``'cheap-direct'``.
    """
    if name not in _velcro_presets:
        raise ParameterError(
            'Unknown velcro preset %r; choose from %s.'
            % (name, sorted(_velcro_presets)))
    return generate_velcro(_velcro_presets[name], fulcrum_count=3,
                           loop_size=6)


def generate_waxman(node_count, alpha=0.15, beta=0.2, plane_size=1000.,
                    cost_mode='uniform', seed=None, *, cost_range=(1, 1),
                    min_degree=0):
    """ Flat router-level Waxman graph.

    Nodes are placed uniformly on a ``plane_size`` square and each pair is
    linked with probability ``alpha * exp(-d / (beta * L))``, where ``L`` is
    the diagonal of the square.

    Parameters
    ----------
    node_count : int
        Number of nodes (at least 2).
    alpha : float
        Link density, in (0, 1].
    beta : float
        Ratio of long to short links, in (0, 1].
    plane_size : float
        Side of the square.
    cost_mode : str
        ``'uniform'`` draws costs from ``cost_range`` per direction;
        ``'distance'`` uses the Euclidean length rounded up, in both
        directions.
    seed : int or np.random.RandomState
        Random seed.
    cost_range : tuple of float
        Bounds for ``'uniform'`` costs.
    min_degree : int
        After sampling, components are joined through their closest pair of
        nodes; then every node with fewer than ``min_degree`` links (capped
        at ``node_count - 1``) is linked to its nearest non-neighbors.  The
        default 0 keeps the connectivity repair only.

    Returns
    -------
    Topology
    """
    if node_count < 2:
        raise ParameterError('node_count must be >= 2, got %r.' % node_count)
    if not (0 < alpha <= 1) or not (0 < beta <= 1):
        raise ParameterError(
            'alpha and beta must lie in (0, 1], got %r and %r.'
            % (alpha, beta))
    if plane_size <= 0:
        raise ParameterError('plane_size must be positive.')
    if cost_mode not in ('uniform', 'distance'):
        raise ParameterError(
            "cost_mode must be 'uniform' or 'distance', got %r." % cost_mode)
    if min_degree < 0:
        raise ParameterError('min_degree must be >= 0.')
    cost_range = _check_cost_range(cost_range)
    state = check_random_state(seed)

    positions = state.uniform(0, plane_size, size=(node_count, 2))
    dist = squareform(pdist(positions))
    diagonal = plane_size * np.sqrt(2)
    rows, cols = np.triu_indices(node_count, k=1)
    prob = alpha * np.exp(-dist[rows, cols] / (beta * diagonal))
    hits = state.uniform(size=len(prob)) < prob
    adj = np.zeros((node_count, node_count), dtype=bool)
    adj[rows[hits], cols[hits]] = True
    adj |= adj.T

    # join components through their closest pair until connected
    while True:
        n_components, labels = connected_components(
            coo_matrix(adj), directed=False)
        if n_components == 1:
            break
        across = labels[:, None] != labels[None, :]
        i, j = np.unravel_index(
            np.argmin(np.where(across, dist, np.inf)), dist.shape)
        adj[i, j] = adj[j, i] = True

    target = min(min_degree, node_count - 1)
    for i in range(node_count):
        while adj[i].sum() < target:
            free = ~adj[i]
            free[i] = False
            j = int(np.argmin(np.where(free, dist[i], np.inf)))
            adj[i, j] = adj[j, i] = True

    links = []
    for a, b in zip(*np.nonzero(np.triu(adj))):
        if cost_mode == 'uniform':
            links.append(_random_link(int(a), int(b), cost_range, state))
        else:
            c = max(1., float(np.ceil(dist[a, b])))
            links.append(Link(int(a), int(b), c, c))
    topology = Topology(node_count, links)
    logger.debug('Waxman graph: %d nodes, %d links, mean degree %.2f',
                 node_count, len(links), topology.degrees.mean())
    return topology


def _format_cost(cost):
    return str(int(cost)) if float(cost).is_integer() else repr(float(cost))


def _parse_number(token, lineno, kind=int):
    try:
        return kind(token)
    except ValueError:
        raise TopologySyntaxError(
            'expected %s, got %r' % (kind.__name__, token), lineno)


def parse_topology(text):
    """ Parses the line-oriented topology format.

    Parameters
    ----------
    text : str
        ``nodes <N>`` on the first non-comment line, then one
        ``link <a> <b> <cost_ab> <cost_ba>`` per line.  ``#`` starts a
        comment.

    Returns
    -------
    Topology

    Raises
    ------
    TopologySyntaxError
        On malformed lines (with the line number).
    ValidationError
        On self-links, duplicate links or a disconnected graph.
    """
    node_count = None
    links = []
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split('#', 1)[0].split()
        if not tokens:
            continue
        keyword = tokens[0]
        if node_count is None:
            if keyword != 'nodes' or len(tokens) != 2:
                raise TopologySyntaxError(
                    "expected 'nodes <N>' before any link", lineno)
            node_count = _parse_number(tokens[1], lineno)
            continue
        if keyword != 'link' or len(tokens) != 5:
            raise TopologySyntaxError(
                "expected 'link <a> <b> <cost_ab> <cost_ba>', got %r"
                % line.strip(), lineno)
        a, b = (_parse_number(t, lineno) for t in tokens[1:3])
        cost_ab, cost_ba = (_parse_number(t, lineno, float)
                            for t in tokens[3:5])
        if not (0 <= a < node_count and 0 <= b < node_count):
            raise TopologySyntaxError(
                'endpoint outside [0, %d)' % node_count, lineno)
        if a == b:
            raise ValidationError('line %d: self-link at node %d'
                                  % (lineno, a))
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ValidationError(
                'line %d: duplicate of the link on line %d'
                % (lineno, seen[key]))
        seen[key] = lineno
        links.append(Link(a, b, cost_ab, cost_ba))
    if node_count is None:
        raise TopologySyntaxError("missing 'nodes <N>' line", 1)
    return Topology(node_count, links)


def serialize_topology(topology):
    """ Renders a topology in the format read by ``parse_topology``. """
    lines = ['nodes %d' % topology.node_count]
    lines += ['link %d %d %s %s' % (link.endpoint_a, link.endpoint_b,
                                    _format_cost(link.cost_ab),
                                    _format_cost(link.cost_ba))
              for link in topology.links]
    return '\n'.join(lines) + '\n'


def read_topology(path):
    with open(path) as fh:
        return parse_topology(fh.read())


def write_topology(topology, path):
    with open(path, 'w') as fh:
        fh.write(serialize_topology(topology))

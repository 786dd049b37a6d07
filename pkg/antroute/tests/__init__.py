import os

import numpy as np

from antroute.analytics import dijkstra_oracle
from antroute.ants import RoutingTable


def get_data_path(fn):
    return os.path.join(os.path.dirname(os.path.abspath(__file__)),
                        'data', fn)


def shortest_path_tables(topology):
    """ Deterministic tables that forward along a cheapest path.

    Only meaningful for symmetric link costs.
    """
    n = topology.node_count
    dist = np.array([dijkstra_oracle(topology, j)['cost'].values
                     for j in range(n)])
    tables = []
    for i in range(n):
        probs = np.zeros((n, topology.degree(i)))
        for j in range(n):
            if j == i:
                probs[j] = 1. / topology.degree(i)
                continue
            via = [topology.out_costs[i][k] + dist[j, nbr]
                   for k, nbr in enumerate(topology.adjacency[i])]
            probs[j, int(np.argmin(via))] = 1.
        tables.append(RoutingTable(i, probs))
    return tables

from .ants import AntPolicy, ReinforcementParams
from .simulation import SimConfig, run_exploration
from .topology import Topology, read_topology, write_topology
from .traffic import TrafficConfig, run_traffic_experiment

__version__ = "0.1.1"

__all__ = ['AntPolicy', 'ReinforcementParams', 'SimConfig',
           'run_exploration', 'Topology', 'read_topology', 'write_topology',
           'TrafficConfig', 'run_traffic_experiment']

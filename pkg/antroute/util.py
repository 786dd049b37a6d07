import configparser
import json
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import numpy as np
import pandas as pd

from antroute.ants import RoutingTable, StatModel
from antroute.errors import ParameterError, ValidationError


_true_strings = {'1', 'true', 'yes', 'on'}
_false_strings = {'0', 'false', 'no', 'off'}


def derive_seed(seed, *keys):
    """ Independent 32-bit seed for the stream identified by ``keys``.

    Parameters
    ----------
    seed : int
        Root seed of the run.
    *keys : int
        Stream coordinates, e.g. a (source, destination) pair.

    Returns
    -------
    int
    """
    sequence = np.random.SeedSequence([int(seed)] + [int(k) for k in keys])
    return int(sequence.generate_state(1)[0])


def entropy_seed():
    """ Fresh seed drawn from operating system entropy. """
    return int(np.random.SeedSequence().entropy % (2 ** 32))


def parse_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _true_strings:
        return True
    if text in _false_strings:
        return False
    raise ParameterError('Expected on/off, got %r.' % value)


def format_tables(tables, models):
    """ Reformats routing tables and statistics models in long format.

    Parameters
    ----------
    tables : list of RoutingTable
        One table per node.
    models : list of StatModel
        One model per node, aligned with ``tables``.

    Returns
    -------
    pd.DataFrame
        node : int
        destination : int
        interface : int
        probability : float
        sent : int
        returned : int
    """
    frames = []
    for table, model in zip(tables, models):
        df = pd.DataFrame(table.probabilities)
        df.index.name = 'destination'
        df = df.reset_index()
        df = pd.melt(df, id_vars=['destination'],
                     var_name='interface', value_name='probability')
        df['sent'] = model.sent.ravel(order='F')
        df['returned'] = model.returned.ravel(order='F')
        df['node'] = table.node
        frames.append(df)
    df = pd.concat(frames, ignore_index=True)
    df['interface'] = df['interface'].astype(np.int64)
    df = df.sort_values(['node', 'destination', 'interface'])
    return df[['node', 'destination', 'interface',
               'probability', 'sent', 'returned']].reset_index(drop=True)


def tables_from_frame(df, topology):
    """ Rebuilds tables and models from ``format_tables`` output.

    Raises
    ------
    ValidationError
        If the dump does not cover exactly the nodes, destinations and
        interfaces of ``topology``.
    """
    missing = {'node', 'destination', 'interface', 'probability',
               'sent', 'returned'} - set(df.columns)
    if missing:
        raise ValidationError(
            'Table dump lacks columns %s.' % sorted(missing))
    n = topology.node_count
    nodes = set(df['node'].unique())
    if nodes != set(range(n)):
        raise ValidationError(
            'Table dump covers %d nodes, the topology has %d.'
            % (len(nodes), n))
    tables, models = [], []
    for node, group in df.groupby('node', sort=True):
        degree = topology.degree(node)
        if len(group) != n * degree or \
           set(group['interface']) != set(range(degree)) or \
           set(group['destination']) != set(range(n)):
            raise ValidationError(
                'Table dump of node %d does not match its %d interfaces '
                'and %d destinations.' % (node, degree, n))

        def pivot(column):
            return group.pivot(index='destination', columns='interface',
                               values=column).sort_index().sort_index(axis=1)

        tables.append(RoutingTable(int(node), pivot('probability').values))
        models.append(StatModel(int(node), pivot('sent').values,
                                pivot('returned').values))
    return tables, models


def write_csv(df, path, manifest_path=None):
    """ Writes ``df`` with a leading ``# manifest:`` comment line. """
    with open(path, 'w', newline='') as fh:
        if manifest_path is not None:
            fh.write('# manifest: %s\n' % manifest_path)
        df.to_csv(fh, index=False)


def read_csv(path):
    return pd.read_csv(path, comment='#')


def dump_tables(tables, models, path, manifest_path=None):
    write_csv(format_tables(tables, models), path, manifest_path)


def read_tables(path, topology):
    return tables_from_frame(read_csv(path), topology)


def read_config(path):
    """ Reads a flat ``key = value`` file into a dict of strings.

    Lines starting with ``#`` are comments.  Keys use underscores or
    dashes interchangeably.
    """
    parser = configparser.ConfigParser(comment_prefixes=('#',),
                                       inline_comment_prefixes=('#',))
    with open(path) as fh:
        try:
            parser.read_string('[antroute]\n' + fh.read(), source=path)
        except configparser.Error as e:
            raise ParameterError('Cannot read config %s: %s' % (path, e))
    return {k.replace('-', '_'): v for k, v in parser['antroute'].items()}


def _coerce(value, annotation):
    if value is None or annotation is typing.Any:
        return value
    args = typing.get_args(annotation)
    if args:
        if type(None) in args and str(value).strip().lower() == 'none':
            return None
        if bool in args:
            return parse_bool(value)
        for candidate in args:
            if candidate is type(None):
                continue
            try:
                return _coerce(value, candidate)
            except (ParameterError, ValueError, TypeError):
                continue
        raise ParameterError('Cannot interpret %r.' % value)
    if annotation is bool:
        return parse_bool(value)
    try:
        if annotation is int:
            return int(value)
        if annotation is float:
            return float(value)
        if isinstance(annotation, type) and issubclass(annotation, str):
            return str(value)
        return annotation(value)
    except (TypeError, ValueError):
        raise ParameterError('Cannot interpret %r as %s.'
                             % (value, getattr(annotation, '__name__',
                                               annotation)))


def build_config(cls, values=None, **overrides):
    """ Builds dataclass ``cls`` from string values and typed overrides.

    Keys of a nested dataclass field (e.g. ``tau`` of
    ``SimConfig.params``) may be given flat.  ``None`` overrides are
    ignored so unset command-line flags keep the file or default value.

    Raises
    ------
    ParameterError
        On unknown keys or values that cannot be converted.
    """
    merged = dict(values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    nested = {}
    for f in fields(cls):
        if is_dataclass(f.type):
            sub = {g.name for g in fields(f.type)}
            picked = {k: merged.pop(k) for k in list(merged) if k in sub}
            if f.name in merged:
                kwargs[f.name] = merged.pop(f.name)
                continue
            nested[f.name] = build_config(f.type, picked)
        elif f.name in merged:
            kwargs[f.name] = _coerce(merged.pop(f.name), f.type)
    if merged:
        raise ParameterError('Unknown %s options: %s.'
                             % (cls.__name__, ', '.join(sorted(merged))))
    kwargs.update(nested)
    return cls(**kwargs)


def config_to_dict(config):
    """ JSON-friendly view of a configuration dataclass. """
    if hasattr(config, 'to_dict'):
        return config.to_dict()
    return asdict(config)


@dataclass
class RunManifest:
    """ Record of a command invocation; enough to reproduce its outputs. """
    command: str
    parameters: dict
    seed: int
    artifacts: dict = field(default_factory=dict)
    version: str = ''

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + '\n'


def write_manifest(manifest, path):
    with open(path, 'w') as fh:
        fh.write(manifest.to_json())


def read_manifest(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
        return RunManifest(**data)
    except (ValueError, TypeError) as e:
        raise ValidationError('Malformed manifest %s: %s' % (path, e))

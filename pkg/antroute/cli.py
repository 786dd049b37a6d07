import argparse
import logging
import os
import sys
from dataclasses import fields, is_dataclass

from antroute import __version__
from antroute.analytics import (
    DEFAULT_FIT_SIZES, DEFAULT_TAU_GRID, fit_report_frame,
    loop_frequency_histogram, operating_curve, operating_curve_frame,
    shortest_path_fit)
from antroute.ants import discarded_interfaces
from antroute.errors import AntRouteError, ParameterError
from antroute.simulation import SimConfig, run_exploration
from antroute.topology import (
    generate_clique_grid, generate_dumbbell, generate_mesh, generate_ring,
    generate_tree, generate_velcro, generate_waxman, read_topology,
    velcro_preset, write_topology)
from antroute.traffic import (
    TrafficConfig, resolve_phi, run_traffic_experiment,
    traffic_distribution_buckets)
from antroute.util import (
    RunManifest, build_config, config_to_dict, dump_tables, entropy_seed,
    parse_bool, read_config, read_manifest, read_tables, write_csv,
    write_manifest)


logger = logging.getLogger(__name__)


class _ArgumentParser(argparse.ArgumentParser):
    """ Usage errors exit with status 1. """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, '%s: error: %s\n' % (self.prog, message))


def on_off(value):
    try:
        return parse_bool(value)
    except ParameterError as e:
        raise argparse.ArgumentTypeError(str(e))


def float_list(value):
    try:
        return [float(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError('expected numbers separated by '
                                         'commas, got %r' % value)


def int_list(value):
    try:
        return [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError('expected integers separated by '
                                         'commas, got %r' % value)


def _sibling(path, suffix):
    """ ``runs/t.csv`` -> ``runs/t<suffix>`` """
    return os.path.splitext(path)[0] + suffix


def _field_names(cls):
    names = set()
    for f in fields(cls):
        names |= _field_names(f.type) if is_dataclass(f.type) else {f.name}
    return names


def _file_values(args, *classes):
    """ Config file values, split per dataclass. """
    values = read_config(args.config) if getattr(args, 'config', None) \
        else {}
    values.pop('seed', None)
    split = []
    for cls in classes:
        names = _field_names(cls)
        split.append({k: v for k, v in values.items() if k in names})
    known = set().union(*(_field_names(cls) for cls in classes))
    unknown = sorted(set(values) - known)
    if unknown:
        raise ParameterError('Unknown options in %s: %s.'
                             % (args.config, ', '.join(unknown)))
    return split


def _resolve_seed(args):
    if args.seed is not None:
        return args.seed
    if getattr(args, 'config', None):
        seed = read_config(args.config).get('seed')
        if seed is not None:
            return int(seed)
    return entropy_seed()


def _sim_config(args, values, seed, tau=None):
    return build_config(
        SimConfig, values,
        duration=args.duration, ant_period=args.ant_period,
        uncontrolled_fraction=args.uncontrolled_fraction,
        ant_policy=args.policy, subpath_reinforcement=args.subpath,
        controlled_no_return=args.no_return, link_delay=args.link_delay,
        ant_ttl=args.ant_ttl,
        invariant_check_interval=args.check_interval,
        lam=args.lam, cost_fn=args.cost_fn, tau=tau, seed=seed).validate()


def _traffic_config(args, values, seed, phi=None, absorption=None):
    return build_config(
        TrafficConfig, values, phi=phi, source_absorption=absorption,
        packets_per_pair=args.packets_per_pair, ttl=args.ttl,
        seed=seed).validate()


def _record(args, command, seed, parameters, artifacts, manifest_path):
    argv = [a for a in args.argv if a not in ('-v', '--verbose',
                                               '-q', '--quiet')]
    if '--seed' not in argv and seed is not None:
        argv += ['--seed', str(seed)]
    parameters = dict(parameters, argv=argv)
    write_manifest(RunManifest(command, parameters, seed, artifacts,
                               __version__), manifest_path)


def cmd_gen(args):
    seed = args.seed if args.seed is not None else entropy_seed()
    cost_range = (args.min_cost, args.max_cost)
    kind = args.kind
    if kind == 'tree':
        topology = generate_tree(args.nodes, args.max_children, cost_range,
                                 seed)
    elif kind == 'clique':
        topology = generate_clique_grid(args.rows, args.cols, cost_range,
                                        seed)
    elif kind == 'ring':
        topology = generate_ring(args.nodes, cost_range, seed)
    elif kind == 'mesh':
        topology = generate_mesh(args.nodes, cost_range, seed)
    elif kind == 'dumbbell':
        topology = generate_dumbbell(args.bell_size, args.bar_length,
                                     cost_range, seed)
    elif kind == 'velcro':
        if args.preset is not None:
            topology = velcro_preset(args.preset)
        else:
            topology = generate_velcro((args.main_cost, args.chain_cost),
                                       args.fulcrums, args.loop_size,
                                       args.loop_link_cost)
    else:
        topology = generate_waxman(args.nodes, args.alpha, args.beta,
                                   args.plane_size, args.cost_mode, seed,
                                   cost_range=cost_range,
                                   min_degree=args.min_degree)
    write_topology(topology, args.out)
    manifest = _sibling(args.out, '.manifest.json')
    params = {k: v for k, v in vars(args).items()
              if k not in ('func', 'argv', 'verbose', 'quiet')}
    params['seed'] = seed
    _record(args, 'gen', seed, params, {'topology': args.out}, manifest)
    degrees = topology.degree_counts()
    print('%d nodes, %d links, degrees %s'
          % (topology.node_count, len(topology.links),
             ' '.join('%d:%d' % kv for kv in sorted(degrees.items()))))


def cmd_explore(args):
    topology = read_topology(args.topo)
    seed = _resolve_seed(args)
    (values,) = _file_values(args, SimConfig)
    config = _sim_config(args, values, seed, tau=args.tau)
    result = run_exploration(topology, config)

    manifest = _sibling(args.out, '.manifest.json')
    stats_path = _sibling(args.out, '.stats.csv')
    dump_tables(result.tables, result.models, args.out, manifest)
    write_csv(result.stats.to_frame(), stats_path, manifest)
    artifacts = {'tables': args.out, 'stats': stats_path}
    if args.discarded:
        discarded = discarded_interfaces(topology, result.models,
                                         config.params.tau)
        write_csv(discarded, args.discarded, manifest)
        artifacts['discarded'] = args.discarded
    _record(args, 'explore', seed,
            {'topology': args.topo, 'config': config_to_dict(config)},
            artifacts, manifest)
    stats = result.stats
    print('%d ants generated, %d absorbed, %d returned, %d expired, '
          '%d in flight' % (stats.ants_generated, stats.ants_absorbed,
                            stats.ants_returned, stats.ants_expired,
                            stats.ants_in_flight))


def cmd_route(args):
    topology = read_topology(args.topo)
    tables, _ = read_tables(args.tables, topology)
    seed = _resolve_seed(args)
    (values,) = _file_values(args, TrafficConfig)
    config = _traffic_config(args, values, seed, phi=args.phi,
                             absorption=args.absorption)
    metrics, record = run_traffic_experiment(
        topology, tables, config, pair_selection=args.pairs)

    manifest = _sibling(args.out, '.manifest.json')
    loops_path = _sibling(args.out, '.loops.csv')
    paths_path = _sibling(args.out, '.paths.csv')
    buckets, _ = traffic_distribution_buckets(record)
    phi = resolve_phi(config.phi, topology)
    write_csv(metrics.to_frame(phi=phi), args.out, manifest)
    write_csv(loop_frequency_histogram(metrics), loops_path, manifest)
    write_csv(buckets, paths_path, manifest)
    _record(args, 'route', seed,
            {'topology': args.topo, 'tables': args.tables,
             'pairs': args.pairs, 'config': config_to_dict(config)},
            {'metrics': args.out, 'loops': loops_path, 'paths': paths_path},
            manifest)
    print('success %.2f%%, loops %.2f%%, multipath %.2f%%, %d TTL drops'
          % (metrics.success_pct, metrics.loop_pct, metrics.multipath_pct,
             metrics.ttl_drops))


def cmd_sweep(args):
    topology = read_topology(args.topo)
    seed = _resolve_seed(args)
    sim_values, traffic_values = _file_values(args, SimConfig, TrafficConfig)
    sim_values.pop('tau', None)
    absorption = None if args.absorption == 'both' else \
        parse_bool(args.absorption)
    sim_config = _sim_config(args, sim_values, seed)
    traffic_config = _traffic_config(args, traffic_values, seed)
    traffic_config.source_absorption = absorption
    points = operating_curve(topology, args.tau_grid, sim_config,
                             traffic_config, epsilon=args.epsilon,
                             workers=args.workers, progress=True)

    manifest = _sibling(args.out, '.manifest.json')
    write_csv(operating_curve_frame(points), args.out, manifest)
    _record(args, 'sweep', seed,
            {'topology': args.topo, 'tau_grid': list(args.tau_grid),
             'epsilon': args.epsilon, 'absorption': args.absorption,
             'sim_config': config_to_dict(sim_config),
             'traffic_config': config_to_dict(traffic_config)},
            {'curve': args.out}, manifest)
    print('%d operating points written to %s' % (len(points), args.out))


def cmd_fit(args):
    seed = _resolve_seed(args)
    (values,) = _file_values(args, SimConfig)
    sim_config = _sim_config(args, values, seed, tau=args.tau)
    result = shortest_path_fit(args.sizes, sim_config, seed=seed,
                               workers=args.workers, progress=True,
                               alpha=args.alpha, beta=args.beta,
                               min_degree=args.min_degree)

    manifest = _sibling(args.out, '.manifest.json')
    report = _sibling(args.out, '.txt')
    write_csv(fit_report_frame(result), args.out, manifest)
    summary = 'kappa = %.6f\nr_squared = %.6f\n' % (result.kappa,
                                                   result.r_squared)
    with open(report, 'w') as fh:
        fh.write(summary)
    _record(args, 'fit', seed,
            {'sizes': list(args.sizes), 'alpha': args.alpha,
             'beta': args.beta, 'min_degree': args.min_degree,
             'sim_config': config_to_dict(sim_config)},
            {'fit': args.out, 'report': report}, manifest)
    sys.stdout.write(summary)


def cmd_replay(args):
    manifest = read_manifest(args.manifest)
    argv = manifest.parameters.get('argv')
    if not argv:
        raise ParameterError('%s does not record a command line.'
                             % args.manifest)
    if manifest.version != __version__:
        logger.warning('Manifest written by antroute %s, running %s',
                       manifest.version, __version__)
    code = main(argv)
    if code:
        raise SystemExit(code)


def _add_explore_options(parser, with_tau=True):
    group = parser.add_argument_group('exploration')
    if with_tau:
        group.add_argument('--tau', type=float,
                           help='Threshold factor in [0, 1] (default 0.5).')
    group.add_argument('--lam', type=float,
                       help='Reinforcement scale (default 0.1).')
    group.add_argument('--cost-fn', choices=['linear', 'quadratic'])
    group.add_argument('--duration', type=int,
                       help='Simulated time in us (default 1e7).')
    group.add_argument('--ant-period', type=int,
                       help='Ant generation period in us (default 10000).')
    group.add_argument('--uncontrolled-fraction', type=float,
                       help='Share of the run spent in uncontrolled '
                            'exploration (default 0.125).')
    group.add_argument('--policy', choices=['model', 'uniform', 'regular'])
    group.add_argument('--subpath', type=on_off, metavar='on|off',
                       help='Sub-path reinforcement (default on).')
    group.add_argument('--no-return', type=on_off, metavar='on|off',
                       help='Controlled ants avoid their arrival interface '
                            '(default on).')
    group.add_argument('--link-delay', type=int,
                       help='Link transit time in us (default 100).')
    group.add_argument('--ant-ttl', type=int,
                       help='Hop budget of an ant (default 4096).')
    group.add_argument('--check-interval', type=int,
                       help='Re-validate a table row every N updates.')


def _add_route_options(parser):
    group = parser.add_argument_group('traffic')
    group.add_argument('--packets-per-pair', type=int,
                       help='Packets per ordered pair (default 100).')
    group.add_argument('--ttl', type=int,
                       help='Packet TTL (default 255).')


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')

    parser = _ArgumentParser(
        prog='antroute',
        description='Model-based ant exploration for reachability routing.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    commands = parser.add_subparsers(dest='command', metavar='command',
                                     parser_class=_ArgumentParser)
    commands.required = True

    gen = commands.add_parser('gen', parents=[common],
                              help='Generate a topology file.')
    gen.add_argument('kind', choices=['tree', 'clique', 'ring', 'mesh',
                                      'dumbbell', 'velcro', 'waxman'])
    gen.add_argument('--out', required=True)
    gen.add_argument('--seed', type=int)
    gen.add_argument('--nodes', type=int, default=20)
    gen.add_argument('--min-cost', type=float, default=1)
    gen.add_argument('--max-cost', type=float, default=1)
    gen.add_argument('--max-children', type=int, default=2)
    gen.add_argument('--rows', type=int, default=8)
    gen.add_argument('--cols', type=int, default=5)
    gen.add_argument('--bell-size', type=int, default=5)
    gen.add_argument('--bar-length', type=int, default=1)
    gen.add_argument('--fulcrums', type=int, default=3)
    gen.add_argument('--loop-size', type=int, default=6)
    gen.add_argument('--main-cost', type=float, default=10.)
    gen.add_argument('--chain-cost', type=float, default=4.)
    gen.add_argument('--loop-link-cost', type=float, default=1.)
    gen.add_argument('--preset',
                     choices=['costly-direct', 'equal', 'cheap-direct'])
    gen.add_argument('--alpha', type=float, default=0.15)
    gen.add_argument('--beta', type=float, default=0.2)
    gen.add_argument('--plane-size', type=float, default=1000.)
    gen.add_argument('--cost-mode', choices=['uniform', 'distance'],
                     default='uniform')
    gen.add_argument('--min-degree', type=int, default=0)
    gen.set_defaults(func=cmd_gen)

    explore = commands.add_parser('explore', parents=[common],
                                  help='Run ant exploration on a topology.')
    explore.add_argument('--topo', required=True)
    explore.add_argument('--out', required=True,
                         help='Routing table dump (CSV).')
    explore.add_argument('--config')
    explore.add_argument('--seed', type=int)
    explore.add_argument('--discarded',
                         help='Also write the interfaces ruled out by the '
                              'model to this CSV.')
    _add_explore_options(explore)
    explore.set_defaults(func=cmd_explore)

    route = commands.add_parser('route', parents=[common],
                                help='Route packets over explored tables.')
    route.add_argument('--topo', required=True)
    route.add_argument('--tables', required=True)
    route.add_argument('--out', required=True, help='Metrics CSV.')
    route.add_argument('--config')
    route.add_argument('--seed', type=int)
    route.add_argument('--phi', help="Reachability factor or 'max'.")
    route.add_argument('--absorption', type=on_off, metavar='on|off')
    route.add_argument('--pairs', type=int,
                       help='Sample this many ordered pairs.')
    _add_route_options(route)
    route.set_defaults(func=cmd_route)

    sweep = commands.add_parser('sweep', parents=[common],
                                help='Trace an operating curve over tau.')
    sweep.add_argument('--topo', required=True)
    sweep.add_argument('--out', required=True)
    sweep.add_argument('--config')
    sweep.add_argument('--seed', type=int)
    sweep.add_argument('--tau-grid', type=float_list,
                       default=list(DEFAULT_TAU_GRID))
    sweep.add_argument('--absorption', choices=['on', 'off', 'both'],
                       default='on')
    sweep.add_argument('--epsilon', type=float, default=1e-3,
                       help='Fallback fraction below which the model is '
                            'in force.')
    sweep.add_argument('--workers', type=int, default=1)
    _add_explore_options(sweep, with_tau=False)
    _add_route_options(sweep)
    sweep.set_defaults(func=cmd_sweep)

    fit = commands.add_parser('fit', parents=[common],
                              help='Fit kappa to phi=1 path lengths.')
    fit.add_argument('--out', required=True)
    fit.add_argument('--config')
    fit.add_argument('--seed', type=int)
    fit.add_argument('--sizes', type=int_list,
                     default=list(DEFAULT_FIT_SIZES))
    fit.add_argument('--alpha', type=float, default=0.15)
    fit.add_argument('--beta', type=float, default=0.2)
    fit.add_argument('--min-degree', type=int, default=0)
    fit.add_argument('--workers', type=int, default=1)
    _add_explore_options(fit)
    fit.set_defaults(func=cmd_fit)

    replay = commands.add_parser('replay', parents=[common],
                                 help='Re-run the command of a manifest.')
    replay.add_argument('manifest')
    replay.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    """ Runs the command line; returns the exit status. """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    if args.command == 'sweep' and not args.tau_grid:
        parser.error('--tau-grid is empty')

    level = logging.DEBUG if args.verbose else \
        logging.ERROR if args.quiet else logging.WARNING
    logging.basicConfig(level=level,
                        format='%(levelname)s:%(name)s:%(message)s')
    try:
        args.func(args)
    except AntRouteError as e:
        sys.stderr.write('antroute: error: %s\n' % e)
        return e.exit_code
    except OSError as e:
        sys.stderr.write('antroute: error: %s\n' % e)
        return 1
    return 0

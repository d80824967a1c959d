from __future__ import print_function
import sys
import logging
import argparse

from six.moves import shlex_quote
from pytool.json import as_json

import dbmatch
from dbmatch import config
from dbmatch.database import (MAGIC, generate_correlated_pair, save_pair,
                              load_pair, load_attack_view, export_csv)
from dbmatch.errors import (DBMatchError, ValidationError, PairFormatError,
                            SweepRangeError, UsageError)
from dbmatch.harness import (load_config, run_sweep, estimate_threshold,
                             emit_report, emit_gnuplot)
from dbmatch.matcher import MATCHERS, TYPICALITY, run_matcher
from dbmatch.process import load_spec, estimate_entropy_rates
from dbmatch.seeds import child_rng


log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_RUNTIME = 4

LOG_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def main():
    """
    Main script for the `dbmatch` command.

    """
    sys.exit(dispatch(sys.argv[1:]))


class _Parser(argparse.ArgumentParser):
    """ Argument parser that reports usage errors as one line. """
    def error(self, message):
        _error(UsageError(message), EXIT_USAGE)
        self.exit(EXIT_USAGE)


def parser():
    """ Return the argument parser for the `dbmatch` command. """
    parser = _Parser(prog='dbmatch', description="Simulate "
            "matching of correlated databases")
    parser.add_argument('--version', action='version',
            version='%(prog)s ' + dbmatch.__version__)
    parser.add_argument('-v', '--verbose', action='count', default=0,
            help="log progress (-v) or debug detail (-vv) to stderr")
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    mi = commands.add_parser('mi', help="print the entropy rates and mutual "
            "information of a spec")
    mi.add_argument('spec', help="spec JSON file")
    mi.add_argument('--monte-carlo', action='store_true',
            help="estimate by sampling instead of the analytic form")
    mi.add_argument('-m', type=int, default=1000,
            help="block length for sampling (default: %(default)s)")
    mi.add_argument('--trials', type=int, default=100,
            help="sampled blocks (default: %(default)s)")
    mi.add_argument('--seed', type=int, default=0)

    generate = commands.add_parser('generate', help="generate a correlated "
            "database pair")
    generate.add_argument('spec', help="spec JSON file")
    generate.add_argument('-m', type=int, required=True, help="entry length")
    generate.add_argument('-n', type=int, required=True,
            help="number of members")
    generate.add_argument('--seed', type=int, required=True)
    generate.add_argument('-o', '--out', required=True, help="pair file")
    generate.add_argument('--csv', metavar='PATH',
            help="also export the pair as CSV")
    generate.add_argument('--identity-theta1', action='store_true',
            help="label the first database in member order")
    generate.add_argument('--workers', type=int, default=1)

    match = commands.add_parser('match', help="reconstruct the labels of "
            "the second database of a pair")
    match.add_argument('pair', help="pair file")
    match.add_argument('--matcher', choices=MATCHERS, default=TYPICALITY)
    match.add_argument('--epsilon', type=float,
            default=config.get('dbmatch.epsilon', 0.05))
    match.add_argument('--seed', type=int, default=0,
            help="seed for the random fill (default: %(default)s)")
    match.add_argument('--strict', action='store_const', const=True,
            help="require marginal typicality too")
    match.add_argument('--score', action='store_true',
            help="score against the truth labels stored in the pair file")
    match.add_argument('-o', '--out', help="write the match result as JSON")
    match.add_argument('--per-entry', action='store_true',
            help="include per-entry correctness in the JSON result")

    sweep = commands.add_parser('sweep', help="run a sweep config")
    sweep.add_argument('config', help="sweep config JSON file")
    sweep.add_argument('-o', '--out', required=True, help="report file")
    sweep.add_argument('--format', choices=('csv', 'json'), default='csv')
    sweep.add_argument('--workers', type=int,
            default=config.get('dbmatch.workers', 1))
    sweep.add_argument('--timing', action='store_true',
            help="record wall time per row")
    sweep.add_argument('--gnuplot', metavar='PATH',
            help="write R against mean success for the first m and epsilon")

    validate = commands.add_parser('validate', help="check a spec, sweep "
            "config or pair file")
    validate.add_argument('path')

    return parser


def dispatch(argv):
    """
    Run the command in `argv` and return the exit code.

    Errors are reported on stderr as one line,
    ``dbmatch: error=<kind> reason=<reason>``.

    """
    try:
        args = parser().parse_args(argv)
    except SystemExit as err:
        return err.code if err.code is not None else EXIT_OK

    _configure_logging(args.verbose)
    log.info("dbmatch %s", ' '.join(shlex_quote(arg) for arg in argv))

    try:
        COMMANDS[args.command](args)
    except (ValidationError, PairFormatError, SweepRangeError) as err:
        return _error(err, EXIT_INVALID)
    except DBMatchError as err:
        return _error(err, EXIT_RUNTIME)
    except (IOError, OSError) as err:
        return _error(err, EXIT_INVALID)
    return EXIT_OK


def _configure_logging(verbosity):
    root = logging.getLogger('dbmatch')
    root.setLevel(LOG_LEVELS.get(verbosity, logging.DEBUG))
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(
            "%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)


def _error(err, code):
    """
    Print a one-line error and return `code`.

    :param err: The exception
    :param int code: Exit code

    """
    reason = ' '.join(str(err).split())
    print("dbmatch: error={} reason={}".format(type(err).__name__, reason),
          file=sys.stderr)
    return code


def _print_json(data):
    print(as_json(data, sort_keys=True, indent=2))


def _handle_mi(args):
    spec = load_spec(args.spec)
    if args.monte_carlo:
        report = estimate_entropy_rates(spec, args.m, args.trials,
                                        child_rng(args.seed, 'mi'))
    else:
        report = spec.entropy_rates()
    _print_json(report.to_dict())


def _handle_generate(args):
    spec = load_spec(args.spec)
    pair = generate_correlated_pair(spec, args.m, args.n, args.seed,
                                    identity_theta1=args.identity_theta1,
                                    workers=args.workers)
    save_pair(pair, args.out)
    if args.csv:
        export_csv(pair, args.csv)
    print("spec_id={} m={} n={} seed={} out={}".format(
        spec.spec_id, pair.m, pair.n, pair.seed, args.out))


def _handle_match(args):
    if args.score:
        log.info("Scoring against the truth labels in %s", args.pair)
        view = load_pair(args.pair)
        db2 = view.db2.base
    else:
        view = load_attack_view(args.pair)
        db2 = view.db2
    result = run_matcher(args.matcher, view.db1, db2, view.spec,
                         epsilon=args.epsilon,
                         rng=child_rng(args.seed, 'match-' + args.matcher),
                         strict=args.strict)
    summary = "matcher={} n={} ambiguity_fraction={!r}".format(
        result.matcher_kind, result.n, result.ambiguity_fraction)
    if args.score:
        result.score(view.db2.theta)
        summary += " success_fraction={!r}".format(result.success_fraction)
    if args.out:
        with open(args.out, 'w') as stream:
            stream.write(result.to_json(args.per_entry, sort_keys=True))
            stream.write('\n')
    print(summary)


def _handle_sweep(args):
    sweep = load_config(args.config)
    if args.timing:
        sweep.record_timing = True
    table = run_sweep(sweep, args.workers)
    estimates = []
    for m in sweep.m_values:
        for epsilon in sweep.epsilons:
            for matcher in sweep.matchers:
                try:
                    estimates.append(estimate_threshold(table, m, epsilon,
                                                        matcher))
                except SweepRangeError as err:
                    log.info("No threshold estimate: %s", err)
    emit_report(table, estimates, args.out, args.format)
    if args.gnuplot:
        emit_gnuplot(table, args.gnuplot, sweep.m_values[0],
                     sweep.epsilons[0])
    print("rows={} out={}".format(len(table), args.out))


def _handle_validate(args):
    with open(args.path, 'rb') as stream:
        magic = stream.read(len(MAGIC))
    if magic == MAGIC:
        pair = load_pair(args.path)
        pair.db1.base.validate(pair.spec, 1)
        pair.db2.base.validate(pair.spec, 2)
        print("ok pair spec_id={} m={} n={}".format(pair.spec.spec_id,
                                                    pair.m, pair.n))
        return

    try:
        spec = load_spec(args.path)
    except ValidationError as spec_err:
        try:
            sweep = load_config(args.path)
        except ValidationError:
            raise spec_err
        print("ok sweep spec_id={} rows={}".format(sweep.spec.spec_id,
                                                   sweep.row_count))
        return
    spec.entropy_rates()
    print("ok spec spec_id={} variant={}".format(spec.spec_id, spec.variant))


COMMANDS = {
        'mi': _handle_mi,
        'generate': _handle_generate,
        'match': _handle_match,
        'sweep': _handle_sweep,
        'validate': _handle_validate,
        }

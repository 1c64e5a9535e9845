"""
clonecc config file

This file is used by the command line interface to set, save and restore the
parameters of replication experiments. Values are read from ~/clonecc.conf,
then from an optional key=value workload file, and finally from the command
line, each one overriding the previous.
"""

import os
import sys
import argparse
import configparser

from collections import OrderedDict

from clonecc import log
from clonecc import util
from clonecc.util import ConfigurationError  # noqa: F401  re-exported for the CLI

home = os.path.expanduser("~")
LOGS_HOME = os.path.join(home, 'logs')
CONFIG_FILE_NAME = os.path.join(home, 'clonecc.conf')

PROTOCOLS = ['c5-watermark', 'c5-txnchain', 'c5-rowqueue', 'single', 'txn-gran', 'page-gran']
WORKLOADS = ['insert_only', 'adversarial', 'micro_orderentry', 'proof_txn', 'proof_page']

SECTIONS = OrderedDict()

SECTIONS['general'] = {
    'config': {
        'default': CONFIG_FILE_NAME,
        'type': str,
        'help': "File name of configuration file. Default: ~/clonecc.conf",
        'metavar': 'FILE'},
    'logs-home': {
        'default': LOGS_HOME,
        'type': str,
        'help': "Log file directory",
        'metavar': 'FILE'},
    'verbose': {
        'default': False,
        'help': 'Verbose output',
        'action': 'store_true'},
    'seed': {
        'default': 0,
        'type': util.nonnegative_int,
        'help': "Seed of the workload generator and of the read clients"},
    'workload-file': {
        'default': '',
        'type': str,
        'help': "Plain key=value file with workload settings, overridden by the command line",
        'metavar': 'FILE'},
        }

SECTIONS['workload'] = {
    'workload': {
        'default': 'adversarial',
        'type': str,
        'help': "Workload kind",
        'choices': WORKLOADS},
    'inserts-per-txn': {
        'default': 16,
        'type': util.nonnegative_int,
        'help': "Unique inserts per transaction (order lines for micro_orderentry)"},
    'hot-rows': {
        'default': 1,
        'type': util.positive_int,
        'help': "Number of hot rows; district count for micro_orderentry, |S| for proof_page"},
    'optimized': {
        'default': False,
        'help': 'Defer the high contention writes of each transaction to its end',
        'action': 'store_true'},
    'txn-count': {
        'default': 2000,
        'type': util.nonnegative_int,
        'help': "Number of transactions generated"},
    'arrival-interval': {
        'default': 0,
        'type': util.nonnegative_int,
        'help': "Open loop arrival interval in time units, 0 for closed loop"},
    'neworder-fraction': {
        'default': 0.5,
        'type': util.restricted_float,
        'help': "Share of NewOrder transactions in micro_orderentry"},
    'value-size': {
        'default': 8,
        'type': util.positive_int,
        'help': "Payload bytes of inserted rows"},
        }

SECTIONS['primary'] = {
    'primary-threads': {
        'default': 4,
        'type': util.positive_int,
        'help': "Primary threads (simulated cores in discrete mode), m"},
    'primary-op-cost': {
        'default': 2,
        'type': util.nonnegative_int,
        'help': "Primary cost per operation e, in time units (microseconds in real mode)"},
    'mode': {
        'default': 'discrete',
        'type': str,
        'help': "Real threads or discrete-event simulation",
        'choices': ['real', 'discrete']},
    'segment-size': {
        'default': 4096,
        'type': util.positive_int,
        'help': "Log records per segment"},
    'duration': {
        'default': 0,
        'type': float,
        'help': "Real mode: stop starting transactions after this many seconds, 0 for no limit"},
        }

SECTIONS['backup'] = {
    'protocol': {
        'default': 'c5-watermark',
        'type': str,
        'help': "Replay protocol",
        'choices': PROTOCOLS},
    'workers': {
        'default': 4,
        'type': util.positive_int,
        'help': "Backup worker threads, never more than the primary threads"},
    'backup-op-cost': {
        'default': 1,
        'type': util.nonnegative_int,
        'help': "Backup cost per write d, in time units (microseconds in real mode)"},
    'snapshot-interval-ms': {
        'default': 10.0,
        'type': float,
        'help': "Snapshotter tick interval (ms)"},
    'rows-per-page': {
        'default': 64,
        'type': util.positive_int,
        'help': "Rows per page for page-gran"},
    'initial-estimate': {
        'default': 64,
        'type': util.positive_int,
        'help': "Writes admitted before the first snapshot of c5-txnchain"},
    'full-graph': {
        'default': False,
        'help': 'txn-gran: depend on every earlier conflicting transaction, not only the last writer',
        'action': 'store_true'},
    'chaos': {
        'default': False,
        'help': 'c5-watermark: skip safety checks (checker sensitivity runs only)',
        'action': 'store_true'},
    'replay-timeout': {
        'default': 120.0,
        'type': float,
        'help': "Seconds the backup may take to install the whole log"},
        }

SECTIONS['experiment'] = {
    'read-clients': {
        'default': 0,
        'type': util.nonnegative_int,
        'help': "Read-only closed loop clients on the backup"},
    'reads-per-txn': {
        'default': 1,
        'type': util.positive_int,
        'help': "Rows read by each read-only transaction"},
    'trim': {
        'default': 0.1,
        'type': util.restricted_float,
        'help': "Fraction of the run trimmed at each end of the measurement window"},
    'periods': {
        'default': 3,
        'type': util.positive_int,
        'help': "Consecutive periods the lag statistics are split into"},
    'runs': {
        'default': 5,
        'type': util.positive_int,
        'help': "Repetitions per sweep point, the median is reported"},
    'sweep-inserts': {
        'default': '1,4,8,16,64',
        'type': str,
        'help': "Comma separated inserts-per-txn values of the sweep"},
    'sweep-axis': {
        'default': 'inserts',
        'type': str,
        'help': "Workload knob the sweep varies: inserts per transaction or micro_orderentry districts",
        'choices': ['inserts', 'districts']},
    'sweep-districts': {
        'default': '10,8,4,2,1',
        'type': str,
        'help': "Comma separated district counts of the districts sweep"},
    'lag-ceiling-ms': {
        'default': 0.0,
        'type': float,
        'help': "Largest acceptable lag (ms), 0 for 50 snapshot intervals"},
    'ramp-interval-ms': {
        'default': 0.0,
        'type': float,
        'help': "Real mode: start one read client every this many ms, 0 to start all at once"},
    'csv-out': {
        'default': '',
        'type': str,
        'help': "Write per transaction f_p, f_b and lag to this CSV file",
        'metavar': 'FILE'},
    'log-file': {
        'default': '',
        'type': str,
        'help': "Binary replication log for the offline command",
        'metavar': 'FILE'},
    'offline-action': {
        'default': 'replay',
        'type': str,
        'help': "Dump a primary log to --log-file or replay one from it",
        'choices': ['dump', 'replay']},
        }

SECTIONS['lag'] = {
    'theorem': {
        'default': 'txn',
        'type': str,
        'help': "Constructed workload to evaluate",
        'choices': ['txn', 'page']},
    'lag-bound': {
        'default': 10,
        'type': util.nonnegative_int,
        'help': "Claimed lag bound L the workload must exceed"},
    'writes-per-txn': {
        'default': 3,
        'type': util.positive_int,
        'help': "n, writes per transaction of the txn theorem workload"},
    'hot-page-size': {
        'default': 4,
        'type': util.positive_int,
        'help': "|S|, rows on the hot page of the page theorem workload"},
    'lag-count': {
        'default': 0,
        'type': util.nonnegative_int,
        'help': "Transactions in the workload, 0 for one past the count the bound requires"},
    'sim-protocols': {
        'default': 'txn,page,row,txnchain',
        'type': str,
        'help': "Comma separated simulator protocols (row, txnchain, txn, page, single, unconstrained)"},
        }

RUN_PARAMS = ('workload', 'primary', 'backup', 'experiment')
SWEEP_PARAMS = RUN_PARAMS
LAG_PARAMS = ('primary', 'backup', 'lag')
OFFLINE_PARAMS = RUN_PARAMS

NICE_NAMES = ('General', 'Workload', 'Primary', 'Backup', 'Experiment', 'Lag')


def _option_value(option, default):
    """Value of *option* on the command line, *default* when absent."""
    for i, arg in enumerate(sys.argv):
        if arg.startswith(option):
            if arg == option:
                return sys.argv[i + 1] if i + 1 < len(sys.argv) else default
            name = arg.split(option)[1]
            if name and name[0] == '=':
                return name[1:]
    return default


def get_config_name():
    """Get the command line --config option."""
    return _option_value('--config', CONFIG_FILE_NAME)


def get_workload_file_name():
    """Get the command line --workload-file option."""
    return _option_value('--workload-file', '')


def parse_known_args(parser, subparser=False):
    """
    Parse arguments from file and then override by the ones specified on the
    command line. Use *parser* for parsing and is *subparser* is True take into
    account that there is a value on the command line specifying the subparser.
    """
    if len(sys.argv) > 1:
        subparser_value = [sys.argv[1]] if subparser else []
        config_values = config_to_list(config_name=get_config_name())
        workload_values = workload_file_to_list(get_workload_file_name())
        values = subparser_value + config_values + workload_values + sys.argv[1:]
    else:
        values = ""

    return parser.parse_known_args(values)[0]


def _as_argv(name, opts, value):
    result = []
    if value != '' and value != 'None':
        action = opts.get('action', None)

        if action == 'store_true' and value in ('True', 'true', '1', 'yes'):
            # Only the key is on the command line for this action
            result.append('--{}'.format(name))

        if not action == 'store_true':
            result.append('--{}={}'.format(name, value))
    return result


def config_to_list(config_name=CONFIG_FILE_NAME):
    """
    Read arguments from config file and convert them to a list of keys and
    values as sys.argv does when they are specified on the command line.
    *config_name* is the file name of the config file.
    """
    result = []
    config = configparser.ConfigParser()

    if not config.read([config_name]):
        return []

    for section in SECTIONS:
        for name, opts in ((n, o) for n, o in SECTIONS[section].items() if config.has_option(section, n)):
            result.extend(_as_argv(name, opts, config.get(section, name)))

    return result


def read_workload_file(file_name):
    """Read a plain key=value file into a dict; blank lines and # comments are skipped.

    Raises
    ------
    ConfigurationError
        For a line without '='.
    """
    values = {}
    with open(file_name) as f:
        for number, line in enumerate(f, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigurationError('%s:%d: expected key=value, got %r' % (file_name, number, line))
            key, value = line.split('=', 1)
            values[key.strip()] = value.strip()
    return values


def workload_file_to_list(file_name):
    """
    Convert a key=value workload file into sys.argv style entries. Keys are the
    command line names, with dashes or underscores; 'kind' is accepted for
    --workload.
    """
    if not file_name:
        return []
    if not os.path.exists(file_name):
        raise ConfigurationError('workload file %s does not exist' % file_name)
    options = {}
    for section in SECTIONS:
        if section != 'general':
            options.update(SECTIONS[section])
    result = []
    for key, value in read_workload_file(file_name).items():
        name = key.replace('_', '-')
        if name == 'kind':
            name = 'workload'
        if name not in options:
            raise ConfigurationError('%s: unknown key %r' % (file_name, key))
        result.extend(_as_argv(name, options[name], value))
    return result


class Params(object):
    def __init__(self, sections=()):
        self.sections = sections + ('general', )

    def add_parser_args(self, parser):
        for section in self.sections:
            for name in sorted(SECTIONS[section]):
                opts = SECTIONS[section][name]
                parser.add_argument('--{}'.format(name), **opts)

    def add_arguments(self, parser):
        self.add_parser_args(parser)
        return parser

    def get_defaults(self):
        parser = argparse.ArgumentParser()
        self.add_arguments(parser)

        return parser.parse_args('')


def write(config_file, args=None, sections=None):
    """
    Write *config_file* with values from *args* if they are specified,
    otherwise use the defaults. If *sections* are specified, write values from
    *args* only to those sections, use the defaults on the remaining ones.
    """
    config = configparser.ConfigParser()

    for section in SECTIONS:
        config.add_section(section)
        for name, opts in SECTIONS[section].items():
            if args and sections and section in sections and hasattr(args, name.replace('-', '_')):
                value = getattr(args, name.replace('-', '_'))

                if isinstance(value, list):
                    value = ', '.join(value)
            else:
                value = opts['default'] if opts['default'] is not None else ''

            prefix = '# ' if value == '' else ''

            if name != 'config':
                config.set(section, prefix + name, str(value))

    with open(config_file, 'w') as f:
        config.write(f)


def show_config(args):
    """Log all values set in the args namespace.

    Arguments are grouped according to their section and logged alphabetically.
    """
    args = args.__dict__

    log.warning('clonecc status start')
    for section, name in zip(SECTIONS, NICE_NAMES):
        entries = sorted((k for k in args.keys() if k.replace('_', '-') in SECTIONS[section]))
        if entries:
            log.info(name)
            for entry in entries:
                value = args[entry] if args[entry] is not None else "-"
                log.info("  {:<22} {}".format(entry, value))

    log.warning('clonecc status end')


def parse_int_list(value, field='value'):
    """'1,4,8' -> [1, 4, 8]; raises ConfigurationError naming *field*."""
    try:
        result = [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise ConfigurationError('%s: expected comma separated integers, got %r' % (field, value)) from None
    if not result:
        raise ConfigurationError('%s: empty list' % field)
    return result


def parse_name_list(value, choices, field='value'):
    result = [v.strip() for v in value.split(',') if v.strip()]
    unknown = [v for v in result if v not in choices]
    if unknown or not result:
        raise ConfigurationError('%s: %r not in %s' % (field, value, ', '.join(choices)))
    return result

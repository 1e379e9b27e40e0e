"""
Command line entry point.

    xai-downscale <command> --config run.yml [--output-dir DIR] [--seed N] [--verbose]

Exit codes: 0 success, 1 input error, 2 format error, 3 training or
attribution numeric error. Failures print one line
``error <category>: <message>`` on stderr.
"""

import argparse
import logging
import sys

from xai_downscale import __version__
from xai_downscale.errors import DownscaleError, InputError
from xai_downscale.run import COMMANDS, Run

log = logging.getLogger(__name__)


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        prog='xai-downscale',
        description='Deep-learning statistical downscaling with saliency diagnostics.',
    )
    parser.add_argument('command', choices=COMMANDS, help='workflow to run')
    parser.add_argument('--config', required=True, help='run-config file (YAML key-value text)')
    parser.add_argument('--output-dir', default=None, help='overrides output_dir of the run-config')
    parser.add_argument('--seed', type=int, default=None, help='overrides seed of the run-config')
    parser.add_argument('--verbose', action='store_true', help='log at DEBUG instead of INFO')
    parser.add_argument('--version', action='version', version='%(prog)s {}'.format(__version__))
    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    run = None
    try:
        run = Run(args.config, overrides={'output_dir': args.output_dir, 'seed': args.seed})
        artifacts = run.execute(args.command)
    except DownscaleError as e:
        if run is not None:
            run.cleanup()
        sys.stderr.write(e.one_line() + '\n')
        return e.exit_code
    except OSError as e:
        if run is not None:
            run.cleanup()
        error = InputError(str(e))
        sys.stderr.write(error.one_line() + '\n')
        return error.exit_code
    for line in run.logs:
        log.info(line)
    log.info('%s wrote %d artifact(s) to %s', args.command, len(artifacts), run.output_dir)
    return 0


if __name__ == '__main__':
    sys.exit(main())

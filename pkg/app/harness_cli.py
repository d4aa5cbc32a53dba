#  SPDX-License-Identifier: Apache-2.0
import argparse
import sys
from typing import List
from typing import Optional

import aria.ops.adapter_logging as logging
from aria.ops.timer import Timer

import constants
import experiments
from errors import CodecOverflowError
from errors import ConfigError
from errors import DatasetError
from errors import ProtocolAbortError
from experiment_config import ExperimentConfig
from experiment_config import load_config

logger = logging.getLogger(__name__)

COMMANDS = ("gen", "train-logreg", "attack-revmul", "train-sboost", "attack-revsum", "binmap", "alt-model", "sweep")

# protocol and attack implied by each sub-command
_COMMAND_DEFAULTS = {
    "train-logreg": ("logreg", "none"),
    "attack-revmul": ("logreg", "revmul"),
    "train-sboost": ("secureboost", "none"),
    "attack-revsum": ("secureboost", "revsum"),
    "binmap": ("secureboost", "revsum"),
    "alt-model": ("secureboost", "revsum"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=constants.TOOL_NAME,
                                     description="Vertical federated learning protocol and attack simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration file (INI, sections become dotted keys)")
    common.add_argument("--seed", type=int, help="root seed; overrides experiment.seed")
    common.add_argument("--out", help="output directory; overrides experiment.out")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key, e.g. protocol.epochs=10")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = commands.add_parser(name, parents=[common])
        if name == "attack-revmul":
            sub.add_argument("--transcript", help="saved logreg transcript (JSON lines) to attack")
            sub.add_argument("--coordinator-key", help="coordinator keypair JSON matching the transcript")
    return parser


def _command_config(command: str, config: ExperimentConfig, overrides: List[str]) -> ExperimentConfig:
    if command not in _COMMAND_DEFAULTS:
        return config
    protocol, attack = _COMMAND_DEFAULTS[command]
    explicit = {pair.partition("=")[0].strip() for pair in overrides}
    changes = {}
    if "experiment.protocol" not in explicit:
        changes["protocol"] = protocol
    if "experiment.attack" not in explicit:
        changes["attack"] = attack
    return config.replace(**changes) if changes else config


def run_command(argv: List[str]) -> int:
    """
    Parses the arguments and runs one sub-command.
    :return: process exit code
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse has already printed usage; --help exits 0
        return constants.EXIT_OK if e.code == 0 else constants.EXIT_CONFIG_ERROR
    try:
        config = load_config(args.config, args.overrides, seed=args.seed, out=args.out)
        config = _command_config(args.command, config, args.overrides)
        with Timer(logger, f"Command {args.command}"):
            if args.command == "gen":
                paths = experiments.generate(config)
            elif args.command == "train-logreg":
                paths = experiments.train_logreg_run(config)
            elif args.command == "attack-revmul":
                paths = experiments.attack_revmul_run(config, args.transcript, args.coordinator_key)
            elif args.command == "train-sboost":
                paths = experiments.train_sboost_run(config)
            elif args.command == "attack-revsum":
                paths = experiments.attack_revsum_run(config)
            elif args.command == "binmap":
                paths = experiments.binmap_run(config)
            elif args.command == "alt-model":
                paths = experiments.alt_model_run(config)
            else:
                if not config.sweep.family:
                    raise ConfigError("the sweep command needs sweep.family")
                paths = experiments.run_experiment(config)
        for name, path in sorted(paths.items()):
            logger.info(f"{name}: {path}")
        return constants.EXIT_OK
    except (ConfigError, DatasetError) as e:
        logger.error(f'Invalid configuration or dataset: {e}')
        return constants.EXIT_CONFIG_ERROR
    except (ProtocolAbortError, CodecOverflowError) as e:
        logger.error(f'Protocol aborted: {e}')
        return constants.EXIT_PROTOCOL_ABORT
    except Exception as e:
        logger.error(f'Exception occured while running command {args.command}. Exception Type: {type(e).__name__}')
        logger.exception(f'Exception Message: {e}')
        return constants.EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> None:
    logging.setup_logging(constants.LOG_FILE_NAME)
    # Start a new log file for every invocation; the last five are retained.
    logging.rotate()
    argv = sys.argv[1:] if argv is None else argv
    logger.info(f"Running {constants.TOOL_NAME} with arguments: {argv}")
    code = constants.EXIT_FAILURE
    try:
        code = run_command(argv)
    finally:
        logger.info(Timer.graph())
        sys.exit(code)


if __name__ == "__main__":
    main(sys.argv[1:])

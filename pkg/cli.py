"""
Command-line entry point of qnprec.

Loads config.json and .env, sets up logging, discovers the command groups in
commands/ and dispatches to the selected one. The exit status is the
command's exit code.
"""

import argparse
import importlib
import logging
import os
import platform
import sys
from typing import Dict, List, Optional

from dotenv import load_dotenv

from utils.config import DEFAULT_CONFIG_PATH, load_config

ROOT_DIR = os.path.realpath(os.path.dirname(__file__))


def load_app_config() -> Dict:
    if not os.path.isfile(DEFAULT_CONFIG_PATH):
        sys.exit("'config.json' not found! Please add it and try again.")
    return load_config(DEFAULT_CONFIG_PATH)


class LoggingFormatter(logging.Formatter):
    # Colors
    black = "\x1b[30m"
    red = "\x1b[31m"
    green = "\x1b[32m"
    yellow = "\x1b[33m"
    blue = "\x1b[34m"
    gray = "\x1b[38m"
    # Styles
    reset = "\x1b[0m"
    bold = "\x1b[1m"

    COLORS = {
        logging.DEBUG: gray + bold,
        logging.INFO: blue + bold,
        logging.WARNING: yellow + bold,
        logging.ERROR: red,
        logging.CRITICAL: red + bold,
    }

    def format(self, record):
        log_color = self.COLORS[record.levelno]
        format = "(black){asctime}(reset) (levelcolor){levelname:<8}(reset) (green){name}(reset) {message}"
        format = format.replace("(black)", self.black + self.bold)
        format = format.replace("(reset)", self.reset)
        format = format.replace("(levelcolor)", log_color)
        format = format.replace("(green)", self.green + self.bold)
        formatter = logging.Formatter(format, "%Y-%m-%d %H:%M:%S", style="{")
        return formatter.format(record)


logger = logging.getLogger("qnprec")


def setup_logging(section: Dict, level: Optional[str] = None) -> None:
    """
    Console and file handlers on the qnprec logger.

    :param section: The "logging" section of config.json.
    :param level: Level name overriding the section.
    """
    logger.setLevel((level or section.get("level", "INFO")).upper())
    logger.handlers.clear()

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(LoggingFormatter())
    file_handler = logging.FileHandler(filename=section.get("file", "qnprec.log"), encoding="utf-8", mode="w")
    file_handler_formatter = logging.Formatter(
        "[{asctime}] [{levelname:<8}] {name}: {message}", "%Y-%m-%d %H:%M:%S", style="{"
    )
    file_handler.setFormatter(file_handler_formatter)

    logger.addHandler(console_handler)
    logger.addHandler(file_handler)


class QNPrecApp:
    def __init__(self, config: Dict) -> None:
        """
        The config and logger are available to command groups as app.config and app.logger.
        """
        self.logger = logger
        self.config = config
        self.commands = {}
        self.parser = argparse.ArgumentParser(
            prog="qnprec",
            description="Inexact Newton and Newton-Grassmann solvers with quasi-Newton preconditioner updates",
        )
        self.parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
        self.subparsers = self.parser.add_subparsers(dest="command", required=True)

    def add_command(self, command) -> None:
        sub = self.subparsers.add_parser(command.name, help=command.description, description=command.description)
        command.add_arguments(sub)
        sub.set_defaults(handler=command.execute)
        self.commands[command.name] = command

    def load_commands(self) -> None:
        for file in sorted(os.listdir(f"{ROOT_DIR}/commands")):
            if file.endswith(".py") and not file.startswith("_"):
                extension = file[:-3]
                try:
                    module = importlib.import_module(f"commands.{extension}")
                    module.setup(self)
                    self.logger.debug(f"Loaded command group '{extension}'")
                except Exception as e:
                    exception = f"{type(e).__name__}: {e}"
                    self.logger.error(f"Failed to load command group {extension}\n{exception}")

    def run(self, argv: Optional[List[str]] = None) -> int:
        args = self.parser.parse_args(argv)
        if args.log_level:
            self.logger.setLevel(args.log_level.upper())
        self.logger.debug(f"Python version: {platform.python_version()}")
        self.logger.debug(f"Running on: {platform.system()} {platform.release()} ({os.name})")
        return args.handler(args)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    config = load_app_config()
    setup_logging(config.get("logging", {}))
    app = QNPrecApp(config)
    app.load_commands()
    return app.run(argv)


if __name__ == "__main__":
    sys.exit(main())

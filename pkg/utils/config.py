"""
Configuration loading for qnprec.

Defaults live in config.json next to the entry script; a user file may
override the "run" section and the environment supplies the output directory.
"""

import copy
import json
import os
from typing import Dict, Optional

from dotenv import load_dotenv

from utils.exceptions import ConfigError

ROOT_DIR = os.path.realpath(os.path.join(os.path.dirname(__file__), os.pardir))
DEFAULT_CONFIG_PATH = os.path.join(ROOT_DIR, "config.json")
OUTPUT_DIR_ENV = "QNPREC_OUTPUT_DIR"


def read_json_file(path: str) -> Dict:
    """
    Read a JSON object from disk.

    :param path: Path of the file.
    :return: The decoded object.
    :raises ConfigError: If the file is missing, malformed or not an object.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"Configuration file '{path}' not found")
    try:
        with open(path, encoding="utf-8") as file:
            data = json.load(file)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Configuration file '{path}' is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration file '{path}' must hold a key/value object")
    return data


def load_config(path: Optional[str] = None) -> Dict:
    """
    Load the default configuration.

    :param path: Alternative location of config.json.
    :return: The configuration dictionary.
    """
    return read_json_file(path or DEFAULT_CONFIG_PATH)


def merge_run_overrides(config: Dict, overrides: Dict) -> Dict:
    """
    Return a copy of config whose "run" section is updated by overrides.

    :param config: Base configuration.
    :param overrides: Flat key/value mapping of run-spec fields.
    """
    merged = copy.deepcopy(config)
    run_section = merged.setdefault("run", {})
    run_section.update({key: value for key, value in overrides.items() if value is not None})
    return merged


def default_output_dir() -> str:
    """
    Output directory from the environment (a .env file is honoured).
    """
    load_dotenv()
    return os.getenv(OUTPUT_DIR_ENV, "runs")

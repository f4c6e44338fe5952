import importlib
import json
import os
import sys
from pathlib import Path
from typing import Optional

import click
from dotenv import load_dotenv

from config import CliConfig
from errors import EXIT_VALIDATION, LabError, ParameterError, exit_code_for
from logger import LEVELS, get_logger, level_from_env, log_debug, log_error, log_info, log_warning, set_log_level
from utils import config_hash, ensure_dir, read_json

# Load environment variables
load_dotenv()

# List of subcommand modules
COMMANDS = [
    "commands.synth_data",
    "commands.render",
    "commands.augment",
    "commands.grad_check",
    "commands.train",
    "commands.eval",
    "commands.snr_report",
    "commands.inspect_checkpoint",
    "commands.ablate",
]

SEED = click.IntRange(0, 2**64 - 1)

logger = get_logger("ecglab.cli")


class Lab:
    """Resolved run context handed to every subcommand."""

    def __init__(self, config: CliConfig, out: Optional[str], workers: int):
        self.config = config
        self.config_hash = config_hash(config)
        self.out_flag = out
        self.workers = workers

    @property
    def out(self) -> Path:
        return Path(self.out_flag or self.config.paths.out)

    def out_dir(self) -> Path:
        return ensure_dir(self.out)

    def hash_with(self, **sections) -> str:
        """Config hash after command-line overrides of whole sections."""
        return config_hash(self.config.updated(**sections)) if sections else self.config_hash

    def emit(self, payload):
        """Machine-readable result on stdout."""
        click.echo(json.dumps(payload, indent=2, sort_keys=True, default=str))

    def say(self, message: str):
        """Human summary on stderr."""
        click.echo(message, err=True)


def load_config(path: Optional[str], seed: Optional[int]) -> CliConfig:
    if path is None:
        config = CliConfig()
    else:
        try:
            data = read_json(path)
        except json.JSONDecodeError as e:
            raise ParameterError(f"config {path} is not valid JSON: {e}") from e
        config = CliConfig.model_validate(data)
    if seed is not None:
        config = CliConfig.model_validate(with_seed(config.model_dump(mode="json"), seed))
    return config


def with_seed(data: dict, seed: int) -> dict:
    """Apply ``seed`` to the run and to every section that carries one."""
    data = dict(data, seed=seed)
    for section in ("synth", "render", "augment", "model", "train"):
        data[section] = dict(data[section], seed=seed)
    for section in ("render", "augment"):
        data["train"][section] = dict(data["train"][section], seed=seed)
    return data


class LabGroup(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (LabError, OSError) as e:
            code = exit_code_for(e)
            log_error(f"{type(e).__name__}: {e}", error=type(e).__name__, exit_code=code)
            click.echo(f"error: {e}", err=True)
            ctx.exit(code)


@click.group(cls=LabGroup)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config file (CliConfig).")
@click.option("--seed", type=SEED, default=None, help="Seed applied to the run and every config section.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory (default: paths.out).")
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True, help="Render fan-out workers.")
@click.pass_context
def cli(ctx, config_path, seed, out, workers):
    """ECG image representation lab."""
    set_log_level(level_from_env())
    requested = os.getenv("ECGLAB_LOG")
    if requested and requested.strip().lower() not in LEVELS:
        log_warning(f"Unknown ECGLAB_LOG value '{requested}', using info")
    config = load_config(config_path, seed)
    ctx.obj = Lab(config, out, workers)
    log_info("config resolved", config_hash=ctx.obj.config_hash, command=ctx.invoked_subcommand)


def load_modules(group: click.Group = cli, modules=None):
    for name in COMMANDS if modules is None else modules:
        try:
            log_debug(f"Attempting to load command module: {name}")
            importlib.import_module(name).prepare(group)
        except Exception as e:
            log_error(f"Failed to load command module {name}: {e}")
            raise


load_modules()


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="ecglab", standalone_mode=True)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_VALIDATION
    return 0


if __name__ == "__main__":
    sys.exit(main())

from pathlib import Path

import click

from lab.dataset import load_dataset
from lab.train import train as run_training
from logger import log_info


def dataset_option(func):
    return click.option(
        "--dataset", type=click.Path(), default=None, help="Dataset directory or manifest (default: paths.dataset)."
    )(func)


@click.command(name="train")
@dataset_option
@click.option("--steps", type=click.IntRange(min=1), default=None, help="Override train.total_steps.")
@click.option("--progress/--no-progress", default=False, show_default=True, help="Show a tqdm bar on stderr.")
@click.pass_obj
def train_command(lab, dataset, steps, progress):
    """Two-stage training; keeps the lowest-validation-loss checkpoint."""
    config = lab.config
    train_config = config.train if steps is None else config.train.updated(total_steps=steps)
    data = load_dataset(dataset or config.paths.dataset)
    run_dir = lab.out_dir()
    digest = lab.hash_with(train=train_config)
    result = run_training(
        train_config, config.model, data, run_dir, workers=lab.workers, digest=digest, progress=progress
    )
    best = result.checkpoint
    log_info("train finished", best_step=best.step, best_val_loss=best.val_loss, run_dir=str(run_dir))
    lab.emit(
        {
            "checkpoint": str(result.checkpoint_path),
            "loss_log": str(result.log_path),
            "best_step": best.step,
            "best_val_loss": best.val_loss,
            "config_hash": best.config_hash,
            "steps": train_config.total_steps,
        }
    )
    lab.say(f"best checkpoint at step {best.step} (val loss {best.val_loss:.4f}) -> {Path(result.checkpoint_path)}")


def prepare(cli):
    cli.add_command(train_command)

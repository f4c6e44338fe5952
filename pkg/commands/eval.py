from pathlib import Path

import click

from errors import LifecycleError, ParameterError
from lab import evaluate
from lab.checkpoint import load_checkpoint
from lab.dataset import load_dataset
from lab.models import Teachers
from lab.report import Vocabulary
from lab.train import TEACHERS_FILE

from commands.train import dataset_option


def load_teachers(checkpoint_path: Path, model) -> Teachers:
    path = checkpoint_path.parent / TEACHERS_FILE
    if not path.exists():
        raise LifecycleError(f"zero-shot needs the stage-0 teachers at {path}")
    teachers = Teachers(model, Vocabulary(model.vocab))
    teachers.graph.load_state_dict(load_checkpoint(path).params)
    teachers.freeze()
    return teachers


@click.command(name="eval")
@click.option("--mode", type=click.Choice(["linear-probe", "zero-shot"]), required=True, help="Evaluation to run.")
@click.option(
    "--checkpoint", type=click.Path(dir_okay=False), default=None, help="Checkpoint (default: paths.checkpoint)."
)
@click.option("--fraction", type=float, default=1.0, show_default=True, help="Linear-probe training fraction.")
@click.option("--shuffle-labels", is_flag=True, help="Linear probe on permuted labels (null baseline).")
@dataset_option
@click.pass_obj
def eval_command(lab, mode, checkpoint, fraction, shuffle_labels, dataset):
    """Linear-probe or zero-shot macro AUC on the held-out test split."""
    config = lab.config
    checkpoint = checkpoint or config.paths.checkpoint
    if not checkpoint:
        raise ParameterError("checkpoint required: pass --checkpoint or set paths.checkpoint")
    checkpoint = Path(checkpoint)
    student = evaluate.load_student(load_checkpoint(checkpoint), config.model, config.train.render, config.train.loss)
    data = load_dataset(dataset or config.paths.dataset)
    result = {"mode": mode, "checkpoint": str(checkpoint), "n_test": len(data.test)}
    if mode == "linear-probe":
        result["fraction"] = fraction
        result["macro_auc"] = evaluate.linear_probe(
            student,
            data,
            fraction,
            config.train,
            n_classes=config.synth.class_rule.n_classes,
            workers=lab.workers,
            shuffle_labels=shuffle_labels,
        )
    else:
        teachers = load_teachers(checkpoint, config.model)
        result["macro_auc"] = evaluate.zero_shot(student, teachers, data.test, workers=lab.workers)
    lab.emit(result)
    lab.say(f"{mode}: macro AUC {result['macro_auc']:.4f} on {len(data.test)} test samples")


def prepare(cli):
    cli.add_command(eval_command)

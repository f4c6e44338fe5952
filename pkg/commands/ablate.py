import click

from lab.dataset import load_dataset
from lab.evaluate import ABLATIONS, run_ablation

from commands.train import dataset_option


@click.command(name="ablate")
@click.option("--variants", default=",".join(ABLATIONS), show_default=True, help="Comma-separated loss ablations.")
@click.option("--steps", type=click.IntRange(min=1), default=None, help="Override train.total_steps.")
@dataset_option
@click.pass_obj
def ablate(lab, variants, steps, dataset):
    """Train loss-ablation variants on matched seeds and compare them."""
    config = lab.config
    names = [v.strip() for v in variants.split(",") if v.strip()]
    train_config = config.train if steps is None else config.train.updated(total_steps=steps)
    data = load_dataset(dataset or config.paths.dataset)
    frame = run_ablation(train_config, config.model, data, names, lab.out_dir(), workers=lab.workers)
    rows = frame.to_dict(orient="records")
    result = {"variants": rows}
    rms = dict(zip(frame["variant"], frame["einthoven_rms"]))
    if "full" in rms and "no_rule" in rms:
        result["rule_direction_holds"] = bool(rms["no_rule"] >= rms["full"])
    lab.emit(result)
    lab.say(frame.to_string(index=False))


def prepare(cli):
    cli.add_command(ablate)

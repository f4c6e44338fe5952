import click

from lab.checkpoint import describe


@click.command(name="inspect-checkpoint")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def inspect_checkpoint(lab, path):
    """Print the header, metadata and entry table of an ECSK checkpoint."""
    summary = describe(path)
    lab.emit(summary)
    lab.say(f"{path}: {len(summary['entries'])} entries, {summary['n_parameters']} values, step {summary['step']}")


def prepare(cli):
    cli.add_command(inspect_checkpoint)

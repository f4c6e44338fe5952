from pathlib import Path

import click

from lab.augment import augment
from lab.render import load_image, save_image, sidecar_path


@click.command(name="augment")
@click.argument("png", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--output", type=click.Path(dir_okay=False), default=None, help="Output PNG (default: OUT/<name>-aug.png)."
)
@click.pass_obj
def augment_command(lab, png, output):
    """Apply the seeded printout augmentations to a rendered PNG."""
    image = load_image(png)
    augmented = augment(image, lab.config.augment)
    path = Path(output) if output else lab.out_dir() / f"{Path(png).stem}-aug.png"
    save_image(augmented, path)
    applied = augmented.meta["augmentations"][-1]["applied"]
    lab.emit({"png": str(path), "sidecar": str(sidecar_path(path)), "applied": applied})
    lab.say(f"augmented {png} -> {path} ({', '.join(a['name'] for a in applied) or 'identity'})")


def prepare(cli):
    cli.add_command(augment_command)

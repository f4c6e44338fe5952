from pathlib import Path

import click

from lab.render import render, save_image, sidecar_path
from lab.signal_core import load_record


@click.command(name="render")
@click.argument("record", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--png", "png_path", type=click.Path(dir_okay=False), default=None, help="Output PNG (default: OUT/<record>.png)."
)
@click.option("--fs", type=float, default=500.0, show_default=True, help="Sample rate for CSV records.")
@click.pass_obj
def render_command(lab, record, png_path, fs):
    """Render a saved record to a calibrated printout PNG plus sidecar JSON."""
    ecg = load_record(record, fs=fs)
    image = render(ecg, lab.config.render)
    path = Path(png_path) if png_path else lab.out_dir() / f"{Path(record).stem}.png"
    save_image(image, path)
    lab.emit(
        {
            "png": str(path),
            "sidecar": str(sidecar_path(path)),
            "width": image.width,
            "height": image.height,
            "config_hash": image.meta["config_hash"],
        }
    )
    lab.say(f"rendered {record} -> {path} ({image.width}x{image.height})")


def prepare(cli):
    cli.add_command(render_command)

import click

from errors import EXIT_DIVERGENCE
from lab.checks import run_gradient_suite


@click.command(name="grad-check")
@click.option("--seeds", type=click.IntRange(min=1), default=10, show_default=True, help="Random instances per check.")
@click.option("--no-end-to-end", is_flag=True, help="Skip the image-encoder end-to-end spot check.")
@click.pass_context
def grad_check(ctx, seeds, no_end_to_end):
    """Finite-difference check of every autodiff primitive and loss."""
    lab = ctx.obj
    rows = run_gradient_suite(range(seeds), end_to_end=not no_end_to_end)
    failed = [r["name"] for r in rows if not r["passed"]]
    lab.emit({"checks": rows, "passed": not failed})
    summary = f"{len(rows) - len(failed)}/{len(rows)} gradient checks passed"
    lab.say(summary + (f"; failed: {', '.join(failed)}" if failed else ""))
    if failed:
        ctx.exit(EXIT_DIVERGENCE)


def prepare(cli):
    cli.add_command(grad_check)

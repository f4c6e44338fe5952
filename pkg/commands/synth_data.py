from pathlib import Path

import click

from lab.dataset import MANIFEST_NAME, build_dataset
from lab.signal_core import save_record, synth_ecg
from logger import log_info


@click.command(name="synth-data")
@click.option("--n", "n", type=click.IntRange(min=1), default=None, help="Train+val count (default: train.n_samples).")
@click.option("--n-test", type=click.IntRange(min=0), default=None, help="Held-out test count (default: n // 5).")
@click.option(
    "--record", type=click.Path(dir_okay=False), default=None, help="Write one record from the synth section instead."
)
@click.option("--heart-rate", type=float, default=None, help="Heart rate override for --record.")
@click.pass_obj
def synth_data(lab, n, n_test, record, heart_rate):
    """Synthesize labelled 12-lead records and the dataset manifest."""
    config = lab.config
    if record is not None:
        params = config.synth if heart_rate is None else config.synth.updated(heart_rate=heart_rate)
        sample = synth_ecg(params)
        path = save_record(sample.record, record)
        lab.emit({"record": str(path), "label": sample.label, "report": sample.report.raw, "fs": sample.record.fs})
        lab.say(f"wrote {path} ({sample.report.raw})")
        return

    train = config.train
    out = Path(lab.out_flag or config.paths.dataset)
    if n_test is None and n is None:
        n_test = train.test_count
    dataset = build_dataset(
        n or train.n_samples,
        train.seed,
        train.class_mix,
        out,
        fs=train.fs,
        duration=train.duration,
        val_fraction=train.val_fraction,
        n_test=n_test,
        synth=config.synth,
    )
    counts = dataset.counts()
    log_info("synth-data finished", counts=counts, out=str(out))
    lab.emit({"manifest": str(out / MANIFEST_NAME), "counts": counts, "seed": train.seed})
    lab.say(f"dataset at {out}: " + ", ".join(f"{k}={v}" for k, v in counts.items()))


def prepare(cli):
    cli.add_command(synth_data)

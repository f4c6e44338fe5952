from pathlib import Path

import click

from errors import DataError
from lab.dataset import load_dataset
from lab.lead_rules import snr_audit, write_snr_report
from lab.signal_core import load_record


@click.command(name="snr-report")
@click.argument("records", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", type=click.Path(), default=None, help="Audit every record of a dataset instead.")
@click.option("--fs", type=float, default=500.0, show_default=True, help="Sample rate for CSV records.")
@click.option("--report", type=click.Path(dir_okay=False), default=None, help="CSV path (default: OUT/snr_report.csv).")
@click.pass_obj
def snr_report(lab, records, dataset, fs, report):
    """Per derived limb lead: SNR of the recorded lead against its value derived from I and II."""
    if dataset:
        data = load_dataset(dataset)
        loaded = [s.record for split in data.splits.values() for s in split]
    else:
        loaded = [load_record(path, fs=fs) for path in records]
    if not loaded:
        raise DataError("snr-report needs record paths or --dataset")
    frame = snr_audit(loaded)
    path = write_snr_report(frame, Path(report) if report else lab.out_dir() / "snr_report.csv")
    lab.emit({"report": str(path), "rows": frame.to_dict(orient="records")})
    lab.say(frame.to_string(index=False))


def prepare(cli):
    cli.add_command(snr_report)

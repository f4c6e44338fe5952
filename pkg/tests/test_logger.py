import json
import logging

import pytest

from logger import CustomJsonFormatter, get_logger, level_from_env


def format_record(level, **extra):
    record = logging.LogRecord("ecglab.test", level, __file__, 10, "hello %s", ("world",), None)
    record.__dict__.update(extra)
    return json.loads(CustomJsonFormatter().format(record))


def test_info_record_carries_extras():
    row = format_record(logging.INFO, step=3, part="mse")
    assert row["message"] == "hello world"
    assert row["level"] == "INFO"
    assert (row["step"], row["part"]) == (3, "mse")
    assert "line" not in row


def test_warning_record_carries_location():
    row = format_record(logging.WARNING)
    assert row["line"] == 10


@pytest.mark.parametrize("value, level", [("quiet", logging.WARNING), ("DEBUG", logging.DEBUG), ("loud", logging.INFO)])
def test_level_from_env(monkeypatch, value, level):
    monkeypatch.setenv("ECGLAB_LOG", value)
    assert level_from_env() == level


def test_named_loggers_live_under_ecglab():
    assert get_logger("train").name == "ecglab.train"
    assert get_logger("ecglab.render").name == "ecglab.render"

import logging
import os
import sys
import json
from datetime import datetime, timezone
from logging.handlers import TimedRotatingFileHandler

from dotenv import load_dotenv

load_dotenv()

LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

# attributes every LogRecord carries; anything else came in through extra=
_RESERVED = set(vars(logging.makeLogRecord({}))) | {"message", "asctime"}


class CustomJsonFormatter(logging.Formatter):
    def format(self, record):
        log_record = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.levelno >= logging.WARNING:
            log_record.update(
                {
                    "module": record.module,
                    "function": record.funcName,
                    "line": record.lineno,
                }
            )
        for key, value in vars(record).items():
            if key not in _RESERVED and not key.startswith("_"):
                log_record[key] = value
        if record.exc_info:
            log_record["exception"] = self.formatException(record.exc_info)
        return json.dumps(log_record, default=str)


def level_from_env(default="info"):
    name = os.getenv("ECGLAB_LOG", default).strip().lower()
    return LEVELS.get(name, LEVELS[default])


def setup_logger(name, log_file=None, level=logging.INFO):
    logger = logging.getLogger(name)

    # Clear any existing handlers to prevent duplicate logging
    if logger.hasHandlers():
        logger.handlers.clear()

    logger.setLevel(level)

    # stdout carries command results, so logs go to stderr
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(CustomJsonFormatter())
    logger.addHandler(console_handler)

    if log_file:
        file_handler = TimedRotatingFileHandler(log_file, when="midnight", interval=1, backupCount=7, encoding="utf-8")
        file_handler.setFormatter(CustomJsonFormatter())
        logger.addHandler(file_handler)

    logger.propagate = False

    return logger


logger = setup_logger("ecglab", level=level_from_env())


def log_error(error_message, exc_info=False, **kwargs):
    """Utility function to log errors."""
    logger.error(error_message, exc_info=exc_info, extra=kwargs)


def log_info(message, **kwargs):
    """Utility function to log info messages."""
    logger.info(message, extra=kwargs)


def log_warning(message, **kwargs):
    """Utility function to log warning messages."""
    logger.warning(message, extra=kwargs)


def log_debug(message, **kwargs):
    """Utility function to log debug messages."""
    logger.debug(message, extra=kwargs)


def get_logger(name):
    """Get a named logger under the ecglab hierarchy."""
    if name != "ecglab" and not name.startswith("ecglab."):
        name = f"ecglab.{name}"
    return logging.getLogger(name)


def set_log_level(level):
    if isinstance(level, str):
        level = LEVELS.get(level.lower(), logging.INFO)
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)
    log_debug(f"Log level changed to {logging.getLevelName(level)}")

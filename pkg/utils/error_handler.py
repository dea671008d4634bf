import sys
import traceback
from typing import Optional

from logger import logger


def report_error(title: str, message: str, details: Optional[str] = None):
    """Reports an error to the operator on stderr and in the log."""
    logger.error(f"{title} - {message}")
    if details:
        logger.debug(f"DETAILS: {details}")

    try:
        sys.stderr.write(f"{title}: {message}\n")
        if details:
            sys.stderr.write(f"{details}\n")
    except Exception as e:
        # stderr may already be closed during interpreter shutdown
        logger.critical(f"Failed to report error: {e}")


def global_exception_handler(exctype, value, tb):
    """
    Global unhandled exception handler that logs unhandled exceptions before
    handing them to the default hook.
    """
    if issubclass(exctype, KeyboardInterrupt):
        sys.__excepthook__(exctype, value, tb)
        return

    error_details = ''.join(traceback.format_exception(exctype, value, tb))
    logger.critical(f"Unhandled exception: {str(value)}\n{error_details}")

    sys.__excepthook__(exctype, value, tb)


def install():
    """Install the global exception handler."""
    sys.excepthook = global_exception_handler

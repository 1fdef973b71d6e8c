"""
Logging setup for command-line runs
"""
import logging
import sys

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
HANDLER_NAME = "aalbert-cli"


def configure_logging(verbose: bool = False) -> logging.Handler:
    """
    Install the stderr handler on the root logger, replacing one from an earlier call.

    Args:
        verbose (bool): Emit DEBUG records as well

    Returns:
        logging.Handler: The installed handler
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        if handler.get_name() == HANDLER_NAME:
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.set_name(HANDLER_NAME)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    return handler

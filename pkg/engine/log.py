"""Helper to set up logging

Use log.debug() instead of print()
----------------------------------
    log.debug("Run %s", Path(__file__).name)

print() is for command summaries only (see engine/report.py). Anything a user does not ask to
read goes through the logger.


Setup to log in __main__
------------------------
Top of file:
    from engine.log import setup_logging

In __main__:
    log = setup_logging()
    log.debug("Run %s", Path(__file__).name)

The CLI calls setup_logging() a second time once it knows the --log-level. That is fine: the
console handler is replaced, not duplicated.

Setup to log in modules (lib code)
----------------------------------
At top of lib code module:
    import logging
    log = logging.getLogger(__name__)

Do not configure handlers in lib code. The sim, the skills and the runner only ever call
log.debug()/log.info()/log.warning().

>>> logger = setup_logging("WARNING")
>>> [type(h).__name__ for h in logger.handlers if getattr(h, "name", "") == HANDLER_NAME]
['StreamHandler']
>>> logger = setup_logging("DEBUG")
>>> len([h for h in logger.handlers if getattr(h, "name", "") == HANDLER_NAME])
1
"""
import logging

HANDLER_NAME = "tote-console"
LOG_FORMAT = "%(filename)s:%(lineno)d %(funcName)s -- %(message)s"


def setup_logging(loglevel: str = "INFO") -> logging.Logger:
    """Return the root logger with one console handler at 'loglevel'. See module docstring."""
    _logger = logging.getLogger()
    _logger.setLevel(logging.DEBUG)
    for handler in list(_logger.handlers):
        if handler.name == HANDLER_NAME:
            _logger.removeHandler(handler)
    formatter = logging.Formatter(LOG_FORMAT)
    console_handler = logging.StreamHandler()
    console_handler.set_name(HANDLER_NAME)
    console_handler.setLevel(loglevel.upper())
    console_handler.setFormatter(formatter)
    _logger.addHandler(console_handler)
    return _logger

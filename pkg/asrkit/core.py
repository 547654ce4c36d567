from __future__ import annotations

import sys
from typing import Optional
from typing import TextIO
from typing import TypedDict

from django.conf import settings


class LogAction(TypedDict):
    act: str
    mod: Optional[str]
    msg: str


class BaseJob:
    """
    Base for the pipeline objects. Subclasses do their work in __call__ and report
    what they did through add_log.

    >>> job = BaseJob(logging_enabled=True)
    >>> job.add_log(mod="scorer", act="align", msg="12 segments")
    >>> job.log
    [{'act': 'align', 'mod': 'scorer', 'msg': '12 segments'}]

    >>> job = BaseJob(logging_enabled=False)
    >>> job.add_log(mod=None, act="noop", msg="")
    >>> job.log
    []
    """

    log: list[LogAction]
    logging_enabled: bool
    print_log: bool
    log_stream: TextIO

    def __init__(self, *, logging_enabled: Optional[bool] = None):
        self.log = []
        if logging_enabled is None:
            logging_enabled = getattr(settings, "DEBUG", False)
        self.logging_enabled = logging_enabled
        self.print_log = False
        self.log_stream = sys.stderr

    def add_log(self, *, mod: Optional[str], act: str, msg: str):
        if mod is not None and not isinstance(mod, str):  # pragma: no coverage
            raise TypeError(f"{mod} must be a string or None")
        if self.logging_enabled:
            self.log.append(LogAction(act=act, mod=mod, msg=msg))
        if self.print_log:
            self.log_stream.write(format_log_line(mod, act, msg) + "\n")

    def __call__(self):  # pragma: no coverage
        raise NotImplementedError


def format_log_line(mod: Optional[str], act: str, msg: str) -> str:
    """
    >>> format_log_line(None, "sort", "done").split()
    ['GLOBAL', 'sort', 'done']
    """
    if not mod:
        mod = "GLOBAL"
    return f"{mod.ljust(40)} {act.ljust(30)} {msg}"

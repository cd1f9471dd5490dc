"""Logging set-up and the JSON-lines results logger."""

import json
import logging
import time
from pathlib import Path
from typing import Any, Dict, Optional, Union

LOG_FORMAT = "%(asctime)s:%(levelname)s:%(filename)s - %(message)s"
DETERMINISTIC_FORMAT = "%(levelname)s:%(filename)s - %(message)s"

logger = logging.getLogger(__name__)


def init_logs(
    log_file: Optional[Union[str, Path]] = None,
    level: int = logging.INFO,
    deterministic: bool = False,
) -> None:
    """Set up logging for a command.

    Parameters
    ----------
    log_file : str or Path, optional
        File to write log records to. Logs go to stderr when not given.
    level : int
        Root logging level.
    deterministic : bool
        Drop timestamps so that reruns produce identical logs.
    """
    fmt = DETERMINISTIC_FORMAT if deterministic else LOG_FORMAT
    kwargs: Dict[str, Any] = {"format": fmt, "level": level, "force": True}
    if log_file is not None:
        kwargs["filename"] = str(log_file)
        kwargs["filemode"] = "w"
    logging.basicConfig(**kwargs)
    logger.debug("Logging initialised (deterministic=%s).", deterministic)


class ResultsLogger:
    """Write one JSON record per line to a results file.

    Parameters
    ----------
    path : str or Path
        The file to write to. It is truncated on creation.
    deterministic : bool
        When False every record gets a ``time`` field.
    name : str
        Name of the underlying :class:`logging.Logger`.
    """

    def __init__(
        self,
        path: Union[str, Path],
        deterministic: bool = False,
        name: str = "results",
    ) -> None:
        self.path = Path(path)
        self.deterministic = deterministic
        self._logger = logging.Logger(name=f"{name}:{self.path}", level=logging.INFO)
        self._handler = logging.FileHandler(filename=str(self.path), mode="w")
        self._handler.setFormatter(logging.Formatter("%(message)s"))
        self._logger.addHandler(self._handler)

    def record(self, **fields: Any) -> None:
        """Append a record."""
        if not self.deterministic:
            fields["time"] = time.time()
        self._logger.info(json.dumps(fields, sort_keys=True))

    def close(self) -> None:
        """Flush and release the file handle."""
        self._handler.close()
        self._logger.removeHandler(self._handler)

    def __enter__(self) -> "ResultsLogger":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def read_json_lines(path: Union[str, Path]) -> list:
    """Read back a JSON-lines file written by :class:`ResultsLogger`."""
    with open(path) as file:
        return [json.loads(line) for line in file if line.strip()]

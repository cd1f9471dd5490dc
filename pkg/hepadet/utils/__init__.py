"""Init utils modules"""

from .logs import ResultsLogger, init_logs, read_json_lines

__all__ = ["ResultsLogger", "init_logs", "read_json_lines"]

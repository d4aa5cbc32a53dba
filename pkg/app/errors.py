#  SPDX-License-Identifier: Apache-2.0
from typing import Optional


class SimulatorError(Exception):
    pass


class ConfigError(SimulatorError):
    pass


class DatasetError(SimulatorError):
    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        """
        :param message: what is wrong with the input
        :param row: 1-based data row of the offending cell, when known
        :param column: column name of the offending cell, when known
        """
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.row = row
        self.column = column


class CodecOverflowError(SimulatorError):
    pass


class KeyMismatchError(SimulatorError):
    pass


class PlanError(SimulatorError):
    pass


class CorruptionRequiredError(SimulatorError):
    pass


class ProtocolAbortError(SimulatorError):
    def __init__(self, step: str, cause: Exception):
        super().__init__(f"protocol aborted at step '{step}': {cause}")
        self.step = step
        self.cause = cause

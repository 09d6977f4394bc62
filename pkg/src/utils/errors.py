"""
Exception hierarchy for Gametodyn.

Config problems map to CLI exit code 2, numerical failures to exit code 3.
"""


class GametodynError(Exception):
    """Base class for all Gametodyn errors."""

    exit_code = 1
    kind = "error"


class ConfigError(GametodynError, ValueError):
    """Invalid parameters, flags, config files or units."""

    exit_code = 2
    kind = "config"


class DataFormatError(ConfigError):
    """Malformed input data file."""

    kind = "data"

    def __init__(self, message: str, path=None, line=None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class NumericalError(GametodynError, ArithmeticError):
    """Non-finite state, CFL violation or an ill-posed regression."""

    exit_code = 3
    kind = "numerical"

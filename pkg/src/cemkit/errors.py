"""Exception hierarchy shared by every cemkit module."""


class CEMError(Exception):
    """Base class for user-facing errors.

    ``code`` is a short stable identifier (e.g. ``"trail overlap"``) that
    tests and the CLI can match on without parsing the message.
    """

    code = "error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class TopologyError(CEMError, ValueError):
    code = "invalid topology"


class EquilibriumError(CEMError, ArithmeticError):
    code = "equilibrium failure"


class ModelError(CEMError, ValueError):
    code = "schema violation"


class ParameterError(CEMError, ValueError):
    code = "parameter error"

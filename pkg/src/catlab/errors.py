"""Exception types shared across the package."""


class CatlabError(Exception):
    """Base class for all package errors."""


class ParseError(CatlabError):
    """Malformed input file; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class IntegrityError(CatlabError):
    """Inconsistent corpus index tables."""


class ConfigError(CatlabError):
    """Invalid configuration value or key."""


class ContractError(CatlabError):
    """An operation was called outside its documented preconditions."""


class NoCandidateError(CatlabError):
    """Question selection requested with no allowed candidate."""


class TrainingError(CatlabError):
    """Training diverged or produced non-finite values."""

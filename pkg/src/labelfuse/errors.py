class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class FormatError(ValueError):
    """Raised when an on-disk artifact is malformed.

    ``offset`` is the byte offset (or line number for text formats) where the
    problem was detected, when known.
    """

    def __init__(self, message, path=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = f"{': '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.path = path
        self.offset = offset


class ConfigError(ValueError):
    """Raised for malformed or out-of-bounds configuration values."""

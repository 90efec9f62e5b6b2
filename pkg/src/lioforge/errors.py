"""Exceptions shared across estimators."""


class DegenerateError(RuntimeError):
    """The problem does not constrain every state direction.

    ``directions`` lists human-readable names of the poorly constrained
    directions when the caller can identify them.
    """

    def __init__(self, message: str, directions=()):
        super().__init__(message)
        self.directions = list(directions)

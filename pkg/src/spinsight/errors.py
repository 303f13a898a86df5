"""Shared exception hierarchy.

DataError covers malformed or missing inputs (CLI exit code 3);
NumericalError covers failed numerical procedures (CLI exit code 4).
"""


class SpinsightError(Exception):
    pass


class DataError(SpinsightError):
    pass


class NumericalError(SpinsightError):
    pass

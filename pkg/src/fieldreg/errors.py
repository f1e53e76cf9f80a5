"""Exception hierarchy.

``InputError`` subclasses describe bad files or arguments (CLI exit code 1);
``NumericalError`` subclasses describe geometry that cannot be solved
(CLI exit code 2).
"""


class FieldRegError(Exception):
    pass


class InputError(FieldRegError, ValueError):
    pass


class TemplateError(InputError):
    pass


class FileFormatError(InputError):
    pass


class NumericalError(FieldRegError, ArithmeticError):
    pass


class DegenerateConfigurationError(NumericalError):
    pass


class InsufficientCorrespondencesError(NumericalError):
    pass


class RansacFailure(NumericalError):
    pass


class FocalUnobservableError(NumericalError):
    pass


class InconsistentHomographyError(NumericalError):
    pass


class DecompositionError(NumericalError):
    pass


class ZeroDepthError(NumericalError):
    pass

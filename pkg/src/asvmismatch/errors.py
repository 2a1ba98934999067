"""Exception hierarchy.

The CLI maps ``InputError`` (and ``OSError``) to exit code 2 and
``StatisticalError`` to exit code 1.
"""


class AnalysisError(Exception):
    pass


class InputError(AnalysisError, ValueError):
    """Bad file, bad configuration, or invalid user selection."""


class CatalogError(InputError):
    pass


class IngestError(InputError):
    pass


class DesignError(InputError):
    pass


class StatisticalError(AnalysisError):
    """The data are valid but the model cannot be estimated."""


class CollinearityError(StatisticalError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(
            "singular normal equations; collinear predictor(s): "
            + ", ".join(self.columns)
        )


class NotNestedError(InputError):
    pass

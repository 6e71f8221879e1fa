from django.core.exceptions import ImproperlyConfigured


class ParameterError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class NumericalDomainError(ArithmeticError):
    pass


class UndefinedStatisticError(ArithmeticError):
    pass


class ConfigurationError(Exception):
    pass


class TrainingDivergedError(Exception):
    def __init__(self, message: str, *, step: int):
        self.step = step
        super().__init__(message)


class ImproperlyConfiguredExperiment(ImproperlyConfigured):
    def __init__(self, errors):
        # `errors` is a list of "path.to.field: message" strings
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))

class EsgRiskError(Exception):
    """Base class for every error raised by esgrisk."""

    exit_code = 1

    def to_dict(self) -> dict:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "exit_code": self.exit_code,
        }


class InputError(EsgRiskError, ValueError):
    """Invalid user input: parameters, domains, matrices, files."""

    exit_code = 2


class ConfigError(InputError):
    pass


class SchemaError(InputError):
    """CSV schema violation, located by row and column where known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column

    def to_dict(self) -> dict:
        payload = super().to_dict()
        payload["row"] = self.row
        payload["column"] = self.column
        return payload


class UnsupportedError(InputError):
    pass


class ModelError(EsgRiskError, ArithmeticError):
    """The numerical model cannot produce a meaningful answer."""

    exit_code = 3


class DegenerateError(ModelError):
    pass


class CalibrationError(ModelError):
    pass


class OptimizationError(ModelError):
    pass

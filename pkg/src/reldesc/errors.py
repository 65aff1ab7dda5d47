class ReldescError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ReldescError, ValueError):
    pass


class ContractError(ReldescError, ValueError):
    pass


class InputError(ReldescError, ValueError):
    pass


class SchemaError(ReldescError, ValueError):
    """Schema problems. ``violations`` lists every problem found, not just the first."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DatasetError(ReldescError, ValueError):
    """Dataset parse/validation problems, each message carrying its line number."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        head = self.violations[:5]
        more = len(self.violations) - len(head)
        msg = "; ".join(head) + (f" (+{more} more)" if more > 0 else "")
        super().__init__(msg)


class TrainingError(ReldescError, RuntimeError):
    pass

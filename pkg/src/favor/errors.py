"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument is outside the domain an operation is defined on."""


class DegenerateAttentionError(ArithmeticError):
    """A renormalization denominator is non-positive or not finite.

    Attributes
    ----------
    row : int
        Index of the first offending output row.
    value : float
        The denominator found at ``row`` (stabilizer already added).
    """

    def __init__(self, row, value):
        self.row = int(row)
        self.value = float(value)
        super().__init__(
            f"attention denominator at row {self.row} is {self.value!r}; "
            "increase the stabilizer or use a positive feature map"
        )

"""Exception types raised across the package.

The CLI maps these onto distinct exit codes: usage and strategy-text
problems exit 1, file and dimension problems exit 2, verification
failures exit 3, numerical overflow exits 4.
"""

from __future__ import annotations


class GSJFlowError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(GSJFlowError, ValueError):
    """Array shapes or sizes are inconsistent with what an operation needs."""


class StrategyFormatError(GSJFlowError, ValueError):
    """Malformed ``[Stack-GS-J-Else]`` strategy text."""


class ModelFormatError(GSJFlowError, ValueError):
    """Model file is unreadable, truncated, or structurally malformed."""


class ModelVersionError(GSJFlowError, ValueError):
    """Model file carries an unknown or unsupported format tag."""


class CausalityViolationError(GSJFlowError, ValueError):
    """A quantity that must only depend on earlier positions showed a
    measurable dependence on a later one."""


class NumericalOverflowError(GSJFlowError, ArithmeticError):
    """A sweep or transform produced non-finite values.

    Carries enough context to diagnose a bad initial guess: which block and
    module blew up, at which iteration, and the largest finite magnitude
    seen before the overflow.
    """

    def __init__(self, message: str, *, block: int | None = None,
                 module: int | None = None, iteration: int | None = None,
                 max_abs: float | None = None):
        super().__init__(message)
        self.block = block
        self.module = module
        self.iteration = iteration
        self.max_abs = max_abs

    def __str__(self) -> str:
        parts = [super().__str__()]
        if self.block is not None:
            parts.append(f"block={self.block}")
        if self.module is not None:
            parts.append(f"module={self.module}")
        if self.iteration is not None:
            parts.append(f"iteration={self.iteration}")
        if self.max_abs is not None:
            parts.append(f"max_abs={self.max_abs:.6g}")
        return " ".join(parts)

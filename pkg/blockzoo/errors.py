########################################################################################
#
#    Copyright 2026 The blockzoo developers
#
#    This file is part of blockzoo.
#
#    This program is free software: you can redistribute it and/or modify
#    it under the terms of the GNU Lesser General Public License as published by
#    the Free Software Foundation, either version 3 of the License, or
#    (at your option) any later version.
#
#    This program is distributed in the hope that it will be useful,
#    but WITHOUT ANY WARRANTY; without even the implied warranty of
#    MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#    GNU Lesser General Public License for more details.
#
#    You should have received a copy of the GNU Lesser General Public License
#    along with this program. If not, see <http://www.gnu.org/licenses/>.
#
########################################################################################
"""Exception types raised across blockzoo."""

# 1. Standard library imports:
from typing import Optional

# 2. Known third party imports:

# 3. Local imports in the relative form:


class BlockzooError(Exception):
    """Base class of every error raised on purpose by blockzoo."""


class ConfigurationError(BlockzooError, ValueError):
    """A configuration value or request is invalid."""


class ArgumentError(BlockzooError, ValueError):
    """An argument violates an operation's precondition."""


class ShapeError(BlockzooError, ValueError):
    """Array dimensions do not match what a model or operation expects."""


class NumericError(BlockzooError, ArithmeticError):
    """Non-finite values appeared in a computation."""


class TrainingError(BlockzooError):
    """
    Training diverged.

    :param message: Error message.
    :param epoch: Zero based epoch index in which the divergence was detected.
    """

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class RenderQualityError(BlockzooError):
    """Too many rays exhausted their march budget."""


class DatasetIOError(BlockzooError, OSError):
    """
    Writing a dataset failed part way through.

    :param message: Error message.
    :param completed: Number of samples fully written before the failure.
    """

    def __init__(self, message: str, completed: int):
        super().__init__(f"{message} ({completed} samples completed)")
        self.completed = completed


class DegenerateHeadError(BlockzooError):
    """The linear head has a zero weight vector."""


class UndefinedFitError(BlockzooError, ValueError):
    """A least squares fit has no variance in its regressor."""


class InsufficientPoolError(BlockzooError):
    """
    A baseline grid column cannot be filled.

    :param bin_label: Label of the column that ran short.
    :param available: Number of pool images that fell into the column.
    """

    def __init__(self, bin_label: str, available: int):
        super().__init__(
            f'Column "{bin_label}" holds {available} images, at least 10 are needed.'
        )
        self.bin_label = bin_label
        self.available = available


class EmptyExplanationError(BlockzooError):
    """No concept passed selection."""


class DegenerateSampleError(BlockzooError, ValueError):
    """A statistic is undefined for the given sample."""


class IngestionError(BlockzooError, ValueError):
    """
    A study response file could not be read.

    :param message: Error message.
    :param row: One based data row number, if known.
    """

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ChecksumError(BlockzooError, ValueError):
    """A checkpoint is corrupt or not a blockzoo checkpoint."""

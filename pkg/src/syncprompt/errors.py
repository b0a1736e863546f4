"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration/validation
problems exit 1, runtime failures 2, I/O problems 3.
"""

from __future__ import annotations


class SyncPromptError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SyncPromptError):
    """Invalid configuration values or inconsistent option combinations."""


class ShapeError(SyncPromptError):
    """Array dimensions do not line up."""


class InputError(SyncPromptError):
    """Operation called with empty or malformed inputs."""


class LabelError(SyncPromptError):
    """A class label falls outside the permitted label space."""


class NumericError(SyncPromptError):
    """Numerically invalid state (zero vectors, NaN/Inf activations)."""


class TokenizerError(SyncPromptError):
    """Text could not be tokenized into a usable sequence."""


class DataFormatError(SyncPromptError):
    """Dataset files violate the documented on-disk layout."""


class UnmatchedClassError(DataFormatError):
    """Synthetic folders whose names match no known class."""

    def __init__(self, offenders: list[str]):
        self.offenders = list(offenders)
        super().__init__(
            "synthetic directories match no class: " + ", ".join(sorted(self.offenders))
        )


class ChecksumError(SyncPromptError):
    """Archive payload does not match its recorded digest."""


class TrainingDiverged(SyncPromptError):
    """Loss became NaN/Inf; carries a snapshot of the offending batch."""

    def __init__(self, step: int, real_indices, synth_indices):
        self.step = step
        self.real_indices = list(real_indices)
        self.synth_indices = list(synth_indices)
        super().__init__(
            f"non-finite loss at step {step} "
            f"(real batch indices {self.real_indices}, synthetic batch indices {self.synth_indices})"
        )

"""Exception hierarchy.

Validation-type failures (bad inputs, bad config, artifact mismatches) are
distinguished from runtime failures so the command line layer can map them
to distinct exit codes.
"""

from __future__ import annotations


class TutorRLError(Exception):
    """Base class for all package errors."""


class ValidationError(TutorRLError, ValueError):
    """Input or invariant violation detected before any work is done."""


class ConfigError(ValidationError):
    """Run configuration file is missing, malformed, or inconsistent."""


class FingerprintMismatchError(ValidationError):
    """Artifacts built from different configurations were mixed."""


class SimulatorError(TutorRLError, RuntimeError):
    """Illegal simulator operation, e.g. stepping a finished episode."""


class AnnotationError(TutorRLError, RuntimeError):
    """Annotation provider failed or produced an inconsistent episode."""


class TrainingDivergedError(TutorRLError, RuntimeError):
    """A training loop produced non-finite losses or values."""

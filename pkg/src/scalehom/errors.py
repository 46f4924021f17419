"""Exception hierarchy shared by all modules.

Each error carries the CLI exit code the harness maps it to.
"""
from __future__ import annotations


class ScalehomError(Exception):
    exit_code = 1


class ParameterError(ScalehomError, ValueError):
    """Invalid or out-of-range input parameter."""

    exit_code = 1


class EmptyShellError(ParameterError):
    """A scale shell contains no lattice modes at the working resolution."""


class GaugeError(ParameterError):
    """A per-mode gauge operation met the excluded k = 0 mode."""


class SynthesisError(ScalehomError):
    """Real-space synthesis of a field violating Hermitian symmetry."""


class IntegrationError(ScalehomError):
    """Non-finite state or loss of structure during time stepping."""

    exit_code = 3


class ResourceError(ScalehomError):
    """Requested work exceeds the configured resource guard."""

    exit_code = 3


class AcceptanceFailure(ScalehomError):
    exit_code = 2

"""Exception taxonomy shared across the engine.

CLI exit codes: config problems exit 2, backend problems exit 3, internal
invariant failures exit 4.
"""


class HiPromptError(Exception):
    """Base class for all engine errors."""


class InvalidParameterError(HiPromptError):
    """A value is outside its documented domain (negative sigma, bad file, ...)."""


class ShapeMismatchError(HiPromptError):
    """Two grids (or a grid and a declared shape) disagree."""


class DegenerateTimestepError(HiPromptError):
    """A timestep where the requested formula is undefined (alpha_cumprod 0 or 1)."""


class ConfigError(HiPromptError):
    """Run configuration cannot be parsed or violates an invariant."""


class BackendError(HiPromptError):
    """A denoiser/captioner/embedder call failed.

    Carries the wire request id when the failure came from a remote call.
    """

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(message)
        self.request_id = request_id


class ProtocolError(BackendError):
    """The remote peer violated the wire protocol (bad envelope, bad encoding)."""


class CaptionError(BackendError):
    """A caption request failed or returned an empty caption.

    Signals the per-patch fallback to the global prompt; never aborts a run.
    """


class InvariantFailure(HiPromptError):
    """An embedded self-check failed."""

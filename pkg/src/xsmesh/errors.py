"""Exception types shared across the package.

The CLI maps these onto exit codes: check failures exit 1, configuration
errors exit 2, file format / I-O errors exit 3.
"""


class ConfigurationError(ValueError):
    """A parameter combination that cannot be built or run."""


class OutOfRangeError(ValueError):
    """An energy outside the table it is being looked up in."""


class DegenerateBracketError(ValueError):
    """Interpolation bracket with e_low >= e_high."""


class ProtocolError(RuntimeError):
    """A communication-pattern rule was violated (bad edge send, lost particles)."""


class PipelineStateError(RuntimeError):
    """A report was requested from a pipeline that has not completed."""


class FormatError(ValueError):
    """A serialized file is corrupt or has the wrong magic/version."""

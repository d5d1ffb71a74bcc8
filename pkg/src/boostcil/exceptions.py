"""Error types shared across the toolkit."""


class InvalidProtocolError(ValueError):
    """Protocol, stream, or label-space configuration is inconsistent."""

    def __init__(self, message, *, session=None, stage=None):
        super().__init__(message)
        self.session = session
        self.stage = stage


class MissingDataError(ValueError):
    """A class has no instances where at least one is required."""


class DegenerateCountsError(ValueError):
    """Class counts or norms degenerate to zero where positivity is required."""


class ExperimentError(RuntimeError):
    """A pipeline stage failed; carries session/stage context."""

    def __init__(self, message, *, session=None, stage=None):
        super().__init__(message)
        self.session = session
        self.stage = stage

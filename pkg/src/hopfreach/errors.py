"""Exception types shared across the pipeline."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, err):
        super().__init__(f"[{stage}] {type(err).__name__}: {err}")
        self.stage = stage
        self.cause = err

class SpactorError(Exception):
    pass


class ConfigError(SpactorError, ValueError):
    pass


class VocabularyError(SpactorError, ValueError):
    pass


class CorruptionError(SpactorError, ValueError):
    pass


class ModelError(SpactorError, ValueError):
    pass


class TransitionError(SpactorError, RuntimeError):
    pass


class DivergenceError(SpactorError, RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class CheckpointError(SpactorError):
    pass


class EvaluationError(SpactorError):
    pass

from typing import Iterable, Optional

from app.config import (
    EXIT_CONFIG_ERROR,
    EXIT_FAILURE,
    EXIT_INCOMPARABLE,
    EXIT_TRAINING_FAILURE,
)


class ModelGifError(Exception):
    exit_code = EXIT_FAILURE


class RejectedInputError(ModelGifError, ValueError):
    """Input with the wrong shape or a parameter outside its valid range."""


class TrainingFailure(ModelGifError):
    exit_code = EXIT_TRAINING_FAILURE

    def __init__(self, epoch: int, model_id: Optional[str] = None, loss: float = float("nan")):
        self.epoch = epoch
        self.model_id = model_id
        self.loss = loss
        who = f"model {model_id}" if model_id else "training"
        super().__init__(f"{who} diverged at epoch {epoch} (loss={loss})")

    def for_model(self, model_id: str) -> "TrainingFailure":
        return TrainingFailure(self.epoch, model_id=model_id, loss=self.loss)


class IncomparableError(ModelGifError):
    exit_code = EXIT_INCOMPARABLE

    def __init__(self, message: str, ids: Iterable[str] = ()):
        self.ids = tuple(ids)
        if self.ids:
            message = f"{message} (offending: {', '.join(self.ids)})"
        super().__init__(message)


class UndefinedCorrelationError(ModelGifError, ValueError):
    pass


class UnsupportedMetricError(ModelGifError):
    pass


class ArtifactFormatError(ModelGifError):
    pass


class ConfigError(ModelGifError):
    exit_code = EXIT_CONFIG_ERROR

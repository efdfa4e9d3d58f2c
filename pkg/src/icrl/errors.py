"""Exception types shared across the workbench."""


class IcrlError(Exception):
    """Base class for all workbench errors."""


class InvalidState(IcrlError):
    """A state vector is outside the environment's state space."""


class InvalidAction(IcrlError):
    """An action index is outside [0, num_actions)."""


class HorizonExceeded(IcrlError):
    """step() called after the episode clock reached the horizon."""


class UnknownFamily(IcrlError):
    """Environment family name is not registered."""


class UnknownEnvTag(IcrlError):
    """An env_tag could not be resolved back to hidden parameters."""


class InvalidTrustHorizon(IcrlError):
    """Trust horizon outside the range the distiller can satisfy."""


class NonTermination(IcrlError):
    """Sparse distillation exhausted its query resample budget."""


class MethodEnvMismatch(IcrlError):
    """A dataset method cannot be generated for this environment kind."""


class ShapeMismatch(IcrlError):
    """Tensor operands have incompatible shapes."""


class ContextTooLong(IcrlError):
    """Context exceeds the model's maximum context length."""


class EmptyDataset(IcrlError):
    """An operation that needs samples received none."""


class FamilyMismatch(IcrlError):
    """Model and evaluation environment families have different shapes."""


class ConfigInvalid(IcrlError):
    """An experiment config failed validation."""


class MissingArtifact(IcrlError):
    """A referenced dataset/checkpoint/metrics file does not exist."""

"""Exception types shared across the simulator."""


class FedsimError(Exception):
    """Base class for all simulator errors."""


class SchemaError(FedsimError):
    """A CSV file does not carry the required columns."""


class EmptyDatasetError(FedsimError):
    """No usable records survived ingestion."""


class IntegrityError(FedsimError):
    """Dataset-level invariant violated (e.g. duplicate stay ids)."""


class EmptyCohortError(FedsimError):
    """No hospital shard falls inside the requested size bounds."""


class UndefinedAucError(FedsimError):
    """ROC-AUC requested on a single-class label set."""


class ClientDivergenceError(FedsimError):
    """Local training produced non-finite parameters."""

    def __init__(self, client_id: int, message: str = ""):
        self.client_id = client_id
        super().__init__(message or f"client {client_id} diverged")


class TransientTaskError(FedsimError):
    """Recoverable task failure; the executor retries with the same seed."""


class RoundExecutionError(FedsimError):
    """A federated round could not be completed."""


class ConfigError(FedsimError):
    """Run configuration failed validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from xai_concord.errors import ModelError


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings shared by the three trainers.

    ``learning_rate`` is the initial step size for the L1 solver, the
    shrinkage for boosting and the SGD step for the network.
    ``max_iterations`` counts solver iterations (L1) or epochs (network);
    boosting takes its round count separately.
    """

    max_iterations: int = 1000
    tolerance: float = 1e-9
    learning_rate: float = 0.1
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ModelError("max_iterations must be nonnegative")
        for name in ("tolerance", "learning_rate"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be positive")
        if self.batch_size < 1:
            raise ModelError("batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

from .data import (DataPoint, Shard, load_idx_dataset, make_synthetic_classification,
                   partition_noniid, write_idx_dataset)
from .oracle import (GradientBounds, OracleDidNotConverge, OracleResult, centralized_oracle,
                     estimate_Linf)
from .tasks import (TaskSpec, accuracy, full_gradient, global_gradient, global_loss, local_loss,
                    point_losses, predict, stochastic_gradient)

__all__ = [
    "DataPoint", "Shard", "TaskSpec", "GradientBounds", "OracleResult", "OracleDidNotConverge",
    "accuracy", "centralized_oracle", "estimate_Linf", "full_gradient", "global_gradient",
    "global_loss", "load_idx_dataset", "local_loss", "make_synthetic_classification",
    "partition_noniid", "point_losses", "predict", "stochastic_gradient", "write_idx_dataset",
]

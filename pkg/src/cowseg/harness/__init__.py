from .config import TrainConfig, dump_config, load_config, parse_config_text
from .evaluation import MetricsReport, evaluate, evaluate_net, export_prototypes, load_prototypes
from .metrics import boundary_f1, dice
from .pipeline import forward_episode, run_episode, run_heads
from .training import TrainingAborted, train

__all__ = [
    "MetricsReport", "TrainConfig", "TrainingAborted", "boundary_f1", "dice", "dump_config",
    "evaluate", "evaluate_net", "export_prototypes", "forward_episode", "load_config",
    "load_prototypes", "parse_config_text", "run_episode", "run_heads", "train",
]

from src.models.network import GraphError, Network, infer_shapes
from src.models.builders import ArchSpec, build_unet, build_scn
from src.models.executor import forward, backward
from src.models.accounting import count_parameters, count_flops, compare_with_published
from src.models.memory import MemoryPlan, plan_memory
from src.models.checkpoint import CheckpointError, save_weights, load_weights
from src.models.losses import LossWeights, generalized_dice_loss, cross_entropy_loss
from src.models.train import TrainConfig, TrainingDivergedError, train_model
from src.models.evaluate import dsc, nsd, count_spurious_components, evaluate

__all__ = [
    'GraphError',
    'Network',
    'infer_shapes',
    'ArchSpec',
    'build_unet',
    'build_scn',
    'forward',
    'backward',
    'count_parameters',
    'count_flops',
    'compare_with_published',
    'MemoryPlan',
    'plan_memory',
    'CheckpointError',
    'save_weights',
    'load_weights',
    'LossWeights',
    'generalized_dice_loss',
    'cross_entropy_loss',
    'TrainConfig',
    'TrainingDivergedError',
    'train_model',
    'dsc',
    'nsd',
    'count_spurious_components',
    'evaluate'
]

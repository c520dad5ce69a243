"""Domain-invariant feature learning for image-to-video adaptation."""
from .datamodel import (SemanticTable, SynthConfig, TriModalDataset, generate_synthetic,
                        load_dataset, save_dataset)
from .errors import ContractError, DivergenceError, FormatError, NumericalError, TrainingError
from .fusionclassify import evaluate, fuse, train_classifier
from .objective import Hyperparams
from .trainer import Model, TrainConfig, restore, train

__version__ = "0.1.0"

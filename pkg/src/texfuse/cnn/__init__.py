from .layers import (Conv2D, Dense, DivergenceError, MaxPool2D, ReLU, ShapeError, softmax,
                     softmax_cross_entropy)
from .network import (BRODATZ_EPOCHS, DEEP_STACK, DEFAULT_STACK, KYLBERG_EPOCHS, STACKS,
                      CnnDivergenceError, CnnModel, History, TrainConfig, accuracy, clone,
                      decode_model, encode_model, load_model, predict, save_model, train)

__all__ = [
    "BRODATZ_EPOCHS", "KYLBERG_EPOCHS", "DEFAULT_STACK", "DEEP_STACK", "STACKS",
    "CnnModel", "CnnDivergenceError", "History", "TrainConfig", "Conv2D", "Dense", "MaxPool2D",
    "ReLU", "ShapeError", "DivergenceError", "softmax", "softmax_cross_entropy", "accuracy",
    "clone", "decode_model", "encode_model", "load_model", "predict", "save_model", "train",
]

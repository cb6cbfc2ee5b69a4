"""Texture classification with GLCM/Haralick features, an RBF SVM, a small CNN
and a confusion-matrix driven fusion of the two."""

from .artifacts import TexfuseError
from .dataset import (DatasetManifest, GrayImage, SplitAssignment, SplitSpec, generate_synthetic,
                      load_image, split)
from .evaluation import EvaluationReport, evaluate, repeat_shuffled, run_experiment
from .fusion import FusionModel, build_map, fused_predict
from .glcm import extract_features, haralick13
from .svm import SvmHyperparams, SvmModel, train_svm

__version__ = "0.1.0"

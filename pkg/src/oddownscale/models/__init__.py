"""The four regressors behind one ``predict`` contract."""

from .base import ConvergenceError, Model, ModelError
from .fnn import FnnConfig, FnnModel, fit_fnn, loss_and_grads, triangular_lr
from .forest import DecisionTree, ForestConfig, ForestModel, fit_forest
from .linear import LinearConfig, LinearModel, fit_linear
from .serialize import load_model, model_from_dict, model_to_dict, save_model
from .svr import SvrConfig, SvrModel, fit_svr, rbf_kernel

KINDS = ("linear", "forest", "svr", "fnn")

_FITTERS = {
    "linear": fit_linear,
    "forest": fit_forest,
    "svr": fit_svr,
    "fnn": fit_fnn,
}


def fit(x, y, config) -> Model:
    """Dispatch to the fitter matching ``config.kind``."""
    return _FITTERS[config.kind](x, y, config)


__all__ = [
    "KINDS", "ConvergenceError", "DecisionTree", "FnnConfig", "FnnModel", "ForestConfig",
    "ForestModel", "LinearConfig", "LinearModel", "Model", "ModelError", "SvrConfig",
    "SvrModel", "fit", "fit_fnn", "fit_forest", "fit_linear", "fit_svr", "load_model",
    "loss_and_grads", "model_from_dict", "model_to_dict", "rbf_kernel", "save_model",
    "triangular_lr",
]

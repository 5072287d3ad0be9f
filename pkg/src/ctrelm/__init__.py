"""Extreme learning machines with streaming ridge solves for CTR prediction."""

from .autoencoder import AeLayer, fit_ae_layer, init_orthogonal, procrustes_orthogonalize
from .core import ActivationKind, ElmModel, NormalEqAccumulator, hidden, init_random_layer, predict, ridge_solve, train_elm
from .data import FeatureSchema, HashEncoder, RawRecord, SplitSpec, iter_records, load_schema, split_dataset
from .embeddings import EmbeddingTable, SurrogateModel, load_table, pretrain_embeddings, save_table
from .kernels import BACKEND
from .metrics import auc, evaluate, logloss, prf1, tune_threshold
from .multilayer import MlElmModel, load_any_model, predict_ml, save_any_model, train_ml_elm

__version__ = "0.1.0"

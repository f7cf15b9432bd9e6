"""Sklearn-style estimator facade over the training and rollout machinery.

These wrappers let the forecasters compose with the wider ecosystem
(get_params / set_params / fit / predict); the underlying library API
remains the primary surface.
"""

from __future__ import annotations

import tempfile

from sklearn.base import BaseEstimator

from .dataset import WaveDataset
from .errors import ContractError
from .rollout import TruthWindSource, rollout
from .training import ModelContext, TrainConfig, load_model_from_checkpoint, train


class _WaveForecaster(BaseEstimator):
    kind = None

    def __init__(self, lr=1e-3, epochs=3, batch_size=8, clip_norm=1.0, seed=0,
                 model_config=None, out_dir=None):
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.seed = seed
        self.model_config = model_config
        self.out_dir = out_dir

    def fit(self, X, y=None):
        """X is a dataset directory or a WaveDataset."""
        dataset = X if isinstance(X, WaveDataset) else WaveDataset.load(X)
        cfg = TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                          clip_norm=self.clip_norm, seed=self.seed, model=self.kind)
        out_dir = self.out_dir or tempfile.mkdtemp(prefix="wavecaster-fit-")
        self.checkpoint_path_ = train(dataset, cfg, out_dir,
                                      model_cfg=self.model_config,
                                      log=lambda msg: None)
        model, _, _, _, _ = load_model_from_checkpoint(self.checkpoint_path_,
                                                       expect_kind=self.kind)
        self.context_ = ModelContext.create(model, dataset)
        return self

    def predict(self, init_times, wind_source=None, leads=7):
        """ForecastSeries per init time; defaults to truth winds."""
        if not hasattr(self, "context_"):
            raise ContractError("estimator is not fitted; call fit first")
        source = wind_source or TruthWindSource(self.context_.dataset)
        scalar = not isinstance(init_times, (list, tuple))
        times = [init_times] if scalar else list(init_times)
        out = [rollout(self.context_, t, source, leads) for t in times]
        return out[0] if scalar else out


class ViTWaveForecaster(_WaveForecaster):
    kind = "vit"


class ConvLSTMWaveForecaster(_WaveForecaster):
    kind = "convlstm"

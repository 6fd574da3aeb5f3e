"""Scikit-learn style wrapper around the trainer.

DenseVideoCaptioner exposes the usual estimator surface: constructor
parameters are stored verbatim, fit builds the model and returns self,
fitted state lives in trailing-underscore attributes, and get_params /
set_params come from BaseEstimator for grid-search compatibility. Samples
are whole videos (VideoRecord with features and events), not feature rows.
"""

from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import SynthDataset, SynthParams, VideoRecord
from .evaluation import EvalConfig
from .losses import CTCAConfig, FocalConfig, LossWeights, OSLConfig
from .matching import MatchingCoeffs
from .model import ModelConfig
from .training import ExperimentConfig, TrainConfig, Trainer, build_trainer
from .validation import check_video_records


class DenseVideoCaptioner(BaseEstimator):
    """Dense event localization + captioning as one estimator.

    fit(X) expects a list of VideoRecord; an optional val split drives
    checkpoint selection. predict(X) returns per-video event tuples
    (start_s, end_s, caption, confidence); score(X) is the threshold-averaged
    localization F1 of the predictions against the records' own events.
    """

    def __init__(
        self,
        d_model: int = 128,
        n_queries: int = 10,
        n_enc_layers: int = 2,
        n_dec_layers: int = 2,
        n_heads: int = 8,
        max_events: int = 10,
        vocab_size: int = 256,
        max_caption_len: int = 12,
        n_concepts: int = 30,
        n_frames: int = 100,
        epochs: int = 30,
        batch_size: int = 8,
        lr: float = 1e-4,
        weight_decay: float = 1e-4,
        grad_clip: float = 0.1,
        eval_interval: int = 5,
        use_rsqi: bool = True,
        use_ctca: bool = True,
        use_osl: bool = True,
        use_cg: bool = True,
        osl_gamma: float = 0.25,
        osl_beta: float = 1.0,
        ctca_tau: float = 0.1,
        seed: int = 0,
    ):
        self.d_model = d_model
        self.n_queries = n_queries
        self.n_enc_layers = n_enc_layers
        self.n_dec_layers = n_dec_layers
        self.n_heads = n_heads
        self.max_events = max_events
        self.vocab_size = vocab_size
        self.max_caption_len = max_caption_len
        self.n_concepts = n_concepts
        self.n_frames = n_frames
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.eval_interval = eval_interval
        self.use_rsqi = use_rsqi
        self.use_ctca = use_ctca
        self.use_osl = use_osl
        self.use_cg = use_cg
        self.osl_gamma = osl_gamma
        self.osl_beta = osl_beta
        self.ctca_tau = ctca_tau
        self.seed = seed

    def _experiment_config(self, d_in: int) -> ExperimentConfig:
        return ExperimentConfig(
            model=ModelConfig(
                d_in=d_in,
                d_model=self.d_model,
                n_queries=self.n_queries,
                n_enc_layers=self.n_enc_layers,
                n_dec_layers=self.n_dec_layers,
                n_heads=self.n_heads,
                max_events=self.max_events,
                vocab_size=self.vocab_size,
                max_caption_len=self.max_caption_len,
                n_concepts=self.n_concepts,
                n_frames=self.n_frames,
                role_specific=self.use_rsqi,
            ),
            train=TrainConfig(
                epochs=self.epochs,
                batch_size=self.batch_size,
                lr=self.lr,
                weight_decay=self.weight_decay,
                grad_clip=self.grad_clip,
                eval_interval=self.eval_interval,
                seed=self.seed,
                use_rsqi=self.use_rsqi,
                use_ctca=self.use_ctca,
                use_osl=self.use_osl,
                use_cg=self.use_cg,
            ),
            weights=LossWeights(),
            osl=OSLConfig(gamma=self.osl_gamma, beta=self.osl_beta),
            ctca=CTCAConfig(tau=self.ctca_tau),
            matching=MatchingCoeffs(),
            focal=FocalConfig(),
        )

    def fit(self, X: List[VideoRecord], y=None, val_records: Optional[List[VideoRecord]] = None):
        """Train on whole videos; y is unused (targets live in the records)."""
        train_records = check_video_records(X)
        if val_records is not None:
            val_records = check_video_records(val_records)
        d_in = train_records[0].features.shape[1]
        cfg = self._experiment_config(d_in)
        dataset = SynthDataset(
            train=train_records,
            val=list(val_records or []),
            params=SynthParams(n_videos=max(2, len(train_records)), d_in=d_in, seed=self.seed),
            concept_lexicon=(),
        )
        trainer = build_trainer(dataset, cfg)
        result = trainer.fit(dataset)
        self.trainer_ = trainer
        self.model_ = trainer.model
        self.vocab_ = trainer.vocab
        self.concept_vocab_ = trainer.concept_vocab
        self.history_ = result["history"]
        self.best_f1_ = result["best_f1"]
        self.n_features_in_ = d_in
        return self

    def predict(self, X: List[VideoRecord]) -> Dict[str, list]:
        check_is_fitted(self, "trainer_")
        records = check_video_records(X, require_events=False, expected_dim=self.n_features_in_)
        return self.trainer_.predict(records)

    def transform(self, X: List[VideoRecord]) -> np.ndarray:
        """Per-video pooled localization-query features, (n_videos, d_model)."""
        check_is_fitted(self, "trainer_")
        records = check_video_records(X, require_events=False, expected_dim=self.n_features_in_)
        import torch

        rows = []
        self.model_.eval()
        with torch.no_grad():
            for r in records:
                tgt = self.trainer_._prepare(r)
                out = self.model_(tgt.features, tgt.pad_mask)
                rows.append(out.dec.loc_feats.max(dim=0).values.numpy())
        return np.stack(rows)

    def score(self, X: List[VideoRecord], y=None) -> float:
        """Threshold-averaged localization F1 against the records' events."""
        check_is_fitted(self, "trainer_")
        records = check_video_records(X, expected_dim=self.n_features_in_)
        return self.trainer_.evaluate(records, EvalConfig()).f1

"""scikit-learn compatible classifier around the backbone."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .analysis import trace_transforms
from .backbone import build_model, preset
from .blocks import Toggles
from .train import fit_model, predict_logits
from .validation import check_images, check_images_labels


class VSAClassifier(ClassifierMixin, BaseEstimator):
    """Image classifier built from a preset with optional VSA stages.

    Parameters
    ----------
    preset : {"swin_nano", "swin_pico", "swin_tiny"}
        Architecture preset; ``img_size`` and the class count are taken from the data.
    vsa_stages : tuple of int
        1-based stages whose window attention is replaced by VSA.
    toggles : str
        Components used in the VSA stages, e.g. ``"cpe,vsr"``.
    steps, batch_size, lr, warmup_steps, weight_decay, label_smoothing
        Optimisation settings (AdamW, cosine schedule after linear warmup).
    dtype : {"float32", "float64"}
    random_state : int
        Seeds parameter init and batch order.
    """

    def __init__(self, preset="swin_pico", vsa_stages=(1, 2, 3, 4), toggles="cpe,vsr", steps=500,
                 batch_size=16, lr=1e-3, warmup_steps=50, weight_decay=0.05, label_smoothing=0.1,
                 dtype="float32", random_state=0):
        self.preset = preset
        self.vsa_stages = vsa_stages
        self.toggles = toggles
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.weight_decay = weight_decay
        self.label_smoothing = label_smoothing
        self.dtype = dtype
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_images_labels(X, y, dtype=np.dtype(self.dtype))
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need samples of at least two classes")
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        cfg = preset(self.preset, img_size=X.shape[1], num_classes=len(self.classes_),
                     vsa_stages=tuple(self.vsa_stages), toggles=Toggles.parse(self.toggles))
        self.model_ = build_model(cfg, seed=self.random_state, dtype=np.dtype(self.dtype))
        losses = []
        fit_model(self.model_, X, y_enc, steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                  warmup_steps=min(self.warmup_steps, self.steps), weight_decay=self.weight_decay,
                  label_smoothing=self.label_smoothing, seed=self.random_state,
                  on_step=lambda step, lr, loss: losses.append(loss))
        self.loss_curve_ = losses
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        return check_images(X, img_size=self.model_.config.img_size, dtype=self.model_.dtype)

    def decision_function(self, X):
        X = self._check(X)
        return predict_logits(self.model_, X)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        with ad.no_grad():
            return ad.softmax(logits, axis=1).data

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def window_transforms(self, X):
        """Per VSA layer: ``(layer_id, WindowTransform)`` for the given images."""
        X = self._check(X)
        return trace_transforms(self.model_, X)

"""scikit-learn style front end: ``InfMAE().fit(images).transform(images)``."""

import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TINY_MODEL, TrainConfig
from .model import to_nchw
from .pretrainer import fit_images, model_from_checkpoint
from .pyramid import extract_pyramid, pyramid_tensors
from .validation import check_images, check_spatial_multiple


class InfMAE(TransformerMixin, BaseEstimator):
    """Information-aware masked autoencoder.

    ``fit`` pretrains on unlabeled ``(n, H, W[, C])`` images in [0, 1];
    ``transform`` returns globally average-pooled F1-F4 features of shape
    ``(n, C1 + C2 + C3 + C4)``.

    Parameters
    ----------
    model_config : ModelConfig, optional
        Architecture; defaults to the tiny desk-scale profile.
    mask_stride, decoder_depth, masking :
        Ablation knobs overriding the corresponding ``model_config`` fields
        when not None.
    epochs, warmup_epochs, base_lr, weight_decay, batch_size :
        Optimization settings (cosine schedule with linear warmup, AdamW).
    crop_size : tuple, optional
        Random-crop size; defaults to ``model_config.image_size``.
    random_state : int
        Seeds initialization, batch order and crops.
    """

    def __init__(self, model_config=None, mask_stride=None, decoder_depth=None, masking=None,
                 epochs=25, warmup_epochs=3, base_lr=2e-3, weight_decay=0.05, batch_size=8,
                 crop_size=None, random_state=0):
        self.model_config = model_config
        self.mask_stride = mask_stride
        self.decoder_depth = decoder_depth
        self.masking = masking
        self.epochs = epochs
        self.warmup_epochs = warmup_epochs
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.crop_size = crop_size
        self.random_state = random_state

    def _configs(self):
        cfg = self.model_config or TINY_MODEL
        changes = {k: v for k, v in (("mask_stride", self.mask_stride),
                                     ("decoder_depth", self.decoder_depth),
                                     ("masking", self.masking)) if v is not None}
        cfg = cfg.replace(**changes)
        train = TrainConfig(
            epochs=self.epochs,
            warmup_epochs=min(self.warmup_epochs, max(self.epochs - 1, 0)),
            base_lr=self.base_lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            seed=self.random_state,
            crop_size=tuple(self.crop_size or cfg.image_size),
            channel_mode="gray" if cfg.in_channels == 1 else "replicate",
        )
        return cfg, train

    def fit(self, X, y=None):
        images = check_images(X)
        model_cfg, train_cfg = self._configs()
        if images.shape[3] != model_cfg.in_channels:
            raise ValueError(f"X has {images.shape[3]} channels, model expects {model_cfg.in_channels}")
        self.checkpoint_, self.history_ = fit_images(list(images), model_cfg, train_cfg)
        self.model_ = model_from_checkpoint(self.checkpoint_)
        self.n_features_out_ = sum(model_cfg.channels) + model_cfg.out_c4
        return self

    def transform(self, X):
        check_is_fitted(self, "checkpoint_")
        images = check_images(X)
        check_spatial_multiple(images.shape[1:], 32)
        levels = pyramid_tensors(self.model_, images)
        return torch.cat([f.mean(dim=(2, 3)) for f in levels], dim=1).double().numpy()

    def extract_pyramid(self, image):
        check_is_fitted(self, "checkpoint_")
        return extract_pyramid(image, self.checkpoint_)

    def score(self, X, y=None):
        """Negative mean masked reconstruction loss (higher is better)."""
        check_is_fitted(self, "checkpoint_")
        images = check_images(X)
        plans = self.model_.make_plans(images)
        x = to_nchw(images, dtype=next(self.model_.parameters()).dtype)
        with torch.no_grad():
            loss, _ = self.model_.forward_pretrain(x, plans)
        return -float(loss)

    def save(self, path):
        check_is_fitted(self, "checkpoint_")
        return save_checkpoint(self.checkpoint_, path)

    @classmethod
    def from_checkpoint(cls, path):
        ckpt = load_checkpoint(path)
        tc = ckpt.train_config
        est = cls(model_config=ckpt.model_config, epochs=tc.epochs, warmup_epochs=tc.warmup_epochs,
                  base_lr=tc.base_lr, weight_decay=tc.weight_decay, batch_size=tc.batch_size,
                  crop_size=tc.crop_size, random_state=tc.seed)
        est.checkpoint_ = ckpt
        est.history_ = []
        est.model_ = model_from_checkpoint(ckpt)
        est.n_features_out_ = sum(ckpt.model_config.channels) + ckpt.model_config.out_c4
        return est

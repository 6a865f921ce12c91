"""Scikit-learn style estimator wrapping the dual-decoder network.

DualDecoderSegmenter(...).fit(X, y) trains on a stack of preprocessed
slices (X: [n,H,W] floats in [0,1], y: [n,H,W] integer labels) and
predict(X) returns hard label maps. Constructor arguments are stored
verbatim; everything learned gets a trailing underscore. Checkpoints
are versioned with a magic string and carry optimizer and RNG state so
a resumed run is step-identical to an uninterrupted one.
"""

import csv
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import CheckpointError, ConfigurationError, TrainingDiverged
from .losses import LossConfig, total_loss
from .metrics import dice
from .network import NetworkConfig, build_network
from .validation import (
    check_consistent_stacks,
    check_divisible_size,
    check_image_stack,
    check_label_stack,
)

CHECKPOINT_MAGIC = "UDBA-CKPT-v1"
LOG_FIELDS = ("epoch", "step", "L_main", "L_aux", "L_reg", "L_total")


class DualDecoderSegmenter(BaseEstimator):
    """Dual-decoder segmentation network with optional bottleneck attention.

    Parameters mirror the training recipe: base_loss in {dice, ce},
    regularizer in {none, ctr, ctrm}, udba toggles the attention pass.
    Defaults are the full-scale settings (depth 4, lr 0.01, batch 1,
    200 epochs); desk-scale runs override them.
    """

    def __init__(self, num_classes=2, depth=4, base_channels=32,
                 base_loss="ce", regularizer="none", udba=False,
                 epochs=200, lr=0.01, batch_size=1, seed=0):
        self.num_classes = num_classes
        self.depth = depth
        self.base_channels = base_channels
        self.base_loss = base_loss
        self.regularizer = regularizer
        self.udba = udba
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed

    # ------------------------------------------------------------- fitting

    def fit(self, X, y, X_val=None, y_val=None, log_file=None, resume=False):
        """Train on a slice stack; optional held-out fold tracks best Dice.

        resume=True continues a checkpoint loaded via load(): optimizer,
        noise/shuffle stream, and epoch counter pick up where they left
        off, and training runs until self.epochs total.
        """
        X = check_image_stack(X)
        y = check_label_stack(y, self.num_classes)
        check_consistent_stacks(X, y)
        check_divisible_size(X.shape[1], X.shape[2], self.depth)
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        loss_cfg = LossConfig(self.base_loss, self.regularizer, self.udba)

        if resume:
            if not hasattr(self, "model_"):
                raise CheckpointError("resume=True requires an estimator from load()")
            start_epoch = self.epochs_done_
        else:
            self.config_ = NetworkConfig(1, self.num_classes, self.depth,
                                         self.base_channels)
            self.model_ = build_network(self.config_, self.seed)
            self.optimizer_ = torch.optim.Adam(self.model_.parameters(), lr=self.lr)
            self.generator_ = torch.Generator().manual_seed(self.seed)
            self.history_ = []
            self.best_state_ = None
            self.best_epoch_ = None
            self.best_dice_ = -1.0
            self.input_size_ = X.shape[1]
            self.epochs_done_ = 0
            start_epoch = 0

        images = torch.from_numpy(X).unsqueeze(1)   # [n,1,H,W]
        labels = torch.from_numpy(y)                # [n,H,W]
        n = images.shape[0]

        log_writer, log_fh = None, None
        if log_file is not None:
            log_path = Path(log_file)
            log_path.parent.mkdir(parents=True, exist_ok=True)
            fresh = not (resume and log_path.exists())
            log_fh = open(log_path, "a" if not fresh else "w", newline="")
            log_writer = csv.DictWriter(log_fh, fieldnames=LOG_FIELDS)
            if fresh:
                log_writer.writeheader()

        try:
            self.model_.train()
            for epoch in range(start_epoch, self.epochs):
                order = torch.randperm(n, generator=self.generator_)
                totals = []
                breakdown = {}
                for step, lo in enumerate(range(0, n, self.batch_size)):
                    idx = order[lo:lo + self.batch_size]
                    x = images[idx]
                    out = self.model_(x, udba=self.udba, generator=self.generator_)
                    loss, breakdown = total_loss(out, labels[idx], x[:, 0], loss_cfg)
                    if not np.isfinite(breakdown["L_total"]):
                        raise TrainingDiverged(epoch, step,
                                               [int(i) for i in idx], breakdown)
                    self.optimizer_.zero_grad()
                    loss.backward()
                    self.optimizer_.step()
                    totals.append(breakdown["L_total"])
                    if log_writer is not None:
                        log_writer.writerow({"epoch": epoch, "step": step, **breakdown})
                record = {
                    "epoch": epoch,
                    "mean_total": float(np.mean(totals)) if totals else float("nan"),
                    "last_total": totals[-1] if totals else float("nan"),
                }
                if X_val is not None and len(X_val):
                    val_dice = self.score(X_val, y_val, _val_epoch=epoch)
                    record["val_dice"] = val_dice
                    if val_dice > self.best_dice_:
                        self.best_dice_ = val_dice
                        self.best_epoch_ = epoch
                        self.best_state_ = {
                            k: v.detach().clone()
                            for k, v in self.model_.state_dict().items()
                        }
                    self.model_.train()
                self.history_.append(record)
                self.epochs_done_ = epoch + 1
        finally:
            if log_fh is not None:
                log_fh.close()
        return self

    # ---------------------------------------------------------- prediction

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this DualDecoderSegmenter is not fitted yet; call fit() "
                "or load() a checkpoint first"
            )

    def _forward_stack(self, X, chunk=8, generator=None):
        X = check_image_stack(X)
        check_divisible_size(X.shape[1], X.shape[2], self.depth)
        if generator is None:
            generator = torch.Generator().manual_seed(self.seed)
        self.model_.eval()
        outs = []
        with torch.no_grad():
            for lo in range(0, X.shape[0], chunk):
                x = torch.from_numpy(X[lo:lo + chunk]).unsqueeze(1)
                out = self.model_(x, udba=self.udba, generator=generator)
                outs.append(out.main_final)
        return torch.cat(outs) if outs else torch.zeros((0, self.num_classes, 1, 1))

    def predict(self, X):
        """Hard label maps [n,H,W] from the attention-refined main path."""
        self._check_fitted()
        return self._forward_stack(X).argmax(dim=1).numpy().astype(np.int64)

    def predict_proba(self, X):
        """Softmax class probabilities [n,N,H,W]."""
        self._check_fitted()
        return torch.softmax(self._forward_stack(X), dim=1).numpy()

    def per_class_dice(self, X, y):
        """Hard Dice per foreground class over the stacked slices."""
        self._check_fitted()
        y = check_label_stack(y, self.num_classes)
        pred = self.predict(X)
        return {c: dice(y == c, pred == c) for c in range(1, self.num_classes)}

    def score(self, X, y, _val_epoch=None):
        """Mean foreground Dice; the model-selection scalar."""
        self._check_fitted()
        if _val_epoch is not None:
            # validation must not consume the training noise stream
            gen = torch.Generator().manual_seed(self.seed + 100003 + _val_epoch)
            y = check_label_stack(y, self.num_classes)
            pred = self._forward_stack(X, generator=gen).argmax(dim=1).numpy()
            values = [dice(y == c, pred == c) for c in range(1, self.num_classes)]
            return float(np.mean(values))
        return float(np.mean(list(self.per_class_dice(X, y).values())))

    # -------------------------------------------------------- persistence

    def save(self, path, which="final"):
        """Write a versioned checkpoint. which: final or best."""
        self._check_fitted()
        if which not in ("final", "best"):
            raise ConfigurationError(f"which must be final or best, got {which!r}")
        state = self.model_.state_dict()
        if which == "best" and self.best_state_ is not None:
            state = self.best_state_
        payload = {
            "magic": CHECKPOINT_MAGIC,
            "params": self.get_params(),
            "model_state": state,
            "optimizer_state": self.optimizer_.state_dict(),
            "generator_state": self.generator_.get_state(),
            "epochs_done": getattr(self, "epochs_done_", 0),
            "history": self.history_,
            "best_epoch": self.best_epoch_,
            "best_dice": self.best_dice_,
            "input_size": self.input_size_,
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
        return path

    @classmethod
    def load(cls, path):
        """Rebuild a fitted estimator (resumable) from a checkpoint file."""
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"no such checkpoint: {path}")
        try:
            payload = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as exc:
            raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(
                f"{path} is not a {CHECKPOINT_MAGIC} checkpoint"
            )
        est = cls(**payload["params"])
        est.config_ = NetworkConfig(1, est.num_classes, est.depth, est.base_channels)
        est.model_ = build_network(est.config_, est.seed)
        est.model_.load_state_dict(payload["model_state"])
        est.optimizer_ = torch.optim.Adam(est.model_.parameters(), lr=est.lr)
        est.optimizer_.load_state_dict(payload["optimizer_state"])
        est.generator_ = torch.Generator()
        est.generator_.set_state(payload["generator_state"])
        est.epochs_done_ = payload["epochs_done"]
        est.history_ = payload["history"]
        est.best_state_ = None
        est.best_epoch_ = payload["best_epoch"]
        est.best_dice_ = payload["best_dice"]
        est.input_size_ = payload["input_size"]
        return est

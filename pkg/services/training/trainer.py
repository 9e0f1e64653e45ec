"""
Alternating discriminator / generator optimization of the completion network.

One step: generator forward, a discriminator update on the hinge loss against the
detached composite, then a generator update on the weighted five-term loss with a
fresh discriminator pass. Batches are drawn from a generator seeded by
(train seed, step), so a resumed run replays the same batches.
"""
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import psutil

from components.errors import CheckpointError, ConfigError, DataError, NumericError
from components.losses.adversarial import hinge_d
from components.losses.feature_losses import FeatureBackbone
from components.losses.total import check_signs, generator_components, total_loss
from components.masks.mask_algebra import CompositeSample
from components.network.discriminator import PatchDiscriminator
from components.network.generator import GatedGenerator
from components.tensor.tensor import Tensor, backward
from models.completion_config import LOSS_TERMS, ExperimentConfig
from models.report_model import LossReport
from services.reporting.loss_curves import write_loss_curves
from services.training.checkpoint import (
    CONFIG_KEY,
    STEP_KEY,
    config_record,
    load_backbone_weights,
    load_checkpoint,
    read_config_record,
    save_checkpoint,
)
from services.training.optimizer import Adam

logger = logging.getLogger(__name__)

LOSS_LOG = "loss_log.tsv"
LOSS_CURVES = "loss_curves.html"
LOG_COLUMNS = ["step", *LOSS_TERMS, "total", "discriminator"]
LATEST = "latest.amgc"


def resident_mb() -> float:
    return psutil.Process(os.getpid()).memory_info().rss / 2 ** 20


def checkpoint_name(step: int) -> str:
    return f"step_{step:06d}.amgc"


@dataclass
class Batch:
    gt: Tensor  # (n, c, h, w) in [-1, 1]
    erased: Tensor
    weighted: np.ndarray  # (n, h, w)


def make_batch(samples: Sequence[CompositeSample]) -> Batch:
    if not samples:
        raise DataError("cannot build an empty batch")
    gt = np.stack([s.gt_image for s in samples]) * 2.0 - 1.0
    erased = np.stack([s.erased_image for s in samples]) * 2.0 - 1.0
    weighted = np.stack([s.weighted for s in samples])
    return Batch(gt=Tensor(gt), erased=Tensor(erased), weighted=weighted)


class CompletionTrainer:
    """Owns the networks, the frozen feature backbone and both optimizers."""

    def __init__(self, experiment: ExperimentConfig):
        self.experiment = experiment
        self.generator = GatedGenerator(experiment.model)
        self.discriminator = PatchDiscriminator(experiment.model)
        self.backbone = FeatureBackbone(experiment.backbone, in_channels=experiment.model.image_channels)
        if experiment.backbone.weights_path:
            self.backbone.load_arrays(load_backbone_weights(experiment.backbone.weights_path))
        train = experiment.train
        self.g_opt = Adam(self.generator.parameters(), train.g_lr, train.beta1, train.beta2, train.eps)
        self.d_opt = Adam(self.discriminator.parameters(), train.d_lr, train.beta1, train.beta2, train.eps)
        self.weights = train.effective_weights()
        self.step = 0

    def train_step(self, batch: Batch) -> LossReport:
        """
        One discriminator update then one generator update.

        Raises:
            NumericError: a loss term or gradient went non-finite; `component` names it.
        """
        resolution = self.experiment.model.resolution
        if batch.gt.shape[2:] != (resolution, resolution):
            raise ConfigError(f"batch extents {batch.gt.shape[2:]} do not match model.resolution {resolution}")

        output = self.generator(batch.erased, batch.weighted)

        self.d_opt.zero_grad()
        real = self.discriminator(batch.gt, batch.weighted, update_power=True)
        fake = self.discriminator(output.composited.detach(), batch.weighted)
        d_loss = hinge_d(real, fake)
        if not np.isfinite(d_loss.item()):
            raise NumericError(f"discriminator loss is {d_loss.item()}", component="discriminator")
        backward(d_loss)
        self.d_opt.step()

        self.g_opt.zero_grad()
        fake_scores = self.discriminator(output.composited, batch.weighted)
        components = generator_components(self.backbone, self.experiment.backbone, output, batch.gt,
                                          batch.weighted, fake_scores)
        total, report = total_loss(self.weights, components)
        check_signs(report)
        backward(total)
        self.g_opt.step()
        # the generator pass also reached the discriminator weights
        self.d_opt.zero_grad()

        report.discriminator = d_loss.item()
        report.step = self.step
        self.step += 1
        return report

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays: Dict[str, np.ndarray] = OrderedDict()
        arrays[CONFIG_KEY] = config_record(self.experiment.model_dump_json())
        arrays[STEP_KEY] = np.array(self.step, dtype=np.int64)
        for name, tensor in self.generator.parameters().items():
            arrays[name] = tensor.data
        for name, tensor in self.discriminator.parameters().items():
            arrays[name] = tensor.data
        arrays.update(self.discriminator.buffers())
        arrays.update(self.backbone.arrays())
        arrays.update(self.g_opt.state_arrays("optim.generator"))
        arrays.update(self.d_opt.state_arrays("optim.discriminator"))
        return arrays

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for prefix, params in (("generator", self.generator.parameters()),
                               ("discriminator", self.discriminator.parameters())):
            for name, tensor in params.items():
                if name not in arrays:
                    raise CheckpointError(f"checkpoint lacks {prefix} parameter {name}")
                if arrays[name].shape != tensor.data.shape:
                    raise CheckpointError(f"{name} has shape {arrays[name].shape}, expected {tensor.data.shape}")
                tensor.data = np.array(arrays[name], dtype=np.float64)
        missing = [k for k in self.discriminator.buffers() if k not in arrays]
        if missing:
            raise CheckpointError(f"checkpoint lacks power-iteration buffers {missing}")
        self.discriminator.load_buffers(arrays)
        self.backbone.load_arrays(arrays)
        self.g_opt.load_state_arrays("optim.generator", arrays)
        self.d_opt.load_state_arrays("optim.discriminator", arrays)
        self.step = int(arrays.get(STEP_KEY, 0))

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(path, self.state_arrays())

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path],
                        experiment: Optional[ExperimentConfig] = None) -> "CompletionTrainer":
        """Rebuild from a checkpoint; `experiment` replaces the stored config (e.g. to extend train.steps)."""
        arrays = load_checkpoint(path)
        if experiment is None:
            experiment = ExperimentConfig.model_validate(read_config_record(arrays))
        trainer = cls(experiment)
        trainer.load_state_arrays(arrays)
        logger.info("resumed from %s at step %d", path, trainer.step)
        return trainer


def _report_row(report: LossReport) -> Dict[str, float]:
    return {"step": report.step, **report.components(), "total": report.total,
            "discriminator": report.discriminator}


def _read_log(out_dir: Path, before_step: int) -> List[Dict[str, float]]:
    path = out_dir / LOSS_LOG
    if not path.is_file():
        return []
    df = pd.read_csv(path, sep="\t")
    return df[df["step"] < before_step].to_dict("records")


def write_loss_log(out_dir: Path, rows: List[Dict[str, float]]) -> Path:
    path = out_dir / LOSS_LOG
    pd.DataFrame(rows, columns=LOG_COLUMNS).to_csv(path, sep="\t", index=False, float_format="%.10g")
    return path


def batch_indices(seed: int, step: int, count: int, batch_size: int) -> np.ndarray:
    return np.random.default_rng([seed, step]).integers(0, count, size=batch_size)


def train(experiment: ExperimentConfig, samples: Sequence[CompositeSample], out_dir: Union[str, Path],
          resume: Optional[Union[str, Path]] = None) -> Tuple[CompletionTrainer, List[Dict[str, float]]]:
    """
    Train until `experiment.train.steps`, writing checkpoints, the loss log and loss curves.

    Returns the trainer and the loss-log rows (one per step, including any replayed
    from a resumed log).
    """
    if not samples:
        raise DataError("training split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = CompletionTrainer.from_checkpoint(resume, experiment) if resume else CompletionTrainer(experiment)
    train_config = experiment.train
    rows = _read_log(out_dir, trainer.step) if resume else []
    logger.info("training %d -> %d steps on %d samples, loss weights %s",
                trainer.step, train_config.steps, len(samples), trainer.weights.model_dump())

    while trainer.step < train_config.steps:
        picked = batch_indices(train_config.seed, trainer.step, len(samples), train_config.batch_size)
        report = trainer.train_step(make_batch([samples[i] for i in picked]))
        rows.append(_report_row(report))
        done = trainer.step
        if done % train_config.log_every == 0 or done == train_config.steps:
            terms = " ".join(f"{k}={v:.4f}" for k, v in report.components().items())
            logger.info("step %d: %s total=%.4f d=%.4f rss=%.0fMB", done, terms, report.total,
                        report.discriminator, resident_mb())
        if done % train_config.checkpoint_every == 0:
            trainer.save(out_dir / "checkpoints" / checkpoint_name(done))
            write_loss_log(out_dir, rows)

    trainer.save(out_dir / LATEST)
    write_loss_log(out_dir, rows)
    write_loss_curves(out_dir / LOSS_CURVES, rows)
    return trainer, rows

"""Loss-term ablation: one training run per dropped term plus the full objective."""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

from components.masks.mask_algebra import CompositeSample
from models.completion_config import ExperimentConfig
from models.report_model import AblationRow
from services.reporting.report_format import write_ablation_table
from services.training.evaluation import evaluate, model_completer
from services.training.trainer import train

logger = logging.getLogger(__name__)

# the adversarial term is never dropped
ABLATION_ROWS = [
    ("w/o perceptual loss", "perceptual"),
    ("w/o patch loss", "patch"),
    ("w/o style loss", "style"),
    ("w/o reconstruction loss", "reconstruction"),
    ("full objective", None),
]


def ablation_config(experiment: ExperimentConfig, dropped: Optional[str]) -> ExperimentConfig:
    train_config = experiment.train.model_copy(update={"ablate": [dropped] if dropped else []})
    return experiment.model_copy(update={"train": train_config})


def run_ablation(experiment: ExperimentConfig, train_samples: Sequence[CompositeSample],
                 eval_samples: Sequence[CompositeSample], out_dir: Union[str, Path],
                 region: str = "full", terms: Optional[Sequence[str]] = None) -> List[AblationRow]:
    """
    Train and evaluate every row of the ablation table under identical seeds.

    `terms` restricts the dropped terms (the full objective row always runs).
    Writes ablation.csv and ablation.md into `out_dir`.
    """
    out_dir = Path(out_dir)
    rows: List[AblationRow] = []
    for description, dropped in ABLATION_ROWS:
        if dropped is not None and terms is not None and dropped not in terms:
            continue
        config = ablation_config(experiment, dropped)
        logger.info("ablation row %r", description)
        trainer, _ = train(config, train_samples, out_dir / (dropped or "full"))
        outputs = model_completer(trainer.generator, config.train.batch_size)(eval_samples)
        report = evaluate(eval_samples, outputs, region=region, completer=description)
        rows.append(AblationRow(description=description, dropped=dropped, l1_error=report.l1_error,
                                l2_error=report.l2_error, psnr_db=report.psnr_db, ssim=report.ssim))
    write_ablation_table(out_dir, rows)
    return rows

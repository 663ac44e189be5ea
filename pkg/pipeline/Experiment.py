from pathlib import Path
from typing import List, Optional

from core.config import RunConfig
from core.models import EpochRecord
from modules.training.trainer import Trainer, write_history
from modules.visualization import plot_history
from utils.logger import Logger


class Experiment():
    """One training run described by a run config: metrics file, optional checkpoint and plot."""

    def __init__(self, run_cfg: RunConfig, metrics_path: Path, checkpoint_path: Optional[Path] = None,
                 plot_path: Optional[Path] = None, resume_from: Optional[Path] = None):
        self.logger = Logger.get_logger()
        self.run_cfg = run_cfg
        self.metrics_path = Path(metrics_path)
        self.checkpoint_path = checkpoint_path
        self.plot_path = plot_path
        self.resume_from = resume_from

    def run(self) -> List[EpochRecord]:
        trainer = Trainer(self.run_cfg.network, self.run_cfg.task, self.run_cfg.train)
        if self.resume_from:
            trainer.resume(self.resume_from)
        history = trainer.fit()
        if not history:
            self.logger.warning(f"Nothing to train: the run already covers {self.run_cfg.train.epochs} epochs")
        write_history(history, self.metrics_path)
        self.logger.info(f"Wrote {len(history)} epoch records to {self.metrics_path}")
        if self.checkpoint_path:
            trainer.save(self.checkpoint_path)
        if self.plot_path and history:
            plot_history(history, self.plot_path, title=trainer.net_cfg.preset or "")
        return history

"""Two-stage training.

Stage 0 pretrains the signal and text teachers with a plain contrastive loss on
(signal, report) pairs and freezes them. Stage 1 trains the image encoder, the
projection heads, the decoder and the temperatures on online renders, keeping the
checkpoint with the lowest validation loss.
"""

import functools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from config import ModelConfig, TrainConfig
from errors import ConfigError, DivergenceError, LifecycleError, ParameterError
from lab import autodiff as ad
from lab import checkpoint as ckpt_io
from lab import losses
from lab.augment import augment
from lab.dataset import Dataset
from lab.models import Student, Teachers
from lab.optim import AdamWState, adamw_step, cosine_warmup_lr
from lab.render import EcgImage, render
from lab.report import Vocabulary
from lab.signal_core import LabeledSample
from logger import get_logger
from utils import append_jsonl, config_hash, derive_seed, ensure_dir, format_duration, rng_for

logger = get_logger("ecglab.train")

TEACHERS_FILE = "teachers.ecsk"
BEST_FILE = "best.ecsk"
LOSS_LOG = "loss_log.jsonl"

TEACHER_TAU = 10.0
_STAGE0, _STAGE1 = 100, 101


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    student: Student
    teachers: Teachers
    log: List[Dict] = field(default_factory=list)
    run_dir: Optional[Path] = None

    @property
    def checkpoint_path(self) -> Optional[Path]:
        return self.run_dir / BEST_FILE if self.run_dir else None

    @property
    def log_path(self) -> Optional[Path]:
        return self.run_dir / LOSS_LOG if self.run_dir else None

    def eval_points(self) -> List[Dict]:
        return [row for row in self.log if "val_loss" in row]


def check_compatible(model: ModelConfig, train_config: TrainConfig):
    length = int(round(train_config.fs * train_config.duration))
    if model.signal_length != length:
        raise ConfigError(
            f"model.signal_length={model.signal_length} but training records hold {length} samples "
            f"({train_config.fs} Hz x {train_config.duration} s)"
        )


def signals_of(samples: Sequence[LabeledSample]) -> np.ndarray:
    return np.stack([s.record.samples for s in samples])


# stage 0 -----------------------------------------------------------------------


def teacher_hash(model: ModelConfig, config: TrainConfig, dataset: Dataset) -> str:
    return config_hash(
        {
            "model": model.model_dump(mode="json"),
            "teacher_steps": config.teacher_steps,
            "teacher_lr": config.teacher_lr,
            "teacher_batch_size": config.teacher_batch_size,
            "optimizer": config.optimizer.model_dump(mode="json"),
            "seed": config.seed,
            "dataset": dataset.digest(),
        }
    )


def pretrain_teachers(
    dataset: Dataset, model: ModelConfig, config: TrainConfig, run_dir=None, progress: bool = False
) -> Teachers:
    """Train and freeze the teachers, or reload them from ``run_dir`` when the config hash matches."""
    teachers = Teachers(model, Vocabulary(model.vocab))
    digest = teacher_hash(model, config, dataset)
    cached = Path(run_dir) / TEACHERS_FILE if run_dir else None
    if cached is not None and cached.exists():
        stored = ckpt_io.load_checkpoint(cached)
        if stored.config_hash == digest:
            teachers.graph.load_state_dict(stored.params)
            teachers.freeze()
            logger.info("teachers reloaded", extra={"path": str(cached)})
            return teachers
        logger.info("cached teachers are stale, retraining", extra={"path": str(cached)})

    train = dataset.train
    if len(train) < 2:
        raise ParameterError(f"teacher pretraining needs at least 2 training samples, got {len(train)}")
    batch = min(config.teacher_batch_size, len(train))
    state = AdamWState()
    params = teachers.graph.items
    last = math.nan
    for step in tqdm(range(1, config.teacher_steps + 1), desc="teachers", disable=not progress, leave=False):
        picks = rng_for(config.seed, _STAGE0, step).choice(len(train), size=batch, replace=False)
        chosen = [train[i] for i in picks]
        z_sig = teachers.signal(signals_of(chosen))
        z_txt = teachers.text([s.report for s in chosen])
        loss = losses.contrastive_loss(z_sig, z_txt, TEACHER_TAU, epsilon=0.0)
        last = loss.item()
        if not math.isfinite(last):
            raise DivergenceError(f"teacher loss diverged at step {step}", part="teacher_ctr")
        ad.backward(loss)
        grads = {name: p.grad for name, p in params()}
        lr = cosine_warmup_lr(step, config.teacher_steps, config.warmup_fraction, config.teacher_lr)
        adamw_step(params(), grads, state, lr, config.optimizer)
        teachers.graph.zero_grad()

    teachers.freeze()
    logger.info("teachers pretrained", extra={"steps": config.teacher_steps, "final_loss": last})
    if cached is not None:
        ckpt_io.save_checkpoint(
            ckpt_io.from_state(teachers.graph.state_dict(), config.teacher_steps, last, digest), cached
        )
    return teachers


# stage 1 -----------------------------------------------------------------------


class Trainer:
    def __init__(
        self,
        config: TrainConfig,
        model: ModelConfig,
        dataset: Dataset,
        teachers: Teachers,
        run_dir=None,
        workers: Optional[int] = None,
        digest: Optional[str] = None,
    ):
        check_compatible(model, config)
        if not dataset.train or not dataset.val:
            raise ParameterError(f"training needs non-empty train and val splits, got {dataset.counts()}")
        if not teachers.ready:
            raise LifecycleError("stage-1 training needs teachers that finished stage-0 pretraining")
        self.config = config
        self.model = model
        self.dataset = dataset
        self.teachers = teachers
        self.student = Student(model, config.render, config.loss)
        self.run_dir = ensure_dir(run_dir) if run_dir is not None else None
        self.workers = workers or config.workers
        self.digest = digest or config_hash(
            {"model": model.model_dump(mode="json"), "train": config.model_dump(mode="json")}
        )
        self.state = AdamWState()
        self.log: List[Dict] = []
        self.clean_image = functools.lru_cache(maxsize=config.render_cache)(self._render_clean)

    # images --------------------------------------------------------------

    def _render_clean(self, split: str, index: int) -> EcgImage:
        return render(self.dataset.splits[split][index].record, self.config.render)

    def batch_images(self, indices: Sequence[int], step: int) -> List[EcgImage]:
        def one(slot):
            position, index = slot
            seed = derive_seed(self.config.seed, step, position)
            return augment(self.clean_image("train", index), self.config.augment.updated(seed=seed))

        slots = list(enumerate(indices))
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(one, slots))
        return [one(slot) for slot in slots]

    # objective -----------------------------------------------------------

    def loss_parts(self, images, samples, mask_seed: int, training: bool):
        weights = self.config.loss
        signals = signals_of(samples)
        with ad.no_grad():
            z_sig = self.teachers.encode_signal(signals).detach()
            z_txt = self.teachers.encode_text([s.report for s in samples]).detach()
        student = self.student
        z_rec, z_ctr = student.project(student.encode_image(images))
        x_hat = student.decode_signal(z_rec, mask_seed=mask_seed, training=training)
        temps = student.temperatures
        volumes = losses.volume_matrix(z_ctr, z_txt, z_sig, weights.det_floor)
        return {
            "ctr": losses.contrastive_loss(z_ctr, z_txt, temps.tau_ctr(), weights.epsilon_smooth),
            "gram": losses.gram_loss(volumes, temps.tau_gram(), weights.epsilon_smooth),
            "mse": losses.recon_mse(x_hat, signals),
            "rule": losses.soft_rule_loss(x_hat, signals, weights),
        }

    def validate(self) -> float:
        val = self.dataset.val
        size = self.config.batch_size
        totals, counts = [], []
        with ad.no_grad():
            for start in range(0, len(val), size):
                chunk = val[start : start + size]
                images = [self.clean_image("val", start + k) for k in range(len(chunk))]
                _, breakdown = losses.total_loss(self.loss_parts(images, chunk, 0, training=False), self.config.loss)
                totals.append(breakdown["total"])
                counts.append(len(chunk))
        return float(np.average(totals, weights=counts))

    # loop ----------------------------------------------------------------

    def step(self, step: int) -> Dict:
        cfg = self.config
        train = self.dataset.train
        batch = min(cfg.batch_size, len(train))
        indices = rng_for(cfg.seed, _STAGE1, step).choice(len(train), size=batch, replace=False).tolist()
        samples = [train[i] for i in indices]
        images = self.batch_images(indices, step)

        parts = self.loss_parts(images, samples, derive_seed(cfg.seed, _STAGE1, step), training=True)
        try:
            total, breakdown = losses.total_loss(parts, cfg.loss)
        except DivergenceError as e:
            logger.error("training diverged", extra={"step": step, "part": e.part, "breakdown": e.breakdown})
            raise
        graph = self.student.graph
        ad.backward(total)
        grads = {name: p.grad for name, p in graph.items()}
        lr = cosine_warmup_lr(step, cfg.total_steps, cfg.warmup_fraction, cfg.lr)
        adamw_step(graph.items(), grads, self.state, lr, cfg.optimizer)
        self.student.temperatures.clamp()
        graph.zero_grad()

        return {"step": step, **breakdown, **self.student.temperatures.values()}

    def _record(self, row: Dict):
        self.log.append(row)
        if self.run_dir is not None:
            append_jsonl(self.run_dir / LOSS_LOG, [row])

    def run(self, progress: bool = False) -> TrainResult:
        cfg = self.config
        if self.run_dir is not None:
            (self.run_dir / LOSS_LOG).unlink(missing_ok=True)
        teacher_sum = self.teachers.graph.checksum()
        best: Optional[ckpt_io.Checkpoint] = None
        started = time.monotonic()

        logger.info(
            "stage-1 training started",
            extra={"steps": cfg.total_steps, "batch_size": cfg.batch_size, "config_hash": self.digest},
        )
        bar = tqdm(range(1, cfg.total_steps + 1), desc="train", disable=not progress)
        for step in bar:
            row = self.step(step)
            self._record(row)
            bar.set_postfix(total=f"{row['total']:.4f}")

            if step % cfg.eval_interval == 0 or step == cfg.total_steps:
                val_loss = self.validate()
                improved = best is None or val_loss < best.val_loss
                if improved:
                    best = ckpt_io.from_state(self.student.graph.state_dict(), step, val_loss, self.digest)
                    if self.run_dir is not None:
                        ckpt_io.save_checkpoint(best, self.run_dir / BEST_FILE)
                self._record({"step": step, "val_loss": val_loss, "improved": improved})
                logger.debug("validation", extra={"step": step, "val_loss": val_loss, "improved": improved})

        if self.teachers.graph.checksum() != teacher_sum:
            raise DivergenceError("teacher parameters changed during stage-1 training", part="teachers")
        self.student.graph.load_state_dict(best.params)
        elapsed = format_duration(time.monotonic() - started)
        logger.info(
            "training finished", extra={"best_step": best.step, "best_val_loss": best.val_loss, "elapsed": elapsed}
        )
        return TrainResult(best, self.student, self.teachers, self.log, self.run_dir)


def train(
    config: TrainConfig,
    model: ModelConfig,
    dataset: Dataset,
    run_dir=None,
    workers: Optional[int] = None,
    digest: Optional[str] = None,
    teachers: Optional[Teachers] = None,
    progress: bool = False,
) -> TrainResult:
    """Run stage 0 if needed, then stage 1; returns the lowest-validation-loss checkpoint."""
    check_compatible(model, config)
    if run_dir is not None:
        ensure_dir(run_dir)
    if teachers is None:
        teachers = pretrain_teachers(dataset, model, config, run_dir, progress)
    trainer = Trainer(config, model, dataset, teachers, run_dir, workers, digest)
    return trainer.run(progress)

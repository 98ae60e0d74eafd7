"""
Training loop, evaluation and the experiment drivers built on it:
ablations, data-size and frame-count sweeps, and class-extension fine-tuning.
"""

import os
import json
import time
import logging
from dataclasses import dataclass, asdict, field, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset, Sampler

import config
from errors import ConfigurationError, DigNetError, TrainingDivergedError, ValidationError
from gesture_dataset import CLASS_NAMES, DYNAMIC_CLASSES, STATIC_CLASSES, GestureSample
from preprocess import PreprocessConfig, ProcessedClip, preprocess
from rstdal import MarginParams, RSTDALLoss, extend_prototypes
from stgt import DiGNet, ModelConfig, batch_from_clips, load_checkpoint, save_checkpoint
from metrics import MetricsReport, PredictionRecord, evaluate_records

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = config.TRAIN_CONFIG['learning_rate']
    epochs: int = config.TRAIN_CONFIG['epochs']
    batch_size: int = config.TRAIN_CONFIG['batch_size']
    weight_decay: float = config.TRAIN_CONFIG['weight_decay']
    patience: int = config.TRAIN_CONFIG['patience']
    optimizer: str = config.TRAIN_CONFIG['optimizer']
    loss: str = config.TRAIN_CONFIG['loss']
    seed: int = config.TRAIN_CONFIG['seed']
    num_workers: int = config.TRAIN_CONFIG['num_workers']
    balanced: bool = True
    device: str = config.DEVICE

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValidationError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValidationError("epochs, batch size and patience must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight decay must be >= 0")
        if self.optimizer not in ('lion', 'adamw'):
            raise ConfigurationError(f"unknown optimizer '{self.optimizer}'")
        if self.loss not in ('rstdal', 'cross-entropy'):
            raise ConfigurationError(f"unknown loss '{self.loss}'")

    def to_dict(self) -> Dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------

class Lion(torch.optim.Optimizer):
    """
    Sign-of-interpolated-momentum update with decoupled weight decay:
        c = b1 m + (1 - b1) g;  p -= lr (sign(c) + wd p);  m = b2 m + (1 - b2) g
    """

    def __init__(self, params, lr: float = 1e-4, betas: Tuple[float, float] = config.LION_BETAS,
                 weight_decay: float = 0.0):
        if lr < 0:
            raise ValueError(f"invalid learning rate {lr}")
        super().__init__(params, dict(lr=lr, betas=betas, weight_decay=weight_decay))

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            beta1, beta2 = group['betas']
            for p in group['params']:
                if p.grad is None:
                    continue
                state = self.state[p]
                if 'exp_avg' not in state:
                    state['exp_avg'] = torch.zeros_like(p)
                m = state['exp_avg']
                update = (m * beta1 + p.grad * (1 - beta1)).sign_()
                p.add_(update + group['weight_decay'] * p, alpha=-group['lr'])
                m.mul_(beta2).add_(p.grad, alpha=1 - beta2)
        return loss


def parameter_groups(model: DiGNet, criterion: Optional[torch.nn.Module], weight_decay: float) -> List[Dict]:
    """Prototypes and loss parameters are excluded from weight decay."""
    no_decay_ids = set()
    no_decay = []
    if model.head.mode == 'cosine':
        no_decay.append(model.head.prototypes)
        no_decay_ids.add(id(model.head.prototypes))
    if criterion is not None:
        for p in criterion.parameters():
            no_decay.append(p)
            no_decay_ids.add(id(p))
    decay = [p for p in model.parameters() if id(p) not in no_decay_ids]
    groups = [{'params': decay, 'weight_decay': weight_decay, 'name': 'decay'}]
    if no_decay:
        groups.append({'params': no_decay, 'weight_decay': 0.0, 'name': 'no_decay'})
    return groups


def make_optimizer(groups: List[Dict], cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == 'lion':
        return Lion(groups, lr=cfg.learning_rate, betas=config.LION_BETAS)
    return torch.optim.AdamW(groups, lr=cfg.learning_rate)


@torch.no_grad()
def renormalize_prototypes(model: DiGNet, tolerance: float = 1e-6) -> None:
    if model.head.mode != 'cosine':
        return
    theta = model.head.prototypes
    norms = theta.norm(dim=1, keepdim=True)
    off = (norms - 1).abs() > tolerance
    if bool(off.any()):
        theta.copy_(torch.where(off, theta / norms.clamp(min=1e-12), theta))


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

class ClipDataset(Dataset):
    def __init__(self, clips: Sequence[ProcessedClip]):
        self.clips = list(clips)

    def __len__(self):
        return len(self.clips)

    def __getitem__(self, index):
        return self.clips[index]


def collate_clips(clips: List[ProcessedClip]) -> Dict[str, torch.Tensor]:
    return batch_from_clips(clips)


class ClassBalancedSampler(Sampler):
    """Round-robin over classes, drawing each class's clips in a seeded shuffled cycle."""

    def __init__(self, labels: Sequence[int], seed: int = 0):
        self.labels = np.asarray(labels)
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def __len__(self):
        return len(self.labels)

    def __iter__(self) -> Iterator[int]:
        rng = np.random.default_rng([self.seed, self.epoch])
        classes = sorted(set(int(c) for c in self.labels))
        pools = {c: list(rng.permutation(np.flatnonzero(self.labels == c))) for c in classes}
        cursors = {c: 0 for c in classes}
        order = list(rng.permutation(classes))
        out = []
        while len(out) < len(self.labels):
            for c in order:
                pool = pools[c]
                out.append(int(pool[cursors[c] % len(pool)]))
                cursors[c] += 1
                if len(out) == len(self.labels):
                    break
        return iter(out)


def make_loader(clips: Sequence[ProcessedClip], cfg: TrainConfig, shuffle: bool,
                epoch: int = 0) -> DataLoader:
    dataset = ClipDataset(clips)
    sampler = None
    if shuffle:
        if cfg.balanced:
            sampler = ClassBalancedSampler([c.label for c in clips], cfg.seed)
        else:
            sampler = torch.utils.data.RandomSampler(
                dataset, generator=torch.Generator().manual_seed(cfg.seed * 1000 + epoch))
        if hasattr(sampler, 'set_epoch'):
            sampler.set_epoch(epoch)
    return DataLoader(dataset, batch_size=cfg.batch_size, sampler=sampler, shuffle=False,
                      num_workers=cfg.num_workers, collate_fn=collate_clips)


def select_classes(clips: Sequence[ProcessedClip], class_names: Sequence[str]) -> List[ProcessedClip]:
    """Keep clips of the named classes, relabelled to their position in `class_names`."""
    index = {name: i for i, name in enumerate(class_names)}
    return [replace(c, label=index[CLASS_NAMES[c.label]]) for c in clips if CLASS_NAMES[c.label] in index]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    best_epoch: int
    best_val_loss: float
    history: List[Dict] = field(default_factory=list)


def make_criterion(model: DiGNet, cfg: TrainConfig, margin: Optional[MarginParams] = None):
    """Callable (ModelOutput, batch) -> scalar loss, and its module (or None)."""
    margin = margin or MarginParams()
    if model.head.mode == 'cosine':
        module = RSTDALLoss(margin, use_margin=(cfg.loss == 'rstdal'))

        def criterion(out, batch):
            return module(out.embedding, batch['labels'], batch['rho'], batch['xi'], model.head.prototypes)
        return criterion, module

    if cfg.loss == 'rstdal':
        raise ConfigurationError("the margin loss needs the cosine head; use head_mode='cosine'")

    def cross_entropy(out, batch):
        return F.cross_entropy(out.logits, batch['labels'])
    return cross_entropy, None


class Trainer:
    def __init__(self, model: DiGNet, cfg: TrainConfig, margin: Optional[MarginParams] = None,
                 class_names: Optional[Sequence[str]] = None):
        self.model = model.to(cfg.device)
        self.cfg = cfg
        self.margin = margin or MarginParams()
        self.class_names = list(class_names or CLASS_NAMES[:model.cfg.num_classes])
        self.criterion, self.criterion_module = make_criterion(model, cfg, self.margin)
        self.optimizer = make_optimizer(parameter_groups(model, self.criterion_module, cfg.weight_decay), cfg)
        self.scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(self.optimizer, T_max=cfg.epochs)
        self.logger = logging.getLogger(__name__)

    def _to_device(self, batch):
        return {k: v.to(self.cfg.device) for k, v in batch.items()}

    def margin_state(self) -> Dict:
        """Margin parameters as trained so far; learned mu, lam, rho0 override the initial ones."""
        state = self.margin.to_dict()
        if self.criterion_module is not None:
            state.update(self.criterion_module.current())
        return state

    def evaluate_loss(self, clips: Sequence[ProcessedClip]) -> Tuple[float, float]:
        """(mean loss, success rate) in inference mode."""
        self.model.eval()
        total, correct, count = 0.0, 0, 0
        with torch.no_grad():
            for batch in make_loader(clips, self.cfg, shuffle=False):
                batch = self._to_device(batch)
                out = self.model(batch['x'], batch['depth'])
                n = batch['labels'].shape[0]
                total += float(self.criterion(out, batch)) * n
                correct += int((out.logits.argmax(dim=1) == batch['labels']).sum())
                count += n
        return total / max(count, 1), correct / max(count, 1)

    def fit(self, train_clips: Sequence[ProcessedClip], val_clips: Sequence[ProcessedClip],
            out_dir: str) -> TrainResult:
        if not train_clips or not val_clips:
            raise ValidationError("training needs non-empty train and val splits")
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, 'best.pt')
        log_path = os.path.join(out_dir, 'train_log.jsonl')
        torch.manual_seed(self.cfg.seed)

        best_loss, best_epoch, stale = float('inf'), -1, 0
        history = []
        saved = False
        with open(log_path, 'w', encoding='utf-8') as log:
            for epoch in range(self.cfg.epochs):
                started = time.perf_counter()
                self.model.train()
                lr = self.optimizer.param_groups[0]['lr']
                losses = []
                for batch in make_loader(train_clips, self.cfg, shuffle=True, epoch=epoch):
                    batch = self._to_device(batch)
                    out = self.model(batch['x'], batch['depth'])
                    loss = self.criterion(out, batch)
                    if not torch.isfinite(loss):
                        self.logger.error(f"Loss became non-finite at epoch {epoch}")
                        raise TrainingDivergedError(f"non-finite loss at epoch {epoch}",
                                                    checkpoint_path if saved else None)
                    self.optimizer.zero_grad()
                    loss.backward()
                    self.optimizer.step()
                    renormalize_prototypes(self.model)
                    losses.append(float(loss))
                self.scheduler.step()

                val_loss, val_success = self.evaluate_loss(val_clips)
                record = {
                    'epoch': epoch, 'lr': lr, 'train_loss': float(np.mean(losses)),
                    'val_loss': val_loss, 'val_success': val_success,
                    'seconds': round(time.perf_counter() - started, 3),
                }
                history.append(record)
                log.write(json.dumps(record) + '\n')
                log.flush()
                self.logger.info(f"Epoch {epoch}: train {record['train_loss']:.4f} "
                                 f"val {val_loss:.4f} success {val_success:.3f}")

                if val_loss < best_loss:
                    best_loss, best_epoch, stale = val_loss, epoch, 0
                    save_checkpoint(checkpoint_path, self.model, self.class_names,
                                    margin=self.margin_state(), epoch=epoch, val_loss=val_loss,
                                    extra={'train': self.cfg.to_dict()})
                    saved = True
                else:
                    stale += 1
                    if stale >= self.cfg.patience:
                        self.logger.info(f"Early stopping at epoch {epoch} (best epoch {best_epoch})")
                        break

        return TrainResult(checkpoint_path, log_path, best_epoch, best_loss, history)


def train(model_cfg: ModelConfig, train_clips: Sequence[ProcessedClip], val_clips: Sequence[ProcessedClip],
          cfg: TrainConfig, out_dir: str, margin: Optional[MarginParams] = None,
          class_names: Optional[Sequence[str]] = None) -> TrainResult:
    """Train a fresh model; the best-validation checkpoint is kept in out_dir."""
    torch.manual_seed(cfg.seed)
    model = DiGNet(replace(model_cfg, seed=cfg.seed))
    return Trainer(model, cfg, margin, class_names).fit(train_clips, val_clips, out_dir)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def predict_clips(model: DiGNet, clips: Sequence[ProcessedClip], batch_size: int = 16) -> np.ndarray:
    """Class probabilities (N, m) in inference mode."""
    model.eval()
    device = next(model.parameters()).device
    out = []
    with torch.no_grad():
        for start in range(0, len(clips), batch_size):
            batch = batch_from_clips(clips[start:start + batch_size], device=device)
            out.append(model(batch['x'], batch['depth']).probabilities.cpu().numpy())
    return np.concatenate(out) if out else np.zeros((0, model.cfg.num_classes))


def evaluate(model: DiGNet, clips: Sequence[ProcessedClip],
             window_predictions: Optional[Dict[str, List[int]]] = None,
             batch_size: int = 16) -> Tuple[List[PredictionRecord], MetricsReport]:
    probs = predict_clips(model, clips, batch_size)
    records = []
    for clip, p in zip(clips, probs):
        records.append(PredictionRecord(
            clip_id=clip.clip_id, true_label=int(clip.label), predicted_label=int(np.argmax(p)),
            distance=float(clip.distance), scores=p.tolist(), environment=clip.environment,
            window_predictions=list((window_predictions or {}).get(clip.clip_id, [])),
        ))
    return records, evaluate_records(records, model.cfg.num_classes)


def success_rate(model: DiGNet, clips: Sequence[ProcessedClip], labels: Optional[Sequence[int]] = None) -> float:
    """Success over clips whose label is in `labels` (all when None); NaN if none qualify."""
    chosen = [c for c in clips if labels is None or c.label in labels]
    if not chosen:
        return float('nan')
    probs = predict_clips(model, chosen)
    return float(np.mean(np.argmax(probs, axis=1) == np.array([c.label for c in chosen])))


# ---------------------------------------------------------------------------
# Clip provider shared by the experiment drivers
# ---------------------------------------------------------------------------

class ClipProvider:
    """Preprocesses raw samples on demand, cached per (split, window)."""

    def __init__(self, samples: Sequence[GestureSample], preprocess_cfg: Optional[PreprocessConfig] = None):
        self.samples = list(samples)
        self.preprocess_cfg = preprocess_cfg or PreprocessConfig()
        self._cache: Dict[Tuple[str, int], List[ProcessedClip]] = {}

    def clips(self, split: str, window: Optional[int] = None) -> List[ProcessedClip]:
        window = window or self.preprocess_cfg.window
        key = (split, window)
        if key not in self._cache:
            cfg = replace(self.preprocess_cfg, window=window)
            self._cache[key] = [preprocess(s, cfg) for s in self.samples if s.split == split]
            logger.info(f"Preprocessed {len(self._cache[key])} {split} clips at window {window}")
        return self._cache[key]


# ---------------------------------------------------------------------------
# Ablations and sweeps
# ---------------------------------------------------------------------------

def variant_setup(name: str, model_cfg: ModelConfig, train_cfg: TrainConfig,
                  window: int) -> Tuple[ModelConfig, TrainConfig, int]:
    if name not in config.ABLATION_VARIANTS:
        raise ValidationError(f"unknown ablation variant '{name}'")
    if name == 'no-dada':
        return replace(model_cfg, use_dada=False), train_cfg, window
    if name == 'no-stg':
        return replace(model_cfg, use_stg=False), train_cfg, window
    if name == 'no-graph-transformer':
        return replace(model_cfg, use_transformer=False), train_cfg, window
    if name == 'no-rstdal':
        return model_cfg, replace(train_cfg, loss='cross-entropy'), window
    if name == 'short-sequence':
        return model_cfg, train_cfg, config.SHORT_SEQUENCE_WINDOW
    return model_cfg, train_cfg, window


def _failed(key: str, value, e: Exception) -> Dict:
    logger.error(f"{key} {value} failed: {e}")
    return {key: value, 'status': 'failed', 'error': str(e)}


def ablate(provider: ClipProvider, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir: str,
           variants: Sequence[str] = tuple(config.ABLATION_VARIANTS),
           margin: Optional[MarginParams] = None) -> List[Dict]:
    """One trained model and report per variant; failures are isolated."""
    rows = []
    for name in variants:
        try:
            m_cfg, t_cfg, window = variant_setup(name, model_cfg, train_cfg, provider.preprocess_cfg.window)
            train_clips, val_clips = provider.clips('train', window), provider.clips('val', window)
            test_clips = provider.clips('test', window)
            if any(c.window > window for c in train_clips):
                raise ValidationError(f"variant {name} expected window at most {window}")
            result = train(m_cfg, train_clips, val_clips, t_cfg, os.path.join(out_dir, name), margin)
            model, _ = load_checkpoint(result.checkpoint_path)
            _, report = evaluate(model, test_clips)
            rows.append({'variant': name, 'status': 'ok', 'window': window,
                         'best_epoch': result.best_epoch, 'report': report.to_dict()})
            logger.info(f"Variant {name}: success {report.success_rate:.3f}")
        except Exception as e:
            rows.append(_failed('variant', name, e))
    return rows


def sweep_frames(provider: ClipProvider, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir: str,
                 windows: Sequence[int], margin: Optional[MarginParams] = None) -> List[Dict]:
    """Success overall and on the dynamic/static subsets per input window length n."""
    rows = []
    for n in windows:
        try:
            if n < 1:
                raise ValidationError(f"window length must be >= 1, got {n}")
            result = train(model_cfg, provider.clips('train', n), provider.clips('val', n), train_cfg,
                           os.path.join(out_dir, f"n{n}"), margin)
            model, _ = load_checkpoint(result.checkpoint_path)
            test_clips = provider.clips('test', n)
            rows.append({
                'n': n, 'status': 'ok',
                'success': success_rate(model, test_clips),
                'success_dynamic': success_rate(model, test_clips, DYNAMIC_CLASSES),
                'success_static': success_rate(model, test_clips, STATIC_CLASSES),
            })
        except Exception as e:
            rows.append(_failed('n', n, e))
    return rows


def subsample(clips: Sequence[ProcessedClip], fraction: float, seed: int) -> List[ProcessedClip]:
    """Seeded uniform subsample without replacement, at least one clip."""
    if not 0 < fraction <= 1:
        raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
    size = max(1, int(round(fraction * len(clips))))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(clips), size=size, replace=False))
    return [clips[i] for i in keep]


def sweep_data(provider: ClipProvider, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir: str,
               fractions: Sequence[float] = tuple(config.DATA_SWEEP_FRACTIONS),
               repeats: int = config.DATA_SWEEP_REPEATS,
               margin: Optional[MarginParams] = None) -> List[Dict]:
    """Mean and std of test success per training-set fraction over `repeats` subsamples."""
    train_all, val_clips, test_clips = provider.clips('train'), provider.clips('val'), provider.clips('test')
    rows = []
    for fi, fraction in enumerate(fractions):
        try:
            scores = []
            for rep in range(repeats):
                part = subsample(train_all, fraction, seed=train_cfg.seed * 10007 + fi * 101 + rep)
                run_cfg = replace(train_cfg, seed=train_cfg.seed + rep)
                result = train(model_cfg, part, val_clips, run_cfg,
                               os.path.join(out_dir, f"f{fraction:g}", f"r{rep}"), margin)
                model, _ = load_checkpoint(result.checkpoint_path)
                scores.append(success_rate(model, test_clips))
            rows.append({'fraction': fraction, 'status': 'ok', 'clips': len(part),
                         'mean': float(np.mean(scores)), 'std': float(np.std(scores)), 'scores': scores})
        except Exception as e:
            rows.append(_failed('fraction', fraction, e))
    return rows


# ---------------------------------------------------------------------------
# Class extension
# ---------------------------------------------------------------------------

def expand_model(model: DiGNet, new_classes: int, seed: int = 0) -> DiGNet:
    """Copy of `model` with `new_classes` extra unit prototype rows; old rows unchanged."""
    if model.head.mode != 'cosine':
        raise ConfigurationError("class extension needs the cosine head")
    cfg = replace(model.cfg, num_classes=model.cfg.num_classes + new_classes)
    expanded = DiGNet(cfg)
    state = {k: v for k, v in model.state_dict().items() if k != 'head.prototypes'}
    expanded.load_state_dict(state, strict=False)
    with torch.no_grad():
        expanded.head.prototypes.copy_(extend_prototypes(model.head.prototypes, new_classes, seed))
    return expanded


def finetune_extend(checkpoint_path: str, provider: ClipProvider, counts: Sequence[int],
                    train_cfg: TrainConfig, out_dir: str, seeds: Sequence[int] = (0,),
                    margin: Optional[MarginParams] = None,
                    new_classes: Optional[Sequence[str]] = None) -> List[Dict]:
    """
    Extend a checkpoint's classes with `new_classes` (default: every class
    it lacks), fine-tuning on `count` clips per new class plus as many
    replayed clips per old class.
    """
    base, payload = load_checkpoint(checkpoint_path)
    old_names = list(payload['class_names'])
    if len(set(old_names)) != len(old_names):
        raise ValidationError(f"checkpoint class list has duplicates: {old_names}")
    if new_classes is None:
        new_names = [n for n in CLASS_NAMES if n not in old_names]
    else:
        new_names = list(new_classes)
        unknown = [n for n in new_names if n not in CLASS_NAMES]
        if unknown:
            raise ValidationError(f"unknown class names: {unknown}")
        clash = [n for n in new_names if n in old_names]
        if clash or len(set(new_names)) != len(new_names):
            raise ValidationError(f"new class names collide with the checkpoint's classes: {clash or new_names}")
    if not new_names:
        raise ValidationError("no new classes to add")
    all_names = old_names + new_names
    if base.cfg.num_classes != len(old_names):
        raise ValidationError("checkpoint head size does not match its class list")

    train_all = select_classes(provider.clips('train'), all_names)
    val_clips = select_classes(provider.clips('val'), all_names)
    test_clips = select_classes(provider.clips('test'), all_names)
    old_labels = list(range(len(old_names)))
    new_labels = list(range(len(old_names), len(all_names)))

    rows = []
    for count in counts:
        for seed in seeds:
            try:
                model = expand_model(base, len(new_names), seed)
                if count > 0:
                    rng = np.random.default_rng([seed, count])
                    chosen = []
                    for label in old_labels + new_labels:
                        pool = [c for c in train_all if c.label == label]
                        take = min(count, len(pool))
                        chosen.extend(pool[i] for i in sorted(rng.choice(len(pool), take, replace=False)))
                    run_cfg = replace(train_cfg, seed=seed)
                    result = Trainer(model, run_cfg, margin, all_names).fit(
                        chosen, val_clips, os.path.join(out_dir, f"c{count}", f"s{seed}"))
                    model, _ = load_checkpoint(result.checkpoint_path)
                rows.append({
                    'count': count, 'seed': seed, 'status': 'ok',
                    'success': success_rate(model, test_clips),
                    'success_new': success_rate(model, test_clips, new_labels),
                    'success_old': success_rate(model, test_clips, old_labels),
                })
                logger.info(f"Fine-tune with {count} clips/class (seed {seed}): "
                            f"new {rows[-1]['success_new']:.3f}, old {rows[-1]['success_old']:.3f}")
            except Exception as e:
                row = _failed('count', count, e)
                row['seed'] = seed
                rows.append(row)
    return rows

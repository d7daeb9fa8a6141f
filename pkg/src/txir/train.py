"""Loss, optimizer, training loop and the ablation switchboard.

Training is fully deterministic under a fixed seed: dataset shuffling, crop
offsets and parameter initialization all derive from it, and gradient
reduction happens in a fixed single-writer order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .blocks import ForwardSwitches
from .data import SampleRecord, crop_offsets, read_pgm, record_prompt
from .metrics import EvalReport, binarize
from .network import (ModelConfig, ModelParams, init_model, load_checkpoint,
                      model_forward, save_checkpoint)
from .rng import fnv1a64
from .tensor import Tensor, TxirError, no_grad

GENERIC_PROMPT = "A photo of a target in the background"

ABLATIONS = ("full", "no_text", "no_tgfa", "no_tgsi", "no_dpm", "no_ca",
             "no_alpha", "no_beta", "concat_fusion")

LOSS_EPS = 1e-6


class TrainAbort(TxirError):
    """Training stopped on non-finite numbers; carries diagnostics."""

    def __init__(self, message: str, epoch: int, step: int, lr: float,
                 grad_norms: dict[str, float]):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.lr = lr
        self.grad_norms = grad_norms


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.05
    batch: int = 4
    epochs: int = 50
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    ablation: str = "full"
    default_prompt_mode: str = "generic_prompt"   # or "zero_vector"

    def __post_init__(self):
        if self.lr <= 0 or self.epochs <= 0 or self.batch <= 0:
            raise TxirError("lr, epochs and batch must be positive")
        if self.ablation not in ABLATIONS:
            raise TxirError(f"unknown ablation {self.ablation!r}; one of {ABLATIONS}")
        if self.default_prompt_mode not in ("generic_prompt", "zero_vector"):
            raise TxirError(f"unknown default_prompt_mode {self.default_prompt_mode!r}")

    def to_json(self) -> str:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        d = json.loads(text)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def config_hash(train_cfg: TrainConfig, model_cfg: ModelConfig) -> str:
    blob = train_cfg.to_json() + "|" + model_cfg.to_json()
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def ablation_setup(name: str) -> tuple[str, ForwardSwitches, bool]:
    """Map an ablation name to (fusion architecture, forward switches, uses_text)."""
    if name not in ABLATIONS:
        raise TxirError(f"unknown ablation {name!r}")
    fusion = "concat" if name == "concat_fusion" else "modulate"
    switches = ForwardSwitches(
        text_gate=name not in ("no_tgfa",),
        dpm=name not in ("no_tgfa", "no_dpm"),
        ca=name not in ("no_tgfa", "no_ca"),
        tgsi={"no_tgsi": "identity", "concat_fusion": "concat"}.get(name, "modulate"),
        alpha=name != "no_alpha",
        beta=name != "no_beta",
    )
    return fusion, switches, name != "no_text"


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def soft_iou_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """1 - (sum(pred*gt)+eps) / (sum(pred)+sum(gt)-sum(pred*gt)+eps), batch-summed.

    Differentiable IoU surrogate in [0, 1]; exact zero only when pred matches
    a binary gt everywhere.
    """
    if pred.shape != gt.shape:
        raise T.ShapeError(f"loss shapes differ: {pred.shape} vs {gt.shape}")
    eps = Tensor(np.asarray(LOSS_EPS, dtype=pred.dtype))
    one = Tensor(np.asarray(1.0, dtype=pred.dtype))
    inter = T.tensor_sum(T.mul(pred, gt))
    union = T.sub(T.add(T.tensor_sum(pred), T.tensor_sum(gt)), inter)
    return T.sub(one, T.div(T.add(inter, eps), T.add(union, eps)))


# --------------------------------------------------------------------------
# AdamW (decoupled weight decay; biases exempt)
# --------------------------------------------------------------------------

@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(named_params, state: AdamWState, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay update over (name, tensor, decay) triples.

    Parameters without gradients are skipped; decay multiplies the parameter
    by (1 - lr*wd) independently of the gradient term.
    """
    beta1, beta2 = cfg.betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, param, decay in named_params:
        g = param.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        else:
            v = state.v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        new = param.data.copy()
        if decay and cfg.weight_decay != 0.0:
            new *= 1.0 - cfg.lr * cfg.weight_decay
        new -= cfg.lr * update.astype(new.dtype)
        param.data = new
        param.grad = None


# --------------------------------------------------------------------------
# embedding resolution
# --------------------------------------------------------------------------

class PromptResolver:
    """Maps records to embedding vectors, honoring the no-text default mode."""

    def __init__(self, provider, use_text: bool, default_mode: str):
        self.provider = provider
        self.use_text = use_text
        self.default_mode = default_mode
        self._cache: dict[str, np.ndarray] = {}

    @property
    def d_t(self) -> int:
        return self.provider.d_t

    def vector(self, record: SampleRecord | None) -> np.ndarray:
        if self.use_text and record is not None:
            prompt = record_prompt(record)
        elif self.default_mode == "zero_vector":
            return np.zeros(self.provider.d_t, dtype=np.float64)
        else:
            prompt = GENERIC_PROMPT
        vec = self._cache.get(prompt)
        if vec is None:
            vec = self.provider.get(prompt).vector
            self._cache[prompt] = vec
        return vec


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------

class _LoadedSet:
    """Images, masks and embeddings preloaded as float32 arrays."""

    def __init__(self, records: list[SampleRecord], resolver: PromptResolver, size: int):
        self.records = records
        self.size = size
        self.images = []
        self.masks = []
        self.embeddings = []
        for r in records:
            self.images.append(read_pgm(r.image_path))
            self.masks.append(read_pgm(r.mask_path))
            self.embeddings.append(resolver.vector(r).astype(np.float32))

    def batch(self, indices, crop_seeds=None):
        imgs, msks, embs = [], [], []
        for pos, idx in enumerate(indices):
            img = self.images[idx]
            msk = self.masks[idx]
            if crop_seeds is not None and img.shape[0] > self.size:
                oy, ox = crop_offsets(crop_seeds[pos], img.shape[0], img.shape[1], self.size)
            else:
                oy = (img.shape[0] - self.size) // 2
                ox = (img.shape[1] - self.size) // 2
            window = (slice(oy, oy + self.size), slice(ox, ox + self.size))
            imgs.append(img[window].astype(np.float32) / 255.0)
            msks.append((msk[window] > 0).astype(np.float32))
            embs.append(self.embeddings[idx])
        n = len(indices)
        return (np.stack(imgs).reshape(n, 1, self.size, self.size),
                np.stack(msks).reshape(n, 1, self.size, self.size),
                np.stack(embs))


# --------------------------------------------------------------------------
# evaluation helper
# --------------------------------------------------------------------------

def _evaluate_loaded(params: ModelParams, loaded: _LoadedSet,
                     switches: ForwardSwitches, batch: int = 8,
                     tau: float = 0.5) -> EvalReport:
    report = EvalReport()
    with no_grad():
        for start in range(0, len(loaded.records), batch):
            idx = list(range(start, min(start + batch, len(loaded.records))))
            imgs, msks, embs = loaded.batch(idx)
            prob = model_forward(Tensor(imgs), Tensor(embs), params, switches)
            for row, i in enumerate(idx):
                report.add_sample(loaded.records[i].name,
                                  binarize(prob.data[row, 0], tau),
                                  msks[row, 0] > 0.5)
    return report


def evaluate_records(params: ModelParams, records: list[SampleRecord],
                     resolver: PromptResolver, switches: ForwardSwitches,
                     size: int, batch: int = 8, tau: float = 0.5) -> EvalReport:
    """Center-cropped, no-grad evaluation over a record list."""
    return _evaluate_loaded(params, _LoadedSet(records, resolver, size), switches,
                            batch=batch, tau=tau)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_iou: float
    val_f1: float
    val_pd: float
    val_fa_e6: float
    seconds: float


@dataclass
class TrainLog:
    seed: int
    config_hash: str
    epochs: list[EpochLog] = field(default_factory=list)
    wall_time: float = 0.0
    best_epoch: int = -1
    best_val_iou: float = -1.0

    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,loss,val_iou,val_f1,val_pd,val_fa_e6,seconds\n")
            for e in self.epochs:
                fh.write(f"{e.epoch},{e.loss:.8f},{e.val_iou:.6f},{e.val_f1:.6f},"
                         f"{e.val_pd:.6f},{e.val_fa_e6:.4f},{e.seconds:.3f}\n")

    def write_meta(self, path, train_cfg: TrainConfig) -> None:
        with open(path, "w") as fh:
            json.dump({"seed": self.seed, "config_hash": self.config_hash,
                       "wall_time": self.wall_time, "best_epoch": self.best_epoch,
                       "best_val_iou": self.best_val_iou,
                       "config": json.loads(train_cfg.to_json())}, fh, indent=2)
            fh.write("\n")


@dataclass
class TrainResult:
    checkpoint_path: str
    log: TrainLog
    params: ModelParams
    config: ModelConfig
    switches: ForwardSwitches
    resolver: PromptResolver


def _grad_norms(named_params, top: int = 5) -> dict[str, float]:
    norms = {}
    for name, param, _ in named_params:
        if param.grad is not None:
            norms[name] = float(np.linalg.norm(param.grad))
    worst = sorted(norms.items(), key=lambda kv: -kv[1])[:top]
    return dict(worst)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig,
          records: list[SampleRecord], provider, out_dir) -> TrainResult:
    """Train on the 'train' split, validate per epoch, keep the best-IoU checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    fusion, switches, use_text = ablation_setup(train_cfg.ablation)
    if model_cfg.fusion != fusion:
        model_cfg = dataclasses.replace(model_cfg, fusion=fusion)
    resolver = PromptResolver(provider, use_text, train_cfg.default_prompt_mode)

    train_records = [r for r in records if r.split == "train"]
    val_records = [r for r in records if r.split == "val"]
    if not train_records:
        raise TxirError("no training records in dataset")

    size = model_cfg.input_size[0]
    loaded = _LoadedSet(train_records, resolver, size)
    val_loaded = _LoadedSet(val_records, resolver, size) if val_records else None
    params = init_model(model_cfg, seed=train_cfg.seed)
    named = list(params.named_params())
    state = AdamWState()
    log = TrainLog(seed=train_cfg.seed, config_hash=config_hash(train_cfg, model_cfg))
    ckpt_path = out / "best.txck"

    started = time.perf_counter()
    n = len(train_records)
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, train_cfg.batch):
            idx = order[start:start + train_cfg.batch].tolist()
            crop_seeds = [fnv1a64(f"{train_cfg.seed}:{epoch}:{i}".encode()) for i in idx]
            imgs, msks, embs = loaded.batch(idx, crop_seeds=crop_seeds)
            step = start // train_cfg.batch
            try:
                pred = model_forward(Tensor(imgs), Tensor(embs), params, switches)
                loss = soft_iou_loss(pred, Tensor(msks))
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    raise T.NumericsError("non-finite loss")
                T.backward(loss)
            except T.NumericsError as exc:
                raise TrainAbort(f"aborted at epoch {epoch} step {step}: {exc}",
                                 epoch=epoch, step=step, lr=train_cfg.lr,
                                 grad_norms=_grad_norms(named)) from exc
            adamw_step(named, state, train_cfg)
            epoch_loss += loss_value
            batches += 1

        report = _evaluate_loaded(params, val_loaded, switches,
                                  batch=max(train_cfg.batch, 8)) if val_loaded else None
        val_iou = report.iou() if report else float("nan")
        entry = EpochLog(
            epoch=epoch,
            loss=epoch_loss / max(batches, 1),
            val_iou=val_iou,
            val_f1=report.f1() if report else float("nan"),
            val_pd=report.pd() if report else float("nan"),
            val_fa_e6=report.fa_e6() if report else float("nan"),
            seconds=time.perf_counter() - t0,
        )
        log.epochs.append(entry)
        if report and (val_iou > log.best_val_iou):
            log.best_val_iou = val_iou
            log.best_epoch = epoch
            save_checkpoint(params, model_cfg, ckpt_path)
    if not val_records:
        save_checkpoint(params, model_cfg, ckpt_path)

    log.wall_time = time.perf_counter() - started
    log.write_csv(out / "train_log.csv")
    log.write_meta(out / "train_meta.json", train_cfg)
    return TrainResult(checkpoint_path=str(ckpt_path), log=log, params=params,
                       config=model_cfg, switches=switches, resolver=resolver)


# --------------------------------------------------------------------------
# ablation suite
# --------------------------------------------------------------------------

def run_ablation(variants: list[str], model_cfg: ModelConfig, train_cfg: TrainConfig,
                 records: list[SampleRecord], provider, out_dir) -> list[dict]:
    """Train every variant with shared seed and data; report test metrics per row."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    test_records = [r for r in records if r.split == "test"]
    rows = []
    for variant in variants:
        cfg = dataclasses.replace(train_cfg, ablation=variant)
        result = train(model_cfg, cfg, records, provider, out / variant)
        best_params, _ = load_checkpoint(result.checkpoint_path)
        report = evaluate_records(best_params, test_records, result.resolver,
                                  result.switches, result.config.input_size[0])
        rows.append({"variant": variant, "iou": report.iou(), "f1": report.f1(),
                     "pd": report.pd(), "fa_e6": report.fa_e6()})
    with open(out / "ablation.csv", "w") as fh:
        fh.write("variant,iou,f1,pd,fa_e6\n")
        for r in rows:
            fh.write(f"{r['variant']},{r['iou']:.6f},{r['f1']:.6f},"
                     f"{r['pd']:.6f},{r['fa_e6']:.4f}\n")
    return rows

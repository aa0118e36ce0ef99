"""Unpaired two-cycle training loop, schedule and checkpointing."""
from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import torch

from . import checkpoint as ckpt
from .dacr import (DEFAULT_PROMPTS, DacrWeights, Difficulty, EmbeddingBackend, classify_batch,
                   dacr_loss, load_backend)
from .data import AugmentConfig, Batch, UnpairedDataset, build_pool, sample_batch
from .generators import ModelConfig, NetConfig, WeatherCycleModel, init_params, redegrade
from .ldgm import CtaConfig, DegradationPool
from .losses import LossError, LossWeights, cycle_loss, total_loss

log = logging.getLogger(__name__)

SEED_ENV = "WEATHERCYCLE_SEED"


class NumericalError(ArithmeticError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # optimization
    lr0: float = 2e-4
    lr_min: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    iterations: int = 500_000
    batch: int = 8
    crop: int = 256
    seed: int = 0
    grad_clip: float = 0.0
    # losses
    lambda_cyc: float = 1.0
    lambda_dacr: float = 0.8
    fourier_weight: float = 0.1
    fourier_mode: str = "amp_phase"
    alpha: float = 3.0
    beta: float = 5.0
    tau: float = 0.1
    dacr_select: str = "hard"
    dacr_positive_in_denominator: bool = False
    classify_source: str = "proxy"
    embedding_backend: str = "stub"
    classifier_backend: str = "stub"
    prompt_easy: str = DEFAULT_PROMPTS[0]
    prompt_hard: str = DEFAULT_PROMPTS[1]
    prompt_very_hard: str = DEFAULT_PROMPTS[2]
    # re-degradation
    sigma_chroma: float = 0.02
    pool_size: int = 256
    patch: int = 0
    # networks
    base_width: int = 16
    depth: int = 3
    kernel: int = 3
    nonlinearity: str = "gelu"
    layer_scale: float = 0.1
    chroma_width: int = 8
    chroma_depth: int = 3
    recon_width: int = 16
    recon_depth: int = 3
    lift_channels: int = 16
    topk: int = 8
    ldgm_hidden: int = 8
    # ablations
    no_gd2c: bool = False
    no_gc2d: bool = False
    no_jc2d: bool = False
    no_ldgm: bool = False
    no_dacr: bool = False
    # augmentation
    hflip_prob: float = 0.5
    rot90_choices: str = "0,90,180,270"
    brightness: float = 0.1
    contrast: float = 0.1
    saturation: float = 0.1
    jitter_degraded: bool = True
    # io
    data_root: str = ""
    out_dir: str = "runs/weathercycle"
    log_every: int = 50
    ckpt_every: int = 5000

    def __post_init__(self):
        if not self.lr0 > self.lr_min >= 0:
            raise ConfigError(f"need lr0 > lr_min >= 0, got lr0={self.lr0} lr_min={self.lr_min}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.dacr_select not in ("hard", "all"):
            raise ConfigError(f"dacr_select must be 'hard' or 'all', got {self.dacr_select!r}")
        if self.classify_source not in ("proxy", "restored"):
            raise ConfigError(f"classify_source must be 'proxy' or 'restored'")
        if self.sigma_chroma < 0:
            raise ConfigError("sigma_chroma must be >= 0")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale profile: 64px crops, batch 4, narrow networks."""
        base = dict(iterations=200, batch=4, crop=64, pool_size=16, base_width=8, depth=2,
                    chroma_width=4, chroma_depth=2, recon_width=8, recon_depth=2,
                    log_every=10, ckpt_every=0)
        base.update(overrides)
        return cls(**base)

    @property
    def prompts(self) -> tuple[str, str, str]:
        return (self.prompt_easy, self.prompt_hard, self.prompt_very_hard)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_cyc, self.lambda_dacr, self.fourier_weight)

    @property
    def dacr_weights(self) -> DacrWeights:
        return DacrWeights(self.alpha, self.beta, self.tau)

    @property
    def augment(self) -> AugmentConfig:
        rots = tuple(int(r) for r in str(self.rot90_choices).split(",") if r.strip())
        return AugmentConfig(self.hflip_prob, rots, self.brightness, self.contrast,
                             self.saturation, self.jitter_degraded)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            luma=NetConfig(self.base_width, self.depth, self.kernel, self.nonlinearity, "luma_backbone",
                           self.layer_scale),
            chroma=NetConfig(self.chroma_width, self.chroma_depth, self.kernel, self.nonlinearity,
                             "chroma_codec", self.layer_scale),
            recon=NetConfig(self.recon_width, self.recon_depth, self.kernel, self.nonlinearity,
                            "recon_net", self.layer_scale),
            cta=CtaConfig(self.lift_channels, self.topk),
            size=(self.crop, self.crop),
            ldgm_hidden=self.ldgm_hidden,
            no_gd2c=self.no_gd2c, no_gc2d=self.no_gc2d, no_jc2d=self.no_jc2d, no_ldgm=self.no_ldgm,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            values[key] = _parse_value(types[key], value, key)
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | Path, env: dict | None = None) -> "TrainConfig":
        cfg = cls.from_text(Path(path).read_text())
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            cfg = dataclasses.replace(cfg, seed=int(env[SEED_ENV]))
        return cfg


def _parse_value(type_name: str, value: str, key: str):
    try:
        if type_name == "bool":
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if type_name == "int":
            return int(value)
        if type_name == "float":
            return float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type_name}") from exc


def cosine_lr(step: int, total: int, lr0: float, lr_min: float) -> float:
    if total <= 0:
        raise ValueError("cosine schedule needs total > 0")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total))


@dataclass
class LossBreakdown:
    step: int
    total: float
    cyc: float
    dacr: float
    l1_d: float
    l1_c: float
    fft_d: float
    fft_c: float
    lr: float
    n_hard: int
    dacr_active: bool

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainState:
    config: TrainConfig
    model: WeatherCycleModel
    optimizer: torch.optim.Optimizer
    step: int = 0
    pool: DegradationPool | None = None
    features: EmbeddingBackend | None = None
    classifier: EmbeddingBackend | None = None
    proxy: Callable[[torch.Tensor], torch.Tensor] = field(default=lambda x: x)
    history: list[LossBreakdown] = field(default_factory=list)


def make_optimizer(model: WeatherCycleModel, cfg: TrainConfig) -> torch.optim.Adam:
    params = [p for _, p in model.trainable_parameters()]
    return torch.optim.Adam(params, lr=cfg.lr0, betas=(cfg.adam_beta1, cfg.adam_beta2), foreach=False)


def init_state(cfg: TrainConfig, pool: DegradationPool | None = None) -> TrainState:
    model = init_params(cfg.model_config(), cfg.seed)
    return TrainState(cfg, model, make_optimizer(model, cfg), 0, pool,
                      load_backend(cfg.embedding_backend, "features"),
                      load_backend(cfg.classifier_backend, "classifier"))


def _check_images(name: str, x: torch.Tensor) -> None:
    bad = ~torch.isfinite(x.detach()).flatten(1).all(dim=1)
    if bad.any():
        raise NumericalError(f"non-finite values in {name} for image index {int(bad.nonzero()[0])}")


def compute_losses(state: TrainState, batch: Batch):
    """Both cycles and all loss terms for one batch (no parameter update)."""
    cfg, model = state.config, state.model
    dt = next(model.parameters()).dtype
    D, C = batch.degraded.to(dt), batch.clean.to(dt)
    _check_images("degraded input batch", D)
    _check_images("clean input batch", C)
    c_d2c = model.restore(D)
    _check_images("restored degraded batch", c_d2c)
    d_d2c2d = redegrade(model, c_d2c, state.pool, [cfg.seed, state.step, 0], cfg.sigma_chroma)
    _check_images("re-degraded restoration", d_d2c2d)
    d_c2d = redegrade(model, C, state.pool, [cfg.seed, state.step, 1], cfg.sigma_chroma)
    _check_images("re-degraded clean batch", d_c2d)
    c_c2d2c = model.restore(d_c2d)
    _check_images("restored re-degradation", c_c2d2c)
    l_cyc, parts = cycle_loss(d_d2c2d, D, c_c2d2c, C, cfg.fourier_weight, cfg.fourier_mode, parts=True)

    n_hard, active = 0, False
    l_dacr = torch.zeros((), dtype=dt)
    if not cfg.no_dacr:
        source = state.proxy(D) if cfg.classify_source == "proxy" else c_d2c.detach()
        labels = classify_batch(state.classifier, source, cfg.prompts)
        if cfg.dacr_select == "all":
            hard = list(range(len(labels)))
        else:
            hard = [i for i, lab in enumerate(labels) if lab.level != Difficulty.EASY_NEG]
        n_hard = len(hard)
        l_dacr, active = dacr_loss(state.features, c_d2c, C, D, labels, cfg.dacr_weights, hard,
                                   cfg.dacr_positive_in_denominator)
    w = cfg.loss_weights
    if cfg.no_dacr:
        w = dataclasses.replace(w, lambda_dacr=0.0)
    try:
        # scalar assembly in float64 so the reported total is exactly the weighted sum
        total = total_loss(l_cyc.double(), l_dacr.double(), w)
    except LossError as exc:
        raise NumericalError(str(exc)) from exc
    outputs = {"c_d2c": c_d2c, "d_d2c2d": d_d2c2d, "d_c2d": d_c2d, "c_c2d2c": c_c2d2c}
    terms = {"total": total, "cyc": l_cyc, "dacr": l_dacr, **parts, "n_hard": n_hard, "active": active}
    return terms, outputs


def train_step(state: TrainState, batch: Batch) -> tuple[TrainState, LossBreakdown]:
    cfg = state.config
    terms, _ = compute_losses(state, batch)
    opt = state.optimizer
    opt.zero_grad(set_to_none=True)
    terms["total"].backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_([p for _, p in state.model.trainable_parameters()], cfg.grad_clip)
    lr = cosine_lr(min(state.step, cfg.iterations), cfg.iterations, cfg.lr0, cfg.lr_min)
    for group in opt.param_groups:
        group["lr"] = lr
    opt.step()
    out = LossBreakdown(
        step=state.step, total=float(terms["total"].detach()), cyc=float(terms["cyc"].detach()),
        dacr=float(terms["dacr"].detach()),
        l1_d=float(terms["l1_d"].detach()), l1_c=float(terms["l1_c"].detach()),
        fft_d=float(terms["fft_d"].detach()),
        fft_c=float(terms["fft_c"].detach()), lr=lr, n_hard=terms["n_hard"], dacr_active=terms["active"],
    )
    state.step += 1
    state.history.append(out)
    return state, out


# -- epochs and pools ------------------------------------------------------

def steps_per_epoch(ds: UnpairedDataset, batch: int) -> int:
    return max(1, math.ceil(max(ds.sizes) / batch))


def epoch_seed(seed: int, epoch: int) -> int:
    return seed * 1_000_003 + epoch


def epoch_dataset(cfg: TrainConfig, ds: UnpairedDataset, step: int) -> UnpairedDataset:
    return ds.with_epoch(epoch_seed(cfg.seed, step // steps_per_epoch(ds, cfg.batch)))


def refresh_pool(state: TrainState, ds: UnpairedDataset) -> None:
    cfg = state.config
    if cfg.no_gc2d or cfg.no_ldgm:
        state.pool = None
        return
    eds = epoch_dataset(cfg, ds, state.step)
    state.pool = build_pool(eds, cfg.pool_size, cfg.patch or cfg.crop, eds.epoch_seed)


def run(state: TrainState, ds: UnpairedDataset, steps: int,
        on_step: Callable[[TrainState, LossBreakdown], None] | None = None) -> TrainState:
    """Advance ``steps`` iterations, rebuilding the pool at each epoch boundary."""
    cfg = state.config
    spe = steps_per_epoch(ds, cfg.batch)
    aug = cfg.augment
    for _ in range(steps):
        if state.pool is None or state.step % spe == 0:
            refresh_pool(state, ds)
        batch = sample_batch(epoch_dataset(cfg, ds, state.step), aug, cfg.batch, state.step)
        state, out = train_step(state, batch)
        if cfg.log_every and out.step % cfg.log_every == 0:
            log.info("step %d total %.5f cyc %.5f dacr %.5f lr %.3g", out.step, out.total, out.cyc,
                     out.dacr, out.lr)
        if on_step is not None:
            on_step(state, out)
    return state


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(state: TrainState, path: str | Path) -> None:
    tensors = {f"model.{k}": v for k, v in state.model.state_dict().items()}
    names = [n for n, _ in state.model.trainable_parameters()]
    params = [p for _, p in state.model.trainable_parameters()]
    adam_steps = {}
    for name, p in zip(names, params):
        st = state.optimizer.state.get(p)
        if st:
            tensors[f"adam.{name}.exp_avg"] = st["exp_avg"]
            tensors[f"adam.{name}.exp_avg_sq"] = st["exp_avg_sq"]
            adam_steps[name] = int(st["step"])
    meta = {
        "step": state.step,
        "seed": state.config.seed,
        "train_config": state.config.to_dict(),
        "model_config": state.model.cfg.to_dict(),
        "adam_steps": adam_steps,
    }
    ckpt.write_checkpoint(path, tensors, meta)


def load_checkpoint(path: str | Path, config: TrainConfig | None = None,
                    pool: DegradationPool | None = None) -> TrainState:
    """Rebuild a training state.

    If ``config`` is given, its network layout must match the stored
    parameters; otherwise the stored config is used.
    """
    tensors, meta = ckpt.read_checkpoint(path)
    cfg = config or TrainConfig(**meta["train_config"])
    state = init_state(cfg, pool)
    ckpt.load_state_strict(state.model, tensors, prefix="model.")
    opt_state = {}
    for idx, (name, _) in enumerate(state.model.trainable_parameters()):
        if name in meta["adam_steps"]:
            opt_state[idx] = {
                "step": torch.tensor(float(meta["adam_steps"][name])),
                "exp_avg": tensors[f"adam.{name}.exp_avg"].clone(),
                "exp_avg_sq": tensors[f"adam.{name}.exp_avg_sq"].clone(),
            }
    sd = state.optimizer.state_dict()
    sd["state"] = opt_state
    try:
        state.optimizer.load_state_dict(sd)
    except ValueError as exc:
        raise ckpt.CheckpointShapeError(f"optimizer state does not match model: {exc}") from exc
    state.step = int(meta["step"])
    return state


def load_model(path: str | Path) -> WeatherCycleModel:
    tensors, meta = ckpt.read_checkpoint(path)
    model = WeatherCycleModel(ModelConfig.from_dict(meta["model_config"]))
    ckpt.load_state_strict(model, tensors, prefix="model.")
    return model

"""Adam optimization and the alternating critic/generator schedule.

Per iteration (batch size 1): one critic update on the Wasserstein difference
plus gradient penalty with a fresh interpolation draw, then two generator
updates, each recomputing the forward pass against the frozen critic.

The penalty's parameter gradient uses the documented central finite-difference
estimator with step 1e-4: with g the critic's input gradient at the
interpolate y' and u = g/||g||, d(penalty)/d(theta) =
2*lambda*(||g||-1) * d(u . grad_{y'} D)/d(theta), and the directional term is
[grad_theta D(y'+h*u) - grad_theta D(y'-h*u)] / (2h). For this critic
(convolutions, leaky ReLU, mean) the scores are piecewise linear in the grid,
so the central difference is exact away from activation kinks. The mode is
recorded in checkpoint metadata.

Every stochastic choice is a pure function of (run seed, purpose tag,
iteration), so the only rng "position" a checkpoint needs is the iteration
counter, and resuming is bit-exact by construction.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .autograd import Tensor, backward
from .checkpoint import CheckpointData, load_checkpoint, save_checkpoint
from .errors import NumericalError
from .model import (
    ModelConfig, NetworkParams, build_critic, build_generator, critic_forward,
    generator_forward,
)
from .objectives import (
    LossWeights, gen_adversarial_loss, gradient_penalty_parts, sparsity_loss,
    total_losses, weighted_bce,
)

__all__ = [
    "AdamConfig", "Adam", "TrainSchedule", "TrainSample", "IterationLosses",
    "Trainer", "run_training", "substream", "GP_GRAD_MODE", "H_FD",
]

H_FD = 1e-4
GP_GRAD_MODE = "fd-central-1e-4"

_EPS_TAG = 103
_ORDER_TAG = 101


def substream(*keys):
    """Generator keyed by a tuple of integers; pure function of its key."""
    return np.random.default_rng([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam with bias correction; one step() call advances t once for all
    parameters. Refuses steps on non-finite gradients."""

    def __init__(self, params, config=None):
        self.params = params
        self.config = config or AdamConfig()
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0

    def step(self, grads):
        if self.t >= 2 ** 31 - 1:
            raise NumericalError("Adam step counter exhausted")
        for name, g in grads.items():
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {name!r}; step refused")
        c = self.config
        self.t += 1
        corr1 = 1.0 - c.beta1 ** self.t
        corr2 = 1.0 - c.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            v = self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            p.data = p.data - c.lr * (m / corr1) / (np.sqrt(v / corr2) + c.eps)

    def snapshot(self):
        return ({n: a.copy() for n, a in self.m.items()},
                {n: a.copy() for n, a in self.v.items()}, self.t)

    def restore(self, snap):
        m, v, t = snap
        self.m = {n: a.copy() for n, a in m.items()}
        self.v = {n: a.copy() for n, a in v.items()}
        self.t = t


@dataclass
class TrainSchedule:
    """Alternation ratios are the protocol's fixed values unless explicitly
    overridden; overrides are recorded in checkpoint metadata."""

    iterations: int = 2000
    eval_interval: int = 500
    seed: int = 0
    critic_steps: int = 1
    gen_steps: int = 2
    batch_size: int = 1
    allow_ratio_override: bool = False

    def __post_init__(self):
        standard = (self.critic_steps, self.gen_steps, self.batch_size) == (1, 2, 1)
        if not standard and not self.allow_ratio_override:
            raise ValueError(
                "critic_steps/gen_steps/batch_size are fixed to 1/2/1; "
                "set allow_ratio_override to change them")


@dataclass
class TrainSample:
    depth: np.ndarray   # (H, W) float32
    grid: np.ndarray    # (n, n, n) float32, binary


@dataclass
class IterationLosses:
    iteration: int
    l_d: float
    l_g: tuple
    bce: tuple
    penalty: float
    wall_ms: float


class Trainer:
    """Owns both networks, their optimizers, and the alternation state."""

    def __init__(self, config, weights=None, schedule=None, adam_gen=None,
                 adam_critic=None, sparsity_enabled=True, dtype=np.float32):
        self.config = config
        self.weights = weights or LossWeights()
        self.schedule = schedule or TrainSchedule()
        self.sparsity_enabled = sparsity_enabled
        self.dtype = dtype
        seed = self.schedule.seed
        self.gen = build_generator(config, seed, dtype=dtype)
        self.critic = build_critic(config, seed, dtype=dtype)
        self.opt_gen = Adam(self.gen, adam_gen or AdamConfig())
        self.opt_critic = Adam(self.critic, adam_critic or AdamConfig())
        self.iteration = 0

    def _interpolation_eps(self, iteration, step):
        return float(substream(self.schedule.seed, _EPS_TAG, iteration, step).uniform())

    def _snapshot(self):
        return (self.gen.snapshot(), self.critic.snapshot(),
                self.opt_gen.snapshot(), self.opt_critic.snapshot())

    def _restore(self, snap):
        gen, critic, og, oc = snap
        self.gen.restore(gen)
        self.critic.restore(critic)
        self.opt_gen.restore(og)
        self.opt_critic.restore(oc)

    def train_iteration(self, depth, grid):
        """One alternation on a single (depth view, ground-truth grid) pair.

        Rolls everything back to the pre-iteration state and raises
        NumericalError if any loss or gradient goes non-finite.
        """
        start = time.perf_counter()
        snap = self._snapshot()
        try:
            x = np.asarray(depth, dtype=self.dtype)
            if x.ndim == 2:
                x = x[None]
            y_hat = np.asarray(grid, dtype=self.dtype)
            cfg = self.config

            l_d = penalty_value = 0.0
            for c_step in range(self.schedule.critic_steps):
                y_fake = generator_forward(self.gen.constants(), cfg, Tensor(x)).data
                eps = self._interpolation_eps(self.iteration, c_step)
                frozen = self.critic.constants()
                parts = gradient_penalty_parts(
                    lambda g: critic_forward(frozen, cfg, Tensor(x), g),
                    y_fake, y_hat, eps, self.weights.lambda_gp)

                self.critic.zero_grads()
                s_fake = critic_forward(self.critic, cfg, Tensor(x), Tensor(y_fake))
                s_real = critic_forward(self.critic, cfg, Tensor(x), Tensor(y_hat))
                main = s_fake - s_real
                backward(main)
                if parts.grad_norm > 1e-12 and self.weights.lambda_gp > 0:
                    u = parts.input_gradient / parts.grad_norm
                    coeff = self.weights.lambda_gp * (parts.grad_norm - 1.0) / H_FD
                    s_plus = critic_forward(self.critic, cfg, Tensor(x),
                                            Tensor(parts.interpolate + H_FD * u))
                    s_minus = critic_forward(self.critic, cfg, Tensor(x),
                                             Tensor(parts.interpolate - H_FD * u))
                    backward(coeff * (s_plus - s_minus))
                l_d = float(main.data) + parts.value
                penalty_value = parts.value
                if not np.isfinite(l_d):
                    raise NumericalError(f"critic loss non-finite at iteration {self.iteration}")
                self.opt_critic.step(self.critic.grads())

            l_gs, bces = [], []
            frozen_critic = self.critic.constants()
            for _ in range(self.schedule.gen_steps):
                self.gen.zero_grads()
                y = generator_forward(self.gen, cfg, Tensor(x))
                score = critic_forward(frozen_critic, cfg, Tensor(x), y)
                ce = weighted_bce(y, y_hat)
                l_g, _ = total_losses(self.weights, gen_adversarial_loss([score]),
                                      ce, sparsity_loss(y), Tensor(0.0),
                                      self.sparsity_enabled)
                backward(l_g)
                self.opt_gen.step(self.gen.grads())
                l_gs.append(float(l_g.data))
                bces.append(float(ce.data))
        except (NumericalError, ValueError) as exc:
            self._restore(snap)
            if isinstance(exc, NumericalError):
                raise
            raise NumericalError(str(exc)) from exc

        self.iteration += 1
        return IterationLosses(
            iteration=self.iteration, l_d=l_d, l_g=tuple(l_gs), bce=tuple(bces),
            penalty=penalty_value, wall_ms=(time.perf_counter() - start) * 1e3)

    # -- persistence --

    def save(self, path):
        cfg = self.config
        meta = {
            "config": {
                "view_size": cfg.view_size, "grid_size": cfg.grid_size,
                "encoder_channels": cfg.encoder_channels,
                "decoder_channels": cfg.decoder_channels,
                "leaky_slope": cfg.leaky_slope,
                "attention_enabled": cfg.attention_enabled,
                "output_bias": cfg.output_bias,
                "preset": cfg.preset,
            },
            "schedule": asdict(self.schedule),
            "weights": asdict(self.weights),
            "adam_gen": {**asdict(self.opt_gen.config), "t": self.opt_gen.t},
            "adam_critic": {**asdict(self.opt_critic.config), "t": self.opt_critic.t},
            "sparsity_enabled": self.sparsity_enabled,
            "gp_grad_mode": GP_GRAD_MODE,
            "iteration": self.iteration,
        }
        params = {}
        for prefix, net in (("gen.", self.gen), ("critic.", self.critic)):
            for name, t in net.items():
                params[prefix + name] = t.data
        opt = {}
        for prefix, optim in (("adam.gen.", self.opt_gen), ("adam.critic.", self.opt_critic)):
            for name, m in optim.m.items():
                opt[prefix + name + ".m"] = m
            for name, v in optim.v.items():
                opt[prefix + name + ".v"] = v
        save_checkpoint(path, CheckpointData(preset=cfg.preset, meta=meta,
                                             params=params, opt_state=opt))

    @classmethod
    def load(cls, path):
        data = load_checkpoint(path)
        meta = data.meta
        c = meta["config"]
        config = ModelConfig(view_size=c["view_size"], grid_size=c["grid_size"],
                             encoder_channels=list(c["encoder_channels"]),
                             decoder_channels=list(c["decoder_channels"]),
                             leaky_slope=c["leaky_slope"],
                             attention_enabled=c["attention_enabled"],
                             output_bias=c.get("output_bias", 0.0),
                             preset=c["preset"])
        schedule = TrainSchedule(**meta["schedule"])
        weights = LossWeights(**meta["weights"])
        gen_cfg = {k: v for k, v in meta["adam_gen"].items() if k != "t"}
        critic_cfg = {k: v for k, v in meta["adam_critic"].items() if k != "t"}
        trainer = cls(config, weights=weights, schedule=schedule,
                      adam_gen=AdamConfig(**gen_cfg), adam_critic=AdamConfig(**critic_cfg),
                      sparsity_enabled=meta["sparsity_enabled"])
        trainer.iteration = meta["iteration"]
        trainer.opt_gen.t = meta["adam_gen"]["t"]
        trainer.opt_critic.t = meta["adam_critic"]["t"]
        for prefix, net in (("gen.", trainer.gen), ("critic.", trainer.critic)):
            for name, t in net.items():
                t.data = data.params[prefix + name].copy()
        for prefix, optim in (("adam.gen.", trainer.opt_gen),
                              ("adam.critic.", trainer.opt_critic)):
            for name in optim.m:
                optim.m[name] = data.opt_state[prefix + name + ".m"].copy()
                optim.v[name] = data.opt_state[prefix + name + ".v"].copy()
        return trainer


def sample_order(seed, count):
    """Fixed random visitation order; iteration i trains on order[i % count]."""
    return substream(seed, _ORDER_TAG).permutation(count)


def run_training(trainer, samples, log_path=None, checkpoint_dir=None,
                 progress=None):
    """Drive the trainer to its schedule's iteration budget.

    Writes `iter<TAB>L_D<TAB>L_G1<TAB>L_G2<TAB>wall_ms` log lines, checkpoints
    every eval_interval iterations plus a final checkpoint, and returns the
    per-iteration loss records.
    """
    if not samples:
        raise ValueError("no training samples")
    schedule = trainer.schedule
    order = sample_order(schedule.seed, len(samples))
    history = []
    log = open(log_path, "a") if log_path else None
    try:
        while trainer.iteration < schedule.iterations:
            sample = samples[order[trainer.iteration % len(samples)]]
            rec = trainer.train_iteration(sample.depth, sample.grid)
            history.append(rec)
            if log:
                gcols = "\t".join(f"{v:.9g}" for v in rec.l_g)
                log.write(f"{rec.iteration}\t{rec.l_d:.9g}\t{gcols}\t{rec.wall_ms:.3f}\n")
            if progress:
                progress(rec)
            if checkpoint_dir and rec.iteration % schedule.eval_interval == 0:
                trainer.save(f"{checkpoint_dir}/ckpt_{rec.iteration:06d}.agck")
        if checkpoint_dir:
            trainer.save(f"{checkpoint_dir}/ckpt_final.agck")
    finally:
        if log:
            log.close()
    return history

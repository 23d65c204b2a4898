"""Optimisation regime: Adadelta with a one-time SGD fallback and a ramped L2 penalty."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import LABELS, TokenizedPair, iter_encoded, make_batch
from .errors import ConfigError, DataError, NumericError
from .head import cross_entropy, predict
from .model import CIRN

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerConfig:
    rho: float = 0.95
    eps: float = 1e-8
    lr_initial: float = 0.5
    batch_size: int = 70
    fallback_patience_steps: int = 30000
    sgd_lr: float = 3e-4
    r_l2_max: float = 0.9e-5
    t_ramp: int = 100000
    max_epochs: int = 10
    max_steps: Optional[int] = None
    eval_every_steps: int = 1000
    seed: int = 0
    max_sentence_len: int = 32
    shuffle: bool = True
    fallback_metric: str = "accuracy"
    dual_encoder_penalty: float = 1e-3

    def __post_init__(self):
        for name in ("rho", "eps", "lr_initial", "sgd_lr", "r_l2_max", "t_ramp"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.rho >= 1:
            raise ConfigError("rho must be < 1")
        if self.batch_size < 1 or self.fallback_patience_steps < 1 or self.eval_every_steps < 1:
            raise ConfigError("batch_size, fallback_patience_steps and eval_every_steps must be >= 1")
        if self.fallback_metric not in ("accuracy", "loss"):
            raise ConfigError("fallback_metric must be 'accuracy' or 'loss'")


@dataclass
class OptimizerState:
    sq_grad: Dict[str, np.ndarray] = field(default_factory=dict)
    acc_delta: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    mode: str = "adadelta"
    lr: float = 0.5
    best_metric: Optional[float] = None
    best_step: int = 0
    steps_since_improvement: int = 0

    def scalars(self) -> dict:
        return {"step": self.step, "mode": self.mode, "lr": self.lr, "best_metric": self.best_metric,
                "best_step": self.best_step, "steps_since_improvement": self.steps_since_improvement}


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def l2_schedule(t: float, config: TrainerConfig = TrainerConfig()) -> float:
    """Decay coefficient at step ``t``: a sigmoid ramp from ~0 to ``r_l2_max`` over ``t_ramp`` steps."""
    half = config.t_ramp / 2
    return sigmoid((t - half) * 8 / half) * config.r_l2_max


def adadelta_step(params: Dict[str, T.Tensor], grads: Dict[str, np.ndarray], state: OptimizerState,
                  config: TrainerConfig) -> None:
    """One in-place Adadelta update (``lr`` scales the step; the update accumulator sees the unscaled step).

    Raises :class:`NumericError` before touching anything if a gradient is non-finite.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    rho, eps = config.rho, config.eps
    for name, g in grads.items():
        p = params[name]
        sq = state.sq_grad.get(name)
        if sq is None:
            sq = state.sq_grad[name] = np.zeros_like(p.data)
            state.acc_delta[name] = np.zeros_like(p.data)
        acc = state.acc_delta[name]
        sq *= rho
        sq += (1 - rho) * g * g
        delta = np.sqrt(acc + eps) / np.sqrt(sq + eps) * g
        acc *= rho
        acc += (1 - rho) * delta * delta
        p.data -= p.data.dtype.type(state.lr) * delta


def sgd_step(params: Dict[str, T.Tensor], grads: Dict[str, np.ndarray], state: OptimizerState) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    for name, g in grads.items():
        params[name].data -= params[name].data.dtype.type(state.lr) * g


def fallback_check(state: OptimizerState, dev_metric: float, config: TrainerConfig) -> OptimizerState:
    """Track the best dev metric; switch Adadelta → SGD once after ``fallback_patience_steps`` without improvement."""
    better = (state.best_metric is None
              or (dev_metric > state.best_metric if config.fallback_metric == "accuracy"
                  else dev_metric < state.best_metric))
    if better:
        state.best_metric = float(dev_metric)
        state.best_step = state.step
    state.steps_since_improvement = state.step - state.best_step
    if state.mode == "adadelta" and state.steps_since_improvement >= config.fallback_patience_steps:
        state.mode = "sgd"
        state.lr = config.sgd_lr
        logger.info("switching to SGD at step %d (lr=%g)", state.step, config.sgd_lr)
    return state


def encoder_pair_penalty(params_a: Dict[str, T.Tensor], params_b: Optional[Dict[str, T.Tensor]],
                         coef: float) -> float:
    """Squared weight difference between matching layers of two encoders.

    With a single shared encoder there is no second set of weights and the
    penalty is zero.
    """
    if params_b is None:
        return 0.0
    total = 0.0
    for name, p in params_a.items():
        if name.startswith("encoder.") and name in params_b:
            total += float(((p.data - params_b[name].data) ** 2).sum())
    return coef * total


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    confusion: np.ndarray  # gold × predicted
    count: int

    def report(self) -> str:
        lines = [f"accuracy {self.accuracy:.6f}", f"loss {self.loss:.6f}",
                 "confusion (rows gold, cols predicted): " + " ".join(LABELS)]
        for name, row in zip(LABELS, self.confusion):
            lines.append(f"  {name:<13} " + " ".join(str(int(c)) for c in row))
        return "\n".join(lines)


def evaluate(model: CIRN, pairs: Sequence[TokenizedPair], labels: np.ndarray,
             batch_size: int = 70) -> EvalResult:
    """Accuracy and mean cross-entropy in eval mode (dropout off)."""
    if len(pairs) == 0:
        raise DataError("cannot evaluate an empty dataset")
    confusion = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    total_loss = 0.0
    for batch in iter_encoded(pairs, labels, batch_size):
        lg = model.logits(batch, training=False)
        total_loss += float(cross_entropy(lg, batch.labels).data) * len(batch)
        np.add.at(confusion, (batch.labels, predict(lg)), 1)
    n = len(pairs)
    return EvalResult(float(np.trace(confusion)) / n, total_loss / n, confusion, n)


class Trainer:
    """Mini-batch training loop with deterministic data order and resumable state.

    The example order in epoch ``e`` is a permutation drawn from a generator
    seeded with ``(seed, e)``, so the batch for any global step can be rebuilt
    after a restart without replaying earlier epochs.
    """

    def __init__(self, model: CIRN, config: TrainerConfig, train: Tuple[Sequence[TokenizedPair], np.ndarray],
                 dev: Optional[Tuple[Sequence[TokenizedPair], np.ndarray]] = None,
                 state: Optional[OptimizerState] = None, rng_state: Optional[dict] = None,
                 log: Optional[Callable[[str], None]] = None):
        self.model = model
        self.config = config
        self.train_pairs, self.train_labels = train
        if len(self.train_pairs) == 0:
            raise DataError("training set is empty")
        self.dev = dev
        self.state = state or OptimizerState(lr=config.lr_initial)
        self.rng = np.random.default_rng([config.seed, 1])
        if rng_state is not None:
            self.rng.bit_generator.state = rng_state
        self.log = log
        self.history: List[dict] = []

    @property
    def batches_per_epoch(self) -> int:
        return -(-len(self.train_pairs) // self.config.batch_size)

    @property
    def total_steps(self) -> int:
        cap = self.config.max_epochs * self.batches_per_epoch
        return cap if self.config.max_steps is None else min(cap, self.config.max_steps)

    def batch_for_step(self, t: int):
        epoch, k = divmod(t, self.batches_per_epoch)
        n = len(self.train_pairs)
        order = (np.random.default_rng([self.config.seed, 0, epoch]).permutation(n)
                 if self.config.shuffle else np.arange(n))
        idx = order[k * self.config.batch_size:(k + 1) * self.config.batch_size]
        return make_batch([self.train_pairs[i] for i in idx], self.train_labels[idx])

    def l2_penalty(self, t: int) -> T.Tensor:
        coef = l2_schedule(t, self.config)
        terms = [T.tsum(T.square(w)) for w in self.model.weight_matrices()]
        total = terms[0]
        for term in terms[1:]:
            total = T.add(total, term)
        return T.scale(total, coef)

    def train_step(self, batch) -> float:
        """Forward, loss (cross-entropy + scheduled L2), backward, update; advances the step counter."""
        params = self.model.named_parameters()
        T.zero_grad(params.values())
        lg = self.model.logits(batch, training=True, rng=self.rng)
        ce = cross_entropy(lg, batch.labels)
        loss = T.add(ce, T.reshape(self.l2_penalty(self.state.step), ce.shape))
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss at step {self.state.step}")
        T.backward(loss, params.values())
        grads = {name: p.grad for name, p in params.items()}
        if self.state.mode == "adadelta":
            adadelta_step(params, grads, self.state, self.config)
        else:
            sgd_step(params, grads, self.state)
        self.state.step += 1
        return value

    def _emit(self, step: int, split: str, loss: float, accuracy: float) -> None:
        rec = {"step": step, "split": split, "loss": loss, "accuracy": accuracy,
               "mode": self.state.mode, "r_l2": l2_schedule(step, self.config)}
        self.history.append(rec)
        if self.log is not None:
            self.log(format_log_line(rec))

    def run_eval(self) -> Optional[EvalResult]:
        if self.dev is None:
            return None
        res = evaluate(self.model, *self.dev, batch_size=self.config.batch_size)
        self._emit(self.state.step, "dev", res.loss, res.accuracy)
        metric = res.accuracy if self.config.fallback_metric == "accuracy" else res.loss
        fallback_check(self.state, metric, self.config)
        return res

    def run(self, steps: Optional[int] = None, on_eval: Optional[Callable] = None) -> OptimizerState:
        """Train for ``steps`` more steps (default: until the configured budget is used)."""
        end = self.total_steps if steps is None else min(self.state.step + steps, self.total_steps)
        running, count = 0.0, 0
        while self.state.step < end:
            loss = self.train_step(self.batch_for_step(self.state.step))
            running += loss
            count += 1
            if self.state.step % self.config.eval_every_steps == 0 or self.state.step == self.total_steps:
                self._emit(self.state.step, "train", running / count, float("nan"))
                running, count = 0.0, 0
                res = self.run_eval()
                if on_eval is not None and res is not None:
                    on_eval(self, res)
        return self.state

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state


def format_log_line(rec: dict) -> str:
    return "\t".join([str(rec["step"]), rec["split"], repr(float(rec["loss"])), repr(float(rec["accuracy"])),
                      rec["mode"], repr(float(rec["r_l2"]))])


def trainer_config_dict(config: TrainerConfig) -> dict:
    return asdict(config)

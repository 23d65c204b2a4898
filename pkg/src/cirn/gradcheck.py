"""Central-difference gradient checks for every differentiable operation and the full model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    worst_index: Optional[tuple]
    checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} max_rel_err={self.max_rel_error:.3e}  coords={self.checked}"


def grad_check(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5, tol: float = 1e-6,
               coords: Optional[Sequence[tuple]] = None, floor: float = 1e-5,
               name: str = "") -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f()`` w.r.t. ``x`` with central differences.

    ``f`` is re-evaluated with ``x.data`` perturbed in place.  The relative
    error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if x.dtype != np.float64:
        raise ContractError("grad_check needs 64-bit tensors")
    x.grad = None
    out = f()
    if out.size != 1:
        raise ContractError("grad_check needs a scalar-valued function")
    T.backward(out, [x])
    analytic = x.grad.copy()
    if coords is None:
        coords = list(np.ndindex(x.shape))
    worst, worst_idx = 0.0, None
    for idx in coords:
        orig = x.data[idx]
        x.data[idx] = orig + h
        fp = float(f().data)
        x.data[idx] = orig - h
        fm = float(f().data)
        x.data[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value while perturbing coordinate {idx}")
        numeric = (fp - fm) / (2 * h)
        a = analytic[idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        if err > worst:
            worst, worst_idx = err, tuple(int(i) for i in idx)
    return GradCheckReport(name, float(worst), worst_idx, len(coords), tol)


def sample_coords(shape, k: int, rng: np.random.Generator) -> List[tuple]:
    all_idx = list(np.ndindex(shape))
    if len(all_idx) <= k:
        return all_idx
    return [all_idx[i] for i in sorted(rng.choice(len(all_idx), size=k, replace=False))]


def _away_from_zero(rng, shape, low=0.2, high=1.5):
    return rng.uniform(low, high, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _weighted_sum(y: Tensor, w: np.ndarray) -> Tensor:
    return T.tsum(T.mul(y, Tensor(w)))


def op_checks(rng: np.random.Generator, tol: float) -> List[GradCheckReport]:
    """One check per primitive (and per input for multi-input primitives)."""
    reports = []

    def check(name, fn, inputs):
        probe = fn(*inputs)
        w = rng.normal(size=probe.shape)
        for k, x in enumerate(inputs):
            if not x.requires_grad:
                continue
            label = name if len(inputs) == 1 else f"{name}[arg{k}]"
            reports.append(grad_check(lambda: _weighted_sum(fn(*inputs), w), x, tol=tol, name=label))

    def leaf(arr):
        return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)

    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 5)))
    check("matmul", T.matmul, [a, b])
    check("matmul_batched", T.matmul, [leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(2, 4, 2)))])
    u, v = leaf(rng.normal(size=(5,))), leaf(rng.normal(size=(5,)))
    for op in ("add", "sub", "mul"):
        check(op, lambda p, q, op=op: T.ewise(op, p, q), [u, v])
    check("relu", T.relu, [leaf(_away_from_zero(rng, (4,)))])
    check("gelu", T.gelu, [leaf(rng.normal(size=(4,)))])
    check("softmax", T.softmax_lastdim, [leaf(rng.normal(size=(3, 4)))])
    check("log_softmax", T.log_softmax_lastdim, [leaf(rng.normal(size=(3, 4)))])
    labels = np.array([0, 2, 1])
    check("cross_entropy", lambda z: T.cross_entropy_logits(z, labels), [leaf(rng.normal(size=(3, 3)))])
    check("layer_norm", lambda x, g, bb: T.layer_norm(x, g, bb, 1e-5),
          [leaf(rng.normal(size=(3, 5))), leaf(rng.normal(size=(5,))), leaf(rng.normal(size=(5,)))])
    x = leaf(rng.normal(size=(2, 4, 4)))
    k3 = leaf(rng.normal(size=(3, 2, 3, 3)))
    bias = leaf(rng.normal(size=(3,)))
    check("conv2d_same", lambda p, q, r: T.conv2d(p, q, r, "same"), [x, k3, bias])
    check("conv2d_valid", lambda p, q: T.conv2d(p, q, None, "valid"), [x, leaf(rng.normal(size=(2, 2, 3, 3)))])
    pool_in = leaf(rng.permutation(np.arange(2 * 3 * 5)).reshape(2, 3, 5) * 0.1)
    check("maxpool2d", T.maxpool2d, [pool_in])
    check("global_maxpool", T.global_maxpool, [leaf(rng.permutation(np.arange(2 * 3 * 3)).reshape(2, 3, 3) * 0.1)])
    check("concat", lambda p, q: T.concat([p, q], axis=0),
          [leaf(rng.normal(size=(2, 3, 3))), leaf(rng.normal(size=(3, 3, 3)))])
    check("dropout", lambda p: T.dropout(p, 0.4, True, np.random.default_rng(7)), [leaf(rng.normal(size=(6,)))])
    check("reshape", lambda p: T.reshape(p, (6, 2)), [leaf(rng.normal(size=(3, 4)))])
    check("transpose", lambda p: T.transpose(p, (2, 0, 1)), [leaf(rng.normal(size=(2, 3, 4)))])
    check("expand", lambda p: T.expand(p, (3, 4)), [leaf(rng.normal(size=(1, 4)))])
    check("sum", lambda p: T.tsum(p, axis=1), [leaf(rng.normal(size=(3, 4)))])
    check("getitem", lambda p: T.getitem(p, (slice(1, 3), 0)), [leaf(rng.normal(size=(4, 3)))])
    check("take_rows", lambda p: T.take_rows(p, np.array([[0, 2, 2], [1, 0, 3]])), [leaf(rng.normal(size=(4, 3)))])
    check("gather_positions", lambda p: T.gather_positions(p, np.array([[1, 1, 0], [2, 3, 0]])),
          [leaf(rng.normal(size=(2, 4, 3)))])
    return reports


def toy_model_config(vocab_size: int, ablation: str = "none"):
    from .encoder import EncoderConfig
    from .features import DenseNetConfig
    from .model import ModelConfig

    return ModelConfig(
        EncoderConfig(vocab_size=vocab_size, d=16, layers=2, heads=2, ffn_dim=32, max_positions=16,
                      dropout_rate=0.0),
        DenseNetConfig(eta=0.3, growth=4, layers_per_block=2, blocks=1, theta=0.5),
        ablation=ablation,
    )


def toy_batch(rng: np.random.Generator, vocab_size: int, lengths=((5, 4),)):
    from .data import TokenizedPair, make_batch

    pairs = []
    for n, m in lengths:
        ids = [2] + list(rng.integers(4, vocab_size, n)) + [3] + list(rng.integers(4, vocab_size, m)) + [3]
        pairs.append(TokenizedPair(tuple(int(i) for i in ids), (0,) * (n + 2) + (1,) * (m + 1), n, m))
    return make_batch(pairs, rng.integers(0, 3, len(pairs)))


def _perturb_params(model, rng):
    # random (not initial) values keep ReLUs and max pools away from ties
    for name, p in model.named_parameters().items():
        if name.endswith(".bias") or name.endswith(".gain"):
            p.data = p.data + rng.normal(0, 0.1, size=p.shape)


def model_checks(rng: np.random.Generator, tol: float, per_tensor: int = 6,
                 ablations: Sequence[str] = ("none",)) -> List[GradCheckReport]:
    """End-to-end checks of cross-entropy w.r.t. sampled coordinates of every parameter."""
    from .encoder import encode_layers
    from .features import extract_features
    from .head import cross_entropy
    from .interaction import stack_interactions
    from .model import CIRN

    vocab_size = 12
    batch = toy_batch(rng, vocab_size)
    reports = []
    for ablation in ablations:
        cfg = toy_model_config(vocab_size, ablation)
        model = CIRN(cfg, seed=int(rng.integers(1 << 30)))
        _perturb_params(model, rng)

        def loss():
            return cross_entropy(model.logits(batch), batch.labels)

        worst = None
        total = 0
        for name, p in model.named_parameters().items():
            r = grad_check(loss, p, tol=tol, coords=sample_coords(p.shape, per_tensor, rng))
            total += r.checked
            if worst is None or r.max_rel_error > worst.max_rel_error:
                worst = GradCheckReport("", r.max_rel_error, (name,) + (r.worst_index or ()), 0, tol)
        label = "model_end_to_end" if ablation == "none" else f"model_end_to_end[{ablation}]"
        reports.append(GradCheckReport(label, worst.max_rel_error, worst.worst_index, total, tol))

    # component-level checks with respect to intermediate inputs
    cfg = toy_model_config(vocab_size)
    model = CIRN(cfg, seed=3)
    _perturb_params(model, rng)
    params = model.named_parameters()
    layers = [Tensor(h.data.copy(), requires_grad=True) for h in encode_layers(batch, params, cfg.encoder)]
    w = rng.normal(size=stack_interactions(layers, batch).values.shape)
    for l, h in enumerate(layers):
        reports.append(grad_check(lambda: _weighted_sum(stack_interactions(layers, batch).values, w), h,
                                  tol=tol, name=f"stack_interactions[layer{l}]"))

    stack = stack_interactions(layers, batch)
    vals = Tensor(stack.values.data.copy(), requires_grad=True)
    probe = stack.__class__(vals, stack.pair_mask, stack.layers_used)
    wf = rng.normal(size=extract_features(probe, params, cfg.densenet).shape)
    reports.append(grad_check(lambda: _weighted_sum(extract_features(probe, params, cfg.densenet), wf), vals,
                              tol=tol, coords=sample_coords(vals.shape, 60, rng), name="extract_features"))
    return reports


def run_suite(tol: float = 1e-4, seed: int = 0, per_tensor: int = 6,
              ablations: Sequence[str] = ("none", "last_layer_only", "no_interaction", "no_densenet"),
              ) -> List[GradCheckReport]:
    """All operation checks plus the end-to-end model, in 64-bit mode."""
    rng = np.random.default_rng(seed)
    with T.default_dtype(np.float64):
        return op_checks(rng, tol) + model_checks(rng, tol, per_tensor, ablations)


def summarize(reports: Sequence[GradCheckReport], elapsed: Optional[float] = None) -> str:
    lines = [r.line() for r in reports]
    failed = [r.name for r in reports if not r.passed]
    tail = f"{len(reports) - len(failed)}/{len(reports)} checks passed"
    if elapsed is not None:
        tail += f" in {elapsed:.1f}s"
    if failed:
        tail += "; failed: " + ", ".join(failed)
    return "\n".join(lines + [tail])

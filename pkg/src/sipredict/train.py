"""Training and evaluation: Huber loss, Adam, k-fold checkpoint selection,

fold/enhancer ensembles, RMSE/NCC metrics, the encoder-layer sweep, and
evaluation reports. Single-threaded and bit-deterministic for a fixed
(seed, data, config) triple.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .checkpoint import load_model, save_model
from .data import FoldPlan, Manifest, make_batches, make_folds
from .enhancers import EnhancerSpec
from .errors import (
    ConfigError,
    ContractError,
    NumericError,
    PredictionError,
    PredictorError,
    TrainingDiverged,
    UndefinedCorrelationError,
)
from .featfile import validate_feature_file
from .features import FeatureStore, batch_inputs, clip_input
from .model import ModelConfig, PredictorModel
from .tensor import Tensor

_TRAIN_TAG = 707  # rng stream tag for dropout inside the training loop

ENSEMBLE_INDEX = "ensemble.json"


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16  # full-scale runs use 128
    lr: float = 4e-5
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    huber_delta: float = 10.0  # errors under 10 score points behave quadratically
    seed: int = 0
    n_folds: int = 3
    grad_clip: float | None = None

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        # lr == 0 stays legal as a degenerate no-update diagnostic
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {b}")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.huber_delta <= 0:
            raise ConfigError(f"huber_delta must be > 0, got {self.huber_delta}")
        if self.n_folds < 1:
            raise ConfigError(f"n_folds must be >= 1, got {self.n_folds}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be > 0, got {self.grad_clip}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "huber_delta": self.huber_delta,
            "seed": self.seed,
            "n_folds": self.n_folds,
            "grad_clip": self.grad_clip,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = set(cls().to_dict())
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


# -- loss -----------------------------------------------------------------


def huber(pred: float, target: float, delta: float = 10.0) -> float:
    if delta <= 0:
        raise ConfigError(f"huber delta must be > 0, got {delta}")
    e = float(pred) - float(target)
    if not math.isfinite(e):
        raise ContractError(f"huber loss needs finite inputs, got error {e}")
    if abs(e) <= delta:
        return 0.5 * e * e
    return delta * (abs(e) - 0.5 * delta)


def huber_term(pred: Tensor, target: float, delta: float) -> Tensor:
    """Differentiable scalar Huber loss.

    The branch is picked from the forward value; both branches agree in value
    and slope at |e| = delta, so the gradient stays exact at the seam.
    """
    e = T.shift(pred, -float(target))
    a = abs(e.item())
    if a <= delta:
        return T.scale(T.mul(e, e), 0.5)
    sign = 1.0 if e.item() >= 0 else -1.0
    return T.shift(T.scale(e, delta * sign), -0.5 * delta * delta)


# -- optimizer ------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_init(params: Mapping[str, Tensor]) -> AdamState:
    return AdamState(
        m={n: np.zeros_like(p.data) for n, p in params.items()},
        v={n: np.zeros_like(p.data) for n, p in params.items()},
    )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> AdamState:
    """Bias-corrected Adam update, in place on the parameter tensors."""
    state.t += 1
    c1 = 1.0 - cfg.beta1**state.t
    c2 = 1.0 - cfg.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ContractError(
                f"gradient for '{name}' has shape {g.shape}, parameter has {p.data.shape}"
            )
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return state


def _clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor


# -- metrics --------------------------------------------------------------


def _as_pair(preds, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.ndim != 1 or t.ndim != 1:
        raise ContractError(f"metrics take 1-D vectors, got shapes {p.shape} and {t.shape}")
    if p.shape != t.shape:
        raise ContractError(f"length mismatch: {p.shape[0]} predictions, {t.shape[0]} targets")
    if p.size == 0:
        raise ContractError("metrics need at least one element")
    return p, t


def rmse(preds, targets) -> float:
    p, t = _as_pair(preds, targets)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def ncc(preds, targets) -> float:
    p, t = _as_pair(preds, targets)
    pc = p - p.mean()
    tc = t - t.mean()
    sp = float(np.sqrt((pc * pc).sum()))
    st = float(np.sqrt((tc * tc).sum()))
    if sp == 0.0 or st == 0.0:
        which = "predictions" if sp == 0.0 else "targets"
        raise UndefinedCorrelationError(f"correlation undefined: {which} are constant")
    return float((pc * tc).sum() / (sp * st))


# -- per-fold training ----------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_rmse: float


@dataclass
class FoldResult:
    model: PredictorModel
    best_epoch: int
    val_rmse: float
    curve: list[EpochStats]


def curve_to_csv(curve: list[EpochStats]) -> str:
    lines = ["epoch,train_loss,val_rmse"]
    lines += [f"{s.epoch},{s.train_loss!r},{s.val_rmse!r}" for s in curve]
    return "\n".join(lines) + "\n"


def _param_norm_summary(params: Mapping[str, Tensor], top: int = 3) -> str:
    norms = sorted(
        ((float(np.linalg.norm(p.data)), n) for n, p in params.items()), reverse=True
    )
    return ", ".join(f"{n}={v:.3e}" for v, n in norms[:top])


def train_fold(
    model_cfg: ModelConfig,
    manifest: Manifest,
    train_ids: list[str],
    val_ids: list[str],
    feature_fn: Callable,
    tcfg: TrainConfig,
    model_seed: int | None = None,
) -> FoldResult:
    """Epochs of forward/Huber/backward/Adam over the training ids, validation

    RMSE after every epoch, and the parameters from the best-validation epoch
    (ties keep the earlier epoch)."""
    tcfg.validate()
    if not train_ids or not val_ids:
        raise ContractError("train_fold needs nonempty train and validation id lists")
    cmap = manifest.clip_map()
    missing = [i for i in list(train_ids) + list(val_ids) if i not in cmap]
    if missing:
        raise ContractError(f"fold references unknown clip ids: {missing[:5]}")
    train_m = manifest.replaced([cmap[i] for i in train_ids])
    val_pairs = [(clip_input(cmap[i], feature_fn), cmap[i].score) for i in val_ids]
    val_targets = np.array([s for _, s in val_pairs], dtype=np.float64)

    seed = tcfg.seed if model_seed is None else int(model_seed)
    model = PredictorModel(model_cfg, seed=seed)
    params = model.parameters()
    state = adam_init(params)

    best_rmse = math.inf
    best_epoch = -1
    best_data: dict[str, np.ndarray] = {}
    curve: list[EpochStats] = []
    for epoch in range(tcfg.epochs):
        batches = make_batches(train_m, tcfg.batch_size, feature_fn, seed=seed, epoch=epoch)
        epoch_losses = []
        for b_idx, batch in enumerate(batches):
            pairs = batch_inputs(batch)
            for p in params.values():
                p.zero_grad()
            rng = np.random.default_rng((seed, _TRAIN_TAG, epoch, b_idx))
            inv = 1.0 / len(pairs)
            batch_loss = 0.0
            for inp, target in pairs:
                try:
                    out = model.predict_tensor(inp, rng=rng)
                    loss = huber_term(out, target, tcfg.huber_delta)
                    lval = loss.item()
                except NumericError as err:
                    lval = math.nan
                    cause = err
                else:
                    cause = None
                if not math.isfinite(lval):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, batch {b_idx}; "
                        f"largest parameter norms: {_param_norm_summary(params)}"
                    ) from cause
                batch_loss += lval
                T.scale(loss, inv).backward()
            grads = {n: p.grad for n, p in params.items() if p.grad is not None}
            if tcfg.grad_clip is not None:
                _clip_gradients(grads, tcfg.grad_clip)
            adam_step(params, grads, state, tcfg)
            epoch_losses.append(batch_loss * inv)
        preds = np.array([model.predict(i) for i, _ in val_pairs], dtype=np.float64)
        val_rmse = rmse(preds, val_targets)
        curve.append(EpochStats(epoch, float(np.mean(epoch_losses)), val_rmse))
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_epoch = epoch
            best_data = {n: p.data.copy() for n, p in params.items()}
    for n, p in params.items():
        p.data = best_data[n]
    return FoldResult(model, best_epoch, best_rmse, curve)


# -- ensembles ------------------------------------------------------------


@dataclass
class EnsembleMember:
    enhancer: str
    fold: int
    model: PredictorModel
    val_rmse: float
    best_epoch: int
    curve: list[EpochStats] = field(default_factory=list)


@dataclass
class TrainedEnsemble:
    members: list[EnsembleMember]
    plan: FoldPlan
    model_config: ModelConfig
    train_config: TrainConfig

    @property
    def enhancers(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(m.enhancer for m in self.members))

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for m in self.members:
            fname = f"{m.enhancer}_fold{m.fold}.sipc"
            save_model(
                out / fname,
                m.model,
                extra={
                    "enhancer": m.enhancer,
                    "fold": m.fold,
                    "val_rmse": m.val_rmse,
                    "best_epoch": m.best_epoch,
                },
            )
            rows.append(
                {
                    "enhancer": m.enhancer,
                    "fold": m.fold,
                    "file": fname,
                    "val_rmse": m.val_rmse,
                    "best_epoch": m.best_epoch,
                }
            )
        index = {
            "members": rows,
            "enhancers": list(self.enhancers),
            "fold_plan": {
                "n_folds": self.plan.n_folds,
                "seed": self.plan.seed,
                "folds": [[list(tr), list(va)] for tr, va in self.plan.folds],
            },
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
        }
        (out / ENSEMBLE_INDEX).write_text(json.dumps(index, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, in_dir) -> "TrainedEnsemble":
        src = Path(in_dir)
        index_path = src / ENSEMBLE_INDEX
        if not index_path.exists():
            raise FileNotFoundError(f"{index_path}: no ensemble index found")
        index = json.loads(index_path.read_text())
        members = [
            EnsembleMember(
                enhancer=row["enhancer"],
                fold=row["fold"],
                model=load_model(src / row["file"]),
                val_rmse=row["val_rmse"],
                best_epoch=row["best_epoch"],
            )
            for row in index["members"]
        ]
        fp = index["fold_plan"]
        plan = FoldPlan(fp["n_folds"], fp["seed"], [(tr, va) for tr, va in fp["folds"]])
        return cls(
            members,
            plan,
            ModelConfig.from_dict(index["model_config"]),
            TrainConfig.from_dict(index["train_config"]),
        )


def derive_seed(master: int, enhancer: str, fold: int) -> int:
    tag = zlib.crc32(enhancer.encode("utf-8"))
    return int(np.random.SeedSequence((int(master), _TRAIN_TAG, tag, int(fold))).generate_state(1)[0])


def train_ensemble(
    manifest: Manifest,
    enhancers: Mapping[str, EnhancerSpec],
    model_cfg: ModelConfig,
    tcfg: TrainConfig,
    stores: Mapping[str, Callable] | None = None,
    feature_kwargs: Mapping | None = None,
    threads: int = 1,
) -> TrainedEnsemble:
    """n_folds checkpoints per enhancer, each fold seeded independently from

    the master seed. ``stores`` may inject prebuilt feature callables; by
    default one FeatureStore per enhancer is constructed. Folds are fully
    independent, so threads > 1 changes wall time only, never the result."""
    if not enhancers:
        raise ContractError("train_ensemble needs at least one enhancer")
    plan = make_folds(manifest, tcfg.seed, tcfg.n_folds)
    jobs = []
    for name, spec in enhancers.items():
        if stores is not None and name in stores:
            store = stores[name]
        else:
            store = FeatureStore(manifest, spec, enhancer_name=name, **dict(feature_kwargs or {}))
        for k, (train_ids, val_ids) in enumerate(plan.folds):
            jobs.append((name, k, store, train_ids, val_ids))

    def run_job(job) -> EnsembleMember:
        name, k, store, train_ids, val_ids = job
        sub_seed = derive_seed(tcfg.seed, name, k)
        try:
            res = train_fold(model_cfg, manifest, train_ids, val_ids, store, tcfg,
                             model_seed=sub_seed)
        except (PredictorError, OSError) as err:
            raise PredictorError(
                f"ensemble training failed at enhancer '{name}' fold {k}: {err}"
            ) from err
        return EnsembleMember(name, k, res.model, res.val_rmse, res.best_epoch, res.curve)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            members = list(pool.map(run_job, jobs))
    else:
        members = [run_job(j) for j in jobs]
    return TrainedEnsemble(members, plan, model_cfg, tcfg)


def predict_ensemble(ensemble: TrainedEnsemble, clip, stores: Mapping[str, Callable]) -> float:
    """Arithmetic mean over every (enhancer, fold) member's prediction."""
    if not ensemble.members:
        raise ContractError("ensemble has no members")
    inputs = {}
    for name in ensemble.enhancers:
        fn = stores.get(name)
        if fn is None:
            folds = [m.fold for m in ensemble.members if m.enhancer == name]
            raise PredictionError(
                f"no feature source for ensemble members (enhancer='{name}', folds={folds})"
            )
        inputs[name] = clip_input(clip, fn)
    scores = [m.model.predict(inputs[m.enhancer]) for m in ensemble.members]
    # fsum: member order cannot perturb the mean
    return math.fsum(scores) / len(scores)


# -- layer sweep ----------------------------------------------------------


@dataclass
class LayerSweepRow:
    layer: int
    val_rmse: float
    best: bool


def layer_sweep(
    manifest: Manifest,
    model_cfg: ModelConfig,
    tcfg: TrainConfig,
    sweep_epochs: int = 5,
) -> list[LayerSweepRow]:
    """One reduced-budget model per encoder layer of a feature-backed manifest;

    the lowest-validation-RMSE layer is flagged. The probe models adopt the
    files' feature width."""
    counts = set()
    widths = set()
    for clip in manifest.clips:
        if not clip.features:
            raise ContractError(f"clip '{clip.clip_id}' has no feature files; layer sweep needs them")
        for rel in clip.features.values():
            dims = validate_feature_file(manifest.resolve(rel))["dims"]
            if len(dims) != 3:
                raise ContractError(
                    f"{rel}: layer sweep needs 3-D [layers, frames, dim] files, got dims {dims}"
                )
            counts.add(dims[0])
            widths.add(dims[2])
    if len(counts) != 1:
        raise ContractError(f"inconsistent layer counts across feature files: {sorted(counts)}")
    if len(widths) != 1:
        raise ContractError(f"inconsistent feature widths across feature files: {sorted(widths)}")
    n_layers = counts.pop()
    model_cfg = replace(model_cfg, sfm_feature_dim=widths.pop())

    sweep_cfg = replace(tcfg, epochs=sweep_epochs)
    plan = make_folds(manifest, tcfg.seed, n_folds=1)
    train_ids, val_ids = plan.folds[0]
    rmses = []
    for layer in range(n_layers):
        store = FeatureStore(manifest, EnhancerSpec("identity"), layer_index=layer)
        res = train_fold(model_cfg, manifest, train_ids, val_ids, store, sweep_cfg)
        rmses.append(res.val_rmse)
    best_i = int(np.argmin(rmses))
    return [LayerSweepRow(i, r, i == best_i) for i, r in enumerate(rmses)]


def sweep_to_csv(rows: list[LayerSweepRow]) -> str:
    lines = ["layer,val_rmse,best"]
    lines += [f"{r.layer},{r.val_rmse!r},{int(r.best)}" for r in rows]
    return "\n".join(lines) + "\n"


# -- evaluation reports ---------------------------------------------------


@dataclass
class EvalReport:
    dataset: str
    model_id: str
    rows: list[dict]  # {"clip_id", "target", "prediction"}
    failures: list[dict]  # {"clip_id", "error"}
    rmse: float | None
    ncc: float | None

    @property
    def n(self) -> int:
        return len(self.rows)

    def to_json(self) -> str:
        doc = {
            "dataset": self.dataset,
            "model_id": self.model_id,
            "n": self.n,
            "rmse": self.rmse,
            "ncc": self.ncc,
            "rows": self.rows,
            "failures": self.failures,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        lines = ["clip_id,target,prediction"]
        lines += [f"{r['clip_id']},{r['target']!r},{r['prediction']!r}" for r in self.rows]
        return "\n".join(lines) + "\n"


def evaluate(
    ensemble: TrainedEnsemble,
    manifest: Manifest,
    stores: Mapping[str, Callable],
    model_id: str = "ensemble",
    threads: int = 1,
) -> EvalReport:
    """Per-clip ensemble predictions plus RMSE/NCC; per-clip failures are

    collected, not fatal. NCC on a constant vector is reported as null.
    Evaluation is read-only, so threads > 1 never changes the report."""
    if len(manifest) == 0:
        raise ContractError("cannot evaluate an empty manifest")

    def score_one(clip):
        try:
            return clip, predict_ensemble(ensemble, clip, stores), None
        except (PredictorError, OSError) as err:
            return clip, None, f"{type(err).__name__}: {err}"

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(score_one, manifest.clips))
    else:
        scored = [score_one(c) for c in manifest.clips]

    rows: list[dict] = []
    failures: list[dict] = []
    for clip, pred, err in scored:
        if err is not None:
            failures.append({"clip_id": clip.clip_id, "error": err})
        else:
            rows.append({"clip_id": clip.clip_id, "target": clip.score, "prediction": pred})
    r = c = None
    if rows:
        preds = [row["prediction"] for row in rows]
        targets = [row["target"] for row in rows]
        r = rmse(preds, targets)
        try:
            c = ncc(preds, targets)
        except UndefinedCorrelationError:
            c = None
    return EvalReport(manifest.name, model_id, rows, failures, r, c)

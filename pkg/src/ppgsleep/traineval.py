"""Label merging, cross-validation splits, the training loop, and the
masked four-class metric suite (accuracy, Cohen's kappa, weighted and macro
F1 from a single confusion matrix)."""

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import model as model_mod
from . import tensorcore as tc
from .errors import EmptyBatchError, EmptyEvalError, InvalidSpecError

UNSCORED = -1  # sentinel for epochs excluded from loss and metrics


class StageLabel(enum.IntEnum):
    WAKE = 0
    LIGHT = 1
    DEEP = 2
    REM = 3


STAGE_NAMES = ("Wake", "Light", "Deep", "REM")

# total merge map: wakefulness -> Wake, NREM1+NREM2 -> Light, NREM3 -> Deep,
# REM -> REM, anything unrecognized -> unscored. Numeric aliases follow the
# 0/1/2/3/5 scoring convention.
_MERGE = {
    "W": 0, "WAKE": 0, "WAKEFULNESS": 0, "0": 0,
    "N1": 1, "NREM1": 1, "S1": 1, "1": 1,
    "N2": 1, "NREM2": 1, "S2": 1, "2": 1,
    "N3": 2, "NREM3": 2, "S3": 2, "3": 2,
    "R": 3, "REM": 3, "5": 3,
}


def merge_labels(raw):
    """Map raw stage codes to the four-class labels; unknown codes become
    the unscored sentinel."""
    out = np.empty(len(raw), dtype=np.int8)
    for i, code in enumerate(raw):
        out[i] = _MERGE.get(str(code).strip().upper(), UNSCORED)
    return out


def kfold_split(subjects, folds=5, seed=42):
    """Subject-level split: shuffle once with the seed, deal validation
    subjects round-robin. Every subject validates exactly once."""
    subjects = list(subjects)
    if folds < 2:
        raise InvalidSpecError(f"need >= 2 folds, got {folds}")
    if len(subjects) < folds:
        raise InvalidSpecError(
            f"{len(subjects)} subjects cannot fill {folds} folds")
    rng = np.random.Generator(np.random.Philox(key=seed))
    shuffled = [subjects[i] for i in rng.permutation(len(subjects))]
    out = []
    for i in range(folds):
        val = shuffled[i::folds]
        val_set = set(val)
        train = [s for s in shuffled if s not in val_set]
        out.append((train, val))
    return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 0.00025
    seed: int = 42
    batch_size: int = None  # resolved per configuration, see for_config
    folds: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


# per-configuration default batch sizes
CONFIG_BATCH_SIZES = {"c01": 8, "c02": 32, "c03": 64, "c04": 1024, "c05": 1024}


def config_for(config_id, **overrides):
    """TrainConfig with the configuration's default batch size, unless
    overridden."""
    if config_id not in CONFIG_BATCH_SIZES:
        raise InvalidSpecError(f"unknown configuration {config_id!r}")
    cfg = TrainConfig(batch_size=CONFIG_BATCH_SIZES[config_id])
    return replace(cfg, **overrides) if overrides else cfg


def _check_config(config):
    if config.batch_size is None or config.batch_size < 1:
        raise InvalidSpecError("batch_size must be set and >= 1 (see config_for)")
    if config.epochs < 0:
        raise InvalidSpecError("epochs must be >= 0")
    if config.folds < 2:
        raise InvalidSpecError("folds must be >= 2")


def train(config, spec, data, params=None, dtype=np.float32, on_epoch=None):
    """Train for config.epochs over the super-window set.

    Shuffling is seeded (one Philox stream per run), batches are consecutive
    slices of the shuffled order with the final short batch kept, and each
    batch does forward / masked cross-entropy / backward / Adam. Returns the
    final parameters and the per-epoch mean loss over valid positions.
    """
    _check_config(config)
    x, labels, valid = data.stacked(dtype)
    if int(valid.sum()) == 0:
        raise EmptyBatchError("training set has no valid labeled positions")
    if params is None:
        params = model_mod.init_params(spec, config.seed, dtype=dtype)
    n = x.shape[0]
    rng = np.random.Generator(np.random.Philox(key=[config.seed, 1]))
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            bv = valid[idx]
            n_valid = int(bv.sum())
            if n_valid == 0:
                continue  # a batch of nothing but padding teaches nothing
            logits = model_mod.forward_logits(params, spec, tc.Tensor(x[idx]))
            loss = tc.masked_softmax_ce(logits, labels[idx], bv)
            params.zero_grad()
            loss.backward()
            tc.adam_step(params, lr=config.lr, beta1=config.beta1,
                         beta2=config.beta2, eps=config.eps)
            total += float(loss.data) * n_valid
            count += n_valid
        trace.append(total / count if count else float("nan"))
        if on_epoch is not None:
            on_epoch(epoch, trace[-1])
    return params, trace


@dataclass
class EvalReport:
    """Confusion matrix over valid positions (rows = true, cols = predicted)
    plus the four summary metrics, all recomputable from the matrix alone."""
    confusion: np.ndarray
    acc: float
    kappa: float
    f1_weighted: float
    f1_macro: float
    n_valid: int

    def to_dict(self):
        return {
            "acc": self.acc,
            "kappa": self.kappa,
            "f1_weighted": self.f1_weighted,
            "f1_macro": self.f1_macro,
            "n_valid": self.n_valid,
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(confusion=np.asarray(d["confusion"], dtype=np.int64),
                   acc=d["acc"], kappa=d["kappa"], f1_weighted=d["f1_weighted"],
                   f1_macro=d["f1_macro"], n_valid=d["n_valid"])


def metrics_from_confusion(confusion):
    """(acc, kappa, f1_weighted, f1_macro) from a 4x4 count matrix.

    Conventions: a class absent from both truth and predictions is excluded
    from the macro mean; a class with support but no correct predictions
    contributes F1 = 0; when chance agreement is 1, kappa is 1 if observed
    agreement is 1 and else 0.
    """
    c = np.asarray(confusion, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        raise EmptyEvalError("confusion matrix has no counts")
    row = c.sum(axis=1)
    col = c.sum(axis=0)
    diag = np.diag(c)
    acc = diag.sum() / total

    pe = float(row @ col) / (total * total)
    if 1.0 - pe < 1e-15:
        kappa = 1.0 if acc >= 1.0 - 1e-15 else 0.0
    else:
        kappa = (acc - pe) / (1.0 - pe)

    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(col > 0, diag / np.where(col > 0, col, 1), 0.0)
        recall = np.where(row > 0, diag / np.where(row > 0, row, 1), 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1), 0.0)
    f1_weighted = float(row @ f1) / total
    present = (row > 0) | (col > 0)
    f1_macro = float(f1[present].mean()) if present.any() else 0.0
    return float(acc), float(kappa), f1_weighted, f1_macro


def evaluate(params, spec, data, batch_size=64):
    """Score every (super-window, position) pair independently: argmax of the
    class scores per valid position, counted once. Overlapping super-windows
    are not merged — evaluation mirrors how the masked loss sees positions.
    """
    x, labels, valid = data.stacked()
    if int(valid.sum()) == 0:
        raise EmptyEvalError("no valid positions to evaluate")
    k = len(STAGE_NAMES)
    confusion = np.zeros((k, k), dtype=np.int64)
    with tc.no_grad():
        for lo in range(0, x.shape[0], batch_size):
            hi = min(lo + batch_size, x.shape[0])
            logits = model_mod.forward_logits(params, spec, tc.Tensor(x[lo:hi]))
            pred = logits.data.argmax(axis=-1)
            m = valid[lo:hi]
            pairs = labels[lo:hi][m].astype(np.int64) * k + pred[m]
            confusion += np.bincount(pairs, minlength=k * k).reshape(k, k)
    acc, kappa, f1w, f1m = metrics_from_confusion(confusion)
    return EvalReport(confusion=confusion, acc=acc, kappa=kappa,
                      f1_weighted=f1w, f1_macro=f1m, n_valid=int(confusion.sum()))

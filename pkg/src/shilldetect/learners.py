"""Decision-stump boosting (plain and re-scaled) and a kNN baseline.

Labels are -1 (genuine) / +1 (attack) throughout.  Boosting fits one
single-split stump per round by exhaustive search over every feature,
candidate threshold and polarity; re-scale boosting damps the accumulated
ensemble by ``1 - s_t`` with ``s_t = 2 / (t + u)`` before adding each round.
Training is deterministic: the stump search uses a total tie order and no
sampling anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ValidationError

T_GRID = (10, 20, 50, 100, 200, 500)
K_GRID = tuple(range(1, 26, 2))
U_GRID = tuple(int(v) for v in np.unique(np.rint(np.logspace(0, 6, 20))))

ATTACK = 1
GENUINE = -1


@dataclass(frozen=True)
class DecisionStump:
    """Single-feature threshold classifier: +1 iff polarity*(x - thr) > 0."""

    feature_index: int
    threshold: float
    polarity: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        col = X[:, self.feature_index]
        return np.where(self.polarity * (col - self.threshold) > 0, 1, -1)


@dataclass(frozen=True)
class BoostRound:
    stump: DecisionStump
    alpha: float
    shrink: float
    epsilon: float      # weighted error the stump achieved, unclamped


class StumpEnsemble:
    """Ordered boosting rounds with shrink factors folded into coefficients."""

    def __init__(self, rounds):
        self.rounds = tuple(rounds)

    def __len__(self) -> int:
        return len(self.rounds)

    def effective_coefficients(self) -> np.ndarray:
        """c_t = alpha_t * prod_{k>t} (1 - s_k); equals alpha_t when s == 0."""
        coeffs = np.empty(len(self.rounds))
        suffix = 1.0
        for t in range(len(self.rounds) - 1, -1, -1):
            coeffs[t] = self.rounds[t].alpha * suffix
            suffix *= 1.0 - self.rounds[t].shrink
        return coeffs

    def margins(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros(len(X))
        for c, r in zip(self.effective_coefficients(), self.rounds):
            out += c * r.stump.predict(X)
        return out

    def margins_recursive(self, X: np.ndarray) -> np.ndarray:
        """Literal recursion f_t = (1 - s_t) f_{t-1} + alpha_t g_t."""
        X = np.asarray(X, dtype=np.float64)
        f = np.zeros(len(X))
        for r in self.rounds:
            f = (1.0 - r.shrink) * f + r.alpha * r.stump.predict(X)
        return f

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.margins(X) > 0, 1, -1)


@dataclass(frozen=True)
class TrainConfig:
    """Boosting knobs; ``u`` only matters for the re-scaled variant.

    ``shrink_sequence`` overrides the 2/(t + u) schedule with explicit
    per-round factors (shorter sequences pad with their last value); it
    exists for schedule experiments and degenerate-shrink checks.
    """

    max_rounds: int = 100
    u: int = 1
    epsilon_floor: float = 1e-10
    rescale_aware_weights: bool = False
    shrink_sequence: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be >= 1")
        if self.u < 1:
            raise ValidationError("u must be a natural number >= 1")
        if not 0.0 < self.epsilon_floor < 0.5:
            raise ValidationError("epsilon_floor must lie in (0, 0.5)")
        if self.shrink_sequence is not None and not self.shrink_sequence:
            raise ValidationError("shrink_sequence must be non-empty when set")

    def shrink_at(self, t: int) -> float:
        """Shrink factor for 1-based round t under this config."""
        if self.shrink_sequence is not None:
            seq = self.shrink_sequence
            return float(seq[min(t - 1, len(seq) - 1)])
        return 2.0 / (t + self.u)


class _StumpSearcher:
    """Exhaustive weighted stump search with columns presorted once.

    Candidate thresholds per feature: midpoints between consecutive distinct
    sorted values plus one below the minimum and one above the maximum.  The
    best stump is the first minimum in (feature, threshold, +1-before--1)
    order.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2 or len(X) == 0:
            raise ValidationError("feature table must be a non-empty 2-D array")
        if len(y) != len(X):
            raise ValidationError("label/feature length mismatch")
        self.m, self.d = X.shape
        self._cols = []
        for j in range(self.d):
            order = np.argsort(X[:, j], kind="stable")
            v = X[order, j]
            interior = np.flatnonzero(v[1:] > v[:-1]) + 1
            positions = np.concatenate(([0], interior, [self.m]))
            thresholds = np.concatenate((
                [v[0] - 1.0],
                (v[interior - 1] + v[interior]) / 2.0,
                [v[-1] + 1.0]))
            self._cols.append((order, positions, thresholds,
                               (y[order] == 1), (y[order] == -1)))

    def best(self, weights: np.ndarray):
        w = np.asarray(weights, dtype=np.float64)
        if len(w) != self.m or (w < 0).any():
            raise ValidationError("weights must be non-negative, one per sample")
        total = w.sum()
        best = None
        for j, (order, positions, thresholds, is_pos, is_neg) in enumerate(self._cols):
            wo = w[order]
            cum_p = np.concatenate(([0.0], np.cumsum(wo * is_pos)))
            cum_n = np.concatenate(([0.0], np.cumsum(wo * is_neg)))
            # polarity +1 predicts +1 strictly above the threshold
            err_pos = cum_p[positions] + (cum_n[-1] - cum_n[positions])
            err_neg = total - err_pos
            errs = np.column_stack((err_pos, err_neg)).ravel()
            k = int(np.argmin(errs))
            if best is None or errs[k] < best[0]:
                polarity = 1 if k % 2 == 0 else -1
                best = (float(errs[k]), j, float(thresholds[k // 2]), polarity)
        eps, j, thr, pol = best
        return DecisionStump(j, thr, pol), eps


def train_stump(features, labels, weights):
    """Best single stump for the given sample weights: (stump, epsilon)."""
    searcher = _StumpSearcher(np.asarray(features, dtype=np.float64),
                              np.asarray(labels))
    return searcher.best(weights)


def _boost(X, y, config: TrainConfig, rescaled: bool,
           trace: list | None = None) -> StumpEnsemble:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    classes = np.unique(y)
    if not np.array_equal(classes, [-1, 1]):
        raise ValidationError("training data must contain both classes (-1/+1)")
    m = len(X)
    searcher = _StumpSearcher(X, y)
    floor = config.epsilon_floor
    w = np.full(m, 1.0 / m)
    f = np.zeros(m)
    rounds = []
    for t in range(1, config.max_rounds + 1):
        stump, eps = searcher.best(w)
        if eps >= 0.5:
            break
        eps_c = min(max(eps, floor), 1.0 - floor)
        alpha = 0.5 * math.log((1.0 - eps_c) / eps_c)
        shrink = config.shrink_at(t) if rescaled else 0.0
        g = stump.predict(X)
        rounds.append(BoostRound(stump, alpha, shrink, float(eps)))
        if config.rescale_aware_weights:
            f = (1.0 - shrink) * f + alpha * g
            w = np.exp(-y * f)
        else:
            w = w * np.exp(-y * alpha * g)
        w = w / w.sum()
        if trace is not None:
            trace.append({"round": t, "epsilon": float(eps),
                          "alpha": float(alpha), "shrink": float(shrink),
                          "weight_sum": float(w.sum())})
    return StumpEnsemble(rounds)


def adaboost_train(features, labels, config: TrainConfig = TrainConfig(),
                   trace: list | None = None) -> StumpEnsemble:
    """Classic boosting: s_t = 0 for every round."""
    return _boost(features, labels, config, rescaled=False, trace=trace)


def radaboost_train(features, labels, config: TrainConfig = TrainConfig(),
                    trace: list | None = None) -> StumpEnsemble:
    """Re-scaled boosting: the past ensemble shrinks by 1 - s_t per round."""
    return _boost(features, labels, config, rescaled=True, trace=trace)


def classify(ensemble: StumpEnsemble, x) -> tuple[int, float]:
    """(label, margin) for one feature vector; zero margin counts as genuine."""
    x = np.asarray(x, dtype=np.float64)
    needed = max((r.stump.feature_index for r in ensemble.rounds), default=-1)
    if needed >= len(x):
        raise ValidationError(
            f"vector has {len(x)} features but the ensemble uses index {needed}")
    margin = float(ensemble.margins(x[None, :])[0])
    return (1 if margin > 0 else -1), margin


# ---------------------------------------------------------------------------
# kNN baseline


@dataclass
class KnnModel:
    """kNN over z-scored features with inverse Pearson-distance voting."""

    mean: np.ndarray
    std: np.ndarray
    features: np.ndarray        # z-scored training rows
    labels: np.ndarray          # -1 / +1
    k: int


def knn_train(features, labels, k: int) -> KnnModel:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if not 1 <= k <= len(X):
        raise ValidationError(f"k={k} out of range for {len(X)} samples")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std > 0, std, 1.0)     # constant columns z-score to 0
    return KnnModel(mean, scale, (X - mean) / scale, y, int(k))


def _pearson_distances(queries: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """1 - Pearson correlation between every query and every training row.

    Pairs where either vector is constant get distance 1 (correlation
    undefined).
    """
    qc = queries - queries.mean(axis=1, keepdims=True)
    rc = rows - rows.mean(axis=1, keepdims=True)
    qn = np.linalg.norm(qc, axis=1)
    rn = np.linalg.norm(rc, axis=1)
    denom = np.outer(qn, rn)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(denom > 0, (qc @ rc.T) / np.where(denom > 0, denom, 1.0), 0.0)
    return 1.0 - np.clip(rho, -1.0, 1.0)


def _knn_vote(model: KnnModel, scaled_queries: np.ndarray) -> np.ndarray:
    dist = _pearson_distances(scaled_queries, model.features)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :model.k]
    votes = np.take_along_axis(
        model.labels[None, :].repeat(len(scaled_queries), axis=0), nearest, axis=1)
    weights = 1.0 / np.maximum(np.take_along_axis(dist, nearest, axis=1), 1e-9)
    score = (votes * weights).sum(axis=1)
    return np.where(score > 0, 1, -1)


def _check_query(model: KnnModel, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != len(model.mean):
        raise ValidationError(
            f"query has {X.shape[1]} features, model expects {len(model.mean)}")
    return X


def knn_predict(model: KnnModel, features) -> np.ndarray:
    """Predicted labels for raw query rows, z-scored with training statistics."""
    X = _check_query(model, features)
    return _knn_vote(model, (X - model.mean) / model.std)


def knn_predict_standardized(model: KnnModel, features) -> np.ndarray:
    """Predict after standardizing the query table by its own column stats.

    Feature scales drift between independently extracted tables (item rater
    counts grow with every injected profile), which leaves training-statistic
    scaling meaningless across datasets; standardizing each table against
    itself makes the neighborhoods comparable again.  Needs at least 2 query
    rows to estimate a spread; single rows fall back to training statistics.
    """
    X = _check_query(model, features)
    if len(X) < 2:
        return knn_predict(model, X)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return _knn_vote(model, (X - mean) / np.where(std > 0, std, 1.0))


def knn_classify(model: KnnModel, x) -> int:
    """Label of one raw feature vector (tie votes resolve to genuine)."""
    return int(knn_predict(model, np.asarray(x, dtype=np.float64)[None, :])[0])


# ---------------------------------------------------------------------------
# hyperparameter selection (stratified 5-fold cross validation)


def _stratified_folds(y: np.ndarray, n_folds: int = 5):
    """Deterministic stratified folds: class members dealt round-robin."""
    fold_of = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        fold_of[members] = np.arange(len(members)) % n_folds
    return [(np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f))
            for f in range(n_folds)]


def _boost_cv_errors(X, y, folds, u: int | None, floor: float):
    """Pooled CV misclassification counts at every T in T_GRID for one u."""
    errors = {t: 0 for t in T_GRID}
    config = TrainConfig(max_rounds=max(T_GRID), u=u if u else 1,
                         epsilon_floor=floor)
    for train_idx, val_idx in folds:
        ens = _boost(X[train_idx], y[train_idx], config, rescaled=u is not None)
        f = np.zeros(len(val_idx))
        yv = y[val_idx]
        t = 0
        marks = iter(sorted(T_GRID))
        next_mark = next(marks)
        done = False
        for r in ens.rounds:
            f = (1.0 - r.shrink) * f + r.alpha * r.stump.predict(X[val_idx])
            t += 1
            while t == next_mark:
                errors[next_mark] += int((np.where(f > 0, 1, -1) != yv).sum())
                nm = next(marks, None)
                if nm is None:
                    done = True
                    break
                next_mark = nm
            if done:
                break
        if not done:
            # training stopped early: remaining grid points see the final model
            miss = int((np.where(f > 0, 1, -1) != yv).sum())
            errors[next_mark] += miss
            for nm in marks:
                errors[nm] += miss
    return errors


def select_hyperparams(features, labels, algorithm: str,
                       epsilon_floor: float = 1e-10):
    """Pick T (and u) for boosting or k for kNN by stratified 5-fold CV.

    Ties resolve to the smaller parameter values.  Returns a
    :class:`TrainConfig` for the boosting algorithms and an int k for kNN.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    for cls in (-1, 1):
        if (y == cls).sum() < 5:
            raise ValidationError("need at least 5 samples of each class")
    folds = _stratified_folds(y)

    if algorithm == "knn":
        best = None
        counts = {k: 0 for k in K_GRID}
        for train_idx, val_idx in folds:
            base = knn_train(X[train_idx], y[train_idx], k=1)
            dist = _pearson_distances((X[val_idx] - base.mean) / base.std,
                                      base.features)
            order = np.argsort(dist, axis=1, kind="stable")
            for k in K_GRID:
                if k > len(train_idx):
                    counts[k] += len(val_idx)   # unusable k loses the tie
                    continue
                nearest = order[:, :k]
                votes = np.take_along_axis(
                    base.labels[None, :].repeat(len(val_idx), axis=0), nearest, axis=1)
                wts = 1.0 / np.maximum(np.take_along_axis(dist, nearest, axis=1), 1e-9)
                pred = np.where((votes * wts).sum(axis=1) > 0, 1, -1)
                counts[k] += int((pred != y[val_idx]).sum())
        best = min(K_GRID, key=lambda k: (counts[k], k))
        return int(best)

    if algorithm == "adaboost":
        errors = _boost_cv_errors(X, y, folds, u=None, floor=epsilon_floor)
        best_t = min(T_GRID, key=lambda t: (errors[t], t))
        return TrainConfig(max_rounds=best_t, u=1, epsilon_floor=epsilon_floor)

    if algorithm == "radaboost":
        table = {}
        for u in U_GRID:
            errs = _boost_cv_errors(X, y, folds, u=u, floor=epsilon_floor)
            for t in T_GRID:
                table[(t, u)] = errs[t]
        best_t, best_u = min(table, key=lambda tu: (table[tu], tu))
        return TrainConfig(max_rounds=best_t, u=best_u,
                           epsilon_floor=epsilon_floor)

    raise ValidationError(f"unknown algorithm {algorithm!r}")


# ---------------------------------------------------------------------------
# model files


def save_model(model, path, meta: dict | None = None) -> None:
    """Write an ensemble or kNN model as line-oriented text.

    Ensembles serialize one ``stump`` record per round; kNN models keep the
    z-score statistics, k, and a reference to the training feature CSV.
    """
    lines = []
    meta = dict(meta or {})
    if isinstance(model, StumpEnsemble):
        meta.setdefault("kind", "ensemble")
        for key in sorted(meta):
            lines.append(f"# {key}={meta[key]}")
        for r in model.rounds:
            lines.append("stump\t%d\t%s\t%d\t%s\t%s" % (
                r.stump.feature_index, format(r.stump.threshold, ".17g"),
                r.stump.polarity, format(r.alpha, ".17g"),
                format(r.shrink, ".17g")))
    elif isinstance(model, KnnModel):
        meta.setdefault("kind", "knn")
        for key in sorted(meta):
            lines.append(f"# {key}={meta[key]}")
        lines.append(f"k\t{model.k}")
        lines.append("mean\t" + "\t".join(format(v, ".17g") for v in model.mean))
        lines.append("std\t" + "\t".join(format(v, ".17g") for v in model.std))
    else:
        raise ValidationError(f"cannot serialize model of type {type(model)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path, features_table=None):
    """Read back a model file; returns ``(model, meta)``.

    kNN files need the training features: pass them as ``features_table`` or
    record a ``features_ref`` path (relative to the model file) in the meta.
    """
    text = Path(path).read_text(encoding="utf-8")
    meta = {}
    rounds = []
    knn_fields = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
            continue
        parts = line.split("\t")
        if parts[0] == "stump":
            rounds.append(BoostRound(
                DecisionStump(int(parts[1]), float(parts[2]), int(parts[3])),
                alpha=float(parts[4]), shrink=float(parts[5]),
                epsilon=float("nan")))
        elif parts[0] in ("k", "mean", "std"):
            knn_fields[parts[0]] = parts[1:]
        else:
            raise ValidationError(f"unrecognized model line {raw!r}")
    if meta.get("kind") == "knn":
        if features_table is None:
            ref = meta.get("features_ref")
            if not ref:
                raise ValidationError("kNN model needs its training features")
            from .features import FeatureTable
            features_table = FeatureTable.from_csv(
                Path(path).parent / ref)
        mean = np.array([float(v) for v in knn_fields["mean"]])
        std = np.array([float(v) for v in knn_fields["std"]])
        X = (features_table.values - mean) / std
        return KnnModel(mean, std, X, features_table.signed_labels(),
                        int(knn_fields["k"][0])), meta
    return StumpEnsemble(rounds), meta

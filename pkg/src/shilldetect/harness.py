"""Experiment grid: training-set construction, cell evaluation, reporting.

The default grid crosses all 14 attack models with six attack sizes and six
filler sizes (504 cells).  Classifiers are trained once on a mixed training
set (seven representative models injected at 17% attack size with filler
sizes cycling over the grid) and applied unchanged to every cell.  Each cell
re-extracts features on its own injected matrix, so item statistics shift
with the attack, exactly as a deployed detector would see them.

Reports are deterministic: every cell derives its seed from the master seed
and cell coordinates, rows are canonically sorted, and the default CSV form
zeroes the (wall-clock) runtime column so reruns are byte-identical.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import io
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attack_models as am
from .attack_models import (ALL_MODELS, AttackIntent, AttackParams,
                            LabeledDataset, inject_profiles)
from .dataset import RatingMatrix, ValidationError, popularity_rank
from .features import FeatureSubset, FeatureTable, extract_all
from .learners import (KnnModel, StumpEnsemble, TrainConfig, adaboost_train,
                       knn_predict_standardized, knn_train, radaboost_train)

ATTACK_SIZES = (0.011, 0.064, 0.117, 0.170, 0.223, 0.276)
FILLER_SIZES = (0.012, 0.042, 0.073, 0.103, 0.133, 0.164)

TRAINING_MODELS = ("random", "average", "bandwagon_average", "segment",
                   "reverse_bandwagon", "pia_id", "pua_nr")
TRAINING_ATTACK_SIZE = 0.170

# canonical MovieLens-100K item lists for the bandwagon and segment campaigns
BANDWAGON_ITEMS = (50, 56, 100, 127, 174, 181, 258, 286, 288, 294)
SEGMENT_ITEMS = (50, 183, 185, 200, 234, 443)

# desk defaults; select_hyperparams offers CV-based selection instead
DEFAULT_ADABOOST = TrainConfig(max_rounds=150, u=1)
DEFAULT_RADABOOST = TrainConfig(max_rounds=150, u=2000)
DEFAULT_KNN_K = 9
DEFAULT_MASTER_SEED = 2024

CLASSIFIER_NAMES = ("adaboost", "knn", "radaboost")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (platform independent)."""
    text = "|".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def cell_seed(master_seed: int, model: str, attack_size: float,
              filler_size: float) -> int:
    return derive_seed(master_seed, model, attack_size, filler_size)


@dataclass(frozen=True)
class ExperimentGrid:
    """The model x attack-size x filler-size cross product to evaluate."""

    models: tuple[str, ...] = ALL_MODELS
    attack_sizes: tuple[float, ...] = ATTACK_SIZES
    filler_sizes: tuple[float, ...] = FILLER_SIZES
    master_seed: int = 0

    def __post_init__(self):
        for m in self.models:
            if m not in ALL_MODELS:
                raise ValidationError(f"unknown attack model {m!r}")

    @property
    def n_cells(self) -> int:
        return len(self.models) * len(self.attack_sizes) * len(self.filler_sizes)

    def cells(self):
        """Yield (model, attack_size, filler_size, seed) per cell."""
        for model in self.models:
            for a in self.attack_sizes:
                for f in self.filler_sizes:
                    yield model, a, f, cell_seed(self.master_seed, model, a, f)


# AOP draws fillers from this share of the popularity ranking; it must cover
# the largest grid filler size (16.4%) or those cells become infeasible
GRID_AOP_TOP_FRACTION = 0.2


def default_attack_params(matrix: RatingMatrix) -> AttackParams:
    """Bandwagon/segment item lists: the canonical ids when present,
    otherwise drawn from the popularity ranking so toy matrices still work."""
    if all(matrix.has_item(i) for i in BANDWAGON_ITEMS + SEGMENT_ITEMS):
        return AttackParams(popular_item_ids=BANDWAGON_ITEMS,
                            segment_item_ids=SEGMENT_ITEMS,
                            aop_top_fraction=GRID_AOP_TOP_FRACTION)
    rank = popularity_rank(matrix).ordering
    n_pop = min(10, max(1, matrix.n_items // 4))
    n_seg = min(6, max(1, matrix.n_items // 6))
    return AttackParams(
        popular_item_ids=tuple(int(i) for i in rank[:n_pop]),
        segment_item_ids=tuple(int(i) for i in rank[n_pop:n_pop + n_seg]),
        aop_top_fraction=GRID_AOP_TOP_FRACTION)


def build_training_set(genuine: RatingMatrix, seed: int) -> LabeledDataset:
    """Mixed training data: seven known models injected at 17% attack size.

    Each model contributes floor(0.17 * users) attackers whose filler sizes
    cycle round-robin through the six grid values, so the classifier sees
    profiles of every length it will meet on the test grid.
    """
    params = default_attack_params(genuine)
    n_attackers = int(TRAINING_ATTACK_SIZE * genuine.n_users)
    profiles = []
    for model in TRAINING_MODELS:
        counts = [round(FILLER_SIZES[k % len(FILLER_SIZES)] * genuine.n_items)
                  for k in range(n_attackers)]
        profiles.extend(am.generate_profiles(
            genuine, model, AttackIntent.NUKE, counts,
            seed=derive_seed(seed, "train", model), params=params))
    return inject_profiles(genuine, profiles)


def build_test_cell(genuine: RatingMatrix, model: str, attack_size: float,
                    filler_size: float, cell_seed: int) -> LabeledDataset:
    """One grid cell: genuine profiles plus nuke attackers of one model."""
    config = am.AttackConfig(model=model, intent=AttackIntent.NUKE,
                             attack_size=attack_size, filler_size=filler_size,
                             seed=cell_seed,
                             params=default_attack_params(genuine))
    return inject_profiles(genuine, am.generate(config, genuine))


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def attackers(self) -> int:
        return self.tp + self.fn

    @property
    def genuine(self) -> int:
        return self.fp + self.tn


@dataclass(frozen=True)
class CellMetrics:
    classification_error: float
    detection_rate: float
    false_alarm_rate: float


def compute_metrics(labels, predictions) -> tuple[ConfusionCounts, CellMetrics]:
    """Confusion counts and the three rates; attack (+1) is the positive class.

    detection_rate is defined as 0 when there are no attackers and
    false_alarm_rate as 0 when there are no genuine profiles.
    """
    y = np.asarray(labels)
    p = np.asarray(predictions)
    if len(y) != len(p):
        raise ValidationError(
            f"labels ({len(y)}) and predictions ({len(p)}) differ in length")
    counts = ConfusionCounts(
        tp=int(((y == 1) & (p == 1)).sum()),
        fp=int(((y == -1) & (p == 1)).sum()),
        tn=int(((y == -1) & (p == -1)).sum()),
        fn=int(((y == 1) & (p == -1)).sum()))
    total = counts.total
    metrics = CellMetrics(
        classification_error=(counts.fp + counts.fn) / total if total else 0.0,
        detection_rate=counts.tp / counts.attackers if counts.attackers else 0.0,
        false_alarm_rate=counts.fp / counts.genuine if counts.genuine else 0.0)
    return counts, metrics


@dataclass(frozen=True)
class MetricsRow:
    """One (cell, classifier) result; metrics are None for failed cells.

    Metric values are rounded to the 6-decimal report precision at
    construction so serialization round-trips exactly; runtime is execution
    detail and excluded from equality.
    """

    model: str
    attack_size: float
    filler_size: float
    classifier: str
    feature_subset: int
    classification_error: float | None
    detection_rate: float | None
    false_alarm_rate: float | None
    seed: int
    runtime_ms: float = field(default=0.0, compare=False)

    @classmethod
    def build(cls, model, attack_size, filler_size, classifier, subset,
              metrics: CellMetrics | None, seed, runtime_ms: float = 0.0):
        rnd = (lambda v: round(float(v), 6))
        return cls(
            model=model, attack_size=float(attack_size),
            filler_size=float(filler_size), classifier=classifier,
            feature_subset=int(subset),
            classification_error=None if metrics is None else rnd(metrics.classification_error),
            detection_rate=None if metrics is None else rnd(metrics.detection_rate),
            false_alarm_rate=None if metrics is None else rnd(metrics.false_alarm_rate),
            seed=int(seed), runtime_ms=float(runtime_ms))

    @property
    def failed(self) -> bool:
        return self.classification_error is None

    def sort_key(self):
        return (self.model, self.attack_size, self.filler_size,
                self.classifier, self.feature_subset)


@dataclass
class MetricsReport:
    rows: list[MetricsRow]

    def sorted(self) -> "MetricsReport":
        return MetricsReport(sorted(self.rows, key=MetricsRow.sort_key))

    def select(self, **conditions) -> list[MetricsRow]:
        """Rows matching every given field value, e.g. model=..., classifier=..."""
        out = []
        for row in self.rows:
            if all(getattr(row, k) == v for k, v in conditions.items()):
                out.append(row)
        return out

    def mean(self, metric: str, **conditions) -> float:
        vals = [getattr(r, metric) for r in self.select(**conditions)
                if getattr(r, metric) is not None]
        if not vals:
            raise ValidationError(f"no rows match {conditions}")
        return float(np.mean(vals))

    def __eq__(self, other):
        if not isinstance(other, MetricsReport):
            return NotImplemented
        return self.rows == other.rows


REPORT_HEADER = ("model,attack_size,filler_size,classifier,feature_subset,"
                 "classification_error,detection_rate,false_alarm_rate,"
                 "seed,runtime_ms")


def write_report(report: MetricsReport, sink=None, manifest: dict | None = None,
                 runtime: str = "zero"):
    """Serialize a report as CSV (floats at 6 decimals, canonical order).

    ``runtime="zero"`` (the default) blanks the wall-clock column so equal
    runs produce byte-identical files; pass ``runtime="recorded"`` to keep
    measured times.  Failed cells serialize with empty metric fields.
    """
    if runtime not in ("zero", "recorded"):
        raise ValidationError("runtime must be 'zero' or 'recorded'")
    buf = io.StringIO()
    if manifest:
        for key in sorted(manifest):
            buf.write(f"# {key}={manifest[key]}\n")
    buf.write(REPORT_HEADER + "\n")
    for row in report.sorted().rows:
        ms = row.runtime_ms if runtime == "recorded" else 0.0
        fmt = (lambda v: "" if v is None else format(v, ".6f"))
        buf.write(",".join([
            row.model, format(row.attack_size, ".6f"),
            format(row.filler_size, ".6f"), row.classifier,
            str(row.feature_subset), fmt(row.classification_error),
            fmt(row.detection_rate), fmt(row.false_alarm_rate),
            str(row.seed), format(ms, ".6f")]) + "\n")
    data = buf.getvalue().encode("utf-8")
    if sink is None:
        return data
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)
    return None


def parse_report(source) -> MetricsReport:
    if isinstance(source, (str, Path)):
        text = Path(source).read_bytes().decode("utf-8")
    elif isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    if not lines or lines[0] != REPORT_HEADER:
        raise ValidationError("not a metrics report (bad header)")
    rows = []
    for line in lines[1:]:
        p = line.split(",")
        opt = (lambda s: None if s == "" else float(s))
        rows.append(MetricsRow(
            model=p[0], attack_size=float(p[1]), filler_size=float(p[2]),
            classifier=p[3], feature_subset=int(p[4]),
            classification_error=opt(p[5]), detection_rate=opt(p[6]),
            false_alarm_rate=opt(p[7]), seed=int(p[8]),
            runtime_ms=float(p[9])))
    return MetricsReport(rows)


# ---------------------------------------------------------------------------
# running


def train_classifiers(train_table: FeatureTable,
                      names=CLASSIFIER_NAMES,
                      adaboost_config: TrainConfig = DEFAULT_ADABOOST,
                      radaboost_config: TrainConfig = DEFAULT_RADABOOST,
                      knn_k: int = DEFAULT_KNN_K) -> dict:
    """Fit the requested classifiers once on the training feature table."""
    X, y = train_table.values, train_table.signed_labels()
    out = {}
    for name in names:
        if name == "adaboost":
            out[name] = adaboost_train(X, y, adaboost_config)
        elif name == "radaboost":
            out[name] = radaboost_train(X, y, radaboost_config)
        elif name == "knn":
            out[name] = knn_train(X, y, min(knn_k, len(X)))
        else:
            raise ValidationError(f"unknown classifier {name!r}")
    return out


def predict_labels(classifier, table: FeatureTable) -> np.ndarray:
    """Signed predictions of a trained classifier on a feature table.

    kNN queries are standardized against their own table: each cell's feature
    scales drift with the injection load, so training-statistic scaling would
    not transfer across datasets.  Stumps are scale-free and take raw values.
    """
    if isinstance(classifier, StumpEnsemble):
        return classifier.predict(table.values)
    if isinstance(classifier, KnnModel):
        return knn_predict_standardized(classifier, table.values)
    raise ValidationError(f"cannot predict with {type(classifier)!r}")


def _evaluate_cell(genuine, model, attack_size, filler_size, seed,
                   classifiers, subset: FeatureSubset):
    dataset = build_test_cell(genuine, model, attack_size, filler_size, seed)
    table = extract_all(dataset, subset, AttackIntent.NUKE)
    y = table.signed_labels()
    rows = []
    for name in sorted(classifiers):
        t0 = time.perf_counter()
        _, metrics = compute_metrics(y, predict_labels(classifiers[name], table))
        rows.append(MetricsRow.build(
            model, attack_size, filler_size, name, subset.size, metrics,
            seed, runtime_ms=(time.perf_counter() - t0) * 1e3))
    return rows


def run_grid(genuine: RatingMatrix, grid: ExperimentGrid, classifiers: dict,
             feature_subset: FeatureSubset = FeatureSubset.ALL_18,
             master_seed: int | None = None, jobs: int = 1,
             progress=None) -> MetricsReport:
    """Evaluate trained classifiers over every grid cell.

    A failing cell contributes one error row per classifier (empty metrics)
    and the run continues.  Rows come back canonically sorted regardless of
    execution order; ``jobs`` > 1 evaluates cells concurrently.
    """
    if master_seed is not None:
        grid = replace(grid, master_seed=master_seed)
    cells = list(grid.cells())

    def run_cell(cell):
        model, a, f, seed = cell
        t0 = time.perf_counter()
        try:
            rows = _evaluate_cell(genuine, model, a, f, seed, classifiers,
                                  feature_subset)
            err = None
        except Exception as exc:   # error row; the batch must keep going
            rows = [MetricsRow.build(model, a, f, name, feature_subset.size,
                                     None, seed)
                    for name in sorted(classifiers)]
            err = exc
        if progress is not None:
            progress(cell, (time.perf_counter() - t0), err)
        return rows

    rows: list[MetricsRow] = []
    if jobs <= 1:
        for cell in cells:
            rows.extend(run_cell(cell))
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            for batch in pool.map(run_cell, cells):
                rows.extend(batch)
    return MetricsReport(rows).sorted()


def feature_ablation(genuine: RatingMatrix, grid_slice: ExperimentGrid,
                     subsets=(FeatureSubset.GENERIC_10, FeatureSubset.FILLER_15,
                              FeatureSubset.ALL_18),
                     classifier: str = "radaboost",
                     config: TrainConfig = DEFAULT_RADABOOST,
                     knn_k: int = DEFAULT_KNN_K, jobs: int = 1,
                     progress=None) -> MetricsReport:
    """Re-train and re-evaluate one classifier under nested feature subsets."""
    train_ds = build_training_set(
        genuine, derive_seed(grid_slice.master_seed, "training-set"))
    rows: list[MetricsRow] = []
    for subset in subsets:
        subset = subset if isinstance(subset, FeatureSubset) else FeatureSubset.from_size(subset)
        table = extract_all(train_ds, subset, AttackIntent.NUKE)
        models = train_classifiers(table, names=(classifier,),
                                   adaboost_config=config,
                                   radaboost_config=config, knn_k=knn_k)
        report = run_grid(genuine, grid_slice, models, subset, jobs=jobs,
                          progress=progress)
        rows.extend(report.rows)
    return MetricsReport(rows).sorted()


def export_surfaces(report: MetricsReport, directory) -> list[Path]:
    """Write one whitespace grid file per (model, classifier, metric).

    Rows follow ascending attack size, columns ascending filler size; axis
    values appear as header comments so plotting tools can label them.
    Missing or failed cells render as nan.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    subsets = sorted({r.feature_subset for r in report.rows})
    written = []
    for subset in subsets:
        rows = [r for r in report.rows if r.feature_subset == subset]
        combos = sorted({(r.model, r.classifier) for r in rows})
        for model, classifier in combos:
            cell_rows = [r for r in rows
                         if r.model == model and r.classifier == classifier]
            attacks = sorted({r.attack_size for r in cell_rows})
            fillers = sorted({r.filler_size for r in cell_rows})
            lookup = {(r.attack_size, r.filler_size): r for r in cell_rows}
            for metric in ("classification_error", "detection_rate",
                           "false_alarm_rate"):
                tag = f"__{subset}features" if len(subsets) > 1 else ""
                path = directory / f"{model}__{classifier}{tag}__{metric}.dat"
                with path.open("w", encoding="utf-8") as fh:
                    fh.write(f"# metric: {metric}\n")
                    fh.write(f"# model: {model}  classifier: {classifier}  "
                             f"features: {subset}\n")
                    fh.write("# rows: attack_size = "
                             + " ".join(format(a, ".3f") for a in attacks) + "\n")
                    fh.write("# cols: filler_size = "
                             + " ".join(format(f, ".3f") for f in fillers) + "\n")
                    for a in attacks:
                        vals = []
                        for f in fillers:
                            row = lookup.get((a, f))
                            v = getattr(row, metric) if row is not None else None
                            vals.append("nan" if v is None else format(v, ".6f"))
                        fh.write(" ".join(vals) + "\n")
                written.append(path)
    return written

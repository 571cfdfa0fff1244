"""Fine-tuning, cross-validation and the drug protocols."""

from __future__ import annotations

import copy
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..data import Cohort
from ..model import Batch, DualStreamModel, ModelConfig, save_checkpoint
from ..model.config import FUSIONS, MODALITIES, ConfigError
from ..numerics import AdamState, Graph, adam_step, backward, no_grad
from ..numerics import ops
from ..preprocess import DEFAULT_LENGTH, prepare
from .folds import FoldSplit, stratified_kfold
from .metrics import MetricsReport, compute_metrics
from .reports import write_history, write_report

log = logging.getLogger(__name__)

OUT_OF_DOMAIN_SEEDS = 5


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ExperimentSpec:
    """One cell of an experiment: which streams, pretrained or not, how to fuse."""

    modality: str = "both"
    pretrained: bool = False
    fusion: str = "concat"
    protocol: str = "drug_agnostic"
    train_drug: str | None = None
    test_drug: str | None = None
    folds: int = 5
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 50
    batch_size: int = 8
    patience: int = 10
    min_delta: float = 1e-4
    length: int = DEFAULT_LENGTH
    model: ModelConfig = field(default_factory=ModelConfig)
    name: str = ""

    def validate(self) -> None:
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.modality == "both":
            if self.fusion not in FUSIONS:
                raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        elif self.fusion not in ("none", "concat"):
            raise ConfigError(f"fusion {self.fusion!r} needs modality 'both'")
        if self.pretrained and self.modality == "fc":
            raise ConfigError("pretrained applies to the TS encoder; modality 'fc' has none")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.protocol not in ("drug_agnostic", "drug_specific"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.protocol == "drug_specific" and not (self.train_drug and self.test_drug):
            raise ConfigError("drug_specific protocol needs train_drug and test_drug")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be positive")
        self.model_config().validate()

    def model_config(self) -> ModelConfig:
        cfg = copy.deepcopy(self.model)
        cfg.modality = self.modality
        cfg.fusion = self.fusion if self.modality == "both" else "concat"
        cfg.ts.frozen = False
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        opt = OptimizerConfig(**d.pop("optimizer", {}))
        model = ModelConfig.from_dict(d.pop("model", {}))
        return cls(optimizer=opt, model=model, **d)


@dataclass
class PreparedCohort:
    """Model-ready inputs, sorted by subject id."""

    ids: list[str]
    tokens: np.ndarray  # (S, n, P)
    roi_index: np.ndarray
    patch_index: np.ndarray
    fc: np.ndarray  # (S, N, N)
    labels: np.ndarray
    drugs: list[str]
    fingerprint: str
    ts_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.ids)

    def index(self, ids) -> np.ndarray:
        pos = {s: i for i, s in enumerate(self.ids)}
        return np.array([pos[s] for s in ids], dtype=np.int64)

    def batch(self, rows: np.ndarray) -> Batch:
        return Batch(self.tokens[rows], self.roi_index, self.patch_index, self.fc[rows], [self.ids[i] for i in rows])

    def subset(self, ids) -> "PreparedCohort":
        rows = self.index(sorted(ids))
        return PreparedCohort([self.ids[i] for i in rows], self.tokens[rows], self.roi_index, self.patch_index,
                              self.fc[rows], self.labels[rows], [self.drugs[i] for i in rows], self.fingerprint)


def prepare_cohort(cohort: Cohort, length: int = DEFAULT_LENGTH, patch: int = 20, dtype=np.float32) -> PreparedCohort:
    subjects = sorted(cohort.subjects, key=lambda s: s.subject_id)
    if any(s.label is None for s in subjects):
        raise ValueError("supervised training needs labelled subjects")
    seqs, fcs = zip(*(prepare(s.series, length, patch) for s in subjects))
    return PreparedCohort(
        [s.subject_id for s in subjects],
        np.stack([q.tokens for q in seqs]).astype(dtype),
        seqs[0].roi_index,
        seqs[0].patch_index,
        np.stack(fcs).astype(dtype),
        np.array([s.label for s in subjects], dtype=np.int64),
        [s.drug for s in subjects],
        cohort.fingerprint,
    )


def _as_prepared(data, spec: ExperimentSpec) -> PreparedCohort:
    if isinstance(data, PreparedCohort):
        return data
    return prepare_cohort(data, spec.length, spec.model.ts.patch_size)


def derive_seed(seed: int, *cell) -> int:
    """Independent 32-bit stream per (seed, cell...)."""
    return int(np.random.SeedSequence([int(seed), *map(int, cell)]).generate_state(1)[0])


def _params_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()


def frozen_ts_features(model: DualStreamModel, data: PreparedCohort, chunk: int = 16) -> np.ndarray:
    """R_T for every subject under a frozen encoder, memoized on the cohort."""
    enc = {k: v for k, v in model.params.items() if k.startswith("ts.")}
    key = (_params_digest(enc), repr(model.config.ts))
    if key not in data.ts_cache:
        rows = []
        with no_grad():
            for i in range(0, len(data), chunk):
                rows.append(model.ts_features(data.batch(np.arange(i, min(i + chunk, len(data))))).data.copy())
        data.ts_cache[key] = np.concatenate(rows)
    return data.ts_cache[key]


@dataclass
class TrainResult:
    model: DualStreamModel
    history: list[tuple[int, float]]
    train_ids: list[str]
    stopped_epoch: int


def _uses_cache(model: DualStreamModel) -> bool:
    return model.config.ts.frozen and model.config.modality in ("ts", "both")


def build_model(spec: ExperimentSpec, cell: int, encoder=None) -> DualStreamModel:
    model = DualStreamModel(spec.model_config(), seed=derive_seed(spec.seed, cell))
    if spec.pretrained:
        if encoder is None:
            raise ValueError("a pretrained spec needs a pretrained encoder checkpoint")
        model.load_ts_encoder(encoder.encoder_params, freeze=True)
        model.provenance["encoder"] = dict(encoder.provenance)
    return model


def fit(model: DualStreamModel, data: PreparedCohort, train_ids, spec: ExperimentSpec, cell: int) -> TrainResult:
    """Adam on mean BCE over shuffled mini-batches; stops when the epoch loss plateaus."""
    rows_all = data.index(sorted(train_ids))
    y_all = data.labels.astype(model.dtype)
    cache = frozen_ts_features(model, data) if _uses_cache(model) else None
    if cache is not None:
        model.set_ts_normalizer(cache[rows_all])
    o = spec.optimizer
    state = AdamState(lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps)
    rng = np.random.default_rng([int(spec.seed), int(cell), 0xBA7C])
    history: list[tuple[int, float]] = []
    best, wait, epoch = np.inf, 0, 0
    for epoch in range(1, spec.epochs + 1):
        order = rows_all[rng.permutation(rows_all.size)]
        total = 0.0
        for start in range(0, order.size, spec.batch_size):
            rows = order[start : start + spec.batch_size]
            leaves = model.leaves()
            with Graph() as g:
                z = model.logits(data.batch(rows), leaves, None if cache is None else cache[rows])
                loss = ops.bce_logits(z, y_all[rows])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch} (cell {cell}, batch at {start}); "
                                         f"max |param| {max(float(np.abs(v).max()) for v in model.params.values()):.3g}")
            model.params, state = adam_step(state, model.params, backward(g, loss))
            total += value * rows.size
        mean = total / rows_all.size
        history.append((epoch, mean))
        if mean < best - spec.min_delta:
            best, wait = mean, 0
        else:
            wait += 1
            if wait >= spec.patience:
                break
    return TrainResult(model, history, sorted(train_ids), epoch)


def predict(model: DualStreamModel, data: PreparedCohort, ids) -> np.ndarray:
    rows = data.index(ids)
    cache = frozen_ts_features(model, data)[rows] if _uses_cache(model) else None
    return model.predict_proba(data.batch(rows), cache)


def train_model(cohort, spec: ExperimentSpec, fold: int, encoder=None, split: FoldSplit | None = None) -> TrainResult:
    """Train on every fold except ``fold``."""
    spec.validate()
    data = _as_prepared(cohort, spec)
    split = split or stratified_kfold(data.labels, spec.folds, spec.seed, data.ids)
    if not 0 <= fold < split.k:
        raise IndexError(f"fold {fold} outside 0..{split.k - 1}")
    return fit(build_model(spec, fold, encoder), data, split.train_ids(fold), spec, fold)


@dataclass
class CVRun:
    report: MetricsReport
    split: FoldSplit
    results: list[TrainResult]


def _fold_job(args):
    data, spec, fold, encoder, split = args
    res = train_model(data, spec, fold, encoder, split)
    test = split.test_ids(fold)
    probs = predict(res.model, data, test)
    return fold, res, test, probs


def _entry(unit_key: str, unit: int, probs, labels, res: TrainResult) -> dict:
    m = compute_metrics(probs, labels)
    m.update({unit_key: unit, "n_test": int(len(labels)), "epochs_run": int(res.stopped_epoch),
              "final_loss": float(res.history[-1][1])})
    return m


def persist(out_dir: str | Path, report: MetricsReport, results: list[TrainResult], unit: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, res in enumerate(results):
        save_checkpoint(res.model, out / f"{unit}{i}.fmtc")
        write_history(res.history, out / f"history_{unit}{i}.csv")
    write_report(report, out)


def cross_validate(cohort, spec: ExperimentSpec, encoder=None, out_dir: str | Path | None = None,
                   jobs: int = 1) -> CVRun:
    spec.validate()
    data = _as_prepared(cohort, spec)
    split = stratified_kfold(data.labels, spec.folds, spec.seed, data.ids)
    if _uses_cache(build_model(spec, 0, encoder)):
        frozen_ts_features(build_model(spec, 0, encoder), data)  # shared by every fold
    jobs_args = [(data, spec, f, encoder, split) for f in range(split.k)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_fold_job, jobs_args))
    else:
        outs = [_fold_job(a) for a in jobs_args]
    outs.sort(key=lambda o: o[0])
    entries = [_entry("fold", f, probs, data.labels[data.index(test)], res) for f, res, test, probs in outs]
    report = MetricsReport(spec.name or _default_name(spec), "fold", entries, _extra(spec, data, encoder, split))
    results = [o[1] for o in outs]
    if out_dir is not None:
        persist(out_dir, report, results, "fold")
    return CVRun(report, split, results)


def run_cv(cohort, spec: ExperimentSpec, encoder=None, out_dir: str | Path | None = None, jobs: int = 1) -> MetricsReport:
    return cross_validate(cohort, spec, encoder, out_dir, jobs).report


def _default_name(spec: ExperimentSpec) -> str:
    tag = f"{spec.modality}{'+pretrained' if spec.pretrained else ''}"
    return tag if spec.modality != "both" else f"{tag}/{spec.fusion}"


def _extra(spec: ExperimentSpec, data: PreparedCohort, encoder, split: FoldSplit | None) -> dict:
    extra = {"spec": spec.to_dict(), "cohort_fingerprint": data.fingerprint, "n_subjects": len(data)}
    if split is not None:
        extra["split"] = [list(f) for f in split.folds]
    if encoder is not None and spec.pretrained:
        extra["encoder"] = dict(encoder.provenance)
    return extra


def drug_protocol(cohort: Cohort, train_drug: str, test_drug: str, spec: ExperimentSpec, encoder=None,
                  out_dir: str | Path | None = None) -> MetricsReport:
    """Within-domain CV when the drugs match, otherwise whole-subset transfer over several seeds."""
    src = cohort.drug_subset(train_drug)
    dst = cohort.drug_subset(test_drug)
    name = spec.name or f"{_default_name(spec)}:{train_drug}->{test_drug}"
    spec = copy.deepcopy(spec)
    spec.name, spec.protocol, spec.train_drug, spec.test_drug = name, "drug_specific", train_drug, test_drug
    if train_drug == test_drug:
        report = run_cv(src, spec, encoder, out_dir)
        report.extra["mode"] = "within_domain"
        return report
    spec.validate()
    data = prepare_cohort(Cohort(src.subjects + dst.subjects, f"{src.fingerprint}:{dst.fingerprint}", name),
                          spec.length, spec.model.ts.patch_size)
    train_ids = sorted(s.subject_id for s in src.subjects)
    test_ids = sorted(s.subject_id for s in dst.subjects)
    entries, results = [], []
    for r in range(OUT_OF_DOMAIN_SEEDS):
        res = fit(build_model(spec, r, encoder), data, train_ids, spec, r)
        entries.append(_entry("seed", r, predict(res.model, data, test_ids), data.labels[data.index(test_ids)], res))
        results.append(res)
    extra = _extra(spec, data, encoder, None)
    extra.update({"mode": "out_of_domain", "n_train": len(train_ids), "n_test": len(test_ids)})
    report = MetricsReport(name, "seed", entries, extra)
    if out_dir is not None:
        persist(out_dir, report, results, "seed")
    return report

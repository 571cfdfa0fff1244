"""The ten acceptance criteria, each at its stated tolerance and time budget."""

import time

import numpy as np
import pytest

from dualstream import data
from dualstream.harness import (
    compute_metrics,
    cross_validate,
    drug_protocol,
    extract_features,
    fold_feature_probe,
    linear_probe,
    pca_features,
    prepare_cohort,
    random_baseline,
    raw_features,
    run_cv,
    train_model,
)
from dualstream.harness.benchmark import BENCHMARK_SEED, benchmark_encoder, default_benchmark, run_ablation
from dualstream.interpret import head_predictor, integrated_gradients
from dualstream.model import (
    CheckpointError,
    DualStreamModel,
    FcEncoderConfig,
    ModelConfig,
    TsEncoderConfig,
    load_checkpoint,
    save_checkpoint,
)
from dualstream.numerics import Graph, Tensor, backward, no_grad, ops
from dualstream.numerics.gradcheck import numeric_grad, relative_error
from dualstream.preprocess import compute_fc

from helpers import LENGTH, tiny_cohort, tiny_encoder, tiny_spec
from opcases import op_cases
from test_metrics import oracle, random_case
from test_model import _batch
from verdicts import record

PROBES = ("ridge", "knn")


def _verdict(capsys, number, title, checks: dict, seconds, budget):
    failed = [k for k, ok in checks.items() if not ok]
    if budget is not None and seconds >= budget:
        failed.append(f"runtime {seconds:.1f} s >= {budget} s")
    detail = "all checks hold" if not failed else "failed: " + "; ".join(failed)
    record(capsys, number, title, not failed, detail, seconds)
    assert not failed, detail


# -- 1 ---------------------------------------------------------------------------------


def test_criterion_01_metric_oracle(capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    confusion_ok = True
    for _ in range(200):
        n = int(rng.integers(10, 201))
        scores, labels = random_case(rng, n)
        got, want = compute_metrics(scores, labels), oracle(scores, labels)
        confusion_ok &= tuple(got["confusion"][k] for k in ("tp", "fp", "tn", "fn")) == want["confusion"]
        for m in ("f1", "bacc", "mcc", "auroc"):
            if want[m] is None:
                confusion_ok &= got[m] is None
            else:
                worst = max(worst, abs(got[m] - want[m]))
    _verdict(capsys, 1, "metric oracle", {f"max abs diff {worst:.2e} <= 1e-12": worst <= 1e-12,
                                          "confusion counts match": confusion_ok},
             time.perf_counter() - t, 5)


# -- 2 ---------------------------------------------------------------------------------


def _op_errors():
    rng = np.random.default_rng(1)
    out = {}
    for kind, (params, fn) in op_cases(rng).items():
        with no_grad():
            weights = rng.standard_normal(fn({k: Tensor(v) for k, v in params.items()}).shape)
        leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
        with Graph() as g:
            loss = ops.sum(ops.mul(fn(leaves), weights))
        grads = backward(g, loss)

        def f(arrays, fn=fn, weights=weights):
            with no_grad():
                return float(np.sum(fn({k: Tensor(v) for k, v in arrays.items()}).data * weights))

        out[kind] = max(relative_error(grads[k], numeric_grad(f, params, k)) for k in params)
    return out


def _tiny_model_errors():
    ts = TsEncoderConfig(layers=1, heads=1, model_dim=8, ff_multiplier=2, patch_size=4, max_rois=4, max_patches=2)
    cfg = ModelConfig(ts=ts, fc=FcEncoderConfig(widths=[2, 2, 2, 2], norm_groups=2, output_dim=8), dtype="f64")
    model = DualStreamModel(cfg, seed=1)
    rng = np.random.default_rng(7)
    params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in model.params.items()}
    b = _batch(n_rois=4, length=8, b=3, patch=4, seed=8, dtype=np.float64)
    y = np.array([1.0, 0.0, 1.0])

    def loss_of(pr):
        with no_grad():
            return ops.bce_logits(model.logits(b, model.leaves(pr)), y).item()

    with Graph() as g:
        loss = ops.bce_logits(model.logits(b, model.leaves(params)), y)
    grads = backward(g, loss)
    out = {}
    for name in model.trainable_names():
        fd = numeric_grad(loss_of, params, name, h=1e-6)
        if max(np.abs(fd).max(), np.abs(grads[name]).max()) < 1e-8:
            # exactly-zero true gradient (softmax shift invariance): compare absolutely
            out[name] = 0.0 if np.abs(fd - grads[name]).max() < 1e-8 else np.inf
        else:
            out[name] = relative_error(grads[name], fd)
    return out


def test_criterion_02_gradient_integrity(capsys):
    t = time.perf_counter()
    ops_err, model_err = _op_errors(), _tiny_model_errors()
    worst_op = max(ops_err, key=ops_err.get)
    worst_p = max(model_err, key=model_err.get)
    _verdict(capsys, 2, "gradient integrity", {
        f"{len(ops_err)} op kinds, worst {worst_op} {ops_err[worst_op]:.1e} <= 1e-6": ops_err[worst_op] <= 1e-6,
        f"{len(model_err)} model tensors, worst {worst_p} {model_err[worst_p]:.1e} <= 1e-6": model_err[worst_p] <= 1e-6,
    }, time.perf_counter() - t, 60)


# -- 3 ---------------------------------------------------------------------------------


def test_criterion_03_fc_correctness(capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    sym = diag = rng_ok = aff = True
    for _ in range(100):
        x = rng.standard_normal((int(rng.integers(2, 12)), int(rng.integers(3, 80))))
        c = compute_fc(x)
        sym &= np.max(np.abs(c - c.T)) <= 1e-6
        diag &= bool(np.all(np.diag(c) == 1.0))
        rng_ok &= bool(np.all(np.abs(c) <= 1.0))
        a = rng.uniform(0.1, 10, (x.shape[0], 1)) * rng.choice([-1, 1], (x.shape[0], 1))
        s = np.sign(a)
        aff &= np.max(np.abs(compute_fc(a * x + rng.standard_normal((x.shape[0], 1))) - s * s.T * c)) <= 1e-9
    n = 3
    p = data.openneuro_like(n_rois=n, n_timepoints=2000, noise_std=0.0)
    p.ar_coefficient, p.ar_label_shift, p.expression = 0.0, 0.0, (1.0, 1.0)
    cohort = data.generate_synthetic_cohort(p, 0)
    frob = max(np.linalg.norm(compute_fc(s.series) - data.cov_to_corr(p.class_covariance(s.label, s.drug)))
               for s in cohort.subjects)
    _verdict(capsys, 3, "FC correctness", {
        "symmetry <= 1e-6": sym, "unit diagonal exact": diag, "range [-1, 1]": rng_ok,
        "affine invariance": aff, f"t=2000 Frobenius max {frob:.3f} <= 0.1": frob <= 0.1,
    }, time.perf_counter() - t, 10)


# -- 4 ---------------------------------------------------------------------------------


def test_criterion_04_ig_axioms(capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(4)
    w, x = rng.standard_normal(12), rng.standard_normal(12)

    def affine(v: Tensor) -> Tensor:
        return ops.add(ops.matmul(v, w[:, None]), 0.3)

    aff = integrated_gradients(affine, x, steps=5)
    affine_err = float(np.max(np.abs(aff.values - w * x)))

    prepared = prepare_cohort(tiny_cohort(), LENGTH)
    model = train_model(prepared, tiny_spec(epochs=10), 0).model
    feats = extract_features(model, prepared)
    pred = head_predictor(model)
    resid = gap = 0.0
    for row in feats[:8]:
        coarse, dense = integrated_gradients(pred, row, steps=512), integrated_gradients(pred, row, steps=8192)
        resid = max(resid, coarse.residual)
        gap = max(gap, float(np.max(np.abs(coarse.values - dense.values))))
    zero = integrated_gradients(pred, feats[0], baseline=feats[0], steps=64)
    _verdict(capsys, 4, "IG axioms", {
        f"affine error {affine_err:.1e} at machine precision": affine_err <= 1e-13,
        f"completeness residual {resid:.1e} <= 1e-3": resid <= 1e-3,
        f"S=512 vs S=8192 gap {gap:.1e} <= 1e-3": gap <= 1e-3,
        "zero path gives zero attribution": bool(np.all(zero.values == 0)),
    }, time.perf_counter() - t, 30)


# -- 5 and 10 share one benchmark run ---------------------------------------------------


@pytest.fixture(scope="module")
def benchmark():
    t = time.perf_counter()
    cohort, base = default_benchmark(BENCHMARK_SEED)
    encoder = benchmark_encoder(base.model.ts, BENCHMARK_SEED)
    prepared = prepare_cohort(cohort, base.length, base.model.ts.patch_size)
    runs = run_ablation(prepared, base, encoder)
    return prepared, base, runs, time.perf_counter() - t


def test_criterion_05_ablation_direction(benchmark, capsys):
    _, _, runs, seconds = benchmark
    mcc = {cid: run.report.mean("mcc") for cid, run in runs.items()}
    best_uni = max(mcc["exp5"], mcc["exp7"])
    shown = ", ".join(f"{k} {v:.2f}" for k, v in sorted(mcc.items()))
    # margins 0.02 and 0.05 on the unit MCC scale are 2 and 5 points on the percent scale
    _verdict(capsys, 5, "ablation direction", {
        f"exp9 >= best unimodal + 2 ({shown})": mcc["exp9"] >= best_uni + 2.0,
        f"exp9 >= exp8 + 5 ({shown})": mcc["exp9"] >= mcc["exp8"] + 5.0,
    }, seconds, 600)


# -- 6 ---------------------------------------------------------------------------------


def test_criterion_06_random_baseline(capsys):
    t = time.perf_counter()
    labels = np.array([1] * 26 + [0] * 30)
    report = random_baseline(labels, repeats=1000, seed=0)
    mcc, bacc = report.mean("mcc"), report.mean("bacc")
    _verdict(capsys, 6, "random baseline", {
        f"mean MCC {mcc:.2f} within 0 +- 5": abs(mcc) <= 5,
        f"mean BACC {bacc:.2f} within 50 +- 5": abs(bacc - 50) <= 5,
    }, time.perf_counter() - t, 5)


# -- 7 ---------------------------------------------------------------------------------


def test_criterion_07_protocol_fidelity(capsys):
    t = time.perf_counter()
    full = data.generate_synthetic_cohort(data.openneuro_like(), BENCHMARK_SEED)
    sizes = (len(full.drug_subset("duloxetine")), len(full.drug_subset("placebo")))
    cohort = tiny_cohort()
    spec = tiny_spec(epochs=1, folds=3)
    within = drug_protocol(cohort, "placebo", "placebo", spec)
    direct = run_cv(cohort.drug_subset("placebo"), spec)
    ood = drug_protocol(cohort, "duloxetine", "placebo", spec)
    seeds = [e["seed"] for e in ood.entries]
    _verdict(capsys, 7, "protocol fidelity", {
        f"subset sizes {sizes} == (19, 37)": sizes == (19, 37),
        "within-domain equals run_cv on the subset": within.entries == direct.entries,
        "out-of-domain: 5 seeds": ood.unit == "seed" and len(set(seeds)) == 5,
        "out-of-domain: whole subset each time": all(e["n_test"] == 37 for e in ood.entries),
    }, time.perf_counter() - t, None)


# -- 8 ---------------------------------------------------------------------------------


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_08_determinism_and_persistence(tmp_path, capsys):
    t = time.perf_counter()
    cohort = tiny_cohort()
    enc = tiny_encoder()
    spec = tiny_spec(epochs=2, folds=2, pretrained=True)
    cross_validate(cohort, spec, enc, tmp_path / "a", jobs=1)
    cross_validate(cohort, spec, enc, tmp_path / "b", jobs=1)
    a, b = _tree_bytes(tmp_path / "a"), _tree_bytes(tmp_path / "b")

    model = load_checkpoint(tmp_path / "a" / "fold0.fmtc")
    save_checkpoint(model, tmp_path / "again.fmtc")
    ckpt_same = (tmp_path / "again.fmtc").read_bytes() == a["fold0.fmtc"]

    data.save_cohort(cohort, tmp_path / "cohort")
    back = data.load_cohort(tmp_path / "cohort")
    cohort_same = back.fingerprint == cohort.fingerprint and all(
        x.series.tobytes() == y.series.tobytes() for x, y in zip(cohort.subjects, back.subjects))

    bad = bytearray(a["fold0.fmtc"])
    bad[len(bad) // 2] ^= 0xFF
    (tmp_path / "bad.fmtc").write_bytes(bytes(bad))
    try:
        load_checkpoint(tmp_path / "bad.fmtc")
        ckpt_rejected = False
    except CheckpointError as exc:
        ckpt_rejected = "bad.fmtc" in str(exc)
    f = tmp_path / "cohort" / "sub-001.bin"
    raw = bytearray(f.read_bytes())
    raw[40] ^= 0xFF
    f.write_bytes(bytes(raw))
    try:
        data.load_cohort(tmp_path / "cohort")
        cohort_rejected = False
    except data.CohortFormatError as exc:
        cohort_rejected = "sub-001.bin" in str(exc)
    _verdict(capsys, 8, "determinism and persistence", {
        f"{len(a)} run files byte-identical": a == b and len(a) > 0,
        "checkpoint round trip bit-exact": ckpt_same,
        "cohort round trip bit-exact": cohort_same,
        "corrupted checkpoint rejected by name": ckpt_rejected,
        "corrupted cohort file rejected by name": cohort_rejected,
    }, time.perf_counter() - t, None)


# -- 9 ---------------------------------------------------------------------------------


def test_criterion_09_freezing_contract(capsys):
    t = time.perf_counter()
    enc = tiny_encoder()
    before = {k: v.tobytes() for k, v in enc.encoder_params.items()}
    res = train_model(prepare_cohort(tiny_cohort(), LENGTH), tiny_spec(epochs=3, pretrained=True), 0, enc)
    after = {k: v.tobytes() for k, v in res.model.params.items() if k.startswith("ts.")}
    trained_something = any(
        not k.startswith("ts.") and k in res.model.params for k in res.model.trainable_names())
    _verdict(capsys, 9, "freezing contract", {
        f"{len(before)} TS tensors byte-identical after fine-tuning": before == after,
        "encoder parameters excluded from the trainable set": not any(
            k.startswith("ts.") for k in res.model.trainable_names()),
        "fusion/head still trainable": trained_something,
    }, time.perf_counter() - t, None)


# -- 10 --------------------------------------------------------------------------------


def test_criterion_10_probe_sanity(benchmark, capsys):
    t = time.perf_counter()
    prepared, base, runs, _ = benchmark
    exp9 = runs["exp9"]
    fc = raw_features(prepared, "fc")
    checks = {}
    for clf in PROBES:
        fused = fold_feature_probe([r.model for r in exp9.results], prepared, exp9.split, clf).mean("mcc")
        raw = linear_probe(fc, prepared.labels, clf, base.folds, base.seed, prepared.ids).mean("mcc")
        pca = linear_probe(pca_features(fc), prepared.labels, clf, base.folds, base.seed, prepared.ids).mean("mcc")
        checks[f"{clf}: fused {fused:.2f} >= raw FC {raw:.2f} and PCA {pca:.2f}"] = fused >= max(raw, pca)
    _verdict(capsys, 10, "probe sanity", checks, time.perf_counter() - t, None)

"""Synthetic rs-fMRI cohorts and their on-disk format.

Each subject's ROI series is drawn from a class covariance template (optionally
perturbed per drug), filtered by an AR(1) process and corrupted by white
observation noise.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import canonical

MAGIC = b"FMTS"
COUPLINGS = ("independent", "complementary")
FORMAT_VERSION = 1
_MANIFEST_KEYS = {"format_version", "fingerprint", "dtype", "name", "subjects"}
_SUBJECT_KEYS = {"id", "label", "drug", "cohort", "n_rois", "n_timepoints", "file", "crc32"}


class GenerationError(ValueError):
    pass


class CohortFormatError(ValueError):
    pass


@dataclass
class SubjectRecord:
    subject_id: str
    series: np.ndarray  # (n_rois, n_timepoints) float32
    label: int | None
    drug: str
    cohort: str

    def __post_init__(self):
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.series.ndim != 2 or min(self.series.shape) < 2:
            raise ValueError(f"{self.subject_id}: series needs N >= 2 ROIs and t >= 2, got {self.series.shape}")


@dataclass
class Cohort:
    subjects: list[SubjectRecord]
    fingerprint: str
    name: str = ""

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("subject ids must be unique")

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=np.int64)

    @property
    def drugs(self) -> list[str]:
        return [s.drug for s in self.subjects]

    def by_id(self) -> dict[str, SubjectRecord]:
        return {s.subject_id: s for s in self.subjects}

    def select(self, ids) -> "Cohort":
        lookup = self.by_id()
        return Cohort([lookup[i] for i in ids], self.fingerprint, self.name)

    def drug_subset(self, drug: str) -> "Cohort":
        subset = [s for s in self.subjects if s.drug == drug]
        if not subset:
            raise KeyError(f"no subjects were given drug {drug!r}; drugs present: {sorted(set(self.drugs))}")
        return Cohort(subset, self.fingerprint, f"{self.name}[{drug}]")


# -- templates ----------------------------------------------------------------


def community_template(n_rois: int, n_communities: int, within: float, between: float = 0.0) -> np.ndarray:
    """Correlation matrix with contiguous equal-size communities."""
    assign = np.arange(n_rois) * n_communities // n_rois
    same = assign[:, None] == assign[None, :]
    c = np.where(same, within, between).astype(np.float64)
    np.fill_diagonal(c, 1.0)
    return c


def rank_one_effect(n_rois: int, strength: float, seed: int) -> np.ndarray:
    u = np.random.default_rng(seed).standard_normal(n_rois)
    u /= np.linalg.norm(u)
    return strength * np.outer(u, u)


def cov_to_corr(cov: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(cov))
    return cov / np.outer(d, d)


def _check_pd(name: str, m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-10):
        raise GenerationError(f"{name} must be a symmetric square matrix")
    lam = float(np.linalg.eigvalsh(m).min())
    if lam <= 0:
        raise GenerationError(f"{name} is not positive definite (smallest eigenvalue {lam:.6g})")


@dataclass
class GeneratorProfile:
    """Cohort recipe.

    ``expression`` bounds how strongly each subject expresses its own class:
    the subject covariance is ``s * sigma[y] + (1 - s) * sigma[1 - y]`` and
    the subject AR coefficient is ``ar + ar_label_shift * (2y - 1) * s'``.
    ``s`` is uniform on ``expression``; with ``coupling="independent"`` so is
    ``s'``, with ``"complementary"`` ``s' = (hi - s) / (hi - lo)`` so a subject
    whose connectivity barely expresses its class carries the full temporal
    signal and vice versa.
    """

    name: str
    n_rois: int
    n_timepoints: int
    sigma0: np.ndarray
    sigma1: np.ndarray
    cohort_sizes: dict[tuple[int, str], int]
    ar_coefficient: float = 0.5
    noise_std: float = 0.5
    drug_effects: dict[str, np.ndarray] = field(default_factory=dict)
    expression: tuple[float, float] = (1.0, 1.0)
    ar_label_shift: float = 0.0
    coupling: str = "independent"

    def validate(self) -> None:
        n = self.n_rois
        if n < 2 or self.n_timepoints < 2:
            raise GenerationError("profile needs n_rois >= 2 and n_timepoints >= 2")
        for nm, m in (("sigma0", self.sigma0), ("sigma1", self.sigma1)):
            if m.shape != (n, n):
                raise GenerationError(f"{nm} has shape {m.shape}, expected {(n, n)}")
            _check_pd(nm, m)
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise GenerationError(f"ar_coefficient must lie in [0, 1), got {self.ar_coefficient}")
        if self.noise_std < 0:
            raise GenerationError(f"noise_std must be >= 0, got {self.noise_std}")
        for (label, drug), count in self.cohort_sizes.items():
            if label not in (0, 1) or count < 1:
                raise GenerationError(f"cohort size for ({label}, {drug}) must be >= 1 with label in {{0, 1}}")
        lo, hi = self.expression
        if not 0.0 <= lo <= hi <= 1.0:
            raise GenerationError(f"expression range must satisfy 0 <= lo <= hi <= 1, got {self.expression}")
        if self.coupling not in COUPLINGS:
            raise GenerationError(f"coupling must be one of {COUPLINGS}, got {self.coupling!r}")
        for drug, eff in self.drug_effects.items():
            _check_pd(f"sigma0 + effect[{drug}]", self.sigma0 + eff)
            _check_pd(f"sigma1 + effect[{drug}]", self.sigma1 + eff)
        top = self.ar_coefficient + abs(self.ar_label_shift)
        if top >= 1.0 or self.ar_coefficient - abs(self.ar_label_shift) < 0.0:
            raise GenerationError("ar_coefficient +/- ar_label_shift must stay within [0, 1)")

    def class_covariance(self, label: int, drug: str | None = None) -> np.ndarray:
        base = self.sigma1 if label == 1 else self.sigma0
        eff = self.drug_effects.get(drug) if drug is not None else None
        return base if eff is None else base + eff

    def describe(self) -> dict:
        return {
            "name": self.name,
            "n_rois": self.n_rois,
            "n_timepoints": self.n_timepoints,
            "sigma0": self.sigma0,
            "sigma1": self.sigma1,
            "ar_coefficient": float(self.ar_coefficient),
            "noise_std": float(self.noise_std),
            "drug_effects": {k: v for k, v in sorted(self.drug_effects.items())},
            "cohort_sizes": [[lab, drug, n] for (lab, drug), n in sorted(self.cohort_sizes.items())],
            "expression": [float(x) for x in self.expression],
            "ar_label_shift": float(self.ar_label_shift),
            "coupling": self.coupling,
        }

    def subject_expression(self, rng: np.random.Generator) -> tuple[float, float]:
        """(connectivity, temporal) expression strengths for one subject."""
        lo, hi = self.expression
        s_fc, s_ts = rng.uniform(lo, hi, size=2)
        if self.coupling == "complementary":
            s_ts = (hi - s_fc) / (hi - lo) if hi > lo else 1.0
        return float(s_fc), float(s_ts)

    def subject_covariance(self, label: int, drug: str | None, s_fc: float) -> np.ndarray:
        return s_fc * self.class_covariance(label, drug) + (1 - s_fc) * self.class_covariance(1 - label, drug)


def fingerprint(description: dict, seed: int, kind: str = "cohort") -> str:
    blob = canonical.dumps({"kind": kind, "config": description, "seed": int(seed)})
    return hashlib.sha256(blob.encode()).hexdigest()


# -- profiles -------------------------------------------------------------------


def openneuro_like(n_rois: int = 32, n_timepoints: int = 200, noise_std: float = 0.5) -> GeneratorProfile:
    """56 subjects, 26 responders; duloxetine 19 / placebo 37."""
    return GeneratorProfile(
        name="openneuro-like",
        n_rois=n_rois,
        n_timepoints=n_timepoints,
        sigma0=community_template(n_rois, 2, 0.4),
        sigma1=community_template(n_rois, 4, 0.4),
        cohort_sizes={(1, "duloxetine"): 9, (0, "duloxetine"): 10, (1, "placebo"): 17, (0, "placebo"): 20},
        ar_coefficient=0.5,
        noise_std=noise_std,
        drug_effects={
            "duloxetine": rank_one_effect(n_rois, 0.3, seed=11),
            "placebo": rank_one_effect(n_rois, 0.3, seed=12),
        },
        expression=(0.5, 1.0),
        ar_label_shift=0.3,
        coupling="complementary",
    )


def inhouse_like(n_rois: int = 32, n_timepoints: int = 200, noise_std: float = 0.5) -> GeneratorProfile:
    """61 subjects given lidocaine, 24 responders."""
    p = openneuro_like(n_rois, n_timepoints, noise_std)
    p.name = "inhouse-like"
    p.cohort_sizes = {(1, "lidocaine"): 24, (0, "lidocaine"): 37}
    p.drug_effects = {"lidocaine": rank_one_effect(n_rois, 0.3, seed=13)}
    return p


def fidelity(n_timepoints: int = 200) -> GeneratorProfile:
    """Full 424-ROI layout; too slow for routine test runs."""
    p = openneuro_like(424, n_timepoints)
    p.name = "fidelity"
    return p


PROFILES = {"openneuro-like": openneuro_like, "inhouse-like": inhouse_like, "fidelity": fidelity}


# -- generation -------------------------------------------------------------------


def _simulate(rng: np.random.Generator, cov: np.ndarray, n_timepoints: int, ar: float, noise_std: float) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    innov = rng.standard_normal((n_timepoints, cov.shape[0])) @ chol.T
    x = np.empty_like(innov)
    x[0] = innov[0]
    scale = np.sqrt(1.0 - ar * ar)
    for k in range(1, n_timepoints):
        x[k] = ar * x[k - 1] + scale * innov[k]
    x += noise_std * rng.standard_normal(x.shape)
    return x.T.astype(np.float32)


def subject_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def generate_synthetic_cohort(profile: GeneratorProfile, seed: int) -> Cohort:
    profile.validate()
    subjects = []
    index = 0
    for (label, drug), count in sorted(profile.cohort_sizes.items(), key=lambda kv: (kv[0][1], -kv[0][0])):
        for _ in range(count):
            rng = subject_rng(seed, index)
            s_fc, s_ts = profile.subject_expression(rng)
            cov = profile.subject_covariance(label, drug, s_fc)
            ar = profile.ar_coefficient + profile.ar_label_shift * (2 * label - 1) * s_ts
            series = _simulate(rng, cov, profile.n_timepoints, ar, profile.noise_std)
            subjects.append(SubjectRecord(f"sub-{index:03d}", series, int(label), drug, profile.name))
            index += 1
    return Cohort(subjects, fingerprint(profile.describe(), seed), profile.name)


def family_anchors(profile: GeneratorProfile, seed: int, n_extra: int = 4) -> list[np.ndarray]:
    """Covariance anchors whose convex hull contains both class templates.

    Each template is the midpoint of a stretched copy of itself and a scaled
    identity; extra random community templates widen the family.
    """
    anchors = []
    for sigma in (profile.sigma0, profile.sigma1):
        mu = float(np.linalg.eigvalsh(sigma).min())
        anchors.append(2.0 * sigma - mu * np.eye(profile.n_rois))
        anchors.append(mu * np.eye(profile.n_rois))
    rng = np.random.default_rng([int(seed), 0xA7C])
    for _ in range(n_extra):
        k = int(rng.integers(2, 9))
        perm = rng.permutation(profile.n_rois)
        t = community_template(profile.n_rois, k, float(rng.uniform(0.2, 0.8)))
        anchors.append(t[np.ix_(perm, perm)])
    return anchors


def generate_pretrain_corpus(n_subjects: int, profile: GeneratorProfile, seed: int) -> Cohort:
    """Unlabeled subjects from random convex mixtures of :func:`family_anchors`."""
    if n_subjects < 1:
        raise GenerationError("pretraining corpus needs at least one subject")
    profile.validate()
    anchors = family_anchors(profile, seed)
    subjects = []
    for i in range(n_subjects):
        rng = subject_rng(seed, 1_000_000 + i)
        w = rng.dirichlet(np.ones(len(anchors)))
        cov = sum(wi * a for wi, a in zip(w, anchors))
        ar = float(rng.uniform(0.05, 0.9))
        series = _simulate(rng, cov, profile.n_timepoints, ar, profile.noise_std)
        subjects.append(SubjectRecord(f"pre-{i:05d}", series, None, "none", "pretrain"))
    desc = {"profile": profile.describe(), "n_subjects": int(n_subjects)}
    return Cohort(subjects, fingerprint(desc, seed, kind="pretrain"), f"pretrain-{profile.name}")


# -- persistence ------------------------------------------------------------------


def _encode_series(series: np.ndarray) -> bytes:
    n, t = series.shape
    return MAGIC + struct.pack("<III", FORMAT_VERSION, n, t) + np.ascontiguousarray(series, dtype="<f4").tobytes()


def save_cohort(cohort: Cohort, directory: str | Path) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in cohort.subjects:
        blob = _encode_series(s.series)
        fname = f"{s.subject_id}.bin"
        (out / fname).write_bytes(blob)
        entries.append({
            "id": s.subject_id,
            "label": s.label,
            "drug": s.drug,
            "cohort": s.cohort,
            "n_rois": int(s.series.shape[0]),
            "n_timepoints": int(s.series.shape[1]),
            "file": fname,
            "crc32": zlib.crc32(blob),
        })
    manifest = {
        "format_version": FORMAT_VERSION,
        "fingerprint": cohort.fingerprint,
        "name": cohort.name,
        "dtype": "f32",
        "subjects": entries,
    }
    (out / "manifest.json").write_text(canonical.dumps(manifest, indent=1) + "\n")
    return out


def load_cohort(directory: str | Path) -> Cohort:
    root = Path(directory)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise CohortFormatError(f"missing manifest: {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise CohortFormatError(f"malformed manifest {mpath}: {exc}") from exc
    extra = set(manifest) - _MANIFEST_KEYS
    if extra:
        warnings.warn(f"manifest has unknown keys {sorted(extra)}; ignoring", stacklevel=2)
    if manifest.get("dtype", "f32") != "f32":
        raise CohortFormatError(f"unsupported dtype {manifest['dtype']!r}")
    subjects = []
    for entry in manifest["subjects"]:
        extra = set(entry) - _SUBJECT_KEYS
        if extra:
            warnings.warn(f"subject {entry.get('id')} has unknown keys {sorted(extra)}; ignoring", stacklevel=2)
        path = root / entry["file"]
        if not path.exists():
            raise CohortFormatError(f"missing payload file {path}")
        blob = path.read_bytes()
        if zlib.crc32(blob) != entry["crc32"]:
            raise CohortFormatError(f"checksum mismatch in {path.name}")
        if blob[:4] != MAGIC:
            raise CohortFormatError(f"{path.name}: bad magic {blob[:4]!r}")
        version, n, t = struct.unpack("<III", blob[4:16])
        if version != FORMAT_VERSION:
            raise CohortFormatError(f"{path.name}: unsupported version {version}")
        if (n, t) != (entry["n_rois"], entry["n_timepoints"]) or len(blob) != 16 + 4 * n * t:
            raise CohortFormatError(
                f"{path.name}: shape mismatch, manifest {(entry['n_rois'], entry['n_timepoints'])} vs payload {(n, t)}"
            )
        series = np.frombuffer(blob, dtype="<f4", offset=16).reshape(n, t).astype(np.float32)
        subjects.append(SubjectRecord(entry["id"], series, entry["label"], entry["drug"], entry["cohort"]))
    return Cohort(subjects, manifest["fingerprint"], manifest.get("name", ""))

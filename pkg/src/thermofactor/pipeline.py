"""End-to-end studies: the active-phantom benchmark, noise robustness and the passive screening cohort.

Everything random is drawn from named sub-seeds of one study seed, so a
study is reproducible from ``(config, seed)`` alone.  Report text (CSV and
JSON) contains no timestamps or paths, which makes reruns byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import evaluation as ev
from . import phantom as ph
from . import seqio
from . import texture as tx
from .factor import MAX_ROI_CONTRAST, FactorModel, Method, SolverOptions, factorize, select_component, shift_to_nonnegative

logger = logging.getLogger(__name__)


def subseed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def pmap(fn, items, threads: int = 1):
    """Ordered map, threaded when ``threads > 1``."""
    items = list(items)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _num(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) for v in row])
    return buf.getvalue()


def json_text(payload) -> str:
    return json.dumps(_plain(payload), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def prepared_matrix(X: np.ndarray, method) -> np.ndarray:
    """Shift to non-negative for the methods that need it."""
    return shift_to_nonnegative(X) if Method.parse(method).requires_nonnegative else X


def method_lambda(method, X: np.ndarray, lam_relative: float) -> float:
    return lam_relative * float(np.abs(X).max()) if Method.parse(method).penalized else 0.0


# --------------------------------------------------------------------------
# active benchmark

@dataclass(frozen=True)
class ActiveConfig:
    preset: str = "AL"
    k: int = 7
    methods: Tuple[str, ...] = tuple(m.value for m in Method)
    lam_relative: float = 0.05
    sensor_noise: float = 0.01
    step: float = 0.05
    invert: bool = True
    max_iter: int = 500
    rel_tol: float = 1e-6
    init: str = "kmeans"
    noise_levels: Tuple[float, ...] = (0.03, 0.10, 0.20)
    sound_margin: int = 2
    seed: int = 0

    def options(self) -> SolverOptions:
        return SolverOptions(max_iter=self.max_iter, rel_tol=self.rel_tol, init=self.init,
                             seed=subseed(self.seed, "solver") % (2 ** 31))


@dataclass
class ActivePhantom:
    sequence: seqio.ThermalSequence
    masks: List[np.ndarray]
    union: np.ndarray
    spec: ph.SpecimenSpec


def simulate_preset(name: str) -> ActivePhantom:
    spec = ph.builtin_specimens()[name.upper()]
    acq = ph.recommended_acquisition(name)
    seq, masks, union = ph.simulate_active(spec, acq.flash_energy, acq.flash_duration, acq.fs, acq.duration)
    return ActivePhantom(seq, masks, union, spec)


@dataclass
class MethodResult:
    method: str
    lam: float
    component: int
    best_jaccard: float
    best_threshold: float
    polarity: int
    per_defect: List[float]
    iterations: int
    degenerate: bool
    image: np.ndarray = field(repr=False, default=None)
    model: FactorModel = field(repr=False, default=None)


def score_method(X: np.ndarray, dims, method, cfg: ActiveConfig, union, masks) -> MethodResult:
    Xm = prepared_matrix(X, method)
    lam = method_lambda(method, Xm, cfg.lam_relative)
    model = factorize(seqio.DataMatrix(Xm, dims), method, cfg.k, lam, cfg.options())
    index, image = select_component(model, union, MAX_ROI_CONTRAST)
    sweep = ev.threshold_sweep(image, union, cfg.step, cfg.invert)
    per = ev.per_defect_scores(image, masks, cfg.step, cfg.invert)
    return MethodResult(Method.parse(method).value, lam, index, sweep.best_jaccard, sweep.best_threshold,
                        sweep.polarity, [s.best_jaccard for s in per], model.iterations_run,
                        bool(model.degenerate), image, model)


@dataclass
class ActiveReport:
    config: ActiveConfig
    results: List[MethodResult]
    depths: List[float]
    radii: List[float]

    def shallowest(self) -> int:
        return int(np.argmin(self.depths))

    def deepest(self) -> int:
        return int(np.argmax(self.depths))

    def csv(self) -> str:
        n = len(self.depths)
        header = ["method", "lambda", "component", "best_jaccard", "best_threshold", "polarity",
                  *[f"defect_{i}_jaccard" for i in range(n)], "iterations", "degenerate"]
        rows = [[r.method, r.lam, r.component, r.best_jaccard, r.best_threshold, r.polarity,
                 *r.per_defect, r.iterations, int(r.degenerate)] for r in self.results]
        return csv_text(header, rows)

    def json(self) -> str:
        return json_text({
            "config": asdict(self.config),
            "config_hash": config_hash(asdict(self.config)),
            "defect_depths_m": self.depths,
            "defect_radii_m": self.radii,
            "results": [{k: v for k, v in asdict(r).items() if k not in ("image", "model")}
                        for r in self.results],
        })


def run_active_benchmark(cfg: ActiveConfig = ActiveConfig(), phantom: Optional[ActivePhantom] = None,
                         threads: int = 1) -> ActiveReport:
    if phantom is None:
        phantom = simulate_preset(cfg.preset)
    noisy = seqio.add_gaussian_noise(phantom.sequence, cfg.sensor_noise, subseed(cfg.seed, "sensor"))
    X = seqio.vectorize(noisy)
    results = pmap(lambda m: score_method(X.values, X.origin_dims, m, cfg, phantom.union, phantom.masks),
                   cfg.methods, threads)
    return ActiveReport(cfg, results, [d.depth for d in phantom.spec.defects],
                        [d.radius for d in phantom.spec.defects])


@dataclass
class RobustnessReport:
    config: ActiveConfig
    curves: Dict[str, List[ev.RobustnessPoint]]

    def csv(self) -> str:
        rows = []
        for method, points in self.curves.items():
            for p in points:
                rows.append([method, p.level, p.best_jaccard, p.snr, p.polarity])
        return csv_text(["method", "level_or_threshold", "jaccard", "snr", "polarity"], rows)

    def json(self) -> str:
        return json_text({
            "config": asdict(self.config),
            "config_hash": config_hash(asdict(self.config)),
            "curves": {m: [asdict(p) for p in pts] for m, pts in self.curves.items()},
        })


def run_robustness(cfg: ActiveConfig = ActiveConfig(), phantom: Optional[ActivePhantom] = None,
                   threads: int = 1) -> RobustnessReport:
    """Noise curves on the clean phantom: one noise realization, scaled per level."""
    if phantom is None:
        phantom = simulate_preset(cfg.preset)
    sound = ev.sound_region(phantom.union, cfg.sound_margin)
    X = seqio.vectorize(phantom.sequence).values
    noise_seed = subseed(cfg.seed, "robustness")

    def curve(method):
        lam = method_lambda(method, prepared_matrix(X, method), cfg.lam_relative)
        return ev.robustness_curve(phantom.sequence, method, cfg.k, phantom.union, phantom.union, sound,
                                   cfg.noise_levels, noise_seed, lam, cfg.options(), cfg.step, cfg.invert)

    curves = pmap(curve, cfg.methods, threads)
    return RobustnessReport(cfg, {Method.parse(m).value: c for m, c in zip(cfg.methods, curves)})


# --------------------------------------------------------------------------
# passive screening study

@dataclass(frozen=True)
class PassiveConfig:
    n_subjects: int = 20
    n_symptomatic: int = 10
    grid: Tuple[int, int] = (64, 64)
    duration: float = 300.0
    n_frames: int = 23
    sensor_noise: float = 0.005
    method: str = "pct"
    k: int = 3
    component: int = 0
    lam: float = 0.0
    levels: int = tx.DEFAULT_LEVELS
    offsets: Tuple[Tuple[float, float], ...] = tx.DEFAULT_OFFSETS
    symmetric: bool = True
    squared_dissimilarity: bool = False
    ridge: float = 1e-6
    leave_one_out: bool = False
    seed: int = 0


@dataclass
class Subject:
    subject_id: str
    label: int
    sequence: seqio.ThermalSequence
    lesion: np.ndarray


def passive_cohort(cfg: PassiveConfig) -> List[Subject]:
    if not 2 <= cfg.n_symptomatic <= cfg.n_subjects - 2:
        raise ev.ParameterError("each class needs at least two subjects")
    order = np.random.default_rng(subseed(cfg.seed, "labels")).permutation(cfg.n_subjects)
    labels = (order < cfg.n_symptomatic).astype(int)
    fs = cfg.n_frames / cfg.duration
    subjects = []
    for i, label in enumerate(labels):
        sid = f"subject_{i:02d}"
        rng = np.random.default_rng(subseed(cfg.seed, f"{sid}:anatomy"))
        spec = ph.random_subject(rng, bool(label), grid=cfg.grid)
        seq, _, lesion = ph.simulate_passive(spec, cfg.duration, fs)
        seq = seqio.add_gaussian_noise(seq, cfg.sensor_noise, subseed(cfg.seed, f"{sid}:sensor"))
        subjects.append(Subject(sid, int(label), seq, lesion))
    return subjects


def subject_features(seq: seqio.ThermalSequence, cfg: PassiveConfig, roi=None) -> tx.TlcmFeatures:
    X = prepared_matrix(seqio.vectorize(seq).values, cfg.method)
    model = factorize(seqio.DataMatrix(X, seq.dims), cfg.method, cfg.k, cfg.lam,
                      SolverOptions(seed=subseed(cfg.seed, "solver") % (2 ** 31)))
    _, image = select_component(model, roi, cfg.component)
    if roi is None:
        roi = np.ones(image.shape, dtype=bool)
    return tx.image_features(image, roi, cfg.levels, cfg.offsets, cfg.symmetric,
                             cfg.squared_dissimilarity)


@dataclass
class PassiveReport:
    config: PassiveConfig
    subject_ids: List[str]
    labels: List[int]
    features: List[tx.TlcmFeatures]
    kruskal: Dict[str, tx.KruskalResult]
    model: tx.LogisticModel
    evaluation: tx.LogisticEvaluation
    loo_accuracy: Optional[float] = None

    def features_csv(self) -> str:
        return tx.features_csv(self.subject_ids, self.features, self.labels)

    def roc_csv(self) -> str:
        return tx.roc_csv(self.evaluation.roc_points)

    def json(self) -> str:
        return json_text({
            "config": asdict(self.config),
            "config_hash": config_hash(asdict(self.config)),
            "kruskal_wallis": {k: asdict(v) for k, v in self.kruskal.items()},
            "logistic": self.model.to_dict(),
            "training_accuracy": self.evaluation.accuracy,
            "auc": self.evaluation.auc,
            "leave_one_out_accuracy": self.loo_accuracy,
        })


def analyze_features(cfg: PassiveConfig, subject_ids, labels, feats) -> PassiveReport:
    labels = [int(v) for v in labels]
    table = np.array([f.vector() for f in feats])
    y = np.array(labels)
    kw = {name: tx.kruskal_wallis(table[y == 1, i], table[y == 0, i])
          for i, name in enumerate(tx.FEATURE_NAMES)}
    model = tx.logistic_fit(table, y, cfg.ridge)
    evaluation = tx.logistic_eval(model, table, y)
    loo = tx.leave_one_out_accuracy(table, y, cfg.ridge) if cfg.leave_one_out else None
    return PassiveReport(cfg, list(subject_ids), labels, list(feats), kw, model, evaluation, loo)


def run_passive_study(cfg: PassiveConfig = PassiveConfig(), threads: int = 1) -> PassiveReport:
    subjects = passive_cohort(cfg)
    feats = pmap(lambda s: subject_features(s.sequence, cfg), subjects, threads)
    return analyze_features(cfg, [s.subject_id for s in subjects], [s.label for s in subjects], feats)


def config_hash(payload) -> str:
    return hashlib.sha256(json.dumps(_plain(payload), sort_keys=True).encode()).hexdigest()

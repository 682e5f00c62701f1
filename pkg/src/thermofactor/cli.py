"""Command-line entry point.

Usage::

    thermofactor [--config PATH] [--seed N] [--output DIR] [--threads N] <subcommand>

Subcommands: simulate, factorize, evaluate, robustness, texture, report.
The config is INI text (see README for the keys).  Exit codes: 0 success,
2 usage/config error, 3 data error, 4 numerical degeneracy.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import platform
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import scipy

from . import evaluation as ev
from . import phantom as ph
from . import pipeline as pl
from . import seqio
from . import texture as tx
from .errors import DegenerateInputError, ParameterError, ThermofactorError, UsageError
from .factor import MAX_ROI_CONTRAST, Method, SolverOptions, factorize, save_model, select_component

logger = logging.getLogger("thermofactor")

__version__ = "0.1.0"
SUBCOMMANDS = ("simulate", "factorize", "evaluate", "robustness", "texture", "report")


# --------------------------------------------------------------------------
# configuration

class Config:
    """Validated view over the INI sections, with typed getters."""

    def __init__(self, parser: configparser.ConfigParser, seed: int, output: Path, threads: int):
        self.parser = parser
        self.seed = seed
        self.output = output
        self.threads = threads

    @classmethod
    def load(cls, path: Optional[str], text: Optional[str] = None, seed=None, output=None, threads=None):
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        source = "<config>"
        try:
            if path is not None:
                source = path
                text = Path(path).read_text()
            if text:
                parser.read_string(text, source=source)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            # configparser messages carry the line number
            raise UsageError(f"config parse error: {exc}") from None
        base = Path(path).parent if path else Path.cwd()
        cfg = cls(parser, 0, Path("out"), 1)
        cfg.base = base
        cfg.seed = int(seed) if seed is not None else cfg.get_int("run", "seed", 0)
        out = output if output is not None else cfg.get("run", "output", "out")
        cfg.output = Path(out)
        cfg.threads = int(threads) if threads is not None else cfg.get_int("run", "threads", 1)
        if cfg.threads < 1:
            raise UsageError("threads must be >= 1")
        return cfg

    def get(self, section, key, default=None):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        return default

    def _typed(self, section, key, default, kind):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return kind(raw)
        except ValueError:
            raise UsageError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None

    def get_int(self, section, key, default=None):
        return self._typed(section, key, default, int)

    def get_float(self, section, key, default=None):
        return self._typed(section, key, default, float)

    def get_bool(self, section, key, default=False):
        if not self.parser.has_option(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise UsageError(f"[{section}] {key} must be true/false") from None

    def get_floats(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"[{section}] {key} must be a comma-separated list of numbers") from None

    def path(self, section, key, required=True) -> Optional[Path]:
        raw = self.get(section, key)
        if raw is None:
            if required:
                raise UsageError(f"missing [{section}] {key}")
            return None
        p = Path(raw)
        if not p.is_absolute():
            p = self.base / p
        if not p.exists():
            raise UsageError(f"[{section}] {key}: path does not exist: {raw}")
        return p

    def paths(self, section, key) -> List[Path]:
        raw = self.get(section, key)
        if not raw:
            return []
        out = []
        for item in raw.split(","):
            p = Path(item.strip())
            if not p.is_absolute():
                p = self.base / p
            if not p.exists():
                raise UsageError(f"[{section}] {key}: path does not exist: {item.strip()}")
            out.append(p)
        return out

    def canonical(self) -> dict:
        """Config contents plus the effective seed; output location excluded."""
        payload = {s: dict(sorted(self.parser.items(s))) for s in sorted(self.parser.sections())}
        payload.get("run", {}).pop("output", None)
        payload.get("run", {}).pop("threads", None)
        payload["effective_seed"] = self.seed
        return payload

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()

    # typed section builders

    def method(self, section="factor") -> Method:
        raw = self.get(section, "method", "pct")
        try:
            return Method.parse(raw)
        except ParameterError as exc:
            raise UsageError(str(exc)) from None

    def solver_options(self) -> SolverOptions:
        try:
            return SolverOptions(
                max_iter=self.get_int("factor", "max_iter", 500),
                rel_tol=self.get_float("factor", "rel_tol", 1e-6),
                init=self.get("factor", "init", "random_uniform"),
                seed=pl.subseed(self.seed, "solver") % (2 ** 31),
                epsilon_guard=self.get_float("factor", "epsilon_guard", 1e-12),
            )
        except ParameterError as exc:
            raise UsageError(f"[factor] {exc}") from None

    def offsets(self):
        raw = self.get("texture", "offsets")
        if raw is None:
            return tx.DEFAULT_OFFSETS
        out = []
        for item in raw.split(","):
            try:
                d, a = item.split(":")
                out.append((float(d), math.radians(float(a))))
            except ValueError:
                raise UsageError(f"[texture] offsets: expected distance:angle_degrees, got {item.strip()!r}") from None
        return tuple(out)

    def polarity_invert(self) -> bool:
        mode = self.get("evaluation", "polarity", "both").lower()
        if mode not in ("both", "positive"):
            raise UsageError("[evaluation] polarity must be 'both' or 'positive'")
        return mode == "both"

    def active_config(self) -> pl.ActiveConfig:
        section = "benchmark"
        methods = self.get(section, "methods")
        if methods:
            try:
                methods = tuple(Method.parse(m).value for m in methods.split(",") if m.strip())
            except ParameterError as exc:
                raise UsageError(str(exc)) from None
        d = pl.ActiveConfig()
        return pl.ActiveConfig(
            preset=self.get(section, "preset", d.preset).upper(),
            k=self.get_int(section, "k", d.k),
            methods=methods or d.methods,
            lam_relative=self.get_float(section, "lam_relative", d.lam_relative),
            sensor_noise=self.get_float(section, "sensor_noise", d.sensor_noise),
            step=self.get_float("evaluation", "step", d.step),
            invert=self.polarity_invert(),
            max_iter=self.get_int(section, "max_iter", d.max_iter),
            rel_tol=self.get_float(section, "rel_tol", d.rel_tol),
            init=self.get(section, "init", d.init),
            noise_levels=tuple(self.get_floats("noise", "levels", list(d.noise_levels))),
            sound_margin=self.get_int("evaluation", "sound_margin", d.sound_margin),
            seed=self.seed,
        )

    def passive_config(self) -> pl.PassiveConfig:
        s = "passive"
        d = pl.PassiveConfig()
        grid = self.get_floats(s, "grid", list(d.grid))
        return pl.PassiveConfig(
            n_subjects=self.get_int(s, "n_subjects", d.n_subjects),
            n_symptomatic=self.get_int(s, "n_symptomatic", d.n_symptomatic),
            grid=(int(grid[0]), int(grid[1])),
            duration=self.get_float(s, "duration", d.duration),
            n_frames=self.get_int(s, "n_frames", d.n_frames),
            sensor_noise=self.get_float(s, "sensor_noise", d.sensor_noise),
            method=self.method("texture") if self.get("texture", "method") else d.method,
            k=self.get_int("texture", "k", d.k),
            component=self.get_int("texture", "component", d.component),
            lam=self.get_float("texture", "lambda", d.lam),
            levels=self.get_int("texture", "levels", d.levels),
            offsets=self.offsets(),
            symmetric=self.get_bool("texture", "symmetric", d.symmetric),
            squared_dissimilarity=self.get_bool("texture", "squared_dissimilarity",
                                                d.squared_dissimilarity),
            leave_one_out=self.get_bool("texture", "leave_one_out", d.leave_one_out),
            seed=self.seed,
        )


# --------------------------------------------------------------------------
# output helpers

class Outputs:
    """Collects written artifacts and their hashes for the manifest."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: Dict[str, str] = {}

    def _record(self, name):
        self.files[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()

    def text(self, name: str, text: str):
        seqio._atomic_write(self.dir / name, text.encode())
        self._record(name)

    def sequence(self, name, seq):
        seqio.save_sequence(seq, self.dir / name)
        self._record(name)

    def matrix(self, name, matrix):
        seqio.save_matrix(matrix, self.dir / name)
        self._record(name)

    def mask(self, name, mask):
        seqio.save_mask(mask, self.dir / name)
        self._record(name)

    def image16(self, name, image):
        seqio.save_image16(image, self.dir / name)
        self._record(name)

    def manifest(self, command: str, cfg: Config, extra: Optional[dict] = None):
        payload = {
            "command": command,
            "config_hash": cfg.hash(),
            "config": cfg.canonical(),
            "seed": cfg.seed,
            "versions": {"thermofactor": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "outputs": dict(sorted(self.files.items())),
        }
        if extra:
            payload.update(extra)
        seqio._atomic_write(self.dir / "manifest.json", pl.json_text(payload).encode())


def load_image(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".pgm":
        return seqio.load_pgm(path).astype(np.float64)
    return seqio.load_matrix(path)


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(cfg: Config) -> int:
    """Write a simulated active sequence with masks, or a passive cohort."""
    kind = cfg.get("simulate", "kind", "active").lower()
    out = Outputs(cfg.output)
    if kind == "active":
        name = cfg.get("simulate", "preset", "AL").upper()
        presets = ph.builtin_specimens()
        if name not in presets:
            raise UsageError(f"unknown preset {name!r}; valid presets: {', '.join(presets)}")
        spec = presets[name]
        grid = cfg.get_floats("simulate", "grid")
        if grid:
            if len(grid) != 3:
                raise UsageError("[simulate] grid needs three sizes N, M, L")
            spec = spec.with_grid(tuple(int(g) for g in grid))
        acq = ph.recommended_acquisition(name)
        seq, masks, union = ph.simulate_active(
            spec,
            cfg.get_float("simulate", "flash_energy", acq.flash_energy),
            cfg.get_float("simulate", "flash_duration", acq.flash_duration),
            cfg.get_float("simulate", "fs", acq.fs),
            cfg.get_float("simulate", "duration", acq.duration),
        )
        noise = cfg.get_float("simulate", "sensor_noise", 0.0)
        if noise:
            seq = seqio.add_gaussian_noise(seq, noise, pl.subseed(cfg.seed, "sensor"))
        out.sequence("sequence.thrm", seq)
        out.mask("gt_union.pgm", union)
        for i, m in enumerate(masks):
            out.mask(f"gt_defect_{i:02d}.pgm", m)
        extra = {"preset": name, "n_defects": len(masks),
                 "defects": [{"center_m": list(d.center), "radius_m": d.radius, "depth_m": d.depth}
                             for d in spec.defects]}
    elif kind == "passive":
        pcfg = cfg.passive_config()
        subjects = pl.passive_cohort(pcfg)
        rows = []
        for s in subjects:
            out.sequence(f"{s.subject_id}.thrm", s.sequence)
            out.mask(f"{s.subject_id}_lesion.pgm", s.lesion)
            rows.append([s.subject_id, f"{s.subject_id}.thrm", s.label])
        out.text("cohort.csv", pl.csv_text(["subject_id", "file", "label"], rows))
        extra = {"n_subjects": len(subjects), "n_symptomatic": sum(s.label for s in subjects)}
    else:
        raise UsageError("[simulate] kind must be 'active' or 'passive'")
    out.manifest("simulate", cfg, extra)
    return 0


def _selection(cfg: Config, roi_present: bool):
    raw = cfg.get("factor", "selection")
    if raw is None:
        return MAX_ROI_CONTRAST if roi_present else 0
    if raw == MAX_ROI_CONTRAST:
        if not roi_present:
            raise UsageError("selection = max_roi_contrast needs [input] gt (or [factor] roi)")
        return raw
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"[factor] selection must be {MAX_ROI_CONTRAST!r} or a component index") from None


def cmd_factorize(cfg: Config) -> int:
    """Factor a sequence and write component images and the model."""
    seq = seqio.load_sequence(cfg.path("input", "sequence"))
    method = cfg.method()
    k = cfg.get_int("factor", "k", 7)
    lam = cfg.get_float("factor", "lambda", 0.0)
    X = seqio.vectorize(seq).values
    if method.requires_nonnegative and cfg.get_bool("factor", "shift_nonnegative", True):
        X = pl.prepared_matrix(X, method)
    roi_path = cfg.path("factor", "roi", required=False) or cfg.path("input", "gt", required=False)
    roi = seqio.load_mask(roi_path) if roi_path else None
    model = factorize(seqio.DataMatrix(X, seq.dims), method, k, lam, cfg.solver_options())
    out = Outputs(cfg.output)
    save_model(model, out.dir, "model")
    for name in sorted(p.name for p in out.dir.glob("model*")):
        out._record(name)
    for i in range(model.rank):
        out.image16(f"component_{i:02d}.pgm", model.component_image(i))
    index, image = select_component(model, roi, _selection(cfg, roi is not None))
    out.image16("selected.pgm", image)
    out.matrix("selected.thrm", image)
    extra = {"method": method.value, "k": k, "lambda": lam, "selected_component": index,
             "iterations": model.iterations_run, "degenerate": model.degenerate}
    if method is Method.CONVEX_NMF:
        deviation = float(np.max(np.abs(model.basis - X @ model.mixing)))
        extra["convex_basis_deviation"] = deviation
        extra["convex_basis_bound"] = 1e-12 * float(np.max(np.abs(model.basis)))
    out.manifest("factorize", cfg, extra)
    return 0


def cmd_evaluate(cfg: Config) -> int:
    """Score a detection image against ground-truth masks."""
    image = load_image(cfg.path("input", "image"))
    gt = seqio.load_mask(cfg.path("input", "gt"))
    defects = [seqio.load_mask(p) for p in cfg.paths("input", "defects")]
    step = cfg.get_float("evaluation", "step", 0.05)
    invert = cfg.polarity_invert()
    sweep = ev.threshold_sweep(image, gt, step, invert)
    out = Outputs(cfg.output)
    out.text("sweep.csv", ev.sweep_csv(sweep))
    report = {"best_jaccard": sweep.best_jaccard, "best_threshold": sweep.best_threshold,
              "polarity": sweep.polarity, "config_hash": cfg.hash(), "seed": cfg.seed}
    noise_path = cfg.path("input", "noise_roi", required=False)
    noise_roi = seqio.load_mask(noise_path) if noise_path else ev.sound_region(
        gt, cfg.get_int("evaluation", "sound_margin", 2))
    try:
        report["snr_db"] = ev.snr(image, gt, noise_roi)
    except DegenerateInputError as exc:
        report["snr_db"] = None
        report["snr_note"] = str(exc)
    if defects:
        scores = ev.per_defect_scores(image, defects, step, invert)
        out.text("per_defect.csv", pl.csv_text(
            ["defect", "best_jaccard", "best_threshold", "polarity"],
            [[s.index, s.best_jaccard, s.best_threshold, s.polarity] for s in scores]))
        report["per_defect"] = [{"defect": s.index, "best_jaccard": s.best_jaccard} for s in scores]
    out.text("report.json", pl.json_text(report))
    out.manifest("evaluate", cfg, {"best_jaccard": sweep.best_jaccard})
    return 0


def cmd_robustness(cfg: Config) -> int:
    """Detection quality of one method under increasing noise."""
    seq = seqio.load_sequence(cfg.path("input", "sequence"))
    gt = seqio.load_mask(cfg.path("input", "gt"))
    method = cfg.method()
    levels = cfg.get_floats("noise", "levels", [0.03, 0.10, 0.20])
    noise_path = cfg.path("input", "noise_roi", required=False)
    noise_roi = seqio.load_mask(noise_path) if noise_path else ev.sound_region(
        gt, cfg.get_int("evaluation", "sound_margin", 2))
    noise_seed = cfg.get_int("noise", "seed", pl.subseed(cfg.seed, "robustness"))
    points = ev.robustness_curve(
        seq, method, cfg.get_int("factor", "k", 7), gt, gt, noise_roi, levels, noise_seed,
        cfg.get_float("factor", "lambda", 0.0), cfg.solver_options(),
        cfg.get_float("evaluation", "step", 0.05), cfg.polarity_invert(), cfg.threads)
    out = Outputs(cfg.output)
    out.text("robustness.csv", ev.robustness_csv(points))
    out.text("report.json", pl.json_text({
        "method": method.value, "config_hash": cfg.hash(), "seed": cfg.seed,
        "points": [p.__dict__ for p in points]}))
    out.manifest("robustness", cfg)
    return 0


def _read_cohort(cfg: Config):
    path = cfg.path("input", "cohort")
    listing = path / "cohort.csv" if path.is_dir() else path
    if not listing.exists():
        raise UsageError(f"cohort listing not found: {listing}")
    rows = list(csv.DictReader(io.StringIO(listing.read_text())))
    if not rows or not {"subject_id", "file", "label"} <= set(rows[0]):
        raise UsageError(f"{listing}: expected columns subject_id,file,label")
    subjects = []
    for row in rows:
        seq = seqio.load_sequence(listing.parent / row["file"])
        subjects.append((row["subject_id"], int(row["label"]), seq))
    return subjects


def _write_passive(out: Outputs, report: pl.PassiveReport, prefix=""):
    out.text(f"{prefix}features.csv", report.features_csv())
    out.text(f"{prefix}roc.csv", report.roc_csv())
    out.text(f"{prefix}model.json", tx.model_json(report.model) + "\n")
    out.text(f"{prefix}report.json", report.json())


def cmd_texture(cfg: Config) -> int:
    """Texture features, group tests and a classifier for a cohort."""
    pcfg = cfg.passive_config()
    source = cfg.get("input", "cohort", "builtin")
    if source == "builtin":
        report = pl.run_passive_study(pcfg, cfg.threads)
    else:
        subjects = _read_cohort(cfg)
        feats = pl.pmap(lambda s: pl.subject_features(s[2], pcfg), subjects, cfg.threads)
        report = pl.analyze_features(pcfg, [s[0] for s in subjects], [s[1] for s in subjects], feats)
    out = Outputs(cfg.output)
    _write_passive(out, report)
    out.manifest("texture", cfg, {"training_accuracy": report.evaluation.accuracy,
                                  "kruskal_wallis_contrast_p": report.kruskal["contrast"].p_value})
    return 0


def cmd_report(cfg: Config) -> int:
    """Full benchmark: active phantom, robustness curves and passive study."""
    acfg = cfg.active_config()
    out = Outputs(cfg.output)
    extra = {}
    if cfg.get_bool("report", "active", True):
        phantom = pl.simulate_preset(acfg.preset)
        bench = pl.run_active_benchmark(acfg, phantom, cfg.threads)
        out.text("benchmark.csv", bench.csv())
        out.text("benchmark.json", bench.json())
        if cfg.get_bool("report", "robustness", True):
            rob = pl.run_robustness(acfg, phantom, cfg.threads)
            out.text("robustness.csv", rob.csv())
            out.text("robustness.json", rob.json())
    if cfg.get_bool("report", "passive", True):
        _write_passive(out, pl.run_passive_study(cfg.passive_config(), cfg.threads), "passive_")
    out.manifest("report", cfg, extra)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "factorize": cmd_factorize,
    "evaluate": cmd_evaluate,
    "robustness": cmd_robustness,
    "texture": cmd_texture,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override [run] seed")
    common.add_argument("--output", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = _Parser(prog="thermofactor", parents=[common],
                     description="Low-rank factorization toolkit for thermal image sequences.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=COMMANDS[name].__doc__ or name)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(f"a subcommand is required: {', '.join(SUBCOMMANDS)}")
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = Config.load(getattr(args, "config", None), seed=getattr(args, "seed", None),
                          output=getattr(args, "output", None), threads=getattr(args, "threads", None))
        return COMMANDS[args.command](cfg)
    except ThermofactorError as exc:
        where = f"{args.command}: " if "args" in locals() and getattr(args, "command", None) else ""
        print(f"error: {where}{exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Command-line driver: generate, train, evaluate, sweep, verify.

Configuration is a YAML mapping (schema in ``ExperimentConfig``) plus flag
overrides; flags win.  ``--set a.b=value`` reaches nested keys.  The output
directory defaults to ``$SVDCL_OUTPUT_ROOT/<system>_<model>_sigma<sigma>_seed<seed>``
(root ``runs`` when the variable is unset).

Files written into the output directory::

    train.bin / train.json       training dataset and its sidecar
    test.bin / test.json         test dataset along the control path
    model.ckpt                   encoder checkpoint
    loss.csv                     epoch,train_loss,val_loss,lr
    metrics.csv                  s,similarity,variance,s_pair
    mutual.csv                   mutual similarity with coordinate header row/column
    markers.csv                  name,s ground-truth markers
    detections.json              ranked detections plus ground truth
    features.csv                 optional, label followed by feature columns
    manifest_<command>.json      effective config, hashes, seeds (byte-stable)
    timing_<command>.json        wall time (kept out of the manifest on purpose)

Exit codes: 0 success, 2 invalid config or inputs, 3 numerical abort,
4 sweep finished with failed cells.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .augment import LinearSVDAugment, SpinAugment
from .dataset import Dataset
from .ising import (CONFIGS_PER_TEMPERATURE, DECORRELATION_SWEEPS,
                    EQUILIBRATION_SWEEPS, T_CRITICAL, generate_ising_dataset)
from .metrics import (CONVENTIONS, DetectConfig, FeatureBlock, compute_series,
                      detect_transitions)
from .network import (ArchError, ArchSpec, arch_param_count, classical_arch,
                      init_encoder, ising_arch, load_encoder, param_count,
                      save_encoder)
from .sde import (NOISE_MODES, SETUPS, SystemSetup, control_path,
                  generate_test_set, generate_training_set, get_model,
                  with_setup)
from .trainer import NumericalAbort, TrainConfig, encode, train

log = logging.getLogger("svdcl")

SYSTEMS = ("ising",) + tuple(sorted(SETUPS))
MODELS = {"svdcl": "svd", "mlpcl": "dense"}
ENV_ROOT = "SVDCL_OUTPUT_ROOT"

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    system: str = "ising"
    sigma: float = 0.0
    model: str = "svdcl"
    lattice: int = 10
    data_seed: int = 0
    test_seed: int = 1
    n_path_points: int = 41
    noise_mode: str = "diffusion"
    # same initial conditions at every test path point
    shared_ics: bool = True
    # overrides of the default architecture: widths, ranks, bias
    arch: dict = field(default_factory=dict)
    # TrainConfig fields; patience defaults to 300 (Ising) or 1000
    train: dict = field(default_factory=dict)
    detect: dict = field(default_factory=dict)
    convention: str = "paired"
    # Ising: equilibration, decorrelation, per_temperature
    ising: dict = field(default_factory=dict)
    # classical systems: SystemSetup field overrides
    setup: dict = field(default_factory=dict)
    sigmas: list = field(default_factory=list)
    models: list = field(default_factory=lambda: ["svdcl", "mlpcl"])
    workers: int = 1
    save_features: bool = False
    output_dir: str | None = None

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        need(self.system in SYSTEMS, "system", f"unknown system '{self.system}'; known: {list(SYSTEMS)}")
        need(_is_number(self.sigma) and self.sigma >= 0, "sigma", f"must be a number >= 0, got {self.sigma!r}")
        need(self.model in MODELS, "model", f"must be one of {list(MODELS)}, got {self.model!r}")
        need(_is_int(self.lattice) and self.lattice >= 2, "lattice", "must be an integer >= 2")
        for name in ("data_seed", "test_seed"):
            need(_is_int(getattr(self, name)) and getattr(self, name) >= 0, name, "must be an integer >= 0")
        need(_is_int(self.n_path_points) and self.n_path_points >= 3, "n_path_points", "must be an integer >= 3")
        need(self.noise_mode in NOISE_MODES, "noise_mode", f"must be one of {list(NOISE_MODES)}")
        need(isinstance(self.shared_ics, bool), "shared_ics", "must be true or false")
        need(self.convention in CONVENTIONS, "convention", f"must be one of {list(CONVENTIONS)}")
        need(_is_int(self.workers) and self.workers >= 1, "workers", "must be an integer >= 1")
        need(isinstance(self.save_features, bool), "save_features", "must be true or false")
        for name in ("arch", "train", "detect", "ising", "setup"):
            need(isinstance(getattr(self, name), dict), name, "must be a mapping")
        need(isinstance(self.sigmas, list), "sigmas", "must be a list")
        for s in self.sigmas:
            need(_is_number(s) and s >= 0, "sigmas", f"entries must be numbers >= 0, got {s!r}")
        need(isinstance(self.models, list) and self.models, "models", "must be a non-empty list")
        for m in self.models:
            need(m in MODELS, "models", f"unknown model {m!r}")
        self._check_section("arch", self.arch, {"widths", "ranks", "bias"})
        self._check_section("ising", self.ising, {"equilibration", "decorrelation", "per_temperature"})
        for k, v in self.ising.items():
            need(_is_int(v) and v >= 1, f"ising.{k}", "must be an integer >= 1")
        self._check_section("setup", self.setup, {f.name for f in fields(SystemSetup)} - {"model", "path"})
        if self.setup:
            need(self.system != "ising", "setup", "only applies to trajectory systems")
        self._check_section("train", self.train, {f.name for f in fields(TrainConfig)})
        self._check_section("detect", self.detect, {f.name for f in fields(DetectConfig)})
        for name, section, defaults in (("train", self.train, TrainConfig()),
                                        ("detect", self.detect, DetectConfig())):
            for key, value in section.items():
                default = getattr(defaults, key)
                if isinstance(default, bool):
                    need(isinstance(value, bool), f"{name}.{key}", "must be true or false")
                elif isinstance(default, int):
                    need(_is_int(value), f"{name}.{key}", f"must be an integer, got {value!r}")
                elif isinstance(default, float):
                    need(_is_number(value), f"{name}.{key}", f"must be a number, got {value!r}")
        # the derived objects carry their own checks; report them under the section name
        for name, build in (("setup", self.system_setup), ("train", self.train_config),
                            ("detect", self.detect_config), ("arch", self.arch_spec)):
            try:
                build()
            except ConfigError:
                raise
            except (ValueError, TypeError, ArchError) as exc:
                raise ConfigError(name, str(exc)) from None

    @staticmethod
    def _check_section(name, section, allowed):
        for key in section:
            if key not in allowed:
                raise ConfigError(f"{name}.{key}", "unknown field")

    # -- derived objects ----------------------------------------------------

    @property
    def is_ising(self) -> bool:
        return self.system == "ising"

    def system_setup(self) -> SystemSetup | None:
        if self.is_ising:
            return None
        changes = {k: (tuple(tuple(g) for g in v) if k in ("grid", "oversample") else v)
                   for k, v in self.setup.items()}
        return with_setup(self.system, **changes) if changes else SETUPS[self.system]

    def feature_dim(self) -> int:
        if self.is_ising:
            return self.lattice * self.lattice
        setup = self.system_setup()
        return setup.n_keep * get_model(setup.model).observed_dim

    def arch_spec(self) -> ArchSpec:
        kind = MODELS[self.model]
        dim = self.feature_dim()
        base = ising_arch(self.lattice, kind) if self.is_ising else classical_arch(dim, kind)
        widths = tuple(self.arch.get("widths", base.widths))
        ranks = self.arch.get("ranks", base.ranks)
        if kind == "svd" and ranks is not None and len(ranks) != len(widths):
            raise ConfigError("arch.ranks", f"needs {len(widths)} entries")
        if kind == "dense":
            ranks = None
        return ArchSpec(kind, dim, widths, None if ranks is None else tuple(ranks),
                        bool(self.arch.get("bias", base.bias)))

    def train_config(self) -> TrainConfig:
        opts = {"patience": 300 if self.is_ising else 1000}
        opts.update(self.train)
        return TrainConfig(**opts)

    def detect_config(self) -> DetectConfig:
        return DetectConfig(**self.detect)

    def ising_options(self) -> dict:
        opts = {"equilibration": EQUILIBRATION_SWEEPS, "decorrelation": DECORRELATION_SWEEPS,
                "per_temperature": CONFIGS_PER_TEMPERATURE}
        opts.update(self.ising)
        return opts

    def effective(self) -> dict:
        """Every setting after defaulting, as echoed into manifests."""
        out = asdict(self)
        out["arch"] = self.arch_spec().to_json()
        out["train"] = self.train_config().to_json()
        out["detect"] = asdict(self.detect_config())
        if self.is_ising:
            out["ising"] = self.ising_options()
            out["setup"] = {}
        else:
            out["ising"] = {}
            setup = asdict(self.system_setup())
            out["setup"] = json.loads(json.dumps(setup))
        return out

    def config_hash(self) -> str:
        eff = self.effective()
        for key in ("output_dir", "workers"):
            eff.pop(key)
        return hashlib.sha256(_canonical(eff).encode()).hexdigest()

    def out_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        root = Path(os.environ.get(ENV_ROOT, "runs"))
        seed = self.train_config().seed
        return root / f"{self.system}_{self.model}_sigma{self.sigma:g}_seed{seed}"

    def replace(self, **changes) -> "ExperimentConfig":
        data = copy.deepcopy(asdict(self))
        data.update(changes)
        return ExperimentConfig.from_dict(data)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(cfg: ExperimentConfig, out: Path, command: str, files: list[Path],
                    wall: float, **extra) -> dict:
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.effective(),
        "config_hash": cfg.config_hash(),
        "seeds": {"data": cfg.data_seed, "test": cfg.test_seed, "train": cfg.train_config().seed},
        "files": {p.name: _sha256(p) for p in files},
    }
    manifest["config"].pop("output_dir")
    manifest.update(extra)
    _write_json(out / f"manifest_{command}.json", manifest)
    _write_json(out / f"timing_{command}.json", {"wall_time_s": round(wall, 3)})
    return manifest


def ground_truth(cfg: ExperimentConfig) -> list[dict]:
    if cfg.is_ising:
        return [{"name": "T_c", "s": T_CRITICAL}]
    path = control_path(cfg.system_setup().path)
    return [{"name": f"s{i + 1}", "s": float(c)} for i, c in enumerate(path.critical_points)]


# -- commands ------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig) -> dict:
    """Write the training and test datasets; byte-stable for a fixed config."""
    t0 = time.perf_counter()
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    if cfg.is_ising:
        opts = cfg.ising_options()
        tr = generate_ising_dataset(cfg.lattice, cfg.sigma, cfg.data_seed, **opts)
        te = generate_ising_dataset(cfg.lattice, cfg.sigma, cfg.test_seed, **opts)
    else:
        setup = cfg.system_setup()
        tr = generate_training_set(cfg.system, cfg.sigma, cfg.data_seed,
                                   noise_mode=cfg.noise_mode, setup=setup)
        te = generate_test_set(cfg.system, cfg.sigma, cfg.n_path_points, cfg.test_seed,
                               noise_mode=cfg.noise_mode, shared_ics=cfg.shared_ics, setup=setup)
    files = [*tr.save(out / "train.bin"), *te.save(out / "test.bin")]
    _write_manifest(cfg, out, "generate", files, time.perf_counter() - t0,
                    counts={"train": len(tr), "test": len(te)})
    return {"train": files[0], "test": files[2]}


def _load_dataset(cfg: ExperimentConfig, name: str) -> Dataset:
    path = cfg.out_dir() / f"{name}.bin"
    if not path.exists():
        raise ConfigError("output_dir", f"{path} not found; run 'generate' first")
    ds = Dataset.load(path)
    seed = cfg.data_seed if name == "train" else cfg.test_seed
    meta = ds.config
    if ds.system != cfg.system or ds.sigma != float(cfg.sigma) or meta.get("seed") != seed:
        raise ConfigError("output_dir", f"{path} was generated with a different system, sigma or seed")
    if len(ds) == 0:
        raise ConfigError("output_dir", f"{path} is empty")
    return ds


def _augmenter(cfg: ExperimentConfig):
    if cfg.is_ising:
        return SpinAugment(cfg.lattice)
    return LinearSVDAugment(get_model(cfg.system_setup().model).observed_dim)


def cmd_train(cfg: ExperimentConfig) -> dict:
    """Train from ``train.bin``; writes checkpoint, loss history and manifest."""
    t0 = time.perf_counter()
    out = cfg.out_dir()
    ds = _load_dataset(cfg, "train")
    arch = cfg.arch_spec()
    if ds.feature_dim != arch.input_dim:
        raise ConfigError("arch", f"dataset has {ds.feature_dim} features, encoder expects {arch.input_dim}")
    tcfg = cfg.train_config()
    try:
        result = train(init_encoder(arch, tcfg.seed), ds, _augmenter(cfg), tcfg)
    except NumericalAbort as exc:
        _write_json(out / "abort_train.json", exc.snapshot)
        raise
    ckpt = out / "model.ckpt"
    save_encoder(ckpt, result.encoder)
    loss = out / "loss.csv"
    loss.write_text(result.history_csv())
    count = param_count(result.encoder)
    _write_manifest(cfg, out, "train", [ckpt, loss], time.perf_counter() - t0,
                    param_count=count, best_epoch=result.best_epoch,
                    stopped_epoch=result.stopped_epoch, steps=result.steps,
                    inputs={"train.bin": _sha256(out / "train.bin")})
    return {"checkpoint": ckpt, "param_count": count, "best_epoch": result.best_epoch}


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_evaluate(cfg: ExperimentConfig, checkpoint: str | Path | None = None) -> dict:
    """Metric curves, mutual-similarity grid and detections for the test set."""
    t0 = time.perf_counter()
    out = cfg.out_dir()
    ckpt = Path(checkpoint) if checkpoint else out / "model.ckpt"
    if not ckpt.exists():
        raise ConfigError("checkpoint", f"{ckpt} not found; run 'train' first")
    enc = load_encoder(ckpt)
    ds = _load_dataset(cfg, "test")
    if enc.arch != cfg.arch_spec():
        raise ConfigError("checkpoint", f"architecture {enc.arch} does not match config {cfg.arch_spec()}")
    if ds.feature_dim != enc.arch.input_dim:
        raise ConfigError("checkpoint", f"encoder takes {enc.arch.input_dim} features, test set has {ds.feature_dim}")
    feats = encode(enc, ds.features)
    if not np.all(np.isfinite(feats)):
        raise NumericalAbort("non-finite features", {"checkpoint": str(ckpt)})
    series = compute_series(FeatureBlock.from_dataset_features(ds.labels, feats), cfg.convention)
    found = detect_transitions(series, cfg.detect_config())
    truth = ground_truth(cfg)

    metrics = out / "metrics.csv"
    rows = ["s,similarity,variance,s_pair"]
    pairs = series.pair_coords
    for i, s in enumerate(series.coords):
        sim = series.similarity[i] if i < pairs.size else math.nan
        sp = pairs[i] if i < pairs.size else math.nan
        rows.append(",".join(_fmt(v) for v in (s, sim, series.variance[i], sp)))
    metrics.write_text("\n".join(rows) + "\n")

    mutual = out / "mutual.csv"
    lines = ["s," + ",".join(_fmt(c) for c in series.coords)]
    for c, row in zip(series.coords, series.mutual):
        lines.append(_fmt(c) + "," + ",".join(_fmt(v) for v in row))
    mutual.write_text("\n".join(lines) + "\n")

    markers = out / "markers.csv"
    markers.write_text("name,s\n" + "".join(f"{m['name']},{_fmt(m['s'])}\n" for m in truth))

    top = found[0].s if found else None
    error = None
    if top is not None and truth:
        error = min(abs(top - m["s"]) for m in truth)
    report = {
        "convention": cfg.convention,
        "detections": [d.to_json() for d in found],
        "ground_truth": truth,
        "top": top,
        "top_error": error,
    }
    detections = out / "detections.json"
    _write_json(detections, report)
    files = [metrics, mutual, markers, detections]
    if cfg.save_features:
        fpath = out / "features.csv"
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label"] + [f"z{k}" for k in range(feats.shape[1])])
        for lab, row in zip(ds.labels, feats):
            writer.writerow([_fmt(lab)] + [_fmt(v) for v in row])
        fpath.write_text(buf.getvalue())
        files.append(fpath)
    _write_manifest(cfg, out, "evaluate", files, time.perf_counter() - t0,
                    inputs={"test.bin": _sha256(out / "test.bin"), ckpt.name: _sha256(ckpt)})
    return {"detections": found, "series": series, "ground_truth": truth, "top_error": error}


SUMMARY_FIELDS = ("model", "sigma", "status", "detected", "top", "ground_truth", "error",
                  "param_count", "wall_time_s", "message")


def _run_cell(data: dict) -> dict:
    cfg = ExperimentConfig.from_dict(data)
    row = {"model": cfg.model, "sigma": cfg.sigma, "status": "ok", "detected": "", "top": "",
           "ground_truth": "", "error": "", "param_count": "", "wall_time_s": "", "message": ""}
    t0 = time.perf_counter()
    try:
        cmd_generate(cfg)
        row["param_count"] = cmd_train(cfg)["param_count"]
        res = cmd_evaluate(cfg)
        row["detected"] = ";".join(_fmt(d.s) for d in res["detections"])
        row["top"] = _fmt(res["detections"][0].s) if res["detections"] else ""
        row["ground_truth"] = ";".join(_fmt(m["s"]) for m in res["ground_truth"])
        row["error"] = "" if res["top_error"] is None else _fmt(res["top_error"])
    except Exception as exc:  # isolation: one bad cell must not stop the sweep
        row["status"] = "failed"
        row["message"] = f"{type(exc).__name__}: {exc}"[:500]
        log.error("cell %s sigma=%s failed: %s", cfg.model, cfg.sigma, exc)
    row["wall_time_s"] = f"{time.perf_counter() - t0:.3f}"
    return row


def cmd_sweep(cfg: ExperimentConfig) -> tuple[list[dict], int]:
    """Run every (model, sigma) cell; each cell gets its own subdirectory."""
    if not cfg.sigmas:
        raise ConfigError("sigmas", "must list at least one noise level")
    root = cfg.out_dir()
    root.mkdir(parents=True, exist_ok=True)
    cells = []
    for model in cfg.models:
        for sigma in cfg.sigmas:
            cell = asdict(cfg)
            cell.update(model=model, sigma=sigma, sigmas=[], workers=1,
                        output_dir=str(root / f"{model}_sigma{sigma:g}"))
            ExperimentConfig.from_dict(cell)
            cells.append(cell)
    if cfg.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(cells))) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    (root / "summary.csv").write_text(buf.getvalue())
    failed = sum(r["status"] != "ok" for r in rows)
    return rows, EXIT_PARTIAL if failed else EXIT_OK


# -- verify ----------------------------------------------------------------------------


def run_verify(stream=None) -> bool:
    """Quick invariant checks; prints one PASS/FAIL line each."""
    stream = stream or sys.stdout
    from .linalg import gaussian_matrix, orthogonality_defect, project_semi_orthogonal, svd
    from .trainer import AdamState, loss_and_grads, three_stage_step

    checks = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # report, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=stream)

    def param_counts():
        got = [arch_param_count(ising_arch(l, k)) for l in (10, 20) for k in ("dense", "svd")]
        return got == [517, 333, 2017, 1233], str(got)

    def svd_recon():
        worst = 0.0
        for i in range(20):
            a = gaussian_matrix(3 + i, 2 + (7 * i) % 17, seed=i)
            worst = max(worst, np.linalg.norm(svd(a).reconstruct() - a) / np.linalg.norm(a))
        return worst <= 1e-8, f"max relative error {worst:.2e}"

    def projection():
        worst = max(orthogonality_defect(project_semi_orthogonal(gaussian_matrix(9, 4, seed=i)))
                    for i in range(20))
        return worst <= 1e-10, f"max defect {worst:.2e}"

    def step_invariant():
        enc = init_encoder(ArchSpec("svd", 12, (8, 3), (5, 2), True), 0)
        state = AdamState.zeros_like(enc)
        rng = np.random.default_rng(0)
        worst, vmin = 0.0, math.inf
        for _ in range(20):
            x = rng.standard_normal((16, 12))
            _, grads = loss_and_grads(enc, x, x + 0.1 * rng.standard_normal(x.shape), 0.5)
            three_stage_step(enc, grads, state, TrainConfig(learning_rate=0.05))
            for layer in enc.layers:
                worst = max(worst, orthogonality_defect(layer.s), orthogonality_defect(layer.d))
                vmin = min(vmin, float(layer.v.min()))
        return worst <= 1e-10 and vmin >= 0, f"max defect {worst:.2e}, min v {vmin:.3g}"

    def gradients():
        enc = init_encoder(ArchSpec("svd", 5, (4, 3), (3, 2), True), 1)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 5))
        xa = x + 0.1 * rng.standard_normal(x.shape)
        _, grads = loss_and_grads(enc, x, xa, 0.5)
        worst = 0.0
        for layer, g in zip(enc.layers, grads):
            for k, p in layer.params().items():
                num = np.zeros_like(p)
                for idx in np.ndindex(p.shape):
                    old = p[idx]
                    p[idx] = old + 1e-5
                    fp = loss_and_grads(enc, x, xa, 0.5)[0]
                    p[idx] = old - 1e-5
                    fm = loss_and_grads(enc, x, xa, 0.5)[0]
                    p[idx] = old
                    num[idx] = (fp - fm) / 2e-5
                den = max(np.linalg.norm(num), np.linalg.norm(g[k]), 1e-12)
                worst = max(worst, np.linalg.norm(num - g[k]) / den)
        return worst <= 1e-4, f"max relative error {worst:.2e}"

    check("parameter counts", param_counts)
    check("svd reconstruction", svd_recon)
    check("semi-orthogonal projection", projection)
    check("three-stage step invariant", step_invariant)
    check("gradient finite differences", gradients)
    return all(checks)


# -- CLI -------------------------------------------------------------------------------


def _parse_value(text: str):
    value = yaml.safe_load(text)
    if isinstance(value, str):
        # YAML 1.1 reads "1e-3" as a string
        try:
            return float(value)
        except ValueError:
            pass
    return value


def _set_dotted(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot set a key inside a non-mapping")
    node[keys[-1]] = value


def load_config(path: str | None, overrides: dict | None = None,
                sets: list[str] | None = None) -> ExperimentConfig:
    data: dict = {}
    if path:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"invalid YAML in {path}: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be a mapping")
        data.update(loaded or {})
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(item, "expected key=value")
        key, value = item.split("=", 1)
        _set_dotted(data, key.strip(), _parse_value(value))
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, key, value)
    return ExperimentConfig.from_dict(data)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svdcl", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "evaluate", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--system")
        p.add_argument("--sigma", type=float)
        p.add_argument("--model", choices=sorted(MODELS))
        p.add_argument("--seed", type=int, help="training / initialization seed")
        p.add_argument("--data-seed", type=int)
        p.add_argument("--test-seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key, dotted for nested ones")
        if name == "evaluate":
            p.add_argument("--checkpoint")
            p.add_argument("--features", action="store_true", help="also write features.csv")
        if name == "sweep":
            p.add_argument("--sigmas", help="comma-separated noise levels")
            p.add_argument("--workers", type=int)
    sub.add_parser("verify")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify":
        return EXIT_OK if run_verify() else 1
    try:
        overrides = {
            "system": args.system, "sigma": args.sigma, "model": args.model,
            "train.seed": args.seed, "data_seed": args.data_seed, "test_seed": args.test_seed,
            "train.epochs": args.epochs, "output_dir": args.out,
        }
        if args.command == "evaluate" and args.features:
            overrides["save_features"] = True
        if args.command == "sweep":
            if args.sigmas is not None:
                try:
                    overrides["sigmas"] = [float(s) for s in args.sigmas.split(",") if s.strip()]
                except ValueError:
                    raise ConfigError("sigmas", f"not a list of numbers: {args.sigmas!r}") from None
            overrides["workers"] = args.workers
        cfg = load_config(args.config, overrides, args.set)
        if args.command == "generate":
            res = cmd_generate(cfg)
            print(f"wrote {res['train']} and {res['test']}")
        elif args.command == "train":
            res = cmd_train(cfg)
            print(f"wrote {res['checkpoint']} (param_count {res['param_count']})")
        elif args.command == "evaluate":
            res = cmd_evaluate(cfg, args.checkpoint)
            top = res["detections"][0].s if res["detections"] else None
            print(f"{len(res['detections'])} detections, top at {top}")
        else:
            rows, code = cmd_sweep(cfg)
            for r in rows:
                print(f"{r['model']} sigma={r['sigma']}: {r['status']} top={r['top']} {r['message']}")
            return code
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalAbort as exc:
        print(f"error: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK

"""End-to-end experiment pipeline.

Stages run in order: train the CVAE, generate Type I and Type II samples,
train the (n+1)-class detector, score held-out inliers and every OOD set,
compute metrics. Each stage writes its artifacts into the run directory
together with a hash of the configuration it depends on, and a later run
with the same inputs reuses them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, cvae, data, detector, metrics
from . import nn
from .batch import OodBatch
from .nn import ContractError, Optimizer
from .offmanifold import generate_type1
from .onmanifold import fit_class_stats, generate_type2, mahalanobis

log = logging.getLogger(__name__)

# stage order; also the index used to derive each stage's RNG stream
STAGES = ("data", "cvae", "gen_ood", "detector", "evaluate", "baselines", "plot")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    name: str = "toy3d"
    in_dataset: str = "toy3d"  # "toy3d" or "idx"
    in_images: str = ""
    in_labels: str = ""
    in_classes: str = ""  # e.g. "0-4"; empty keeps every class
    toy_n_per_class: int = 500
    train_fraction: float = 0.8
    ood_roster: str = "off_octant_sphere"
    ood_count: int = 0  # 0 = as many as held-out inliers
    validation_ood: str = ""
    latent_dim: int = 2
    cvae_hidden: str = "32,32"
    cvae_recon: str = "mse"
    beta_kl: float = 0.01
    cvae_optimizer: str = "adam"
    cvae_lr: float = 1e-3
    cvae_epochs: int = 300
    until_converged: bool = False
    batch_size: int = 64
    beta_min: float = 0.1
    beta_max: float = 1.0
    type1_per_sample: int = 1
    type2_per_class: int = 0  # 0 = match the Type I count (1:1 mix)
    clamp_type1: bool = False
    pooled_latent: bool = False
    ood_class_weight: float = 0.1
    clf_hidden: str = "64,64"
    clf_optimizer: str = "adam"
    clf_lr: float = 1e-3
    clf_epochs: int = 100
    odin_temperature: float = 1000.0
    odin_eps: float = 0.0014
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        if self.in_dataset not in ("toy3d", "idx"):
            raise ContractError(f"unknown in_dataset {self.in_dataset!r}")
        if self.beta_min > self.beta_max:
            raise ContractError("beta_min must not exceed beta_max")

    # -- parsing -------------------------------------------------------

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def with_overrides(self, pairs):
        return self.replace(**parse_pairs(pairs))

    def to_text(self):
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    def hash(self):
        """Digest of everything except the output location."""
        body = "".join(
            f"{f.name}={getattr(self, f.name)!r}\n" for f in fields(self) if f.name != "out"
        )
        return hashlib.sha256(body.encode()).hexdigest()[:12]

    def stage_hash(self, stage):
        keys = _STAGE_KEYS[: STAGES.index(stage) + 1]
        body = "".join(f"{k}={getattr(self, k)!r}\n" for group in keys for k in group)
        return hashlib.sha256(body.encode()).hexdigest()

    def run_dir(self):
        return Path(self.out) / f"{self.name}-{self.hash()}-s{self.seed}"

    def validate(self):
        if self.in_dataset == "idx":
            for p in (self.in_images, self.in_labels):
                if not p or not Path(p).exists():
                    raise ContractError(f"missing input file {p!r}")
        for entry in roster(self):
            path = entry[1]
            if path not in data.SYNTHETIC and not Path(path).exists():
                raise ContractError(f"missing OOD file {path!r}")


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}

# config keys each stage depends on (cumulative along STAGES)
_STAGE_KEYS = (
    ("in_dataset", "in_images", "in_labels", "in_classes", "toy_n_per_class", "train_fraction", "seed"),
    ("latent_dim", "cvae_hidden", "cvae_recon", "beta_kl", "cvae_optimizer", "cvae_lr", "cvae_epochs",
     "until_converged", "batch_size"),
    ("beta_min", "beta_max", "type1_per_sample", "type2_per_class", "clamp_type1", "pooled_latent"),
    ("ood_class_weight", "clf_hidden", "clf_optimizer", "clf_lr", "clf_epochs"),
    ("ood_roster", "ood_count", "validation_ood"),
    ("odin_temperature", "odin_eps"),
    (),
)


def _coerce(key, value):
    if key not in _TYPES:
        raise ContractError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if kind == "bool":
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return str(value).strip()


def parse_pairs(pairs):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ContractError(f"expected key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = _coerce(k.strip(), v)
    return out


def load_config(path=None, overrides=(), base=None) -> ExperimentConfig:
    """Read a ``key=value`` file (``#`` starts a comment) and apply overrides."""
    cfg = base or ExperimentConfig()
    pairs = []
    if path:
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                pairs.append(line)
    return cfg.with_overrides(pairs).with_overrides(overrides)


def preset(name, **kw) -> ExperimentConfig:
    """Desk-scale defaults. ``toy3d`` is the sphere-octant toy; ``mnist`` a dense-net MNIST setup."""
    if name == "toy3d":
        return ExperimentConfig(**kw)
    if name == "mnist":
        base = dict(
            name="mnist",
            in_dataset="idx",
            latent_dim=8,
            cvae_hidden="256,128",
            cvae_recon="bce",
            beta_kl=1.0,
            cvae_epochs=30,
            type1_per_sample=2,
            clf_hidden="256,128",
            clf_epochs=30,
            ood_roster="gaussian_noise,uniform_noise,sphere_ood",
        )
        base.update(kw)
        return ExperimentConfig(**base)
    raise ContractError(f"unknown preset {name!r}")


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _classes(text):
    keep = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            keep.extend(range(int(lo), int(hi) + 1))
        elif part:
            keep.append(int(part))
    return keep


def roster(cfg):
    """``(name, source)`` pairs. Entries are generator names or ``name=path`` IDX references."""
    out = []
    for item in cfg.ood_roster.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, src = item.partition("=")
        out.append((name, src or name))
    return out


def stage_rng(cfg, stage):
    return np.random.default_rng([cfg.seed, STAGES.index(stage)])


# -- artifacts -------------------------------------------------------------


class RunDir:
    """The run directory plus stage-completion bookkeeping."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.path = cfg.run_dir()
        self.path.mkdir(parents=True, exist_ok=True)

    def __truediv__(self, name):
        return self.path / name

    def done(self, stage, *artifacts):
        """True when the stage marker matches the current config and its artifacts exist."""
        marker = self.path / f"{stage}.stage"
        if not marker.exists() or marker.read_text().strip() != self.cfg.stage_hash(stage):
            return False
        return all((self.path / a).exists() for a in artifacts)

    def mark(self, stage):
        (self.path / f"{stage}.stage").write_text(self.cfg.stage_hash(stage) + "\n")

    def write_manifest(self):
        (self.path / "config.txt").write_text(self.cfg.to_text())
        text = self.cfg.to_text()
        text += f"config_hash={self.cfg.hash()}\n"
        text += f"oodgen_version={__version__}\nnumpy_version={np.__version__}\n"
        text += f"python_version={platform.python_version()}\n"
        (self.path / "manifest.txt").write_text(text)


def _run_stage(stage, fn):
    try:
        return fn()
    except (ContractError, FloatingPointError, OSError, ValueError) as exc:
        raise StageError(stage, exc) from exc


# -- stages ---------------------------------------------------------------


def load_inliers(cfg):
    """``(train, held_out)`` in-distribution splits."""
    rng = stage_rng(cfg, "data")
    if cfg.in_dataset == "toy3d":
        full = data.gen_toy3d(cfg.toy_n_per_class, rng)
    else:
        full = data.load_idx(cfg.in_images, cfg.in_labels, name=cfg.name)
        if cfg.in_classes:
            full = data.class_filter(full, _classes(cfg.in_classes), relabel=True)
    return data.split(full, cfg.train_fraction, rng)


def stage_cvae(cfg, run: RunDir, train):
    if run.done("cvae", "cvae/encoder.bin", "cvae/decoder.bin", "cvae/cvae.meta"):
        return cvae.load(run / "cvae"), None
    rng = stage_rng(cfg, "cvae")
    n_classes = int(train.labels.max()) + 1
    model = cvae.CvaeModel.build(
        train.input_dim, n_classes, cfg.latent_dim, _ints(cfg.cvae_hidden), cfg.cvae_recon, cfg.beta_kl, rng
    )
    history = cvae.train_cvae(
        model,
        train,
        cfg.cvae_epochs,
        cfg.batch_size,
        Optimizer(cfg.cvae_optimizer, cfg.cvae_lr),
        rng,
        until_converged=cfg.until_converged,
    )
    cvae.save(model, run / "cvae")
    with open(run / "cvae" / "training_log.csv", "w") as fh:
        fh.write("epoch,loss,reconstruction,kl\n")
        for i, row in enumerate(zip(history.epoch_loss, history.epoch_recon, history.epoch_kl)):
            fh.write(f"{i},{row[0]!r},{row[1]!r},{row[2]!r}\n")
    run.mark("cvae")
    return model, history


def stage_gen_ood(cfg, run: RunDir, model, train):
    if run.done("gen_ood", "ood/type1.idx", "ood/type1.csv", "ood/type2.idx", "ood/type2.csv", "ood/type2_latents.npy"):
        t2 = OodBatch.load(run / "ood" / "type2")
        t2.latents = np.load(run / "ood" / "type2_latents.npy")
        return OodBatch.load(run / "ood" / "type1"), t2
    rng = stage_rng(cfg, "gen_ood")
    t1 = generate_type1(
        model,
        train,
        cfg.beta_min,
        cfg.beta_max,
        cfg.type1_per_sample,
        int(rng.integers(2**63)),
        clamp=cfg.clamp_type1,
    )
    stats = fit_class_stats(model, train, pooled=cfg.pooled_latent)
    per_class = cfg.type2_per_class or max(1, len(t1) // model.n_classes)
    t2 = generate_type2(model, stats, per_class, int(rng.integers(2**63)))
    t1.save(run / "ood" / "type1")
    t2.save(run / "ood" / "type2")
    np.save(run / "ood" / "type2_latents.npy", t2.latents)
    with open(run / "ood" / "latent_stats.csv", "w") as fh:
        fh.write("label,radius_r,n_codes,eps_reg\n")
        for c, s in sorted(stats.items()):
            fh.write(f"{c},{s.radius_r!r},{s.n_codes},{s.eps_reg!r}\n")
    run.mark("gen_ood")
    return t1, t2


def stage_detector(cfg, run: RunDir, train, held_out, ood):
    n = int(train.labels.max()) + 1
    if run.done("detector", "detector.bin"):
        model = detector.DetectorModel(nn.load(run / "detector.bin"), n, cfg.ood_class_weight)
        model.heldout_accuracy = detector.accuracy(model, held_out)
        return model
    rng = stage_rng(cfg, "detector")
    net = detector.build_classifier(train.input_dim, n + 1, _ints(cfg.clf_hidden), rng)
    model = detector.train_detector(
        net,
        train,
        ood,
        cfg.ood_class_weight,
        Optimizer(cfg.clf_optimizer, cfg.clf_lr),
        cfg.clf_epochs,
        rng,
        cfg.batch_size,
        held_out=held_out,
    )
    nn.save(model.net, run / "detector.bin")
    run.mark("detector")
    return model


def ood_sets(cfg, train, held_out):
    """Materialise every roster entry with its own RNG stream."""
    count = cfg.ood_count or len(held_out)
    base = stage_rng(cfg, "evaluate")
    seeds = base.integers(2**63, size=len(roster(cfg)))
    out = {}
    for (name, src), s in zip(roster(cfg), seeds):
        ds = data.load_any(src, np.random.default_rng(s), reference=train, n=count)
        if ds.input_dim != train.input_dim:
            raise ContractError(f"OOD set {name} has width {ds.input_dim}, inliers {train.input_dim}")
        out[name] = ds
    return out


def _score_all(run, model, rules, held_out, oods, cfg, rule_kwargs=None):
    rule_kwargs = rule_kwargs or {}
    reports = []
    (run / "scores").mkdir(exist_ok=True)
    for rule in rules:
        kw = rule_kwargs.get(rule, {})
        s_in = detector.score(model, held_out.samples, rule, **kw)
        s_in.save(run / "scores" / f"in__{rule}.csv")
        for name, ds in oods.items():
            s_out = detector.score(model, ds.samples, rule, **kw)
            s_out.save(run / "scores" / f"{name}__{rule}.csv")
            reports.append(
                metrics.evaluate(s_in.scores, s_out.scores, rule, cfg.name, name, cfg.seed)
            )
    return reports


def best_rule(reports, validation_ood=""):
    """Rule with the higher AUROC, on the validation OOD set if one is named, else on average."""
    pool = [r for r in reports if not validation_ood or r.ood_dataset == validation_ood] or reports
    by_rule = {}
    for r in pool:
        by_rule.setdefault(r.rule, []).append(r.auroc)
    return max(sorted(by_rule), key=lambda k: np.mean(by_rule[k]))


def _write_reports(run, stem, reports, extra):
    (run / f"{stem}.csv").write_text(metrics.reports_to_csv(reports))
    doc = json.loads(metrics.reports_to_json(reports))
    doc.update(extra)
    (run / f"{stem}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (run / f"{stem}_table.txt").write_text(metrics.format_table(reports) + "\n")


@dataclass
class PipelineResult:
    run_dir: Path
    reports: list
    accuracy: float
    best_rule: str
    train: object = None
    held_out: object = None
    model: object = None
    detector: object = None
    type1: object = None
    type2: object = None
    oods: dict = None
    seconds: float = 0.0

    def report(self, ood, rule):
        return next(r for r in self.reports if r.ood_dataset == ood and r.rule == rule)


def run_pipeline(cfg: ExperimentConfig) -> PipelineResult:
    t0 = time.perf_counter()
    cfg.validate()
    run = RunDir(cfg)
    run.write_manifest()
    train, held_out = _run_stage("data", lambda: load_inliers(cfg))
    model, _ = _run_stage("cvae", lambda: stage_cvae(cfg, run, train))
    t1, t2 = _run_stage("gen_ood", lambda: stage_gen_ood(cfg, run, model, train))
    ood = OodBatch.merge(t1, t2)
    det = _run_stage("detector", lambda: stage_detector(cfg, run, train, held_out, ood))

    def evaluate():
        oods = ood_sets(cfg, train, held_out)
        reports = _score_all(run, det, ("ood_class_prob", "neg_max_inlier_prob"), held_out, oods, cfg)
        best = best_rule(reports, cfg.validation_ood)
        extra = {
            "accuracy": {"nplus1_heldout": det.heldout_accuracy},
            "best_rule": best,
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
        }
        _write_reports(run, "metrics", reports, extra)
        run.mark("evaluate")
        return oods, reports, best

    oods, reports, best = _run_stage("evaluate", evaluate)
    return PipelineResult(
        run.path, reports, det.heldout_accuracy, best, train, held_out, model, det, t1, t2, oods,
        time.perf_counter() - t0,
    )


def run_baselines(cfg: ExperimentConfig):
    """Max-softmax and ODIN on a plain n-way classifier, same splits and OOD sets."""
    cfg.validate()
    run = RunDir(cfg)
    train, held_out = _run_stage("data", lambda: load_inliers(cfg))
    n = int(train.labels.max()) + 1

    def fit():
        if run.done("baselines", "plain.bin"):
            plain = detector.DetectorModel(nn.load(run / "plain.bin"), n, 0.0, detector.PLAIN)
            plain.heldout_accuracy = detector.accuracy(plain, held_out)
            return plain
        # same initialisation stream as the detector so the two differ only in training data
        rng = stage_rng(cfg, "detector")
        net = detector.build_classifier(train.input_dim, n, _ints(cfg.clf_hidden), rng)
        plain = detector.train_plain(
            net, train, Optimizer(cfg.clf_optimizer, cfg.clf_lr), cfg.clf_epochs, rng, cfg.batch_size, held_out
        )
        nn.save(plain.net, run / "plain.bin")
        run.mark("baselines")
        return plain

    plain = _run_stage("baselines", fit)

    def evaluate():
        oods = ood_sets(cfg, train, held_out)
        odin = {"neg_odin": {"temperature": cfg.odin_temperature, "perturb_eps": cfg.odin_eps}}
        reports = _score_all(run, plain, ("neg_max_softmax", "neg_odin"), held_out, oods, cfg, odin)
        _write_reports(
            run,
            "baselines",
            reports,
            {"accuracy": {"plain_heldout": plain.heldout_accuracy}, "config_hash": cfg.hash(), "seed": cfg.seed},
        )
        return reports

    reports = _run_stage("baselines", evaluate)
    return PipelineResult(run.path, reports, plain.heldout_accuracy, "", train, held_out, detector=plain)


# -- toy plot data ---------------------------------------------------------

_PLANE = np.array([[1.0, -1.0, 0.0], [1.0, 1.0, -2.0]])
PROJECTION = _PLANE / np.linalg.norm(_PLANE, axis=1, keepdims=True)  # orthonormal, both _|_ (1,1,1)


def project_to_plane(points):
    """Coordinates in the plane orthogonal to (1, 1, 1)/sqrt(3)."""
    return np.asarray(points) @ PROJECTION.T


def emit_toy_plotdata(run_dir, train=None):
    """Write ``toy_points.csv`` (x,y,z,tag) and ``toy_projection.csv`` (u,v,tag) for plotting."""
    run_dir = Path(run_dir)
    t1p, t2p = run_dir / "ood" / "type1", run_dir / "ood" / "type2"
    if not t1p.with_suffix(".idx").exists() or not t2p.with_suffix(".idx").exists():
        raise ContractError(f"{run_dir} has no generated OOD batches")
    if train is None:
        cfg = load_config(run_dir / "config.txt")
        train, _ = load_inliers(cfg)
    if train.input_dim != 3:
        raise ContractError("plot data is only defined for the 3-D toy")
    t1, t2 = OodBatch.load(t1p), OodBatch.load(t2p)
    parts = [
        (train.samples[train.labels == 0], "class0"),
        (train.samples[train.labels == 1], "class1"),
        (t1.samples, "type1"),
        (t2.samples, "type2"),
    ]
    with open(run_dir / "toy_points.csv", "w") as fh:
        fh.write("x,y,z,tag\n")
        for pts, tag in parts:
            for p in pts:
                fh.write(f"{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},{tag}\n")
    with open(run_dir / "toy_projection.csv", "w") as fh:
        fh.write("u,v,tag,source_class\n")
        for pts, tag in parts[:2]:
            for p in project_to_plane(pts):
                fh.write(f"{float(p[0])!r},{float(p[1])!r},{tag},{tag[-1]}\n")
        for pts, c in ((t2.samples, t2.source_class),):
            for p, k in zip(project_to_plane(pts), c):
                fh.write(f"{float(p[0])!r},{float(p[1])!r},type2,{k}\n")
    return run_dir / "toy_points.csv", run_dir / "toy_projection.csv"


def type2_latent_distances(model, stats, batch):
    return np.array([mahalanobis(z, stats[c]) for z, c in zip(batch.latents, batch.source_class)])

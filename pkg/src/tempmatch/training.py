"""Fine-tuning, evaluation and the experiment drivers used by the CLI."""

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autograd as ag
from .backbone import (
    BackboneConfig,
    BackboneParams,
    FeatureMap,
    embed_patches,
    patchify,
    trainable_parameters,
)
from .errors import ConfigError, DomainError, NumericalError
from .evaluation import CorrespondenceSet, evaluate_predictions
from .localizer import LocalizerConfig, kernel_soft_argmax
from .matcher import build_correlation, feature_to_image_coords, image_to_feature_coords
from .objective import cross_entropy, make_gt_distribution, temperature_regularizer, total_loss
from .optim import Adam, clip_grad_norm
from .serialization import load_weights, save_weights
from .temperature import (
    SingleParam,
    TempModuleParams,
    TemperatureMode,
    effective_temperature,
)

log = logging.getLogger(__name__)

BETA_EVAL_SWEEP = (1.0, 0.1, 0.05, 0.02)


class TrainingDiverged(RuntimeError):
    """Loss or gradients became non-finite."""

    def __init__(self, step, beta_trn, cause):
        super().__init__(f"training diverged at step {step} (beta_trn={beta_trn:.4g}): {cause}")
        self.step = step
        self.beta_trn = beta_trn


@dataclass
class ExperimentConfig:
    mode: str = "learned_mlp"
    beta: float = None
    normalization: str = "l2"
    finetune_scope: str = "full"
    lr_backbone: float = 3e-3
    lr_temp: float = 1e-4
    lr_single: float = 0.005
    epochs: int = 60
    batch_size: int = 8
    n_s: int = 3
    n_k: int = 5
    sigma: float = 7.0
    beta_thres: float = 0.1
    gamma: float = 0.2
    beta_eval: list = None
    alphas: list = field(default_factory=lambda: [0.05, 0.1, 0.15])
    select_alpha: float = 0.1
    seed: int = 0
    pretrain_epochs: int = 0
    pretrain_beta: float = 0.1
    grad_clip: float = 10.0
    ratio: int = 8
    embed_dim: int = 32
    widths: list = field(default_factory=lambda: [64, 64, 64])

    def __post_init__(self):
        if isinstance(self.beta_eval, (int, float)):
            self.beta_eval = [float(self.beta_eval)]
        self.validate()

    def validate(self):
        self.temperature_mode()
        if self.normalization not in ("l2", "none"):
            raise ConfigError(f"normalization must be 'l2' or 'none', got {self.normalization!r}")
        if self.finetune_scope not in ("last_block", "full"):
            raise ConfigError(f"finetune_scope must be 'last_block' or 'full'")
        for name in ("lr_backbone", "lr_temp", "lr_single"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.sigma <= 0 or not 0 < self.beta_thres < 1 or self.gamma < 0:
            raise ConfigError("sigma > 0, 0 < beta_thres < 1 and gamma >= 0 are required")
        if self.n_s % 2 == 0 or self.n_k % 2 == 0 or self.n_k <= self.n_s:
            raise ConfigError("n_s and n_k must be odd with n_k > n_s")
        if self.beta_eval is not None and any(b <= 0 for b in self.beta_eval):
            raise ConfigError("beta_eval values must be positive")
        if self.select_alpha not in self.alphas:
            raise ConfigError("select_alpha must be one of alphas")

    def temperature_mode(self):
        if self.mode == "single_param":
            return TemperatureMode("single_param", 0.5 if self.beta is None else self.beta)
        return TemperatureMode(self.mode, self.beta)

    def eval_betas(self):
        """Evaluation temperatures; rescaled-correlation modes default to 1."""
        if self.beta_eval is not None:
            return list(self.beta_eval)
        if self.mode == "unit":
            raise ConfigError("unit-temperature runs need an explicit beta_eval (sweep)")
        return [1.0]

    def backbone_config(self, channels=1):
        return BackboneConfig(channels, self.ratio, self.embed_dim, tuple(self.widths), self.seed)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- data preparation -------------------------------------------------------------

@dataclass
class PreparedPair:
    patches_a: np.ndarray
    patches_b: np.ndarray
    grid_a: tuple
    grid_b: tuple
    queries: np.ndarray
    gt: np.ndarray
    cset: CorrespondenceSet


def prepare_pairs(pairs, ratio, n_s=3, n_k=5):
    """Precompute patches, query coordinates and smoothed targets for each pair."""
    out = []
    for p in pairs:
        ha, wa = (s // ratio for s in p.size_a)
        hb, wb = (s // ratio for s in p.size_b)
        queries = image_to_feature_coords(p.keypoints_a, ratio, (ha, wa))
        targets = image_to_feature_coords(p.keypoints_b, ratio, (hb, wb))
        gt = np.stack([make_gt_distribution(t, (hb, wb), n_s, n_k).data.reshape(-1)
                       for t in targets])
        cset = CorrespondenceSet(p.keypoints_a, p.keypoints_b, tuple(p.size_a),
                                 tuple(p.size_b), p.bbox_b)
        out.append(PreparedPair(patchify(p.image_a, ratio), patchify(p.image_b, ratio),
                                (ha, wa), (hb, wb), queries, gt, cset))
    return out


def _query_weights(batch):
    """Interpolation matrix mapping stacked correlation rows to score maps."""
    n_rows = [b.grid_a[0] * b.grid_a[1] for b in batch]
    total = sum(n_rows)
    weights = np.zeros((sum(len(b.queries) for b in batch), total))
    q, base = 0, 0
    for b, rows in zip(batch, n_rows):
        ha, wa = b.grid_a
        for point in b.queries:
            for r, c, wt in ag.bilinear_corners(ha, wa, point):
                weights[q, base + r * wa + c] += wt
            q += 1
        base += rows
    return weights


# -- model ------------------------------------------------------------------------

class Model:
    """Backbone + temperature predictor + matching configuration."""

    def __init__(self, config, backbone=None, temperature=None, channels=1):
        self.config = config
        self.mode = config.temperature_mode()
        self.backbone = backbone or BackboneParams.initialize(config.backbone_config(channels))
        if temperature is None:
            if self.mode.kind == "learned_mlp":
                temperature = TempModuleParams.initialize(
                    self.backbone.config.out_channels, seed=config.seed + 1)
            elif self.mode.kind == "single_param":
                temperature = SingleParam(self.mode.value)
        self.temperature = temperature

    @property
    def ratio(self):
        return self.backbone.config.ratio

    def temperature_parameters(self):
        return self.temperature.parameters() if self.temperature is not None else []

    def feature_maps(self, patches, grid):
        cells = embed_patches(patches, self.backbone)
        c = self.backbone.config.out_channels
        return FeatureMap(ag.swap_last(cells).reshape(len(patches), c, *grid), self.ratio)

    def partial_temperatures(self, fa, fb):
        return effective_temperature(self.mode, fa, fb, self.temperature)

    def correlation(self, batch):
        grid_a, grid_b = batch[0].grid_a, batch[0].grid_b
        fa = self.feature_maps(np.stack([b.patches_a for b in batch]), grid_a)
        fb = self.feature_maps(np.stack([b.patches_b for b in batch]), grid_b)
        beta_a, beta_b = self.partial_temperatures(fa, fb)
        corr = build_correlation(fa, fb, self.config.normalization, beta_a, beta_b)
        return corr, beta_a, beta_b

    def batch_loss(self, batch, diagnostics=None):
        """Mean per-query cross-entropy plus the temperature penalty."""
        corr, beta_a, beta_b = self.correlation(batch)
        n, rows, cols = corr.data.shape
        stacked = corr.data.reshape(n * rows, cols)
        maps = ag.matmul(ag.Tensor(_query_weights(batch)), stacked)
        gt = np.concatenate([b.gt for b in batch])
        ce = ag.mean(cross_entropy(maps, gt, diagnostics))
        reg = ag.Tensor(0.0)
        if self.mode.learnable and self.config.gamma > 0:
            if self.mode.kind == "single_param":
                reg = 2.0 * temperature_regularizer(beta_a, self.config.beta_thres)
            else:
                reg = (temperature_regularizer(beta_a, self.config.beta_thres)
                       + temperature_regularizer(beta_b, self.config.beta_thres)) / n
        loss = total_loss(ce, reg, self.config.gamma)
        return loss, ce, reg, _temps(beta_a), _temps(beta_b)

    def score_maps(self, batch):
        """Score maps (n_queries, hB*wB) of every pair, without gradients."""
        with ag.no_grad():
            corr, beta_a, beta_b = self.correlation(batch)
        out = []
        for i, b in enumerate(batch):
            rows = _query_weights([b]) @ corr.data.data[i]
            out.append(rows)
        return out, _temps(beta_a), _temps(beta_b)

    # -- persistence --
    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        self.backbone.save(os.path.join(directory, "backbone"))
        if isinstance(self.temperature, TempModuleParams):
            self.temperature.save(os.path.join(directory, "temperature"))
        elif isinstance(self.temperature, SingleParam):
            save_weights(os.path.join(directory, "temperature"),
                         {"beta_c": self.temperature.beta.data}, {"kind": "single_param"})
        with open(os.path.join(directory, "experiment.json"), "w") as fh:
            json.dump(self.config.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        config = ExperimentConfig.load(os.path.join(directory, "experiment.json"))
        backbone = BackboneParams.load(os.path.join(directory, "backbone"))
        temperature = None
        if config.mode == "learned_mlp":
            temperature = TempModuleParams.load(os.path.join(directory, "temperature"))
        elif config.mode == "single_param":
            arrays, _ = load_weights(os.path.join(directory, "temperature"))
            temperature = SingleParam(float(arrays["beta_c"]))
        return cls(config, backbone, temperature)

    def snapshot(self):
        return [p.data for p in self.backbone.parameters() + self.temperature_parameters()]

    def restore(self, snap):
        for p, data in zip(self.backbone.parameters() + self.temperature_parameters(), snap):
            p.data = data


def _temps(beta):
    if isinstance(beta, ag.Tensor):
        return np.broadcast_to(beta.data, ()).copy() if beta.size == 1 else beta.data.copy()
    return np.asarray(float(beta))


# -- evaluation -------------------------------------------------------------------

def _batches(items, size):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def collect_score_maps(model, prepared, chunk=64):
    maps, temps = [], []
    for batch in _batches(prepared, chunk):
        m, ba, bb = model.score_maps(batch)
        maps.extend(m)
        temps.append(np.broadcast_to(ba * bb, (len(batch),)))
    return maps, np.concatenate(temps) if temps else np.zeros(0)


def localize(maps, prepared, ratio, sigma, beta_eval):
    preds = []
    cfg = LocalizerConfig(sigma, beta_eval)
    for rows, b in zip(maps, prepared):
        hb, wb = b.grid_b
        feat = np.array([kernel_soft_argmax(r.reshape(hb, wb), cfg) for r in rows])
        preds.append(feature_to_image_coords(feat.reshape(-1, 2), ratio))
    return preds


def evaluate(model, prepared, alphas=(0.05, 0.1, 0.15), convention="img", beta_evals=(1.0,),
             sigma=None):
    """PCK of ``model`` on prepared pairs for each evaluation temperature.

    Returns ``({beta_eval: PckResult}, beta_trn_per_pair)``.
    """
    sigma = model.config.sigma if sigma is None else sigma
    maps, temps = collect_score_maps(model, prepared)
    sets = [b.cset for b in prepared]
    results = {}
    for be in beta_evals:
        preds = localize(maps, prepared, model.ratio, sigma, be)
        results[be] = evaluate_predictions(preds, sets, alphas, convention)
    return results, temps


def best_over_betas(results, alpha):
    """(beta_eval, PckResult) maximising PCK at ``alpha``; ties keep the first."""
    best = None
    for be, res in results.items():
        score = res.per_alpha[res.alphas.index(alpha)]
        if best is None or score > best[2]:
            best = (be, res, score)
    return best[0], best[1]


# -- training ---------------------------------------------------------------------

LOG_FIELDS = ["step", "epoch", "loss", "ce", "reg", "beta_a", "beta_b", "beta_trn",
              "pck_005", "pck_01", "pck_015", "clipped"]


@dataclass
class TrainResult:
    model: object
    rows: list
    best_epoch: int
    best_val: float
    best_beta_eval: float
    grad_rows: list = field(default_factory=list)
    diverged: bool = False


def _fmt(x):
    return repr(float(x))


def pretrain_backbone(backbone, prepared, epochs, beta=0.1, lr=1e-3, seed=0, batch_size=8):
    """Self-supervised warm-up: match every cell of an image to itself under re-jitter.

    Uses L2-normalised features at a fixed temperature with one-hot targets,
    giving a generic "pre-trained" starting point independent of the warps.
    """
    if epochs <= 0:
        return
    rng = np.random.default_rng(seed + 7919)
    ratio = backbone.config.ratio
    opt = Adam([(backbone.parameters(), lr)])
    for _ in range(epochs):
        order = rng.permutation(len(prepared))
        for idx in _batches(order, batch_size):
            views = []
            for i in idx:
                pa = prepared[i].patches_a
                gain = rng.uniform(0.8, 1.2, size=2)
                bias = rng.uniform(-0.1, 0.1, size=2)
                v1 = np.clip((pa - 0.5) * gain[0] + 0.5 + bias[0]
                             + rng.normal(scale=0.02, size=pa.shape), 0, 1)
                v2 = np.clip((pa - 0.5) * gain[1] + 0.5 + bias[1]
                             + rng.normal(scale=0.02, size=pa.shape), 0, 1)
                views.append((v1, v2))
            grid = prepared[idx[0]].grid_a
            c = backbone.config.out_channels
            xa = embed_patches(np.stack([v[0] for v in views]), backbone)
            xb = embed_patches(np.stack([v[1] for v in views]), backbone)
            fa = FeatureMap(ag.swap_last(xa).reshape(len(idx), c, *grid), ratio)
            fb = FeatureMap(ag.swap_last(xb).reshape(len(idx), c, *grid), ratio)
            corr = build_correlation(fa, fb, "l2", math.sqrt(beta), math.sqrt(beta))
            n, rows, cols = corr.data.shape
            target = np.tile(np.eye(rows), (n, 1))
            loss = ag.mean(cross_entropy(corr.data.reshape(n * rows, cols), target))
            loss.backward()
            opt.step()
            opt.zero_grad()


def train(config, train_pairs, val_pairs, log_path=None, grad_log=None, grad_label=None,
          channels=1):
    """Fine-tune a fresh model; returns the best-validation :class:`TrainResult`.

    ``train_pairs``/``val_pairs`` are :class:`PreparedPair` lists. When
    ``grad_log`` is a list, one dict per optimisation step with the mean
    absolute gradient of every backbone layer is appended to it.
    """
    model = Model(config, channels=channels)
    rng = np.random.default_rng(config.seed)
    if config.pretrain_epochs:
        pretrain_backbone(model.backbone, train_pairs, config.pretrain_epochs,
                          config.pretrain_beta, config.lr_backbone, config.seed, config.batch_size)

    trainable = trainable_parameters(model.backbone, config.finetune_scope)
    frozen = {id(p) for p in model.backbone.parameters()} - {id(p) for p in trainable}
    for p in model.backbone.parameters():
        p.requires_grad = id(p) not in frozen
    lr_temp = config.lr_single if config.mode == "single_param" else config.lr_temp
    opt = Adam([(trainable, config.lr_backbone), (model.temperature_parameters(), lr_temp)])
    clip_params = opt.parameters()
    layer_weights = [(name, model.backbone.tensors[f"{name}.weight"])
                     for name in model.backbone.layer_names()]

    betas_eval = config.eval_betas()
    rows, step = [], 0
    best = (-1.0, -1, None, betas_eval[0])
    log_file = writer = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file, lineterminator="\n")
        writer.writerow(LOG_FIELDS + [f"grad_{n}" for n, _ in layer_weights])
        log_file.flush()
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(train_pairs))
            acc = {k: [] for k in ("loss", "ce", "reg", "beta_a", "beta_b", "beta_trn")}
            grads = {n: [] for n, _ in layer_weights}
            clipped = 0
            for idx in _batches(order, config.batch_size):
                batch = [train_pairs[i] for i in idx]
                beta_trn = float("nan")
                try:
                    loss, ce, reg, ba, bb = model.batch_loss(batch)
                    beta_trn = float(np.mean(ba * bb))
                    loss.backward()
                except (NumericalError, DomainError) as exc:
                    raise TrainingDiverged(step, _last_beta(acc, beta_trn), exc) from exc
                step += 1
                gstats = {n: float(np.abs(w.grad).mean()) if w.grad is not None else 0.0
                          for n, w in layer_weights}
                norm = clip_grad_norm(clip_params, config.grad_clip)
                clipped += norm > config.grad_clip
                opt.step()
                opt.zero_grad()
                for n in grads:
                    grads[n].append(gstats[n])
                acc["loss"].append(loss.item())
                acc["ce"].append(ce.item())
                acc["reg"].append(reg.item())
                acc["beta_a"].append(float(np.mean(ba)))
                acc["beta_b"].append(float(np.mean(bb)))
                acc["beta_trn"].append(beta_trn)
                if grad_log is not None:
                    grad_log.append(dict(config=grad_label, step=step, loss=loss.item(),
                                         beta_trn=beta_trn, **{f"grad_{n}": v
                                                              for n, v in gstats.items()}))
            results, _ = evaluate(model, val_pairs, config.alphas, "img", betas_eval)
            be, res = best_over_betas(results, config.select_alpha)
            pcks = dict(zip(res.alphas, res.per_alpha))
            row = {"step": step, "epoch": epoch,
                   **{k: float(np.mean(v)) if v else 0.0 for k, v in acc.items()},
                   "pck_005": pcks.get(0.05, float("nan")), "pck_01": pcks.get(0.1, float("nan")),
                   "pck_015": pcks.get(0.15, float("nan")), "clipped": int(clipped)}
            row.update({f"grad_{n}": float(np.mean(v)) if v else 0.0 for n, v in grads.items()})
            rows.append(row)
            if writer is not None:
                writer.writerow([row["step"], row["epoch"]] + [_fmt(row[k]) for k in LOG_FIELDS[2:-1]]
                                + [row["clipped"]] + [_fmt(row[f"grad_{n}"]) for n, _ in layer_weights])
                log_file.flush()
            score = pcks[config.select_alpha]
            if score > best[0]:
                best = (score, epoch, model.snapshot(), be)
            log.info("epoch %d loss %.4f beta_trn %.4f val pck@%g %.3f", epoch,
                     row["loss"], row["beta_trn"], config.select_alpha, score)
    finally:
        if log_file is not None:
            log_file.close()
    if best[2] is not None:
        model.restore(best[2])
    return TrainResult(model, rows, best[1], best[0], best[3], grad_log or [])


def _last_beta(acc, current):
    if not math.isnan(current):
        return current
    return acc["beta_trn"][-1] if acc["beta_trn"] else float("nan")


def read_log(path):
    """Parse a training log CSV back into a list of dicts of numbers."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(v) if k in ("step", "epoch", "clipped") else float(v))
                    for k, v in r.items()})
    return out


def with_overrides(config, **kw):
    return replace(config, **kw)


# -- experiment drivers -----------------------------------------------------------

def load_split(data, split, ratio=8, n_s=3, n_k=5):
    """Prepared pairs of ``<data>/<split>.json`` (or of ``data`` itself if it is a file)."""
    from .synthdata import load_dataset

    path = data if os.path.isfile(data) else os.path.join(data, f"{split}.json")
    if not os.path.isfile(path):
        raise ConfigError(f"dataset file not found: {path}")
    pairs, _ = load_dataset(path)
    return prepare_pairs(pairs, ratio, n_s, n_k)


def sweep_workers():
    """Worker processes for sweeps, from ``SIMSC_THREADS`` (default 1)."""
    raw = os.environ.get("SIMSC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SIMSC_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("SIMSC_THREADS must be >= 1")
    return n


GRID_FIELDS = ["beta", "pck_005", "pck_01", "status"]


def _grid_point(args):
    config, beta, train_pairs, val_pairs = args
    cfg = replace(config, mode="manual", beta=float(beta), beta_eval=None)
    try:
        res = train(cfg, train_pairs, val_pairs)
    except TrainingDiverged as exc:
        log.warning("beta=%g diverged: %s", beta, exc)
        return {"beta": float(beta), "pck_005": float("nan"), "pck_01": float("nan"),
                "status": "diverged"}
    results, _ = evaluate(res.model, val_pairs, cfg.alphas, "img", [1.0])
    pcks = dict(zip(results[1.0].alphas, results[1.0].per_alpha))
    return {"beta": float(beta), "pck_005": pcks.get(0.05, float("nan")),
            "pck_01": pcks.get(0.1, float("nan")), "status": "ok"}


def grid_temperature(config, betas, train_pairs, val_pairs, out_path=None, workers=None):
    """Train one manual-temperature model per beta and record its best-val PCK.

    Rows are written to ``out_path`` in the order of ``betas`` as they finish.
    Diverged runs are recorded with ``status=diverged``; the sweep continues.
    """
    for b in betas:
        if not 0 < b <= 1:
            raise ConfigError(f"grid temperatures must lie in (0, 1], got {b}")
    workers = sweep_workers() if workers is None else workers
    jobs = [(config, b, train_pairs, val_pairs) for b in betas]
    fh = open(out_path, "w", newline="") if out_path else None
    rows = []
    try:
        writer = csv.writer(fh, lineterminator="\n") if fh else None
        if writer:
            writer.writerow(GRID_FIELDS)
            fh.flush()
        if workers > 1 and len(jobs) > 1:
            import multiprocessing as mp

            with mp.get_context("spawn").Pool(min(workers, len(jobs))) as pool:
                results = pool.imap(_grid_point, jobs)
                rows = _emit(results, writer, fh)
        else:
            rows = _emit(map(_grid_point, jobs), writer, fh)
    finally:
        if fh:
            fh.close()
    return rows


def _emit(results, writer, fh):
    rows = []
    for row in results:
        rows.append(row)
        if writer:
            writer.writerow([_fmt(row["beta"]), _fmt(row["pck_005"]), _fmt(row["pck_01"]),
                             row["status"]])
            fh.flush()
    return rows


GRAD_VARIANTS = {
    "WithL2Norm": dict(mode="unit", normalization="l2"),
    "NoL2Norm": dict(mode="unit", normalization="none"),
    "SimSC": dict(mode="learned_mlp", normalization="l2"),
}


def grad_variants(base):
    """The three gradient-analysis configurations derived from one base config."""
    out = {}
    for label, kw in GRAD_VARIANTS.items():
        extra = {}
        if kw["mode"] == "unit" and base.beta_eval is None:
            extra["beta_eval"] = list(BETA_EVAL_SWEEP)
        out[label] = replace(base, beta=None, **kw, **extra)
    return out


def gradient_analysis(configs, train_pairs, val_pairs, out_path=None):
    """Train each labelled config and log per-layer mean |grad| at every step.

    Returns the list of step rows (``config``, ``step``, ``loss``, ``beta_trn``,
    ``grad_<layer>``...), also written to ``out_path`` as CSV.
    """
    rows = []
    for label, cfg in configs.items():
        train(cfg, train_pairs, val_pairs, grad_log=rows, grad_label=label)
    if out_path:
        fields = list(rows[0]) if rows else ["config", "step", "loss", "beta_trn"]
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(fields)
            for r in rows:
                writer.writerow([r[k] if k in ("config", "step") else _fmt(r[k]) for k in fields])
    return rows


def mean_grad_after(rows, label, layer, start=100):
    """Mean of ``grad_<layer>`` for one config over steps >= ``start``."""
    vals = [r[f"grad_{layer}"] for r in rows if r["config"] == label and r["step"] >= start]
    if not vals:
        raise ConfigError(f"no gradient rows for {label} from step {start}")
    return float(np.mean(vals))

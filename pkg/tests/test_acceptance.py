"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
Lines go straight to the terminal, so they show up without ``-s`` as well.
"""

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import (  # noqa: E402
    brute_apcer, brute_auc, brute_b_at_a, brute_eer, central_difference, rates, relative_error, softmax_list,
)

from kgprompt._math import softmax  # noqa: E402
from kgprompt.config import RunConfig  # noqa: E402
from kgprompt.data import encode_arrays  # noqa: E402
from kgprompt.errors import UnreachableOperatingPoint  # noqa: E402
from kgprompt.kg_store import maskpad_kg, parse_kg, serialize_kg  # noqa: E402
from kgprompt.knowledge_filter import KnowledgeFilter, apply_filter, attention_weights  # noqa: E402
from kgprompt.metrics import (  # noqa: E402
    ScoreSet, apcer_bpcer_acer, auc, bpcer_at_apcer, eer_threshold, hter,
)
from kgprompt.model import TRAINABLE  # noqa: E402
from kgprompt.objectives import (  # noqa: E402
    forward, irrelevant_mask, irrelevant_set, loss_and_gradients, patch_similarity, sce_logit_gradient,
    sce_loss, srd_loss, total_loss,
)
from kgprompt.pipeline import (  # noqa: E402
    build_encoder, build_model, label_indices, score_features, to_scoreset, train_config,
)
from kgprompt.synthetic import generate  # noqa: E402
from kgprompt.trainer import fit, sgd_step  # noqa: E402

from conftest import TOY, random_model  # noqa: E402


_reporter = None


@pytest.fixture(autouse=True)
def _terminal(request):
    global _reporter
    _reporter = request.config.pluginmanager.get_plugin("terminalreporter")


def verdict(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    if _reporter is not None:  # bypasses output capture
        _reporter.write_line(line)
    else:
        print(line)
    return ok


# -- 1. metric oracle equivalence ------------------------------------------

def _random_scoreset(rng):
    n_g, n_a = rng.integers(5, 201, size=2)
    grid = rng.integers(3, 40)
    g = np.round(rng.beta(3, 2, n_g) * grid) / grid
    a = np.round(rng.beta(2, 3, n_a) * grid) / grid
    n_types = rng.integers(1, 4)
    types = tuple(rng.choice(["resin", "silicone", "paper"][:n_types], size=n_a))
    return ScoreSet(g, a, types)


def _module_metrics(s, th):
    out = {"eer": eer_threshold(s)[1], "hter": hter(s, th), "auc": auc(s)}
    out["apcer"], out["bpcer"], out["acer"] = apcer_bpcer_acer(s, th)
    for target in (0.1, 0.01):
        try:
            out[f"b@{target}"] = bpcer_at_apcer(s, target)
        except UnreachableOperatingPoint:
            out[f"b@{target}"] = None
    return out


def _oracle_metrics(s, th):
    g, a, types = list(s.genuine), list(s.attack), list(s.attack_types)
    far, frr = rates(g, a, th)
    apcer = brute_apcer(a, types, th)
    bpcer = frr
    out = {"eer": 100 * float(brute_eer(g, a)[0]), "hter": 100 * float((far + frr) / 2),
           "auc": 100 * float(brute_auc(g, a)), "apcer": 100 * float(apcer), "bpcer": 100 * float(bpcer),
           "acer": 100 * float((apcer + bpcer) / 2)}
    for target in (0.1, 0.01):
        b = brute_b_at_a(g, a, types, target)
        out[f"b@{target}"] = None if b is None else 100 * float(b)
    return out


def test_criterion_1_metric_oracle():
    rng = np.random.default_rng(2024)
    sets = [_random_scoreset(rng) for _ in range(100)]
    thresholds = [float(th) for th in rng.uniform(0, 1, 100)]
    t0 = time.perf_counter()
    ours = [_module_metrics(s, th) for s, th in zip(sets, thresholds)]
    elapsed = time.perf_counter() - t0
    worst, mismatched, reachable = 0.0, [], 0
    for i, (s, th) in enumerate(zip(sets, thresholds)):
        ref = _oracle_metrics(s, th)
        for k, v in ref.items():
            if (v is None) != (ours[i][k] is None):
                mismatched.append((i, k))
            elif v is not None:
                worst = max(worst, abs(v - ours[i][k]))
        reachable += ref["b@0.01"] is not None
    ok = not mismatched and worst <= 1e-9 and elapsed < 10
    assert verdict("1 metric oracle equivalence", ok,
                   f"100 sets, max |diff| {worst:.1e}, {len(mismatched)} reachability mismatches, "
                   f"{reachable} sets reach B@A=0.01, {elapsed:.2f}s")


# -- 2. loss values ---------------------------------------------------------

def test_criterion_2_loss_values():
    sce = sce_loss(np.array([[0.5, 0.5]]), [0])
    srd = srd_loss(np.array([0.5, 0.5]), 0)
    total = total_loss(srd, sce, 0.5)
    ok = abs(sce + math.log(2)) <= 1e-9 and abs(srd - math.log(2)) <= 1e-9 and total == srd + 0.5 * sce
    assert verdict("2 loss values", ok, f"sce {sce:.9f}, srd {srd:.9f}, total {total!r}")


# -- 3. gradient correctness ------------------------------------------------

GRAD_TAU = 0.1


def test_criterion_3_gradients():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        m, J = int(rng.integers(2, 9)), int(rng.integers(1, 10))
        model = random_model(rng, m=m, K=2, enc_dim=6, hidden=5)
        x_g, x_p = rng.normal(size=(3, 6)), rng.normal(size=(3, J, 6))
        y = rng.integers(0, 2, 3)
        _, grads = loss_and_gradients(model, x_g, x_p, y, 0.5, GRAD_TAU)
        omega = irrelevant_mask(forward(model, x_g, x_p, GRAD_TAU)["cos_p"], y)

        def objective():
            c = forward(model, x_g, x_p, GRAD_TAU)
            sce = np.sum(np.where(omega, np.sum(c["s"] * c["log_s"], axis=-1), 0.0), axis=1)
            return float(np.mean(-c["log_d"][np.arange(3), y] + 0.5 * sce))

        for name in TRAINABLE:
            fd = central_difference(objective, model.params[name], h=1e-5)
            worst = max(worst, relative_error(grads[name], fd))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30
    assert verdict("3 gradient correctness", ok,
                   f"100 instances, tau {GRAD_TAU}, max rel err {worst:.1e}, {elapsed:.1f}s")


# -- 4. temperature invariance of the irrelevant set -------------------------

def test_criterion_4_omega_invariance():
    rng = np.random.default_rng(4)
    differing = 0
    for _ in range(1000):
        J, K, m = rng.integers(1, 10), rng.integers(2, 5), rng.integers(2, 9)
        patches, text = rng.normal(size=(J, m)), rng.normal(size=(K, m))
        y = int(rng.integers(0, K))
        sets = [tuple(irrelevant_set(patch_similarity(patches, text, tau), y)) for tau in (0.01, 0.1, 1.0)]
        differing += len(set(sets)) != 1
    assert verdict("4 omega temperature invariance", differing == 0,
                   f"1000 configurations, {differing} differ across tau")


# -- 5. softmax filter ------------------------------------------------------

def test_criterion_5_filter():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        n, m = rng.integers(1, 12), rng.integers(1, 16)
        w = attention_weights(rng.normal(scale=3, size=(n, m)), rng.normal(scale=3, size=m))
        worst = max(worst, abs(w.sum() - 1.0))
    row, f_v = rng.normal(size=(1, 4)), rng.normal(size=4)
    F = KnowledgeFilter(rng.normal(size=(4, 4)), rng.normal(size=4))
    single = np.array_equal(attention_weights(row, f_v), [1.0]) and np.allclose(
        apply_filter(row, f_v, F), row[0] @ F.Psi + F.bias)
    rows = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, -1.0, 0.0]])
    orth = np.array([0.0, 0.0, 1.0])
    uniform = np.allclose(attention_weights(rows, orth), softmax_list([0.0] * 3)) and np.allclose(
        apply_filter(rows, orth, KnowledgeFilter(np.eye(3), np.zeros(3))), rows.mean(axis=0))
    ok = worst <= 1e-6 and single and uniform
    assert verdict("5 softmax filter", ok,
                   f"max |sum-1| {worst:.1e} on 1000 inputs, single-row {single}, orthogonal {uniform}")


# -- 6. entropy drive -------------------------------------------------------

def test_criterion_6_entropy_drive():
    rng = np.random.default_rng(6)
    worst, slowest = 0.0, 0
    for _ in range(100):
        J, K = int(rng.integers(1, 10)), int(rng.integers(2, 5))
        Z = rng.normal(size=(J, K))
        omega = irrelevant_set(softmax(Z, axis=-1), int(rng.integers(0, K)))
        if omega.size == 0:
            continue
        params, vel = {"z": Z}, {"z": np.zeros_like(Z)}
        dev = np.inf
        for step in range(1, 501):
            _, g = sce_logit_gradient(params["z"], omega)
            params, vel = sgd_step(params, {"z": g}, vel, 0.5, 0.9, 0.0)
            dev = np.abs(softmax(params["z"], axis=-1)[omega] - 1.0 / K).max()
            if dev < 0.01:
                break
        worst, slowest = max(worst, dev), max(slowest, step)
    assert verdict("6 entropy drive", worst < 0.01,
                   f"100 instances, worst max-deviation {worst:.1e}, slowest {slowest} steps (limit 500)")


# -- 7. end-to-end synthetic run --------------------------------------------

E2E_SEEDS = range(5)


@pytest.fixture(scope="module")
def e2e():
    t0 = time.perf_counter()
    splits = {f"s{s:02d}": "train" if s < 8 else "dev" if s < 12 else "test" for s in range(16)}
    images, rows = generate(n_subjects=16, per_class=40, size=64, seed=1, contrast=0.35, noise=0.1,
                            splits=splits)
    base = RunConfig(**TOY, epochs=30)
    fs = encode_arrays(images, rows, build_encoder(base))
    parts = {sp: fs.take(np.flatnonzero([r.split == sp for r in rows])) for sp in ("train", "dev", "test")}
    runs = {}
    for lam in (0.5, 0.0):
        for seed in E2E_SEEDS:
            cfg = base.with_overrides(lam=lam, seed=seed)
            model = build_model(cfg, seed)
            real_i, mask_i = label_indices(model, cfg)
            model, _ = fit(parts["train"], model, train_config(cfg, seed), real_i, mask_i)
            dev = to_scoreset(score_features(model, parts["dev"], cfg.tau, real_i), parts["dev"])
            test = to_scoreset(score_features(model, parts["test"], cfg.tau, real_i), parts["test"])
            th, _ = eer_threshold(dev)
            runs[lam, seed] = (auc(dev), hter(test, th))
    return runs, time.perf_counter() - t0


def test_criterion_7_end_to_end(e2e):
    runs, elapsed = e2e
    aucs = [runs[0.5, s][0] for s in E2E_SEEDS]
    hters = [runs[0.5, s][1] for s in E2E_SEEDS]
    ok = min(aucs) >= 99 and max(hters) <= 5 and elapsed < 120
    assert verdict("7 end-to-end synthetic run (lambda=0.5)", ok,
                   f"min dev AUC {min(aucs):.2f}%, max test HTER {max(hters):.2f}% over 5 seeds, "
                   f"{elapsed:.1f}s for all 10 runs")


def test_criterion_7_lambda_zero_sanity(e2e):
    runs, _ = e2e
    aucs = [runs[0.0, s][0] for s in E2E_SEEDS]
    assert verdict("7 lambda=0 sanity", min(aucs) >= 95, f"min dev AUC {min(aucs):.2f}% over 5 seeds")


def test_criterion_7_ablation_direction(e2e):
    runs, _ = e2e
    with_sce = float(np.mean([runs[0.5, s][1] for s in E2E_SEEDS]))
    without = float(np.mean([runs[0.0, s][1] for s in E2E_SEEDS]))
    assert verdict("7 ablation: removing sce never improves mean HTER", without >= with_sce,
                   f"mean test HTER {with_sce:.2f}% with sce, {without:.2f}% without")


# -- 8. KG fixture ----------------------------------------------------------

def test_criterion_8_kg_fixture():
    g = maskpad_kg()
    counts = g.counts
    first = serialize_kg(g)
    stable = serialize_kg(parse_kg(first)) == first and parse_kg(first) == g
    ok = counts == (44, 4, 42) and stable
    assert verdict("8 KG fixture", ok, f"counts {counts}, round trip byte-stable {stable}")


# -- 9. determinism ---------------------------------------------------------

def test_criterion_9_determinism(tmp_path, toy_features):
    from kgprompt.cli import main
    from kgprompt.protocols import run_loocv
    from kgprompt.report import report_to_dict
    from kgprompt.synthetic import make_two_cluster_dataset

    make_two_cluster_dataset(tmp_path / "data", n_subjects=4, per_class=6, seed=1,
                             splits={"s00": "train", "s01": "train", "s02": "dev", "s03": "dev"})
    (tmp_path / "run.cfg").write_text(
        "image_size = 64\npatch_grid = 4\nembed_dim = 16\nencoder_dim = 32\nhidden_dim = 32\n"
        "batch_size = 16\nepochs = 4\ntrain_manifest = data/manifest.csv\n"
    )
    args = ["train", "--config", str(tmp_path / "run.cfg"), "--out", str(tmp_path / "out"), "--no-plot"]
    assert main(args) == 0
    first = (tmp_path / "out" / "checkpoint.json").read_bytes()
    assert main(args) == 0
    same_ckpt = (tmp_path / "out" / "checkpoint.json").read_bytes() == first

    fs, _ = toy_features
    cfg = RunConfig(**TOY, epochs=5, train_subjects=2, dev_subjects=2, rounds=2, seed=3)
    reports = [json.dumps(report_to_dict(run_loocv(fs, cfg)), sort_keys=True) for _ in range(2)]
    same_report = reports[0] == reports[1]
    assert verdict("9 determinism", same_ckpt and same_report,
                   f"checkpoints byte-identical {same_ckpt}, LOOCV reports identical {same_report}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))

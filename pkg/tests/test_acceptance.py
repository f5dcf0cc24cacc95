"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The heavy criteria share synthetic "worlds" (a 5-user dataset, a second
dataset for surrogate negatives and per-user SVM / 1DCNN authenticators),
built once per seed. Their runtime budgets are checked against the criterion's
own wall time plus the build time of every world it uses.
"""

from __future__ import annotations

import functools
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from mouseadv import auth, evalrig, gradcore, ingest, pipeline
from mouseadv.attacks import imitation as im
from mouseadv.attacks import stats
from mouseadv.attacks import surrogate as su
from mouseadv.cli import RunConfig
from mouseadv.gradcore import losses

from _fixtures import pixel_walk_profile, rebinned

SEEDS = (0, 1, 2, 3, 4)
KINDS = ("SVM", "1DCNN")
# rotated copies per training window; the CLI default is 10
AUGMENT_N = 2


@dataclass
class World:
    seed: int
    prep: pipeline.Prepared
    other: pipeline.Prepared
    auths: dict[str, dict[str, pipeline.UserAuth]]
    build_s: float

    def models(self, user: str) -> dict[str, object]:
        return {k: self.auths[user][k].model for k in KINDS}


@functools.lru_cache(maxsize=None)
def world(seed: int) -> World:
    t0 = time.perf_counter()
    d = RunConfig()
    sessions = ingest.synth_users(d.n_users, d.sessions, seed, d.moves)
    negatives = ingest.synth_users(d.n_users, d.sessions, seed + 1000, d.moves, dataset="synthB")
    p = pipeline.prepare(sessions, seed, pipeline.PrepConfig(seqlen=d.seqlen, augment_n=AUGMENT_N))
    other = pipeline.prepare(negatives, seed, pipeline.PrepConfig(seqlen=d.seqlen, augment_n=0))
    auths = {u: {k: pipeline.train_user_authenticator(p, u, k, seed=seed) for k in KINDS} for u in p.users}
    return World(seed, p, other, auths, time.perf_counter() - t0)


def at_least(flags, k=4):
    return sum(bool(f) for f in flags) >= k


# -- 1: gradient correctness ----------------------------------------------------------------


def _check(loss_fn, params, extra, seed):
    gradcore.zero_grads(params)
    box = {}
    loss_fn(True, box)
    arrays = {k: p.values for k, p in params.items()} | extra
    analytic = {k: p.grad.copy() for k, p in params.items()} | {k: box[k] for k in extra}
    return gradcore.grad_check(lambda: loss_fn(False, {}), arrays, analytic, seed=seed)


def _gru_error(seed):
    rng = np.random.default_rng(seed)
    layers = [gradcore.GruCellParams.init(rng, 2, 5), gradcore.GruCellParams.init(rng, 5, 5)]
    xs, target = rng.normal(size=(5, 3, 2)), rng.normal(size=(5, 3, 5))
    params = {f"{i}.{k}": v for i, l in enumerate(layers) for k, v in l.params().items()}

    def f(backward, box):
        out, caches = gradcore.gru_forward(layers, xs)
        val, g = losses.mse(out, target)
        if backward:
            box["x"], _ = gradcore.gru_backward(layers, caches, g)
        return val

    return _check(f, params, {"x": xs}, seed)


def _conv_error(seed):
    rng = np.random.default_rng(seed)
    c1, c2 = gradcore.ConvParams.init(rng, 2, 4, 3, 1), gradcore.ConvParams.init(rng, 4, 3, 3, 2)
    x, t = rng.normal(size=(2, 2, 16)), rng.normal(size=(2, 3, 6))
    params = {**c1.params("c1."), **c2.params("c2.")}

    def f(backward, box):
        y1, k1 = gradcore.conv1d_forward(c1, x, "elu")
        y2, k2 = gradcore.conv1d_forward(c2, y1, "tanh")
        val, g = losses.mse(y2, t)
        if backward:
            box["x"] = gradcore.conv1d_backward(c1, k1, gradcore.conv1d_backward(c2, k2, g))
        return val

    return _check(f, params, {"x": x}, seed)


def _dense_error(seed, act):
    rng = np.random.default_rng(seed)
    p = gradcore.DenseParams.init(rng, 5, 4)
    x, t = rng.normal(size=(7, 5)), rng.normal(size=(7, 4))

    def f(backward, box):
        y, c = gradcore.dense_forward(p, x, act)
        val, g = losses.mse(y, t)
        if backward:
            box["x"] = gradcore.dense_backward(p, c, g)
        return val

    return _check(f, p.params(), {"x": x}, seed)


def _loss_errors(seed):
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=8)
    targets = {
        gradcore.MSE: rng.normal(size=8),
        gradcore.BCE: rng.uniform(size=8),
        gradcore.HINGE: rng.choice([-1.0, 1.0], size=8),
    }
    errs = []
    for kind, t in targets.items():
        _, g = gradcore.loss_eval(kind, pred, t)
        errs.append(gradcore.grad_check(lambda: gradcore.loss_eval(kind, pred, t)[0], {"p": pred}, {"p": g}))
    logits, cls = rng.normal(size=(6, 2)), rng.integers(0, 2, 6)
    _, g = gradcore.loss_eval(gradcore.CE2, logits, cls)
    errs.append(gradcore.grad_check(lambda: gradcore.loss_eval(gradcore.CE2, logits, cls)[0], {"l": logits}, {"l": g}))
    return max(errs)


def test_criterion_1_gradient_correctness(report_criterion):
    t0 = time.perf_counter()
    worst = {"gru": 0.0, "conv": 0.0, "dense_elu": 0.0, "dense_relu": 0.0, "losses": 0.0}
    for seed in range(20):
        worst["gru"] = max(worst["gru"], _gru_error(seed))
        worst["conv"] = max(worst["conv"], _conv_error(seed))
        worst["dense_elu"] = max(worst["dense_elu"], _dense_error(seed, "elu"))
        worst["dense_relu"] = max(worst["dense_relu"], _dense_error(seed, "relu"))
        worst["losses"] = max(worst["losses"], _loss_errors(seed))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and dt < 60
    report_criterion(1, ok, f"max rel err {max(worst.values()):.2e} over 20 seeds {worst}, {dt:.1f}s")
    assert ok


# -- 2: oracle equivalence ----------------------------------------------------------------------


def _auc_by_pairs(pos, neg):
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def test_criterion_2_oracle_equivalence(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    mismatches = 0
    for k in range(100):
        n1, n0 = rng.integers(1, 201, 2)
        # coarse rounding on half the sets to force ties
        dec = 1 if k % 2 else 6
        pos = np.round(rng.normal(0.5, 1, n1), dec)
        neg = np.round(rng.normal(0, 1, n0), dec)
        mismatches += auth.roc_eval(pos, neg).auc != _auc_by_pairs(pos, neg)
    identity_bad = 0
    for _ in range(100):
        d = np.round(rng.normal(size=int(rng.integers(3, 60))), 1)
        d[0] = d[1] = d[2] = 0.5  # at least three non-zero differences
        res = evalrig.wilcoxon(zip(d, np.zeros_like(d)))
        n = res.n_pairs
        identity_bad += abs(res.w_plus + res.w_minus - n * (n + 1) / 2) > 1e-9
    z = evalrig.wilcoxon([(1, 0), (2, 0), (3, 0)]).z
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and identity_bad == 0 and abs(z - 1.6036) < 1e-3 and dt < 60
    report_criterion(2, ok, f"AUC mismatches {mismatches}/100, rank-sum violations {identity_bad}/100, z({{1,2,3}}) = {z:.5f}, {dt:.1f}s")
    assert ok


# -- 3: statistics sampler fidelity ----------------------------------------------------------


def test_criterion_3_sampler_total_variation(report_criterion):
    t0 = time.perf_counter()
    p = pixel_walk_profile()
    d = stats.sample_hist(p.dv_hist, 10_000, np.random.default_rng(3))
    tv = stats.total_variation(rebinned(p, d), p.dv_hist.counts)
    dt = time.perf_counter() - t0
    ok = tv < 0.05 and dt < 60
    report_criterion(3, ok, f"TV {tv:.4f} on {np.count_nonzero(p.dv_hist.counts)} occupied bins, {dt:.1f}s")
    assert ok


# -- 4: generator overfit oracle ----------------------------------------------------------------


def test_criterion_4_generator_overfit(report_criterion):
    t0 = time.perf_counter()
    t = ingest.synth_users(2, 2, seed=0)[0]
    t = ingest.normalize(t, ingest.estimate_resolution([t]))
    seq = ingest.to_rep(t, ingest.DV, 50)[3]
    g = im.train_generator([seq] * 50, im.GeneratorConfig(rep_kind=ingest.DV), im.GenHyper(epochs=8, batch_size=1, lr=3e-3, decay_every=0), seed=0)
    out = im.rollout(g, seq.points[:1], 49)
    mse = float(np.mean((g.scale_in(out) - g.scale_in(seq.points[1:])) ** 2))
    dt = time.perf_counter() - t0
    ok = mse < 1e-3 and dt < 300
    report_criterion(4, ok, f"free-running rollout MSE {mse:.2e} (standardized units), {dt:.1f}s")
    assert ok


# -- 5: synthetic end-to-end authentication --------------------------------------------------


@pytest.mark.slow
def test_criterion_5_synthetic_authentication(report_criterion):
    t0 = time.perf_counter()
    w = world(0)
    parts = []
    ok = True
    for k in KINDS:
        aucs = np.array([w.auths[u][k].roc.auc for u in w.prep.users])
        eers = np.array([w.auths[u][k].roc.eer for u in w.prep.users])
        ok &= bool(aucs.min() >= 0.8 and eers.max() <= 0.3)
        parts.append(f"{k} AUC mean {aucs.mean():.3f} min {aucs.min():.3f}, EER mean {eers.mean():.3f} max {eers.max():.3f}")
    dt = time.perf_counter() - t0 + w.build_s
    ok &= dt < 900
    report_criterion(5, ok, "; ".join(parts) + f"; {dt:.0f}s")
    assert ok


# -- 6: directional attack ordering -----------------------------------------------------------


def _attack_ordering(seed):
    w = world(seed)
    p, user = w.prep, w.prep.users[seed % len(w.prep.users)]
    target = w.auths[user]["1DCNN"].model
    n = 1000
    st = evalrig.asr(target, pipeline.run_stats_attack(p, user, n, seed), n=None).asr
    gen, _ = pipeline.run_imitation_attack(p, user, im.GeneratorConfig(seqlen=p.config.seqlen), n, seed)
    imit = evalrig.asr(target, gen, n=None).asr
    pos = pipeline.attacker_reps(p, user, ingest.VEL, augmented=True)
    fg = su.FgsmConfig.from_data(pos)
    out = {}
    for arch in (su.CNN_LIKE, su.FC):
        adv, s, trace = pipeline.run_surrogate_attack(p, w.other, user, arch, n, seed, fg)
        out[arch] = (evalrig.asr(target, adv, n=None).asr, float(np.mean(trace.logp[-1] >= math.log(0.5))))
    return {"stats": st, "imitation": imit, "matched": out[su.CNN_LIKE][0], "mismatched": out[su.FC][0], "self_fc": out[su.FC][1], "self_cnn": out[su.CNN_LIKE][1]}


@pytest.mark.slow
def test_criterion_6_attack_ordering(report_criterion):
    t0 = time.perf_counter()
    rows = {s: _attack_ordering(s) for s in SEEDS}
    a = [r["imitation"] > r["stats"] for r in rows.values()]
    b = [r["matched"] > r["mismatched"] for r in rows.values()]
    c = [r["self_fc"] >= 0.85 for r in rows.values()]
    dt = time.perf_counter() - t0 + sum(world(s).build_s for s in SEEDS)
    ok = at_least(a) and at_least(b) and at_least(c) and dt < 1800
    fmt = lambda key: " ".join(f"{rows[s][key]:.2f}" for s in SEEDS)  # noqa: E731
    report_criterion(
        "6",
        ok,
        f"(a) {sum(a)}/5 imitation [{fmt('imitation')}] vs stats [{fmt('stats')}]; "
        f"(b) {sum(b)}/5 CNN-like [{fmt('matched')}] vs FC [{fmt('mismatched')}]; "
        f"(c) {sum(c)}/5 FC self-ASR [{fmt('self_fc')}] (CNN-like [{fmt('self_cnn')}]); {dt:.0f}s",
    )
    assert ok


# -- 7: imitation ceiling ---------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_legitimate_ceiling(report_criterion):
    t0 = time.perf_counter()
    w = world(0)
    gaps = {}
    for k in KINDS:
        per_user = []
        for u in w.prep.users:
            ua = w.auths[u][k]
            legit = evalrig.asr(ua.model, w.prep.of_user("auth_test", u), n=None).asr
            per_user.append(legit - (1 - ua.roc.eer))
        gaps[k] = np.array(per_user)
    dt = time.perf_counter() - t0 + w.build_s
    ok = all(abs(g.mean()) <= 0.1 for g in gaps.values()) and dt < 300
    detail = "; ".join(f"{k} mean gap {g.mean():+.3f} (per user {np.round(g, 3).tolist()})" for k, g in gaps.items())
    report_criterion(7, ok, f"legit ASR - (1 - EER): {detail}; {dt:.0f}s")
    assert ok


# -- 8: FGSM invariants ------------------------------------------------------------------------


def test_criterion_8_fgsm_invariants(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    # closed form on a linear surrogate: one step moves by eps * sign(w)
    w_lin = rng.normal(size=(10, 2))
    lin = su.SurrogateModel(su.LINEAR, su.LinearSurrogateNet(w_lin, 0.1), 10)
    z0 = rng.normal(0, 0.05, (20, 10, 2))
    z1, _ = su.fgsm_batch(lin, z0, su.FgsmConfig(epsilon=0.001, iterations=1))
    closed = float(np.max(np.abs(z1 - (z0 + 0.001 * np.sign(w_lin)))))
    # invariants on trained nonlinear surrogates
    w = world(0)
    user = w.prep.users[0]
    pos = pipeline.attacker_reps(w.prep, user, ingest.VEL, augmented=True)
    fg = su.FgsmConfig.from_data(pos)
    linf_bad = mono_bad = total = 0
    for arch in (su.FC, su.CNN_LIKE):
        _, _, tr = pipeline.run_surrogate_attack(w.prep, w.other, user, arch, 200, 0, fg)
        k = np.arange(tr.linf.shape[0])[:, None]
        linf_bad += int(np.sum(tr.linf > k * fg.epsilon + 1e-12))
        mono_bad += int(np.sum((np.diff(tr.logp, axis=0) < 0) & ~tr.clamped))
        total += tr.logp.shape[1]
    dt = time.perf_counter() - t0
    ok = closed <= 1e-9 and linf_bad == 0 and mono_bad == 0 and dt < 120
    report_criterion(
        8, ok, f"closed-form error {closed:.1e}; L-inf violations {linf_bad}, unclamped logp drops {mono_bad} over {total} sequences x 300 steps; {dt:.1f}s (models shared)"
    )
    assert ok


# -- 9: detection mechanism ---------------------------------------------------------------------


def _detection(seed):
    w = world(seed)
    p = w.prep
    ens = {u: w.models(u) for u in p.users}
    clean = {u: p.of_user("auth_test", u) for u in p.users}
    base = evalrig.pooled_alert_rates(ens, clean)
    neg = pipeline.cross_negatives(w.other, p.config.seqlen)
    hyper = su.SurHyper(svm_gradient="analytic")
    attack = {}
    for u in p.users:
        pos = pipeline.attacker_reps(p, u, ingest.VEL, augmented=True)
        s = su.train_surrogate(pos, neg, su.SVM_LIKE, hyper, seed=seed)
        attack[u], _ = su.fgsm_many(s, pipeline.perturbation_seeds(p, u, 100, seed), su.FgsmConfig.from_data(pos))
    shifted = {u: evalrig.covariate_shift(clean[u], seed=seed) for u in p.users}
    att = evalrig.detection_run_pooled(ens, attack, seed, baseline=base)
    sh = evalrig.detection_run_pooled(ens, shifted, seed, baseline=base)
    return base, att, sh


@pytest.mark.slow
def test_criterion_9_detection(report_criterion):
    t0 = time.perf_counter()
    runs = {s: _detection(s) for s in SEEDS}
    attack_ok, shift_ok, lines = [], [], []
    for s, (base, att, sh) in runs.items():
        gap = att.rates["1DCNN"] - att.rates["SVM"]
        attack_ok.append(gap > att.margin and att.suspect == "SVM")
        shift_ok.append(all(sh.rates[k] > base[k] for k in KINDS) and sh.verdict == evalrig.COVARIATE_SHIFT)
        fmt = lambda r: "/".join(f"{r[k]:.3f}" for k in KINDS)  # noqa: E731
        lines.append(f"seed {s}: base {fmt(base)} attack {fmt(att.rates)} -> {att.label}, shift {fmt(sh.rates)} -> {sh.label}")
    dt = time.perf_counter() - t0 + sum(world(s).build_s for s in SEEDS)
    ok = at_least(attack_ok) and at_least(shift_ok) and dt < 600
    report_criterion(
        9, ok, f"SVM/1DCNN alert rates; attack named {sum(attack_ok)}/5, shift {sum(shift_ok)}/5; {dt:.0f}s\n    " + "\n    ".join(lines)
    )
    assert ok


# -- 10: optional Balabit-format check -------------------------------------------------------------

BALABIT_ENV = "MOUSEADV_BALABIT_ROOT"


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get(BALABIT_ENV), reason=f"set {BALABIT_ENV} to a Balabit-format directory")
def test_criterion_10_balabit(report_criterion, tmp_path):
    from mouseadv import cli

    root = Path(os.environ[BALABIT_ENV])
    assert cli.main(["prep", "--root", str(root), "--format", "balabit", "--out", str(tmp_path / "prep")]) == 0
    means = {}
    for k in KINDS:
        assert cli.main(["train-auth", "--prep", str(tmp_path / "prep"), "--model", k, "--out", str(tmp_path / "models")]) == 0
        assert cli.main(["eval-auth", "--prep", str(tmp_path / "prep"), "--models", str(tmp_path / "models"), "--model", k, "--out", str(tmp_path / "eval")]) == 0
        recs = evalrig.read_report(tmp_path / "eval" / f"eval_auth_{k}.json")
        means[k] = float(np.mean([r.value for r in recs if r.metric == "auc"]))
    ok = all(0.70 <= m <= 0.95 for m in means.values())
    report_criterion(10, ok, f"mean per-user AUC {means}")
    assert ok

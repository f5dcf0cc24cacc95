from __future__ import annotations

import json

import numpy as np
import pytest

from mouseadv import auth, ingest, pipeline
from mouseadv.attacks import imitation as im
from mouseadv.attacks import surrogate as su
from mouseadv.ingest import DV, VEL, Trajectory

L = 20


@pytest.fixture(scope="module")
def prep():
    sessions = ingest.synth_users(3, 6, seed=0, moves_per_session=12)
    return pipeline.prepare(sessions, 0, pipeline.PrepConfig(seqlen=L, augment_n=1))


@pytest.fixture(scope="module")
def other():
    sessions = ingest.synth_users(2, 4, seed=1000, moves_per_session=12, dataset="synthB")
    return pipeline.prepare(sessions, 0, pipeline.PrepConfig(seqlen=L, augment_n=0))


def test_windows_are_disjoint_and_complete():
    t = Trajectory(np.arange(47) * 0.01, np.random.default_rng(0).uniform(size=(47, 2)), "u", "s")
    ws = pipeline.windows(t, 10)
    assert len(ws) == 4 and all(len(w) == 11 for w in ws)
    np.testing.assert_array_equal(np.concatenate([w.xy for w in ws]), t.xy[:44])
    assert [w.meta["window"] for w in ws] == [0, 1, 2, 3]


def test_prepare_parts_and_augmentation(prep):
    assert prep.users == ["user00", "user01", "user02"]
    for part, items in prep.parts.items():
        assert items and all(len(w) == L + 1 for w in items), part
        assert all(np.all((w.xy >= 0) & (w.xy <= 1)) for w in items)
    for part in ("auth_train", "attacker_train"):
        # each window followed by its one rotated copy
        assert len(prep.augmented[part]) == 2 * len(prep.parts[part])
        assert prep.augmented[part][0] is prep.parts[part][0]
    # the defender and attacker sides never share a session
    for user in prep.users:
        auth_side = {w.session_id for part in ("auth_train", "auth_test") for w in prep.of_user(part, user)}
        att_side = {w.session_id for part in ("attacker_train", "attacker_test") for w in prep.of_user(part, user)}
        assert not auth_side & att_side
    counts = prep.counts()
    assert sum(counts["auth_test"].values()) == len(prep.parts["auth_test"])
    assert len(prep.of_others("auth_test", "user00")) == len(prep.parts["auth_test"]) - counts["auth_test"]["user00"]


def test_save_and_load_roundtrip(prep, tmp_path):
    manifest = pipeline.save_prepared(prep, tmp_path, seed=0, dataset="tiny")
    assert manifest["format"] == pipeline.PREP_FORMAT and manifest["users"] == prep.users
    assert json.loads((tmp_path / "manifest.json").read_text()) == manifest
    back = pipeline.load_prepared(tmp_path)
    assert back.config == prep.config and back.users == prep.users
    for part in prep.parts:
        # sessions come back in file order, so match windows by identity
        a = {(w.user_id, w.session_id, w.meta["window"]): w.xy for w in prep.parts[part]}
        b = {(w.user_id, w.session_id, w.meta["window"]): w.xy for w in back.parts[part]}
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_allclose(a[k], b[k], atol=1e-12)
    for part in prep.augmented:
        np.testing.assert_array_equal(
            np.stack([w.xy for w in back.augmented[part]]), np.stack([w.xy for w in prep.augmented[part]])
        )


def test_load_prepared_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        pipeline.load_prepared(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        pipeline.load_prepared(tmp_path)


def test_split_validation_holds_out_whole_sessions():
    items = [Trajectory(np.zeros(1), np.zeros((1, 2)), "u", f"s{k}") for k in range(10) for _ in range(3)]
    fit, val = pipeline.split_validation(items, 0.2)
    assert {t.session_id for t in val} == {"s8", "s9"}
    assert len(fit) == 24 and len(val) == 6
    fit, val = pipeline.split_validation(items[:3], 0.2)
    assert fit == val == items[:3]


@pytest.mark.parametrize("kind", ["SVM", "1DCNN"])
def test_train_user_authenticator(prep, kind):
    ua = pipeline.train_user_authenticator(prep, "user01", kind, seed=0, cnn_hyper=auth.CnnHyper(epochs=2), svm_epochs=50)
    assert ua.user == "user01" and ua.model.threshold is not None
    assert 0.0 <= ua.roc.eer <= 1.0 and 0.0 <= ua.val_roc.auc <= 1.0
    decided = ua.model.accepts(prep.of_user("auth_test", "user01"))
    assert decided.dtype == bool
    with pytest.raises(ValueError):
        pipeline.train_user_authenticator(prep, "user01", "GRU")


def test_attacker_material_comes_from_attacker_parts(prep, other):
    reps = pipeline.attacker_reps(prep, "user00", DV)
    assert len(reps) == len(prep.of_user("attacker_train", "user00")) and reps[0].kind == DV
    aug = pipeline.attacker_reps(prep, "user00", VEL, augmented=True)
    assert len(aug) == 2 * len(reps)
    seeds = pipeline.perturbation_seeds(prep, "user00")
    assert len(seeds) == len(prep.of_others("attacker_test", "user00"))
    few = pipeline.perturbation_seeds(prep, "user00", 7, seed=3)
    assert len(few) == 7 and all(any(np.array_equal(f.points, s.points) for s in seeds) for f in few)
    neg = pipeline.cross_negatives(other, L)
    assert len(neg) == len(other.parts["attacker_train"])


def test_stats_attack_run(prep):
    out = pipeline.run_stats_attack(prep, "user02", n=5, seed=1)
    assert len(out) == 5 and all(len(t) == L + 1 and t.user_id == "user02" for t in out)


def test_imitation_attack_run(prep):
    cfg = im.GeneratorConfig(seqlen=L, hidden=6)
    out, g = pipeline.run_imitation_attack(prep, "user00", cfg, n=4, seed=0, hyper=im.GenHyper(epochs=1))
    assert len(out) == 4 and all(len(t) == L + 1 for t in out)
    assert [t.session_id for t in out] == [f"imit{k:05d}" for k in range(4)]
    seq, _ = pipeline.run_imitation_attack(prep, "user00", cfg, n=2, method="start_sequence", hyper=im.GenHyper(epochs=1))
    assert len(seq[0]) == L + 1
    with pytest.raises(ValueError):
        pipeline.run_imitation_attack(prep, "user00", im.GeneratorConfig(seqlen=30), n=1)
    with pytest.raises(ValueError):
        pipeline.run_imitation_attack(prep, "user00", cfg, n=1, method="middle", hyper=im.GenHyper(epochs=1))


def test_surrogate_attack_run(prep, other):
    fg = su.FgsmConfig(iterations=3)
    adv, s, trace = pipeline.run_surrogate_attack(prep, other, "user01", su.FC, n=6, seed=0, fgsm=fg, hyper=su.SurHyper(epochs=1))
    assert len(adv) == 6 and trace.logp.shape == (4, 6)
    assert s.trained_on["user"] == "user01"
    assert np.all(trace.linf[-1] <= 3 * fg.epsilon + 1e-12)

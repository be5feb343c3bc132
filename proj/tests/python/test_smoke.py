import math
import subprocess
import os

import pytest

import kdret


def test_temperature_softmax_closed_forms():
    p = kdret.temperature_softmax([3.0, 1.0], 1.0)
    assert p[0] == pytest.approx(math.exp(2) / (math.exp(2) + 1), rel=1e-14)
    assert kdret.temperature_softmax([3.0, 1.0], 2.0)[0] == pytest.approx(0.73106, abs=1e-5)
    assert kdret.temperature_softmax([5.0, 1.0, 0.0], 0.0) == [1.0, 0.0, 0.0]
    with pytest.raises(kdret.NumericsError):
        kdret.temperature_softmax([1.0, float("nan")], 1.0)


def test_losses():
    assert kdret.soft_loss_ce([3.0, 1.0], [0.0, 0.0], 1.0) == pytest.approx(math.log(2), rel=1e-14)
    assert kdret.hard_loss([0, 1, 1, 0], [0.0] * 4) == pytest.approx(math.log(4), rel=1e-14)
    s, t, y = [0.3, -1.0, 2.0], [1.0, 0.0, -0.5], [0, 0, 1]
    assert kdret.combined_loss(y, None, s, alpha=0.0) == kdret.hard_loss(y, s)
    assert kdret.combined_loss(y, t, s, alpha=1.0, temperature=3.0, soft_loss="mse") == kdret.soft_loss_mse(t, s, 3.0)
    with pytest.raises(kdret.CacheError):
        kdret.combined_loss(y, None, s, alpha=0.5)
    with pytest.raises(kdret.Error):
        kdret.hard_loss([0, 0, 0], s)


def test_metrics():
    labels = [[1, 0, 0, 0], [0, 1, 0, 1]]
    scores = [[0.9, 0.1, 0.2, 0.3], [0.8, 0.7, 0.6, 0.1]]
    assert kdret.recall_micro(labels, scores, 3) == pytest.approx(200 / 3)
    assert kdret.recall_macro(labels, scores, 3) == pytest.approx(75.0)
    r = kdret.report(labels, scores)
    assert r["N"] == 2 and r["R1"] == pytest.approx(100 / 3)
    assert kdret.recall_micro(labels, scores, 4) == 100.0


def test_mining_and_models():
    docs, claims = kdret.make_toy(docs=30, claims=10, seed=1)
    assert len(docs) == 30 and len(claims) == 10
    cid, text, gold = claims[0]
    top = kdret.mine_candidates(docs, text, 5)
    assert len(top) == 5
    assert [s for _, s in top] == sorted((s for _, s in top), reverse=True)

    student = kdret.StudentModel("cnn", vocab_size=50, embed_dim=8, hidden_dim=6, seed=2)
    d = student.encode_document([3, 4, 5, 6])
    assert len(d) == 6 and all(math.isfinite(x) for x in d)
    assert student.encode_document([3, 4, 5, 6]) == d
    teacher = kdret.TeacherModel(vocab_size=50, embed_dim=8, hidden_dim=6, seed=2)
    assert math.isfinite(teacher.score([3, 4], [5, 6, 7]))
    with pytest.raises(kdret.VocabError):
        student.encode_claim([99])


def test_cli_roundtrip_and_retriever(tmp_path):
    exe = os.environ.get("KDRET_CLI")
    if not exe:
        pytest.skip("KDRET_CLI not set")
    run = lambda *a: subprocess.run([exe, *a], cwd=tmp_path, check=True, capture_output=True, text=True)
    run("make-toy", "--out", "toy", "--docs", "40", "--claims", "60")
    run("build-dataset", "--corpus", "toy/corpus.jsonl", "--claims", "toy/claims.jsonl", "--out", "ds")
    run("train-student", "--dataset", "ds", "--out", "s.ckpt", "--epochs", "1", "--hidden", "6", "--embed", "6")

    docs = [(d["id"], d["text"]) for d in map(__import__("json").loads, open(tmp_path / "ds/corpus.jsonl"))]
    r = kdret.Retriever(str(tmp_path / "s.ckpt"), docs)
    assert len(r) == 40
    hits = r.retrieve("e001 f002 e003", 40)
    assert sorted(h[0] for h in hits) == sorted(d[0] for d in docs)
    assert r.ledger() == {"doc_encoder": 40, "claim_encoder": 1, "join_head": 40, "teacher_joint": 0}

    bad = subprocess.run([exe, "evaluate", "--bogus"], cwd=tmp_path, capture_output=True)
    assert bad.returncode == 2

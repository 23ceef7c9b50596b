"""Smoke tests for the python surface: shapes, oracles, one tiny training."""
import math
from pathlib import Path

import numpy as np
import pytest

import sagvae

DATA = Path(__file__).resolve().parents[2] / "data"


def test_normalize_adjacency_matches_numpy():
    rng = np.random.RandomState(0)
    a = rng.rand(6, 6)
    a = np.triu(a, 1)
    a = a + a.T
    got = sagvae.normalize_adjacency(a)
    a_hat = a + np.eye(6)
    d = np.diag(1.0 / np.sqrt(a_hat.sum(axis=1)))
    want = d @ a_hat @ d
    assert np.allclose(got, want, atol=1e-12)


def test_masked_softmax_rows_are_simplices():
    logits = np.array([[2.0, 1.0, 0.0], [0.0, 0.0, 0.0], [5.0, -1.0, 0.5]])
    mask = np.array([[1.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    out = sagvae.masked_softmax(logits, mask)
    assert np.allclose(out.sum(axis=1), 1.0)
    assert out[1, 1] == 0.0
    assert abs(out[0, 0] - math.exp(2) / (math.exp(2) + math.e + 1)) < 1e-12


def test_gumbel_sample_is_simplex_and_seeded():
    la = np.log(np.array([[0.7, 0.3]]))
    s1 = sagvae.gumbel_softmax_sample(la, 0.5, seed=4)
    s2 = sagvae.gumbel_softmax_sample(la, 0.5, seed=4)
    assert np.array_equal(s1, s2)
    assert abs(s1.sum() - 1.0) < 1e-9


def test_kl_values():
    assert sagvae.kl_gaussian_std(np.array([1.0]), np.array([0.0])) == pytest.approx(0.5)
    q = np.array([[0.9, 0.1]])
    want = 0.9 * math.log(1.8) + 0.1 * math.log(0.2)
    assert sagvae.kl_edge(q, 0.5) == pytest.approx(want)


def test_edge_prf_hand_case():
    truth = np.zeros((4, 4))
    truth[0, 1] = truth[1, 0] = 1
    truth[2, 3] = truth[3, 2] = 1
    probs = np.zeros((4, 4))
    probs[0, 1] = probs[1, 0] = 0.9
    probs[1, 2] = probs[2, 1] = 0.8
    m = sagvae.edge_prf(probs, truth)
    assert m["precision"] == pytest.approx(0.5)
    assert m["recall"] == pytest.approx(0.5)


def test_karate_generation_and_baseline():
    sets = sagvae.gen_karate(str(DATA / "karate_edges.csv"), str(DATA / "karate_labels.csv"),
                             patterns=2, samples=3, dim=4, seed=1)
    assert len(sets) == 2
    assert sets[0]["features"].shape == (3, 34, 4)
    assert sets[1]["holdout"]
    probs = sagvae.pairwise_product_baseline(sets[0]["features"])
    assert probs.shape == (34, 34)
    assert np.allclose(probs, probs.T)


def test_model_trains_and_roundtrips(tmp_path):
    rng = np.random.RandomState(1)
    x = rng.randn(12, 6, 2)
    cfg = {"n": 6, "d": 2, "latent_mode": "dimension-wise", "latent_dim": 2,
           "enc_hidden": [16], "edge_hidden": [16], "dec_hidden": [4],
           "output_activation": "identity"}
    model = sagvae.Model(cfg, seed=7)
    rows = model.train(x, {"epochs": 25, "batch_size": 6, "recon_loss": "mse", "seed": 1})
    assert len(rows) == 25
    assert rows[-1]["total"] < rows[0]["total"]
    assert all(r["kl_z"] >= 0 and r["kl_a"] >= 0 for r in rows)

    probs = model.edge_probabilities(x)
    assert probs.shape == (6, 6)
    assert np.allclose(probs, probs.T) and np.allclose(np.diag(probs), 1.0)

    recon = model.reconstruct(x)
    assert recon.shape == (12, 12)

    path = tmp_path / "model.ckpt"
    model.save(str(path))
    back = sagvae.Model.load(str(path))
    assert np.array_equal(back.edge_probabilities(x), probs)
    assert back.config["n"] == 6


def test_idx_loader_and_perturbation():
    ds = sagvae.load_idx(str(DATA / "digits14-images-idx3-ubyte"),
                         str(DATA / "digits14-labels-idx1-ubyte"), [3])
    assert ds["side"] == 14
    assert all(l == 3 for l in ds["labels"])
    img = ds["images"][0]
    noisy = sagvae.perturb_uniform(img, 50, seed=2)
    assert ((noisy != img).sum()) >= 45
    assert noisy.min() >= 0.0 and noisy.max() <= 1.0

"""Binding acceptance suite. Each test carries a ``criterion`` marker and is reported in the terminal summary."""

import math
import random

import numpy as np
import pytest
import torch

from aste_graph.cli import preprocess, run_ablations
from aste_graph.config import toy_config
from aste_graph.corpus import DATASETS, SPLITS, load_split
from aste_graph.evaluation import score
from aste_graph.hfim import GatedGraphConv, gated_graph_conv, gcn_conv, sadpool
from aste_graph.model import ABLATIONS
from aste_graph.separation import row_kl, separation_loss
from aste_graph.spans import enumerate_spans
from aste_graph.training import build_model, evaluate, train
from conftest import DATA_DIR, FIXTURE_DIR, check_ablation_trace, load_fixture_sentences, trace_ablation
from test_evaluation import oracle as score_oracle, random_triplet
from test_hfim import dense_gcn_oracle, gated_oracle, gru_oracle, random_graph
from test_spans import brute_force_spans

C1 = "1 dataset statistics match the published table exactly"
C2 = "2 layer oracles (GCNConv 1e-6, gated conv exact/1e-6, SADPool 1e-7)"
C3 = "3 separation loss analytics (row KL, monotonicity, gradient)"
C4 = "4 span enumeration, scorer oracle, score(gold, gold) on every split"
C5 = "5 toy model overfits the fixture"
C6 = "6 all eight ablations run with the intended wiring"

# (NEU, POS, NEG, #S, #T) per dataset and split, as published
PUBLISHED_STATS = {
    "14lap": {"train": (126, 817, 517, 906, 1460), "dev": (36, 169, 141, 219, 346), "test": (63, 364, 116, 328, 543)},
    "14res": {"train": (166, 1692, 480, 1266, 2338), "dev": (54, 404, 119, 310, 577),
              "test": (66, 773, 155, 492, 994)},
    "15res": {"train": (25, 783, 205, 605, 1013), "dev": (11, 185, 53, 148, 249), "test": (25, 317, 143, 322, 485)},
    "16res": {"train": (50, 1015, 329, 857, 1394), "dev": (11, 252, 76, 210, 339), "test": (29, 407, 78, 326, 514)},
}


def require_data():
    missing = [str(DATA_DIR / ds / f"{s}_triplets.txt") for ds in DATASETS for s in SPLITS
               if not (DATA_DIR / ds / f"{s}_triplets.txt").exists()]
    if missing:
        pytest.fail(f"ASTE-Data-V2 not found under {DATA_DIR} (set ASTE_DATA_DIR); missing e.g. {missing[0]}")


# ---- 1 ----------------------------------------------------------------------------------------

@pytest.mark.criterion(C1)
def test_dataset_statistics(tmp_path):
    require_data()
    rows = preprocess(DATA_DIR, tmp_path, datasets=DATASETS)
    got = {(ds, split): (r["NEU"], r["POS"], r["NEG"], r["#S"], r["#T"]) for ds, split, r in rows}
    expected = {(ds, split): v for ds, splits in PUBLISHED_STATS.items() for split, v in splits.items()}
    assert got == expected


# ---- 2 ----------------------------------------------------------------------------------------

@pytest.mark.criterion(C2)
def test_gcn_conv_oracle():
    rng = np.random.default_rng(2024)
    for trial in range(100):
        n = int(rng.integers(1, 7))
        adj = random_graph(rng, n, weighted=trial % 2 == 1)
        h, theta = rng.normal(size=(n, 8)), rng.normal(size=(8, 8))
        got = gcn_conv(torch.tensor(h), torch.tensor(adj), torch.tensor(theta)).numpy()
        assert np.abs(got - dense_gcn_oracle(h, adj, theta)).max() < 1e-6


@pytest.mark.criterion(C2)
def test_gated_graph_conv_oracle():
    torch.manual_seed(1)
    module = GatedGraphConv(8, layers=1)
    cell = torch.nn.GRUCell(8, 8)
    cell.load_state_dict(module.gru.state_dict())
    h = torch.randn(5, 8)
    isolated = gated_graph_conv(h, torch.zeros(2, 0, dtype=torch.long), torch.zeros(0), module)
    assert torch.equal(isolated, cell(torch.zeros(5, 8), h))
    assert np.abs(isolated.detach().double().numpy()
                  - gru_oracle(np.zeros((5, 8)), h.double().numpy(), module.gru)).max() < 1e-6

    rng = np.random.default_rng(7)
    for trial in range(100):
        n = int(rng.integers(1, 7))
        module = GatedGraphConv(8, layers=1 + trial % 3).double()
        edges = [(s, d) for s in range(n) for d in range(n) if rng.random() < 0.5]
        weights = rng.uniform(-1, 1, size=len(edges))
        h = rng.normal(size=(n, 8))
        edge_index = torch.tensor(edges, dtype=torch.long).reshape(-1, 2).T
        got = gated_graph_conv(torch.tensor(h), edge_index, torch.tensor(weights), module).detach().numpy()
        assert np.abs(got - gated_oracle(h, edges, weights, module)).max() < 1e-6


@pytest.mark.criterion(C2)
def test_sadpool_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        h = rng.normal(size=(n, 8))
        a = rng.dirichlet(np.ones(n), size=n)
        expected = np.maximum(0, h * (1 + a.mean(1, keepdims=True) + a.max(1, keepdims=True)))
        got = sadpool(torch.tensor(h), torch.tensor(a)).numpy()
        assert np.abs(got - expected).max() < 1e-7


# ---- 3 ----------------------------------------------------------------------------------------

def sym_row_kl(a, b):
    return row_kl(a, b) + row_kl(b, a)


@pytest.mark.criterion(C3)
def test_row_kl_hand_value():
    p = torch.tensor([0.0, 0.0], dtype=torch.float64)
    q = torch.tensor([0.0, math.log(3)], dtype=torch.float64)
    assert abs(row_kl(p, q).item() - 0.1438) <= 1e-3


@pytest.mark.criterion(C3)
def test_separation_monotonicity():
    gen = torch.Generator().manual_seed(3)
    for _ in range(100):
        m = int(torch.randint(2, 6, (1,), generator=gen))
        syn = torch.randn(m, m, generator=gen, dtype=torch.float64)
        sem = torch.randn(m, m, generator=gen, dtype=torch.float64)
        row = int(torch.randint(0, m, (1,), generator=gen))
        t = 1.0 + 2.0 * float(torch.rand(1, generator=gen)) + 0.05
        pushed = sem.clone()
        pushed[row] = syn[row] + t * (sem[row] - syn[row])
        assert sym_row_kl(syn[row], pushed[row]) > sym_row_kl(syn[row], sem[row])
        for i in range(m):
            if i != row:
                assert torch.equal(pushed[i], sem[i])
        assert separation_loss(syn, pushed).item() < separation_loss(syn, sem).item()


@pytest.mark.criterion(C3)
def test_separation_gradient():
    gen = torch.Generator().manual_seed(5)
    step = 1e-6
    for _ in range(10):
        syn = torch.randn(3, 3, generator=gen, dtype=torch.float64, requires_grad=True)
        sem = torch.randn(3, 3, generator=gen, dtype=torch.float64, requires_grad=True)
        separation_loss(syn, sem).backward()
        for x, other, first in ((syn, sem, True), (sem, syn, False)):
            numeric = torch.zeros_like(x)
            with torch.no_grad():
                for idx in np.ndindex(3, 3):
                    plus, minus = x.detach().clone(), x.detach().clone()
                    plus[idx] += step
                    minus[idx] -= step
                    args_p = (plus, other.detach()) if first else (other.detach(), plus)
                    args_m = (minus, other.detach()) if first else (other.detach(), minus)
                    numeric[idx] = (separation_loss(*args_p) - separation_loss(*args_m)) / (2 * step)
            rel = (x.grad - numeric).norm() / max(x.grad.norm(), numeric.norm())
            assert rel.item() < 1e-4


# ---- 4 ----------------------------------------------------------------------------------------

@pytest.mark.criterion(C4)
def test_enumerate_spans_brute_force():
    for max_len in (1, 2, 8, 50):
        for n in range(1, 51):
            assert enumerate_spans(n, max_len) == brute_force_spans(n, max_len)


@pytest.mark.criterion(C4)
def test_scorer_brute_force():
    rng = random.Random(500)
    for _ in range(500):
        n = rng.randrange(1, 4)
        gold = [[random_triplet(rng) for _ in range(rng.randrange(0, 4))] for _ in range(n)]
        pred = [[random_triplet(rng) for _ in range(rng.randrange(0, 4))] for _ in range(n)]
        report = score(pred, gold)
        p, r, f, m = score_oracle(pred, gold)
        assert report.matched == m
        assert (report.precision, report.recall, report.f1) == pytest.approx((p, r, f), abs=1e-12)


@pytest.mark.criterion(C4)
@pytest.mark.parametrize("split", SPLITS)
def test_score_gold_on_fixture(split):
    gold = [s.gold_triplets for s in load_fixture_sentences(split)]
    assert score(gold, gold).f1 == 1.0


@pytest.mark.criterion(C4)
def test_score_gold_on_every_split():
    require_data()
    for ds in DATASETS:
        for split in SPLITS:
            gold = [s.gold_triplets for s in load_split(DATA_DIR, ds, split)]
            r = score(gold, gold)
            assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0), (ds, split)


# ---- 5 ----------------------------------------------------------------------------------------

@pytest.mark.criterion(C5)
def test_toy_overfit():
    cfg = toy_config(data_dir=str(FIXTURE_DIR), dataset="toy")
    sentences = load_fixture_sentences("train")
    assert len(sentences) == 10
    model, result = train(cfg, sentences, sentences, max_steps=200)
    assert len(result.step_losses) <= 200
    first = result.step_losses[:20]
    assert len(first) == 20
    assert all(b < a for a, b in zip(first, first[1:])), first
    report, _ = evaluate(model, sentences)
    assert report.f1 >= 0.95, report


# ---- 6 ----------------------------------------------------------------------------------------

@pytest.mark.criterion(C6)
def test_ablations_end_to_end(tmp_path):
    cfg = toy_config(data_dir=str(FIXTURE_DIR), dataset="toy", epochs=5)
    rows = run_ablations(cfg, tmp_path, max_steps=5)
    assert [r["ablation"] for r in rows] == list(ABLATIONS)
    for row in rows:
        assert row["status"] == "ok", row
        assert 0.0 <= row["test_f1"] <= 1.0
        assert (tmp_path / f"toy_{row['ablation']}" / "config.json").exists()


@pytest.mark.criterion(C6)
@pytest.mark.parametrize("name", ABLATIONS)
def test_ablation_traces(name, monkeypatch):
    cfg = toy_config(ablation=name)
    model = build_model(cfg)
    batch = model.collate(load_fixture_sentences("train"))
    calls, fusion_inputs, out = trace_ablation(model, batch, monkeypatch)
    check_ablation_trace(name, calls, fusion_inputs, out)

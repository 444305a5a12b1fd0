import math

import numpy as np
import pytest
import torch

from aste_graph.separation import row_kl, separation_loss, separation_term


def kl_reference(p_logits, q_logits):
    p = np.exp(p_logits) / np.exp(p_logits).sum()
    q = np.exp(q_logits) / np.exp(q_logits).sum()
    return float(sum(pi * math.log(pi / qi) for pi, qi in zip(p, q)))


def test_row_kl_identical_is_zero():
    x = torch.randn(6)
    assert row_kl(x, x).item() == 0.0


def test_row_kl_hand_value_and_asymmetry():
    p = torch.tensor([0.0, 0.0], dtype=torch.float64)
    q = torch.tensor([0.0, math.log(3)], dtype=torch.float64)
    expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
    assert row_kl(p, q).item() == pytest.approx(expected, abs=1e-12)
    assert row_kl(p, q).item() == pytest.approx(0.1438, abs=1e-3)
    reverse = 0.25 * math.log(0.25 / 0.5) + 0.75 * math.log(0.75 / 0.5)
    assert row_kl(q, p).item() == pytest.approx(reverse, abs=1e-12)
    assert abs(row_kl(p, q).item() - row_kl(q, p).item()) > 1e-3


def test_row_kl_matches_reference_on_random_rows():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p, q = rng.normal(size=5), rng.normal(size=5)
        got = row_kl(torch.tensor(p), torch.tensor(q)).item()
        assert got == pytest.approx(kl_reference(p, q), rel=1e-10)
        assert got >= 0


def test_identical_matrices_give_m_log_one_over_eps():
    a = torch.rand(4, 4, dtype=torch.float64)
    loss = separation_loss(a, a.clone(), epsilon=1e-8)
    assert loss.item() == pytest.approx(4 * math.log(1 + 1e8), rel=1e-12)
    assert loss.item() == pytest.approx(4 * 18.42, abs=0.01)


def test_separation_term_values():
    assert separation_term(1.0, 0.0).item() == pytest.approx(math.log(2))
    assert separation_term(9.0, 0.0).item() == pytest.approx(math.log(10 / 9))
    assert separation_term(9.0, 0.0).item() == pytest.approx(0.1054, abs=1e-4)


def test_loss_equals_formula_on_random_input():
    rng = np.random.default_rng(1)
    syn = (rng.random((5, 5)) > 0.5).astype(float)
    sem = rng.dirichlet(np.ones(5), size=5)
    expected = sum(math.log(1 + 1 / (kl_reference(syn[i], sem[i]) + kl_reference(sem[i], syn[i]) + 1e-8))
                   for i in range(5))
    got = separation_loss(torch.tensor(syn), torch.tensor(sem)).item()
    assert got == pytest.approx(expected, rel=1e-10)


def test_masked_batch_matches_unpadded_sentences():
    a1, b1 = torch.rand(3, 3, dtype=torch.float64), torch.rand(3, 3, dtype=torch.float64)
    a2, b2 = torch.rand(5, 5, dtype=torch.float64), torch.rand(5, 5, dtype=torch.float64)
    syn = torch.zeros(2, 5, 5, dtype=torch.float64)
    sem = torch.zeros(2, 5, 5, dtype=torch.float64)
    syn[0, :3, :3], sem[0, :3, :3] = a1, b1
    syn[1], sem[1] = a2, b2
    mask = torch.tensor([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=torch.bool)
    batched = separation_loss(syn, sem, mask)
    expected = (separation_loss(a1, b1) + separation_loss(a2, b2)) / 2
    assert batched.item() == pytest.approx(expected.item(), rel=1e-12)
    syn.requires_grad_(True)
    sem.requires_grad_(True)
    separation_loss(syn, sem, mask).backward()
    assert torch.isfinite(sem.grad).all() and torch.isfinite(syn.grad).all()


def test_loss_positive_and_finite():
    for _ in range(20):
        a, b = torch.randn(4, 4), torch.randn(4, 4)
        loss = separation_loss(a, b)
        assert loss.item() > 0 and math.isfinite(loss.item())

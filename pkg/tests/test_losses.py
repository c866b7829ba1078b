import math

import numpy as np
import pytest
import torch

from pestalk import losses as L
from pestalk.errors import BadDims, BadLabel, BadPairing, TooShort, ZeroVector


def rand(*shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=g, dtype=torch.float64)


def test_position_loss_loop_oracle():
    p, g = rand(3, 6, 52, seed=1), rand(3, 6, 52, seed=2)
    acc = 0.0
    for n in range(3):
        for t in range(6):
            acc += sum((p[n, t, k] - g[n, t, k]).item() ** 2 for k in range(52))
    assert L.position_loss(p, g).item() == pytest.approx(acc / 18, rel=1e-12)


def test_motion_loss_loop_oracle_and_offset_invariance():
    p, g = rand(7, 52, seed=3), rand(7, 52, seed=4)
    acc = 0.0
    for t in range(1, 7):
        d = (p[t] - p[t - 1]) - (g[t] - g[t - 1])
        acc += (d**2).sum().item()
    assert L.motion_loss(p, g).item() == pytest.approx(acc / 6, rel=1e-12)
    assert L.motion_loss(g + 0.25, g).item() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(TooShort):
        L.motion_loss(p[:1], g[:1])


def test_shape_mismatch():
    with pytest.raises(BadDims):
        L.position_loss(rand(4, 52), rand(5, 52))


def test_classification_loss():
    assert L.classification_loss(torch.zeros(8, dtype=torch.float64), [3]).item() == pytest.approx(math.log(8), abs=1e-12)
    logits = torch.tensor([[2.0, 0.0, -1.0]], dtype=torch.float64)
    expected = -math.log(math.exp(2) / (math.exp(2) + 1 + math.exp(-1)))
    assert L.classification_loss(logits, [0]).item() == pytest.approx(expected, rel=1e-12)
    with pytest.raises(BadLabel):
        L.classification_loss(logits, [3])


def test_margin_clamped():
    m = L.Margin(-0.5)
    assert m().item() == 0.0
    assert L.Margin(0.7)().item() == pytest.approx(0.7)


def test_pairwise_margin_loss_values():
    zc_n = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
    zc_e = torch.tensor([[3.0, 4.0]], dtype=torch.float64)
    ze_n = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
    ze_e = torch.tensor([[0.3, 0.4]], dtype=torch.float64)
    assert L.pairwise_margin_loss(zc_n, zc_e, ze_n, ze_e, delta=1.0).item() == pytest.approx(5.0 + 0.5)
    assert L.pairwise_margin_loss(zc_n, zc_n, ze_n, ze_e * 10, delta=1.0).item() == pytest.approx(0.0)
    with pytest.raises(BadPairing):
        L.pairwise_margin_loss(zc_n, zc_e, ze_n, torch.zeros(2, 2))


def test_disentanglement_orientations():
    C = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    E = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    # content identical, emotion orthogonal: the ideal outcome
    corrected = L.disentanglement_loss(E, C, C, C, "corrected").item()
    literal = L.disentanglement_loss(E, C, C, C, "literal").item()
    assert corrected == pytest.approx(0.0, abs=1e-12)
    assert literal == pytest.approx(2.0, abs=1e-12)
    rng = np.random.default_rng(0)
    x = [torch.as_tensor(rng.normal(size=(4, 6))) for _ in range(4)]
    a = L.disentanglement_loss(*x, orientation="corrected").item()
    b = L.disentanglement_loss(*x, orientation="literal").item()
    assert a + b == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ZeroVector):
        L.disentanglement_loss(torch.zeros(1, 2), E, C, C)
    with pytest.raises(ValueError):
        L.disentanglement_loss(E, E, C, C, "sideways")


def test_total_loss_weights():
    ones = {k: torch.tensor(1.0, dtype=torch.float64) for k in L.COMPONENTS}
    total, log = L.total_loss(ones)
    assert total.item() == pytest.approx(1.61, abs=1e-12)
    assert log["L_total"] == pytest.approx(1.61, abs=1e-12)
    total, _ = L.total_loss(ones, L.LossWeights(1, 0, 0, 0))
    assert total.item() == 1.0
    with pytest.raises(ValueError):
        L.LossWeights(position=-1)

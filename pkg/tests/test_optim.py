import math

import pytest
import torch

from saicl.errors import SaiclError
from saicl.optim import RAdam, radam_step, rectification

from oracles import radam_quadratic_oracle


def p64(*v):
    return torch.tensor(v, dtype=torch.float64)


class TestRAdam:
    def test_zero_gradient_no_decay(self):
        params = {"w": p64(1.0, -2.0, 3.0)}
        before = params["w"].clone()
        state = {}
        for t in range(1, 20):
            radam_step(params, {"w": torch.zeros(3, dtype=torch.float64)}, state, 1e-2, 0.0, t)
        assert torch.equal(params["w"], before)

    def test_zero_gradient_decay_is_exact(self):
        lr, wd = 1e-2, 0.5
        params = {"w": p64(1.0, -2.0)}
        state = {}
        want = params["w"].clone()
        for t in range(1, 11):
            radam_step(params, {"w": torch.zeros(2, dtype=torch.float64)}, state, lr, wd, t)
            want = want * (1 - lr * wd)
            assert torch.equal(params["w"], want)

    @pytest.mark.parametrize("wd", [0.0, 0.1])
    def test_quadratic_trajectory(self, wd):
        lr = 0.05
        w = torch.tensor([1.5], dtype=torch.float64, requires_grad=True)
        opt = RAdam([("w", w)], lr=lr, weight_decay=wd)
        path = []
        for _ in range(50):
            opt.zero_grad()
            (w ** 2).sum().backward()
            opt.step()
            path.append(float(w.detach()))
        want = radam_quadratic_oracle(1.5, lr, 50, weight_decay=wd)
        assert max(abs(a - b) for a, b in zip(path, want)) < 1e-10

    def test_rectification_switch(self):
        rho_inf = 2 / (1 - 0.999) - 1
        first = next(t for t in range(1, 100) if rectification(t, 0.999)[1] is not None)
        rho, _ = rectification(first - 1, 0.999)
        assert rho <= 4 < rectification(first, 0.999)[0]
        assert rectification(10_000, 0.999)[0] == pytest.approx(rho_inf, rel=1e-3)
        assert rectification(10_000, 0.999)[1] == pytest.approx(1.0, abs=1e-2)
        # early steps are the un-adapted momentum update
        w = {"w": p64(1.0)}
        radam_step(w, {"w": p64(4.0)}, {}, 0.1, 0.0, 1)
        assert float(w["w"]) == pytest.approx(1.0 - 0.1 * 4.0)
        assert math.isfinite(rho)

    def test_non_finite_gradient(self):
        with pytest.raises(SaiclError) as e:
            radam_step({"w": p64(1.0)}, {"w": p64(float("nan"))}, {}, 0.1, 0.0, 1)
        assert e.value.code == "nan_grad" and "'w'" in e.value.message

    def test_missing_gradient_skipped(self):
        params = {"a": p64(1.0), "b": p64(2.0)}
        radam_step(params, {"a": p64(1.0), "b": None}, {}, 0.1, 0.5, 1)
        assert float(params["b"]) == 2.0

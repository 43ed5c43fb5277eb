"""Hypothesis classes, nets, filters, medians, and the scale ladder."""

import numpy as np
import pytest

from steiner_search import hypothesis as H


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class TestBuildNet:
    def test_unit_demand_grid(self):
        net = H.build_net(H.HypothesisClass.unit_demand(2), 0.5)
        assert net.size == 9
        vals = sorted(set(map(tuple, net.members.dense.tolist())))
        assert (0.0, 0.0) in vals and (1.0, 1.0) in vals and (0.5, 1.0) in vals

    def test_finite_table_is_its_own_net(self):
        table = np.arange(21).reshape(7, 3) / 21.0
        net = H.build_net(H.HypothesisClass.finite_table(table), 0.3)
        assert net.size == 7

    def test_linear_one_dim_grid(self):
        net = H.build_net(H.HypothesisClass.linear(1), 0.5)
        got = sorted(net.members.dense.ravel().tolist())
        assert got == [-1.0, -0.5, 0.0, 0.5, 1.0]

    def test_net_too_large(self):
        with pytest.raises(H.NetTooLarge):
            H.build_net(H.HypothesisClass.linear(8), 0.01)

    def test_sparse_net_members_are_sparse(self):
        net = H.build_net(H.HypothesisClass.sparse_linear(5, 2), 0.5)
        dense = net.members.to_dense()
        assert np.all(np.count_nonzero(dense, axis=1) <= 2)
        assert np.all(np.linalg.norm(dense, axis=1) <= 1 + 1e-12)
        # origin appears exactly once
        assert int(np.sum(np.all(dense == 0, axis=1))) == 1

    def test_covering_property(self):
        # every random member is within eps of some net member in d_infinity
        rng = np.random.default_rng(0)
        for hclass, eps in [
            (H.HypothesisClass.linear(2), 0.3),
            (H.HypothesisClass.sparse_linear(4, 1), 0.3),
            (H.HypothesisClass.unit_demand(2), 0.25),
        ]:
            net = H.build_net(hclass, eps)
            dense = net.members.to_dense()
            for _ in range(300):
                g = hclass.random_member(rng)
                if hclass.kind in ("linear", "sparse_linear"):
                    dist = np.min(np.linalg.norm(dense - g[None, :], axis=1))
                else:
                    ctxs = [hclass.random_context(rng) for _ in range(200)]
                    gv = np.array([np.max(g * c) for c in ctxs])
                    nv = np.stack([np.max(dense * c[None, :], axis=1) for c in ctxs], axis=1)
                    dist = np.min(np.max(np.abs(nv - gv[None, :]), axis=1))
                assert dist <= eps + 1e-9


class TestFilter:
    def _three_value_net(self):
        # finite table with members valued {-1, 0, 1} at the only context
        table = np.array([[-1.0], [0.0], [1.0]])
        return H.build_net(H.HypothesisClass.finite_table(table), 0.1)

    def test_margin_zero_keeps_below(self):
        net = H.filter_net(self._three_value_net(), 0, 0.1, +1, 0.0)
        assert net.alive.tolist() == [True, True, False]

    def test_large_margin_keeps_all(self):
        net = H.filter_net(self._three_value_net(), 0, 0.1, +1, 1.0)
        assert net.alive.tolist() == [True, True, True]

    def test_negative_feedback_with_margin(self):
        # sigma=-1, margin 0.5 keeps members with y - f(x) <= 0.5
        net = H.filter_net(self._three_value_net(), 0, 0.1, -1, 0.5)
        assert net.alive.tolist() == [False, True, True]

    def test_never_resurrects_and_monotone_in_margin(self):
        rng = np.random.default_rng(1)
        table = rng.random((40, 6))
        base = H.build_net(H.HypothesisClass.finite_table(table), 0.05)
        small = big = base
        for _ in range(30):
            x = int(rng.integers(6))
            y = float(rng.random())
            s = int(rng.choice([-1, 1]))
            prev = small.alive.copy()
            small = H.filter_net(small, x, y, s, 0.02)
            big = H.filter_net(big, x, y, s, 0.1)
            assert not np.any(small.alive & ~prev)
            assert np.all(small.alive <= big.alive)


class TestWidthAndMedian:
    def _net_with_values(self, vals):
        table = np.asarray(vals, dtype=float)[:, None]
        return H.build_net(H.HypothesisClass.finite_table(table), 0.1)

    def test_width(self):
        assert H.set_width(self._net_with_values([0.2, 0.7]), 0) == pytest.approx(0.5)
        assert H.set_width(self._net_with_values([0.4]), 0) == 0.0

    def test_width_of_fine_linear_net(self):
        net = H.build_net(H.HypothesisClass.linear(2), 0.1)
        w = H.set_width(net, unit([1, 0]))
        assert abs(w - 2.0) <= 0.1

    def test_width_empty_raises(self):
        net = self._net_with_values([0.1])
        net.alive[:] = False
        with pytest.raises(H.EmptyNet):
            H.set_width(net, 0)

    def test_lower_median(self):
        assert H.set_median(self._net_with_values([0, 1, 2]), 0) == 1.0
        assert H.set_median(self._net_with_values([0, 1, 2, 3]), 0) == 1.0

    def test_weighted_median(self):
        net = self._net_with_values([0, 1])
        assert H.set_median(net, 0, weights=np.array([0.9, 0.1])) == 0.0
        assert H.set_median(net, 0, weights=np.array([0.4, 0.6])) == 1.0

    def test_width_shrinks_along_replayed_direction(self):
        net = H.build_net(H.HypothesisClass.linear(2), 0.2)
        x = unit([1, 1])
        widths = [H.set_width(net, x)]
        rng = np.random.default_rng(2)
        for _ in range(10):
            y = float(rng.uniform(-0.5, 0.5))
            net = H.filter_net(net, x, y, int(rng.choice([-1, 1])), net.scale)
            if net.alive_count == 0:
                break
            widths.append(H.set_width(net, x))
        assert all(b <= a + 1e-12 for a, b in zip(widths, widths[1:]))


class TestFiniteTableJson:
    def test_round_trip(self, tmp_path):
        doc = {"contexts": ["a", "b"], "hypotheses": [[0.1, 0.9], [0.4, 0.2]]}
        p = tmp_path / "cls.json"
        p.write_text(__import__("json").dumps(doc))
        hclass, ctx = H.load_finite_table(str(p))
        assert ctx == ["a", "b"]
        assert hclass.evaluate(1, 0) == pytest.approx(0.4)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            H.load_finite_table({"contexts": ["a"], "hypotheses": [[1, 2]]})


class TestScaleLadder:
    def test_initial_scale_is_buildable(self):
        ladder = H.ScaleLadder(H.HypothesisClass.sparse_linear(12, 2),
                               build_target=300_000)
        assert ladder.finest.size <= 300_000
        assert ladder.finest.alive_count == ladder.finest.size

    def test_observe_filters_all_nets(self):
        ladder = H.ScaleLadder(H.HypothesisClass.linear(2), ladder_dim=2)
        x = unit([1, 0])
        before = ladder.finest.alive_count
        ladder.observe(x, 0.0, +1)
        after = ladder.finest.alive_count
        assert after < before
        # members on the kept side (f(x) <= margin) survive
        vals = ladder.finest.members.values(x)
        assert np.all(vals[ladder.finest.alive] <= ladder.finest_scale + 1e-12)

    def test_refinement_preserves_hidden_neighbor(self):
        rng = np.random.default_rng(3)
        hclass = H.HypothesisClass.linear(2)
        hidden = np.array([0.31, -0.12])
        ladder = H.ScaleLadder(hclass, ladder_dim=2, build_target=100_000)
        for _ in range(60):
            x = unit(rng.standard_normal(2))
            u = float(hidden @ x)
            y = u + float(rng.normal(scale=0.05))
            ladder.observe(x, y, +1 if y >= u else -1)
        refined = ladder.maybe_refine(6)
        assert refined
        fine = ladder.finest
        assert fine.scale < 0.01
        dense = fine.members.to_dense(idx=fine.alive_indices())
        gap = np.min(np.linalg.norm(dense - hidden[None, :], axis=1))
        assert gap <= fine.scale

    def test_coarse_net_built_on_demand(self):
        ladder = H.ScaleLadder(H.HypothesisClass.linear(2), ladder_dim=2)
        net = ladder.ensure_coarse(2)
        assert net.scale == pytest.approx(0.25)
        assert net.alive_count > 0

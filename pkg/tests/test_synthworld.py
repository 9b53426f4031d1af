import numpy as np
import pytest

from iscount.estimator import exact_is_moments, exact_moments
from iscount.geogrid import CovariateRaster, GridSpec, covariate_at, downsample, full_mask, make_tile_grid
from iscount.proposal import ProposalError, identity_proposal, kl_divergence, uniform_proposal
from iscount.sampler import tile_of
from iscount.synthworld import (LinkSpec, SyntheticWorld, count_at, count_integrals, exhaustive_count,
                                generate_world, load_world, optimal_proposal, save_world)


def _world_with_counts(counts, ncols, nrows=1):
    g = GridSpec(ncols, nrows, 0, 0, 1.0)
    raster = CovariateRaster(g, np.ones(g.shape))
    mask = full_mask(g)
    return SyntheticWorld(raster, mask, make_tile_grid(mask, 1.0), counts)


class TestGenerate:
    def test_deterministic_constant_field(self):
        w = generate_world(8, link="linear", scale=1.0, sigma=0.0, covariate_scale=3.0, deterministic=True)
        assert (w.counts == 3).all()
        assert w.truth == 3 * 64

    def test_poisson_constant_field(self):
        w = generate_world(64, link="linear", scale=1.0, sigma=0.0, covariate_scale=4.0, seed=2)
        assert w.counts.mean() == pytest.approx(4.0, abs=4 * np.sqrt(4 / 4096))

    def test_sparsity_one(self):
        w = generate_world(16, sparsity=1.0, seed=5)
        assert w.truth == 0 and not w.counts.any()

    def test_sparsity_fraction(self):
        w = generate_world(20, sparsity=0.25, scale=1e6, seed=1)
        assert (w.counts == 0).sum() == 100

    def test_seed_determinism(self):
        a = generate_world(32, link="power", noise=0.3, sparsity=0.5, seed=9)
        b = generate_world(32, link="power", noise=0.3, sparsity=0.5, seed=9)
        assert a.counts.tobytes() == b.counts.tobytes()
        assert a.raster.values.tobytes() == b.raster.values.tobytes()
        assert generate_world(32, seed=10).counts.tobytes() != a.counts.tobytes()

    @pytest.mark.parametrize("kw", [dict(link="cubic"), dict(link="power", gamma=0), dict(sparsity=1.5),
                                    dict(noise=-1), dict(scale=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            generate_world(4, **kw)

    def test_threshold_link(self):
        w = generate_world(16, link="threshold", threshold=1.0, scale=4.0, deterministic=True)
        h = covariate_at(w.raster, w.tiles.centers[:, 0], w.tiles.centers[:, 1])
        assert ((w.counts > 0) == (h >= 1)).all()

    def test_counts_immutable(self):
        w = generate_world(4)
        with pytest.raises(ValueError):
            w.counts[0] = 5

    def test_rejects_negative_counts(self):
        with pytest.raises(ValueError):
            _world_with_counts([1, -1], 2)


class TestExhaustiveCount:
    def test_small(self):
        assert exhaustive_count(_world_with_counts([0, 10, 5], 3)) == 15
        assert exhaustive_count(_world_with_counts([0, 0], 2)) == 0

    def test_reversed_summation(self):
        w = generate_world(64, link="power", seed=4)
        assert exhaustive_count(w) == int(sum(int(c) for c in reversed(w.counts.tolist())))


class TestCountAt:
    w = _world_with_counts([3, 8], 2)

    def test_center_and_same_tile(self):
        assert count_at(self.w, (1.5, 0.5)) == 8
        assert count_at(self.w, (1.1, 0.9)) == count_at(self.w, (1.9, 0.1))

    def test_dropped_tile_is_zero(self):
        w = generate_world(5, l=2.0)
        assert count_at(w, (4.5, 1.0)) == 0
        inside = w.counts[tile_of(w.tiles, (0.5, 0.5))]
        assert count_at(w, np.array([4.5, 0.5]), np.array([1.0, 0.5])).tolist() == [0, inside]


class TestOptimalProposal:
    def test_two_tiles(self):
        p = optimal_proposal(_world_with_counts([0, 10], 2))
        assert p.density.ravel().tolist() == [0.0, 1.0]

    def test_constant_is_uniform(self):
        p = optimal_proposal(_world_with_counts([4, 4, 4, 4], 2, 2))
        np.testing.assert_allclose(p.density, 0.25)

    def test_empty_world(self):
        w = _world_with_counts([0, 0], 2)
        with pytest.raises(ProposalError):
            optimal_proposal(w)
        assert optimal_proposal(w, 0.1).total_mass() == pytest.approx(1)

    def test_zero_variance_and_kl(self):
        w = generate_world(32, link="power", sparsity=0.6, seed=3)
        q = optimal_proposal(w)
        first, second = count_integrals(w)
        mean, var = exact_is_moments(q, first, second, w.tile_size)
        assert mean == pytest.approx(w.truth, rel=1e-9)
        assert var == pytest.approx(0, abs=1e-9 * w.truth ** 2)
        assert kl_divergence(q, q) == 0
        assert exact_moments(q, q, w.truth)[1] == pytest.approx(0, abs=1e-9 * w.truth ** 2)


class TestWorldProperties:
    def test_linear_identity_equals_optimal(self):
        w = generate_world(32, link="linear", scale=3.0, deterministic=True, seed=6)
        np.testing.assert_allclose(identity_proposal(w.raster, w.mask, 0.0).density,
                                   optimal_proposal(w).density, rtol=1e-12)
        eps = 1e-3
        np.testing.assert_allclose(identity_proposal(w.raster, w.mask, eps).density,
                                   optimal_proposal(w, eps).density, rtol=1e-12)

    def test_decoupled_identity_worse_than_optimal(self):
        for seed in range(10):
            w = generate_world(32, link="decoupled", seed=seed)
            first, second = count_integrals(w)
            _, v_id = exact_is_moments(identity_proposal(w.raster, w.mask), first, second, w.tile_size)
            _, v_opt = exact_is_moments(optimal_proposal(w), first, second, w.tile_size)
            assert v_id > v_opt

    def test_integrals_on_coarse_grid(self):
        w = generate_world(16, link="power", seed=2)
        coarse = downsample(w.raster, 4).grid
        first, second = count_integrals(w, coarse)
        assert first.sum() == pytest.approx(w.truth * w.tile_size ** 2, rel=1e-12)
        assert second.sum() == pytest.approx(float((w.counts.astype(float) ** 2).sum()), rel=1e-12)

    def test_uniform_enumeration_unbiased(self):
        w = generate_world(16, l=2.0, link="power", seed=1)
        first, second = count_integrals(w)
        mean, _ = exact_is_moments(uniform_proposal(w.mask), first, second, w.tile_size)
        assert mean == pytest.approx(w.truth, rel=1e-9)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        w = generate_world(12, link="power", sparsity=0.3, noise=0.2, seed=8,
                           polygon=[[0, 0], [12, 0], [12, 7], [3, 12], [0, 9]])
        save_world(w, tmp_path / "w")
        back = load_world(tmp_path / "w")
        assert back.counts.tolist() == w.counts.tolist()
        assert back.truth == w.truth and back.mask.n_included == w.mask.n_included
        assert back.link == w.link
        np.testing.assert_array_equal(back.raster.values, w.raster.values)

    def test_files_and_header(self, tmp_path):
        d = save_world(generate_world(4, seed=1), tmp_path / "w")
        assert sorted(p.name for p in d.iterdir()) == ["counts.csv", "covariate.asc", "metadata.json",
                                                        "region.json"]
        assert (d / "counts.csv").read_text().splitlines()[0] == "tile_index,x,y,count"

    def test_byte_identical(self, tmp_path):
        save_world(generate_world(8, seed=3), tmp_path / "a")
        save_world(generate_world(8, seed=3), tmp_path / "b")
        for name in ("counts.csv", "covariate.asc", "metadata.json", "region.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_refuses_non_empty(self, tmp_path):
        save_world(generate_world(4), tmp_path / "w")
        with pytest.raises(FileExistsError):
            save_world(generate_world(4), tmp_path / "w")
        save_world(generate_world(4), tmp_path / "w", force=True)

    def test_tampered_truth(self, tmp_path):
        d = save_world(generate_world(4, seed=1), tmp_path / "w")
        text = (d / "metadata.json").read_text().replace('"C": ', '"C": 1')
        (d / "metadata.json").write_text(text)
        with pytest.raises(ValueError):
            load_world(d)


def test_link_spec_rate():
    rng = np.random.default_rng(0)
    h = np.array([0.5, 1.0, 2.0])
    assert LinkSpec("linear", scale=2).rate(h, rng, 1).tolist() == [1, 2, 4]
    assert LinkSpec("threshold", scale=2).rate(h, rng, 1).tolist() == [0, 2, 2]
    np.testing.assert_allclose(LinkSpec("power", gamma=2, scale=1).rate(h, rng, 1), [0.25, 1, 4])

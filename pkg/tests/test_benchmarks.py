import numpy as np
import pytest

from milb import benchmarks as B
from milb import gmm
from milb.rng import RngStream


@pytest.fixture(scope="module")
def mm_sys():
    return B.make_multimodal_system()


@pytest.fixture(scope="module")
def dw_sys():
    return B.make_double_well_system()


@pytest.fixture(scope="module")
def ternary_sys():
    return B.make_ternary_system()


class TestMultimodalInputs:
    def test_inputs_bounded_by_tanh(self, mm_sys):
        xs = B.mm_sample_input(mm_sys, RngStream(0), 5000)
        assert xs.shape == (5000, 10)
        assert np.all(np.abs(xs) < 1.0)

    def test_manifold_fixed_across_pools(self):
        a = B.make_multimodal_system()
        b = B.make_multimodal_system()
        assert np.array_equal(a.manifold_a, b.manifold_a)
        assert np.array_equal(a.manifold_b, b.manifold_b)
        assert np.array_equal(a.omega, b.omega)

    def test_zero_latent_maps_to_tanh_bias(self, mm_sys):
        x = B.mm_embed(mm_sys, np.zeros((1, 4)))[0]
        assert np.allclose(x, np.tanh(mm_sys.manifold_b), atol=1e-12)


class TestMultimodalOracle:
    def test_mixture_mean_is_centered(self, mm_sys):
        xs = B.mm_sample_input(mm_sys, RngStream(1), 100)
        pi, mu, _ = B.mm_oracle_params(mm_sys, xs)
        mean = np.sum(pi[:, :, None] * mu, axis=1)
        assert np.max(np.abs(mean)) < 1e-9

    def test_gate_interior_concentrates_on_component_zero(self, mm_sys):
        x = B.mm_embed(mm_sys, np.zeros((1, 4)))[0]
        mix = B.mm_oracle_mixture(mm_sys, x)
        expected = np.exp([3.0, 0.0, 0.0]) / np.sum(np.exp([3.0, 0.0, 0.0]))
        assert np.allclose(mix.weights, expected, atol=1e-3)
        assert mix.weights[0] > 0.9

    def test_valid_mixtures_over_many_inputs(self, mm_sys):
        xs = B.mm_sample_input(mm_sys, RngStream(2), 10_000)
        pi, _, var = B.mm_oracle_params(mm_sys, xs)
        assert np.allclose(pi.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(pi >= 0)
        assert np.all(var > 0)

    def test_oracle_nll_in_reference_band(self, mm_sys):
        s = RngStream(3).split("nll")
        tx = B.mm_sample_input(mm_sys, s.split("x"), 2000)
        ty = B.mm_label(mm_sys, tx, s.split("y"), np.arange(2000))
        nll = B.mm_oracle_nll(mm_sys, tx, ty)
        assert 21.5 <= nll <= 24.5

    def test_single_pair_matches_log_pdf(self, mm_sys):
        s = RngStream(4)
        x = B.mm_sample_input(mm_sys, s)
        mix = B.mm_oracle_mixture(mm_sys, x)
        y = mix.means[np.argmax(mix.weights)]  # a mixture mode
        direct = -float(gmm.log_pdf(mix, y))
        assert B.mm_oracle_nll(mm_sys, x[None, :], y[None, :]) == pytest.approx(
            direct, abs=1e-12
        )

    def test_oracle_is_nll_floor(self, mm_sys):
        # Gibbs: any other conditional density scores worse in expectation
        s = RngStream(5).split("gibbs")
        tx = B.mm_sample_input(mm_sys, s.split("x"), 3000)
        ty = B.mm_label(mm_sys, tx, s.split("y"), np.arange(3000))
        pi, mu, var = B.mm_oracle_params(mm_sys, tx)
        lp_true = gmm.stacked_log_pdf(pi, mu, var, ty)
        # perturbed model: means shifted, variances inflated
        lp_model = gmm.stacked_log_pdf(pi, mu + 0.5, var * 1.7, ty)
        diffs = lp_true - lp_model
        se = diffs.std(ddof=1) / np.sqrt(len(diffs))
        assert diffs.mean() >= -3 * se


class TestDoubleWell:
    def test_deterministic_equilibrium(self, dw_sys):
        x = np.array([1.0] * 5 + [1e-6, 0.0])
        y = B.dw_simulate(dw_sys, x, RngStream(6))
        assert np.allclose(y, 1.0, atol=1e-4)

    def test_energy_descent_at_negligible_noise(self, dw_sys):
        s = RngStream(7)
        for trial in range(5):
            q0 = s.uniform(-1.5, 1.5, 5)
            x = np.concatenate([q0, [1e-6, 0.0]])
            y = B.dw_simulate(dw_sys, x, s.split(trial))
            q_final = y[-5:]
            assert np.all(
                B.double_well_potential(q_final)
                <= B.double_well_potential(q0) + 1e-6
            )

    def test_sigma_must_be_positive(self, dw_sys):
        x = np.zeros(7)
        with pytest.raises(ValueError):
            B.dw_simulate(dw_sys, x, RngStream(8))

    def test_output_layout_and_snapshot_times(self, dw_sys):
        assert dw_sys.n_steps == 1000
        assert dw_sys.snapshot_steps == [250, 500, 750, 1000]
        assert dw_sys.out_dim == 20

    def test_low_noise_particle_stays_trapped(self):
        res = B.kramers_escape_fractions([0.3], 2000, RngStream(9).split("k"))
        assert res["opposite_well_fraction"][0] < 0.01

    def test_crossover_noise_fills_both_wells(self):
        res = B.kramers_escape_fractions([0.7], 2000, RngStream(10).split("k"))
        assert res["smaller_well_fraction"][0] >= 0.20

    def test_escape_fraction_monotone_in_noise(self):
        res = B.kramers_escape_fractions(
            [0.3, 0.5, 0.7, 1.0], 2000, RngStream(11).split("k")
        )
        esc = res["opposite_well_fraction"]
        assert all(esc[i] <= esc[i + 1] for i in range(3))

    def test_labels_independent_of_batch_composition(self, dw_sys):
        s = RngStream(12)
        xs = B.dw_sample_input(dw_sys, s, 6)
        parent = s.split("labels")
        all_at_once = B.dw_label(dw_sys, xs, parent, np.arange(6))
        one_by_one = np.vstack([
            B.dw_label(dw_sys, xs[i : i + 1], parent, [i]) for i in range(6)
        ])
        assert np.array_equal(all_at_once, one_by_one)


class TestTernaryInputs:
    def test_simplex_projection(self, ternary_sys):
        xs = B.ternary_sample_input(ternary_sys, RngStream(13), 50_000)
        assert xs.shape == (50_000, 8)
        assert np.all(xs[:, 0] + xs[:, 1] <= 1.0 + 1e-12)
        assert np.all(xs[:, :2] >= 0)
        assert np.all((xs[:, 2:] >= -1.0) & (xs[:, 2:] < 1.0))

    def test_composition_moment(self, ternary_sys):
        xs = B.ternary_sample_input(ternary_sys, RngStream(14), 100_000)
        assert abs(xs[:, 0].mean() - 1.0 / 3.0) < 0.005


class TestTernaryOracle:
    def test_softmin_limit_is_one_hot(self, ternary_sys):
        import dataclasses

        sharp = dataclasses.replace(ternary_sys, tau=1e-6)
        xs = B.ternary_sample_input(ternary_sys, RngStream(15), 20)
        pi, _, _ = B.ternary_oracle_params(sharp, xs)
        assert np.all(pi.max(axis=1) > 1.0 - 1e-9)

    def test_weights_ignore_process_parameters(self, ternary_sys):
        s = RngStream(16)
        xs = B.ternary_sample_input(ternary_sys, s, 10)
        xs2 = xs.copy()
        xs2[:, 2:] = s.uniform(-1.0, 1.0, (10, 6))
        pi1, _, _ = B.ternary_oracle_params(ternary_sys, xs)
        pi2, _, _ = B.ternary_oracle_params(ternary_sys, xs2)
        assert np.allclose(pi1, pi2, atol=1e-12)

    def test_valid_mixtures_over_many_inputs(self, ternary_sys):
        xs = B.ternary_sample_input(ternary_sys, RngStream(17), 10_000)
        pi, _, var = B.ternary_oracle_params(ternary_sys, xs)
        assert np.allclose(pi.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(pi >= 0)
        assert np.all(var > 0)

    def test_oracle_nll_matches_reference_value(self, ternary_sys):
        s = RngStream(18).split("nll")
        tx = B.ternary_sample_input(ternary_sys, s.split("x"), 10_000)
        ty = B.ternary_label(ternary_sys, tx, s.split("y"), np.arange(10_000))
        nll = B.ternary_oracle_nll(ternary_sys, tx, ty)
        assert nll == pytest.approx(1.33, abs=0.05)

    def test_boundary_fraction_matches_reference(self, ternary_sys):
        grid = B.simplex_grid(200)
        assert grid.shape == (20_301, 3)
        frac = B.ternary_boundary_fraction(ternary_sys, divisions=200)
        assert frac == pytest.approx(0.114, abs=0.01)

    def test_all_four_phases_carry_mass(self, ternary_sys):
        masses = B.ternary_phase_masses(ternary_sys, divisions=100)
        assert masses.shape == (4,)
        assert masses[-1] > 0.01


class TestPools:
    @pytest.mark.parametrize("make", [
        lambda: B.make_ternary_system(),
        lambda: B.make_double_well_system(),
    ])
    def test_pool_construction_invariants(self, make):
        system = make()
        pool = B.make_pool(system, 200, 50, 20, RngStream(19).split("pool"))
        assert pool.n_labeled == 20
        assert pool.labels.shape == (20, system.out_dim)
        assert pool.test_x.shape == (50, system.in_dim)
        mask = pool.unlabeled_mask()
        assert mask.sum() == 180
        assert not mask[pool.labeled].any()

    def test_pool_reproducible(self):
        system = B.make_ternary_system()
        a = B.make_pool(system, 100, 30, 10, RngStream(20).split("pool"))
        b = B.make_pool(system, 100, 30, 10, RngStream(20).split("pool"))
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.test_y, b.test_y)

    def test_acquire_appends_and_rejects_relabeling(self):
        system = B.make_ternary_system()
        pool = B.make_pool(system, 100, 30, 10, RngStream(21).split("pool"))
        new_y = pool.acquire([50, 60])
        assert pool.n_labeled == 12
        assert new_y.shape == (2, 1)
        with pytest.raises(ValueError):
            pool.acquire([50])

    def test_acquired_labels_do_not_depend_on_acquisition_order(self):
        system = B.make_ternary_system()
        a = B.make_pool(system, 100, 30, 10, RngStream(22).split("pool"))
        b = B.make_pool(system, 100, 30, 10, RngStream(22).split("pool"))
        a.acquire([40])
        a.acquire([41])
        b.acquire([41, 40])
        ya = a.labels[a.labeled.tolist().index(41)]
        yb = b.labels[b.labeled.tolist().index(41)]
        assert np.array_equal(ya, yb)

    def test_bad_sizes_rejected(self):
        system = B.make_ternary_system()
        with pytest.raises(ValueError):
            B.make_pool(system, 10, 5, 11, RngStream(23))

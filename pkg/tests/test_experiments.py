import math

import numpy as np
import pytest

import gradflow as gf
from gradflow import experiments as ex
from gradflow.experiments import Density1D, wasserstein_1d
from gradflow.reference import DiscreteMeasure


class TestWasserstein1D:
    def test_identical_densities(self):
        p = Density1D(np.linspace(0, 1, 5), np.full(4, 1.0))
        assert wasserstein_1d(p, p) == 0.0

    def test_linear_against_uniform(self):
        # quantile gap u - sqrt(u): integral 1/30
        p = Density1D.from_function(lambda x: 1.0, cells=4096)
        q = Density1D.from_function(lambda x: 2.0 * x, cells=4096)
        assert wasserstein_1d(p, q) == pytest.approx(math.sqrt(1.0 / 30.0),
                                                     abs=5e-4)

    def test_half_interval_translation(self):
        edges = np.linspace(0.0, 1.0, 5)
        p = Density1D(edges, np.array([2.0, 2.0, 0.0, 0.0]))
        q = Density1D(edges, np.array([0.0, 0.0, 2.0, 2.0]))
        assert wasserstein_1d(p, q) == pytest.approx(0.5, abs=1e-14)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        edges = np.linspace(0, 1, 9)
        p = Density1D(edges, rng.uniform(0.1, 1.0, 8) * 0 + _normed(rng, 8))
        q = Density1D(edges, _normed(rng, 8))
        assert wasserstein_1d(p, q) == pytest.approx(wasserstein_1d(q, p),
                                                     abs=1e-14)

    def test_triangle_inequality_random(self):
        rng = np.random.default_rng(4)
        edges = np.linspace(0, 1, 13)
        for _ in range(25):
            p = Density1D(edges, _normed(rng, 12))
            q = Density1D(edges, _normed(rng, 12))
            r = Density1D(edges, _normed(rng, 12))
            assert wasserstein_1d(p, r) <= wasserstein_1d(p, q) \
                + wasserstein_1d(q, r) + 1e-10

    def test_mass_mismatch_rejected(self):
        edges = np.linspace(0, 1, 3)
        p = Density1D(edges, np.array([1.0, 1.0]))
        bad = Density1D(edges, np.array([1.0, 1.5]))
        with pytest.raises(ValueError, match="mass"):
            wasserstein_1d(p, bad)

    def test_zero_density_cells_are_jumps(self):
        edges = np.linspace(0, 1, 5)
        p = Density1D(edges, np.array([2.0, 0.0, 0.0, 2.0]))
        q = Density1D(edges, np.array([0.0, 2.0, 2.0, 0.0]))
        assert wasserstein_1d(p, q) == pytest.approx(0.25, abs=1e-13)


def _normed(rng, n):
    v = rng.uniform(0.05, 1.0, n)
    return v / (v.sum() / n)


class TestFamilies:
    def test_sizes_strictly_decreasing(self):
        for fam in (ex.uniform_interval_family((8, 16, 32)),
                    ex.cartesian_family((2, 4, 8)),
                    ex.jittered_voronoi_family((16, 36, 64)),
                    ex.flattened_voronoi_family((16, 32, 64))):
            sizes = [m.size() for m in fam.build()]
            assert all(b < a for a, b in zip(sizes, sizes[1:]))

    def test_token_parsing(self):
        fam = ex.family_from_token("uniform1d:16..64")
        assert fam.labels == [16, 32, 64]
        fam = ex.family_from_token("cartesian:3,5")
        assert fam.labels == [3, 5]
        with pytest.raises(ValueError):
            ex.family_from_token("fractal:1..2")

    def test_deterministic_jitter(self):
        a = ex.jittered_voronoi_family((36,)).build()[0]
        b = ex.jittered_voronoi_family((36,)).build()[0]
        assert np.array_equal(a.sites, b.sites)


class TestGammaEnergyStudy:
    def test_coordinate_exact_sequence(self):
        fam = ex.uniform_interval_family((16, 32, 64, 128, 256))
        study = ex.gamma_energy_study(fam, lambda x: x, gf.zero_potential(),
                                      grad=lambda x: 1.0)
        for row, n in zip(study.rows, fam.labels):
            assert row.value == pytest.approx(0.5 * (1 - 1 / n), abs=1e-12)
            assert row.error == pytest.approx(0.5 / n, abs=1e-12)
        orders = study.column("order")[1:]
        assert np.allclose(orders, 1.0, atol=1e-6)

    def test_constant_zero_rows(self):
        fam = ex.uniform_interval_family((8, 16))
        study = ex.gamma_energy_study(fam, lambda x: 1.0, gf.zero_potential(),
                                      grad=lambda x: 0.0)
        assert all(row.value == 0.0 for row in study.rows)

    def test_cosine_second_order(self):
        fam = ex.uniform_interval_family((16, 32, 64, 128))
        study = ex.gamma_energy_study(
            fam, lambda x: math.cos(math.pi * x), gf.zero_potential(),
            grad=lambda x: -math.pi * math.sin(math.pi * x))
        assert study.rows[0].reference == pytest.approx(math.pi ** 2 / 4,
                                                        abs=1e-10)
        errors = study.column("error")
        assert np.all(np.diff(errors) < 0.0)
        assert np.all(study.column("order")[1:] >= 1.5)

    def test_projected_rule(self):
        fam = ex.uniform_interval_family((16, 32))
        study = ex.gamma_energy_study(
            fam, lambda x: x, gf.zero_potential(), m_rule="projected",
            mu=lambda x: 1.0 + 0.5 * math.cos(math.pi * x),
            grad=lambda x: 1.0)
        # limit is the mu-weighted energy, here 1/2 (cosine integrates out)
        assert study.rows[0].reference == pytest.approx(0.5, abs=1e-9)
        assert study.rows[-1].error < study.rows[0].error


class TestGammaAffineStudy:
    def test_zero_direction(self):
        fam = ex.uniform_interval_family((16, 32))
        study = ex.gamma_affine_minimization_study(fam, 0.5, 0.0, 0.5)
        assert all(row.value == 0.0 for row in study.rows)

    def test_uniform_1d_cube(self):
        fam = ex.uniform_interval_family((16, 32, 64, 128, 256))
        study = ex.gamma_affine_minimization_study(fam, 0.5, 1.0, 0.5)
        for row in study.rows:
            assert row.reference == pytest.approx(0.5)
            assert row.error <= row.extras["boundary_layer"] + 1e-12
            assert row.extras["harmonicity_residual"] <= 1e-11
        assert study.rows[-1].error < study.rows[0].error

    def test_cartesian_diagonal_direction(self):
        fam = ex.cartesian_family((8, 16))
        study = ex.gamma_affine_minimization_study(fam, (0.5, 0.5), (1.0, 1.0),
                                                   0.5)
        for row in study.rows:
            assert row.reference == pytest.approx(0.5)
            assert row.error <= row.extras["boundary_layer"] + 1e-12
            assert row.extras["harmonicity_residual"] <= 1e-11

    def test_cube_outside_rejected(self):
        fam = ex.uniform_interval_family((8,))
        with pytest.raises(ValueError, match="cube"):
            ex.gamma_affine_minimization_study(fam, 0.9, 1.0, 0.5)


class TestEdiAudit:
    def test_stationary_all_zero(self, grid4):
        mesh, pot, pi, _ = grid4
        audit = ex.edi_audit(mesh, pot, pi, T=0.25, steps=16)
        assert audit.entropy_start == 0.0
        assert abs(audit.residual) <= 1e-12
        assert abs(audit.action_integral) <= 1e-12

    def test_two_cell_closed_form_balance(self, two_cell):
        mesh, pot, pi, _ = two_cell
        m0 = DiscreteMeasure(np.array([0.9, 0.1]))

        def exact_entropy(t):
            m1 = 0.5 + 0.4 * math.exp(-8.0 * t)
            return m1 * math.log(2 * m1) + (1 - m1) * math.log(2 * (1 - m1))

        audit = ex.edi_audit(mesh, pot, m0, T=0.5, steps=64)
        assert audit.entropy_start == pytest.approx(exact_entropy(0.0), abs=1e-13)
        assert audit.entropy_end == pytest.approx(exact_entropy(0.5), abs=1e-13)
        coarse = ex.edi_audit(mesh, pot, m0, T=0.5, steps=32)
        assert abs(audit.residual) <= abs(coarse.residual) / 4.0

    def test_identity_split(self, two_cell):
        mesh, pot, pi, _ = two_cell
        audit = ex.edi_audit(mesh, pot, DiscreteMeasure(np.array([0.8, 0.2])),
                             T=0.5, steps=64)
        assert audit.action_integral == pytest.approx(audit.fisher_integral,
                                                      rel=1e-8)

    def test_zero_mass_start_rejected(self, two_cell):
        mesh, pot, pi, _ = two_cell
        with pytest.raises(ValueError, match="positive"):
            ex.edi_audit(mesh, pot, DiscreteMeasure(np.array([1.0, 0.0])),
                         T=0.1, steps=8)

    def test_odd_steps_rejected(self, two_cell):
        mesh, pot, pi, _ = two_cell
        with pytest.raises(ValueError, match="even"):
            ex.edi_audit(mesh, pot, pi, T=0.1, steps=7)

    def test_cell_cap_rejected(self):
        mesh = gf.build_interval_mesh(401)
        pot = gf.zero_potential()
        pi = gf.discretize_reference(mesh, pot, quad_order=1)
        with pytest.raises(ValueError, match="400"):
            ex.edi_audit(mesh, pot, pi, T=0.1, steps=8)


def test_density1d_shape_validation():
    with pytest.raises(ValueError, match="shapes"):
        Density1D(np.linspace(0, 1, 5), np.ones(5))


class TestEdiOnAnisotropicMesh:
    def test_balance_and_identity_hold_off_grid(self):
        # end to end on a skewed Voronoi mesh with a curved potential; the
        # coarse centroid rule cannot pass the 1e-8 projection mass check on
        # skewed cells, so the degree-5 rule is selected explicitly
        from gradflow.reference import density_from_token

        mesh = ex.flattened_voronoi_family((36,)).build()[0]
        pot = gf.quadratic_potential([0.4, 0.6])
        pi = gf.discretize_reference(mesh, pot, quad_order=3)
        proj = gf.project_measure(mesh, density_from_token("cosine", 2),
                                  quad_order=3)
        m0 = DiscreteMeasure(0.9 * proj.masses + 0.1 * pi.masses)
        fine = ex.edi_audit(mesh, pot, m0, T=0.1, steps=128, quad_order=3)
        coarse = ex.edi_audit(mesh, pot, m0, T=0.1, steps=64, quad_order=3)
        assert abs(fine.residual) <= 1e-5 * fine.entropy_start
        assert abs(fine.residual) <= abs(coarse.residual) / 4.0
        gap = np.abs(fine.dual_nodes - fine.fisher_nodes)
        assert np.all(gap <= 1e-8 * (1.0 + 2.0 * fine.fisher_nodes))

    def test_coarse_quadrature_mass_check_rejects(self):
        from gradflow.reference import density_from_token

        mesh = ex.flattened_voronoi_family((36,)).build()[0]
        with pytest.raises(ValueError, match="mass"):
            gf.project_measure(mesh, density_from_token("cosine", 2))


class TestEvolutionaryStudy:
    def test_stationary_initial_data_zero_error(self):
        fam = ex.uniform_interval_family((8, 16))
        study = ex.evolutionary_convergence_study(fam, gf.zero_potential(),
                                                  "uniform", T=0.05,
                                                  t_nodes=5)
        assert all(row.error <= 1e-9 for row in study.rows)

    def test_cosine_reference_amplitude(self):
        ref = ex._cosine_density_1d_exact(0.1, 4096)
        amp = 0.5 * math.exp(-0.1 * math.pi ** 2)
        assert amp == pytest.approx(0.18636, abs=1e-5)
        assert ref.values.max() == pytest.approx(1.0 + amp, abs=1e-6)
        assert ref.mass() == pytest.approx(1.0, abs=1e-13)

    def test_errors_decrease_with_order_one(self):
        fam = ex.uniform_interval_family((16, 32, 64))
        study = ex.evolutionary_convergence_study(fam, gf.zero_potential(),
                                                  "cosine", T=0.1)
        errors = study.column("error")
        assert np.all(np.diff(errors) < 0.0)
        assert np.all(study.column("order")[1:] >= 1.0)
        for row in study.rows:
            assert row.extras["dual_integral"] == pytest.approx(
                row.extras["fisher_integral"], rel=1e-6)

    def test_richardson_route_for_nonzero_potential(self):
        fam = ex.uniform_interval_family((16, 32))
        study = ex.evolutionary_convergence_study(
            fam, gf.linear_potential(1.0), "cosine", T=0.05, t_nodes=9)
        errors = study.column("error")
        assert errors[1] < errors[0]

    def test_cartesian_l1_route(self):
        fam = ex.cartesian_family((4, 8))
        study = ex.evolutionary_convergence_study(fam, gf.zero_potential(),
                                                  "cosine", T=0.05, t_nodes=5)
        errors = study.column("error")
        assert errors[1] < errors[0]


class TestLowerBoundTrend:
    def test_stationary_data_all_zero(self):
        fam = ex.uniform_interval_family((8, 16))
        study = ex.lower_bound_trend_study(fam, lambda x: 1.0,
                                           lambda x: math.cos(math.pi * x))
        for row in study.rows:
            assert row.value == pytest.approx(0.0, abs=1e-13)
            assert row.reference == pytest.approx(0.0, abs=1e-12)
            assert row.extras["fisher_value"] == pytest.approx(0.0, abs=1e-12)

    def test_linear_density_entropy_reference(self):
        fam = ex.uniform_interval_family((8, 16, 32))
        study = ex.lower_bound_trend_study(fam, lambda x: 2.0 * x,
                                           lambda x: math.cos(math.pi * x))
        target = math.log(2.0) - 0.5
        assert study.rows[0].reference == pytest.approx(target, abs=1e-10)
        for row in study.rows:
            assert row.value <= target + 1e-13  # projected entropy sits below
        deficits = [-row.error for row in study.rows]
        assert deficits[-1] < deficits[0]

    def test_dual_reference_closed_form(self):
        # eta = cos(pi x) against the uniform measure: dual is 1/(4 pi^2)
        domain = gf.Domain.interval(0.0, 1.0)
        value = ex.continuum_dual(lambda x: 1.0,
                                  lambda x: math.cos(math.pi * x),
                                  gf.zero_potential(), domain)
        assert value == pytest.approx(1.0 / (4.0 * math.pi ** 2), abs=1e-8)

    def test_tilted_reference_measure_trend(self):
        fam = ex.uniform_interval_family((16, 32, 64))
        mu = lambda x: 1.0 + 0.5 * math.cos(math.pi * x)
        eta = lambda x: math.sin(math.pi * x)
        study = ex.lower_bound_trend_study(fam, mu, eta,
                                           potential=gf.linear_potential(1.0))
        entropy_gap = np.abs(study.column("error"))
        fisher_gap = np.abs(study.column("fisher_deficit"))
        dual_gap = np.abs(study.column("dual_deficit"))
        for gaps in (entropy_gap, fisher_gap, dual_gap):
            assert gaps[-1] < gaps[1] < gaps[0]
        # the entropy sits below its limit (projection averages densities)
        assert np.all(study.column("error") <= 1e-12)

    def test_smooth_positive_density_trend(self):
        fam = ex.uniform_interval_family((16, 32, 64))
        mu = lambda x: 1.0 + 0.5 * math.cos(math.pi * x)
        eta = lambda x: math.cos(math.pi * x)
        study = ex.lower_bound_trend_study(fam, mu, eta)
        gaps = np.abs(study.column("error"))
        assert gaps[-1] < gaps[0]
        fisher_gap = np.abs(study.column("fisher_deficit"))
        assert fisher_gap[-1] < fisher_gap[0]
        dual_gap = np.abs(study.column("dual_deficit"))
        assert dual_gap[-1] < dual_gap[0]


class TestIsotropyStudy:
    def test_cartesian_flat(self):
        study = ex.isotropy_study(ex.cartesian_family((4, 8)))
        assert all(row.value <= 1e-12 for row in study.rows)

    def test_flattened_bounded_away_from_zero(self):
        study = ex.isotropy_study(ex.flattened_voronoi_family((16, 32, 64)))
        coarsest = study.rows[0].value
        assert coarsest >= 0.05
        for row in study.rows:
            assert row.value >= 0.5 * coarsest


class TestAnisotropicRecording:
    def test_gamma_energy_recorded_without_order_claim(self):
        # anisotropy does not break the energy limit; values are recorded
        fam = ex.flattened_voronoi_family((16, 32, 64))
        study = ex.gamma_energy_study(
            fam, lambda p: float(p[0]), gf.zero_potential(),
            grad=lambda p: np.array([1.0, 0.0]))
        assert study.rows[0].reference == pytest.approx(0.5, abs=1e-9)
        for row in study.rows:
            assert math.isfinite(row.value)
        assert study.rows[-1].error <= study.rows[0].error


class TestThreadCap:
    def test_results_identical_under_thread_pool(self, monkeypatch, tmp_path):
        fam = ex.uniform_interval_family((8, 16, 32))

        def run():
            return ex.gamma_energy_study(fam, lambda x: x, gf.zero_potential(),
                                         grad=lambda x: 1.0)

        serial = run()
        monkeypatch.setenv("GRADFLOW_THREADS", "3")
        assert ex.worker_count() == 3
        threaded = run()
        pa, pb = tmp_path / "serial.csv", tmp_path / "threaded.csv"
        serial.to_csv(pa)
        threaded.to_csv(pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_garbage_env_falls_back_to_one(self, monkeypatch):
        monkeypatch.setenv("GRADFLOW_THREADS", "many")
        assert ex.worker_count() == 1


class TestStudyResult:
    def test_csv_reproducible(self, tmp_path):
        fam = ex.uniform_interval_family((8, 16, 32))
        a = ex.gamma_energy_study(fam, lambda x: x, gf.zero_potential(),
                                  grad=lambda x: 1.0)
        b = ex.gamma_energy_study(fam, lambda x: x, gf.zero_potential(),
                                  grad=lambda x: 1.0)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        a.to_csv(pa)
        b.to_csv(pb)
        assert pa.read_bytes() == pb.read_bytes()
        header = pa.read_text().splitlines()[0]
        assert header.startswith("mesh_size,value,reference,error,order")

    def test_summary_shape(self):
        fam = ex.uniform_interval_family((8, 16))
        study = ex.gamma_energy_study(fam, lambda x: x, gf.zero_potential(),
                                      grad=lambda x: 1.0)
        summary = study.summary()
        assert summary["study"] == "gamma_energy"
        assert len(summary["rows"]) == 2

import numpy as np
import pytest

from airfoilgen.baselines import (
    BezierParameterization,
    CstParameterization,
    ParsecParameterization,
    SvdParameterization,
    derive_bounds,
    parsec_eval,
    parsec_features_from_coeffs,
    parsec_solve,
    svd_eval,
    svd_fit,
)
from airfoilgen.errors import FitFailure, RankDeficient, SingularSystem
from airfoilgen.geometry import cosine_grid, decompose
from naca_oracle import naca_section

WELL_CONDITIONED = np.array([
    0.010, 0.012,           # LE radii
    0.45, 0.06, -0.45,      # upper crest
    0.35, -0.05, 0.70,      # lower crest
    0.0, 0.0,               # TE offset / thickness
    -0.08, 0.20,            # TE direction / wedge
])


class TestParsec:
    def test_round_trip(self):
        coeffs = parsec_solve(WELL_CONDITIONED)
        feats = parsec_features_from_coeffs(*coeffs)
        coeffs2 = parsec_solve(feats)
        np.testing.assert_allclose(coeffs2[0], coeffs[0], atol=1e-6)
        np.testing.assert_allclose(coeffs2[1], coeffs[1], atol=1e-6)

    def test_symmetric_inputs_mirror_coefficients(self):
        f = WELL_CONDITIONED.copy()
        f[1] = f[0]                    # same LE radius
        f[5:8] = [f[2], -f[3], -f[4]]  # mirrored crest
        f[8] = f[9] = 0.0
        f[10] = 0.0                    # no TE direction
        a_u, a_l = parsec_solve(f)
        np.testing.assert_allclose(a_l, -a_u, atol=1e-10)

    def test_crest_near_zero_ill_conditioned(self):
        f = WELL_CONDITIONED.copy()
        f[2] = 0.01
        try:
            with pytest.warns(UserWarning, match="ill-conditioned"):
                parsec_solve(f)
        except SingularSystem:
            pass  # either outcome is acceptable

    def test_flat_section_from_zero_coefficients(self):
        section = parsec_eval((np.zeros(6), np.zeros(6)))
        assert np.max(np.abs(section.y_upper)) == 0.0
        assert np.max(np.abs(section.y_lower)) == 0.0

    def test_single_term_sqrt(self):
        a = np.zeros(6)
        a[0] = 1.0
        section = parsec_eval((a, np.zeros(6)))
        np.testing.assert_allclose(section.y_upper, np.sqrt(section.x), atol=1e-14)

    def test_decode_on_grid(self):
        p = ParsecParameterization()
        section = p.decode(WELL_CONDITIONED)
        assert section.x.size == 101
        assert decompose(section).t[1:-1].min() > 0  # this seed is feasible

    def test_fit_recovers_thickness_scale(self):
        p = ParsecParameterization()
        dv = p.fit(naca_section("0012"))
        assert dv[2] == pytest.approx(0.30, abs=0.06)   # upper crest position
        assert dv[3] == pytest.approx(0.06, abs=0.005)  # upper crest height


class TestCst:
    def test_flat(self):
        p = CstParameterization(10)
        section = p.decode(np.zeros(10))
        assert np.max(np.abs(section.y_upper)) == 0.0

    def test_constant_coefficients_collapse(self):
        # equal coefficients make the shape function 1 by partition of unity
        p = CstParameterization(10)
        k = 0.37
        section = p.decode(np.concatenate([np.full(5, k), np.zeros(5)]))
        x = section.x
        np.testing.assert_allclose(section.y_upper, k * np.sqrt(x) * (1 - x), atol=1e-14)

    def test_naca0012_fit_error(self):
        p = CstParameterization(10)
        target = naca_section("0012")
        dv = p.fit(target)
        section = p.decode(dv)
        err = max(np.max(np.abs(section.y_upper - target.y_upper)),
                  np.max(np.abs(section.y_lower - target.y_lower)))
        assert err < 5e-4

    def test_passes_through_endpoints(self):
        rng = np.random.default_rng(0)
        section = CstParameterization(10).decode(rng.normal(size=10))
        assert section.y_upper[0] == 0.0 and section.y_upper[-1] == 0.0
        assert section.y_lower[0] == 0.0 and section.y_lower[-1] == 0.0


class TestBezierParam:
    def test_flat(self):
        p = BezierParameterization()
        section = p.decode(np.zeros(10))
        assert np.max(np.abs(section.y_upper)) == 0.0

    def test_mirrored_symmetric(self):
        p = BezierParameterization()
        y = np.array([0.02, 0.05, 0.06, 0.03, 0.005])
        section = p.decode(np.concatenate([y, -y]))
        camber = decompose(section).c
        assert np.max(np.abs(camber)) < 1e-10

    def test_endpoints_exact(self):
        rng = np.random.default_rng(1)
        p = BezierParameterization()
        section = p.decode(rng.normal(scale=0.05, size=10))
        assert section.y_upper[0] == 0.0 and section.y_upper[-1] == 0.0

    def test_fit_reasonable(self):
        p = BezierParameterization()
        target = naca_section("2412")
        section = p.decode(p.fit(target))
        assert np.max(np.abs(section.y_upper - target.y_upper)) < 5e-3


class TestSvd:
    def test_modes_orthonormal(self, small_dataset):
        model = svd_fit(small_dataset, 8)
        gram = model.modes.T @ model.modes
        np.testing.assert_allclose(gram, np.eye(8), atol=1e-10)
        assert np.all(np.diff(model.singular) <= 1e-12)

    def test_full_rank_exact_reconstruction(self, small_dataset):
        rows_rank = min(small_dataset.n_samples - 1, 2 * small_dataset.x.size)
        model = svd_fit(small_dataset, rows_rank)
        p = SvdParameterization(model)
        tc = small_dataset.sample(3)
        from airfoilgen.geometry import AirfoilSection

        section = AirfoilSection(x=tc.x, y_upper=tc.c + tc.t / 2, y_lower=tc.c - tc.t / 2)
        back = p.decode(p.fit(section))
        assert np.max(np.abs(back.y_upper - section.y_upper)) < 1e-10

    def test_rank_deficient(self, small_dataset):
        with pytest.raises(RankDeficient):
            svd_fit(small_dataset, small_dataset.n_samples + 5)

    def test_reconstruction_error_monotone_in_m(self, small_dataset):
        errors = []
        rows_rank = small_dataset.n_samples - 1
        for m in range(1, min(rows_rank, 12) + 1):
            model = svd_fit(small_dataset, m)
            p = SvdParameterization(model)
            total = 0.0
            for i in range(small_dataset.n_samples):
                tc = small_dataset.sample(i)
                from airfoilgen.geometry import AirfoilSection

                s = AirfoilSection(x=tc.x, y_upper=tc.c + tc.t / 2, y_lower=tc.c - tc.t / 2)
                back = p.decode(p.fit(s))
                total += np.mean((back.y_upper - s.y_upper) ** 2) + np.mean(
                    (back.y_lower - s.y_lower) ** 2)
            errors.append(total)
        assert all(b <= a + 1e-15 for a, b in zip(errors, errors[1:]))

    def test_zero_dv_gives_mean(self, small_dataset):
        model = svd_fit(small_dataset, 5)
        section = svd_eval(model, np.zeros(5))
        g = section.x.size
        np.testing.assert_allclose(section.y_upper, model.mean[:g], atol=1e-15)

    def test_linearity(self, small_dataset):
        model = svd_fit(small_dataset, 5)
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=5), rng.normal(size=5)
        ya = svd_eval(model, a).y_upper
        yb = svd_eval(model, b).y_upper
        yab = svd_eval(model, a + b).y_upper
        mean = model.mean[: ya.size]
        np.testing.assert_allclose(ya + yb - mean, yab, atol=1e-12)


class TestDeriveBounds:
    def test_svd_bounds_contain_zero(self, small_dataset):
        p = SvdParameterization(svd_fit(small_dataset, 6))
        bounds = derive_bounds(p, small_dataset)
        assert np.all(bounds[:, 0] < 0) and np.all(bounds[:, 1] > 0)

    def test_cst_bounds_finite(self, small_dataset):
        p = CstParameterization(10)
        bounds = derive_bounds(p, small_dataset)
        assert np.all(np.isfinite(bounds))
        assert np.all(bounds[:, 1] > bounds[:, 0])

    def test_constant_dataset_fit_failure(self, small_dataset):
        import dataclasses

        constant = dataclasses.replace(
            small_dataset,
            thickness=np.repeat(small_dataset.thickness[:1], 8, axis=0),
            camber=np.repeat(small_dataset.camber[:1], 8, axis=0),
            features=np.repeat(small_dataset.features[:1], 8, axis=0),
            names=small_dataset.names[:1] * 8,
            train_idx=np.arange(7),
            val_idx=np.array([7]),
        )

        class Fussy(CstParameterization):
            def fit(self, section):
                raise RuntimeError("cannot fit")

        with pytest.raises(FitFailure):
            derive_bounds(Fussy(10), constant)

    def test_parsec_bounds_on_dataset(self, small_dataset):
        p = ParsecParameterization()
        bounds = derive_bounds(p, small_dataset)
        assert np.all(bounds[:, 1] > bounds[:, 0])
        # TE thickness is identically zero on closed sections: padded interval
        assert bounds[9, 0] < 0 < bounds[9, 1]

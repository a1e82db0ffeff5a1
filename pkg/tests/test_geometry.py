import numpy as np
import pytest

from airfoilgen import geometry
from airfoilgen.errors import DegenerateFeature
from airfoilgen.geometry import (
    FeatureNormalizer,
    GeometricFeatures,
    ThicknessCamber,
    cosine_grid,
    decompose,
    extract_features,
    fit_normalizer,
    recompose,
)
from naca_oracle import naca_tc


class TestCosineGrid:
    def test_exact_anchor_points(self):
        x = cosine_grid()
        assert x[0] == 0.0
        assert abs(x[50] - 0.5) < 1e-15
        assert x[100] == 1.0

    def test_strictly_increasing(self):
        assert np.all(np.diff(cosine_grid()) > 0)


class TestDecompose:
    def test_symmetric_section(self):
        x = cosine_grid()
        yu = np.full_like(x, 0.06)
        yu[0] = yu[-1] = 0.0
        section = geometry.AirfoilSection(x=x, y_upper=yu, y_lower=-yu)
        tc = decompose(section)
        assert np.allclose(tc.t[1:-1], 0.12)
        assert np.allclose(tc.c, 0.0)

    def test_coincident_surfaces(self):
        x = cosine_grid()
        y = np.full_like(x, 0.02)
        tc = decompose(geometry.AirfoilSection(x=x, y_upper=y, y_lower=y))
        assert np.allclose(tc.t, 0.0)
        assert np.allclose(tc.c, 0.02)

    def test_round_trip_exact(self):
        rng = np.random.default_rng(0)
        x = cosine_grid()
        yu = rng.normal(size=x.size)
        yl = yu - np.abs(rng.normal(size=x.size))
        section = geometry.AirfoilSection(x=x, y_upper=yu, y_lower=yl)
        back = recompose(decompose(section))
        np.testing.assert_allclose(back.y_upper, yu, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(back.y_lower, yl, rtol=1e-12, atol=1e-15)


class TestExtractFeatures:
    def test_naca0012_oracle(self):
        feats = extract_features(naca_tc("0012"))
        assert feats.t_max == pytest.approx(0.12, abs=1e-3)
        assert feats.m_max == pytest.approx(0.0, abs=1e-6)
        # analytic LE radius 1.1019 * t^2
        assert feats.r_le == pytest.approx(1.1019 * 0.12**2, rel=0.10)

    def test_flat_plate(self):
        x = cosine_grid()
        feats = extract_features(ThicknessCamber(x=x, t=np.zeros_like(x), c=np.zeros_like(x)))
        assert feats.t_max == 0.0
        assert feats.m_max == 0.0
        assert feats.gamma_te == 0.0

    def test_sine_camber_oracle(self):
        x = cosine_grid()
        c = 0.05 * np.sin(np.pi * x)
        feats = extract_features(ThicknessCamber(x=x, t=np.zeros_like(x), c=c))
        assert feats.m_max == pytest.approx(0.05, abs=1e-4)
        # c'(1) = -0.05*pi, so the TE angle is +arctan(0.05*pi)
        assert feats.gamma_te == pytest.approx(np.arctan(0.05 * np.pi), rel=0.02)

    def test_scale_consistency(self):
        tc = naca_tc("2412")
        k = 2.0
        scaled = ThicknessCamber(x=tc.x, t=k * tc.t, c=k * tc.c)
        base = extract_features(tc)
        big = extract_features(scaled)
        assert big.t_max == pytest.approx(k * base.t_max, abs=1e-9)
        assert big.m_max == pytest.approx(k * base.m_max, abs=1e-9)
        # sqrt-x nose model is quadratic in the thickness scale
        assert big.r_le == pytest.approx(k**2 * base.r_le, abs=1e-9)
        assert np.tan(big.gamma_te) == pytest.approx(k * np.tan(base.gamma_te), abs=1e-9)


def _feat(m=0.0, g=0.0, t=0.1, r=1e-2):
    return GeometricFeatures(m_max=m, gamma_te=g, t_max=t, r_le=r)


class TestFeatureNormalizer:
    def test_midpoint(self):
        feats = [_feat(m=0.0), _feat(m=0.1), _feat(m=0.2, t=0.3, g=0.5, r=1e-1)]
        norm = fit_normalizer(feats)
        out = norm.transform(_feat(m=0.1).as_array())
        assert out[0] == pytest.approx(0.5)

    def test_log_midpoint_for_le_radius(self):
        feats = [_feat(r=1e-3), _feat(r=1e-1, m=0.1, g=0.5, t=0.3)]
        norm = fit_normalizer(feats)
        out = norm.transform(_feat(r=1e-2).as_array())
        assert out[3] == pytest.approx(0.5)

    def test_degenerate_feature(self):
        with pytest.raises(DegenerateFeature):
            fit_normalizer([_feat(), _feat()])

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        feats = [
            _feat(m=m, g=g, t=t, r=r)
            for m, g, t, r in zip(
                rng.uniform(0, 0.1, 20),
                rng.uniform(-0.1, 0.4, 20),
                rng.uniform(0.05, 0.3, 20),
                10 ** rng.uniform(-3, -1, 20),
            )
        ]
        norm = fit_normalizer(feats)
        raw = np.array([f.as_array() for f in feats])
        back = norm.inverse(norm.transform(raw))
        np.testing.assert_allclose(back, raw, rtol=1e-12, atol=1e-14)

    def test_dict_round_trip(self):
        feats = [_feat(m=0, g=0, t=0.1, r=1e-3), _feat(m=0.1, g=0.3, t=0.3, r=1e-1)]
        norm = fit_normalizer(feats)
        clone = FeatureNormalizer.from_dict(norm.to_dict())
        probe = np.array([0.05, 0.2, 0.2, 1e-2])
        np.testing.assert_array_equal(norm.transform(probe), clone.transform(probe))

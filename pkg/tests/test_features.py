import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from geowalk import features as F
from geowalk.errors import InvalidInput, LeakageError
from geowalk.geo_graph import GeoPoint, KernelConfig


def house(i, price=100.0, feats=(0.0, 1.0), lat=40.0, lon=-75.0):
    return F.House(f"h{i}", GeoPoint(lat, lon), price, np.array(feats, dtype=float))


class TestPooling:
    def test_single_image(self):
        np.testing.assert_array_equal(F.pool_house_features([[1.0, 2.0, 3.0]]), [1, 2, 3])

    def test_average_and_max(self):
        imgs = [[1, 3], [3, 5]]
        np.testing.assert_array_equal(F.pool_house_features(imgs, "average"), [2, 4])
        np.testing.assert_array_equal(F.pool_house_features(imgs, F.Pooling.MAX), [3, 5])

    def test_errors(self):
        with pytest.raises(InvalidInput):
            F.pool_house_features([])
        with pytest.raises(InvalidInput):
            F.pool_house_features([[1, 2], [1, 2, 3]])

    @given(arrays(np.float64, (5, 4), elements=st.floats(-1e3, 1e3)), st.randoms())
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariant(self, imgs, rnd):
        perm = list(range(5))
        rnd.shuffle(perm)
        for mode in F.Pooling:
            np.testing.assert_allclose(F.pool_house_features(imgs, mode),
                                       F.pool_house_features(imgs[perm], mode), rtol=1e-12, atol=1e-9)


class TestNormalize:
    def test_column(self):
        z, stats = F.normalize(np.array([[1.0], [2.0], [3.0]]))
        np.testing.assert_allclose(z[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)
        np.testing.assert_allclose(z[:, 0], np.array([-1, 0, 1]) / np.sqrt(2 / 3), atol=1e-15)

    def test_constant_column(self):
        z, stats = F.normalize(np.array([[5.0, 1.0], [5.0, 2.0]]))
        np.testing.assert_array_equal(z[:, 0], [0, 0])
        assert stats.std[0] == 0

    def test_apply_identity(self):
        x = np.random.default_rng(0).normal(size=(6, 3))
        stats = F.NormStats(np.zeros(3), np.ones(3))
        z, _ = F.normalize(x, stats)
        np.testing.assert_array_equal(z, x)

    @given(arrays(np.float64, (12, 3), elements=st.floats(-1e4, 1e4)))
    @settings(max_examples=60, deadline=None)
    def test_fit_properties_and_idempotent(self, x):
        z, stats = F.normalize(x)
        assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
        s = z.std(axis=0)
        assert np.all((np.abs(s - 1) < 1e-9) | (s == 0))
        z2, _ = F.normalize(z, F.fit_stats(z))
        np.testing.assert_allclose(z2, z, atol=1e-12)

    def test_stats_json_roundtrip(self):
        _, stats = F.normalize(np.random.default_rng(1).normal(size=(5, 2)))
        back = F.NormStats.from_json(stats.to_json())
        np.testing.assert_array_equal(back.mean, stats.mean)
        np.testing.assert_array_equal(back.invert(back.apply([1.0, 2.0])), [1.0, 2.0])


class TestHouse:
    def test_rejects_bad_price(self):
        with pytest.raises(InvalidInput):
            house(0, price=0.0)
        with pytest.raises(InvalidInput):
            house(0, price=float("nan"))

    def test_rejects_nonfinite_features(self):
        with pytest.raises(InvalidInput):
            house(0, feats=(1.0, np.inf))

    def test_taint(self):
        hs = [house(0), house(1)]
        F.check_untainted(hs, "x")
        with pytest.raises(LeakageError, match="graph"):
            F.check_untainted(hs + F.taint([house(2)]), "graph construction")


class TestFiles:
    def _write(self, d, n=4, dim=3, feature_file="features.bin"):
        hs = [house(i, 100 + i, np.arange(dim) + i / 8, 40 + i / 100, -75) for i in range(n)]
        F.save_dataset(d, hs, feature_file)
        return hs

    @pytest.mark.parametrize("name", ["features.bin", "features.csv"])
    def test_roundtrip_order_stable(self, tmp_path, name):
        hs = self._write(tmp_path, feature_file=name)
        back = F.load_dataset(tmp_path / "houses.csv", tmp_path / name)
        assert [h.id for h in back] == [h.id for h in hs]
        for a, b in zip(hs, back):
            assert a.price == b.price and a.location == b.location
            np.testing.assert_array_equal(a.features, b.features)

    def test_binary_layout(self, tmp_path):
        F.write_feature_store(tmp_path / "f.bin", ["a", "bc"], np.array([[1.0, 2.0], [3.0, 4.0]]))
        raw = (tmp_path / "f.bin").read_bytes()
        assert raw[:5] == b"GWRF1"
        assert raw[5:13] == (2).to_bytes(4, "little") + (2).to_bytes(4, "little")
        assert raw[13:18] == (1).to_bytes(4, "little") + b"a"
        assert raw[18:24] == (2).to_bytes(4, "little") + b"bc"
        np.testing.assert_array_equal(np.frombuffer(raw[24:], "<f4"), [1, 2, 3, 4])

    def test_feature_store_order_independent(self, tmp_path):
        hs = self._write(tmp_path)
        ids = [h.id for h in hs][::-1]
        F.write_feature_store(tmp_path / "features.bin", ids, F.feature_matrix(hs[::-1]))
        back = F.load_dataset(tmp_path / "houses.csv", tmp_path / "features.bin")
        np.testing.assert_array_equal(F.feature_matrix(back), F.feature_matrix(hs).astype(np.float32))

    def test_mismatched_ids(self, tmp_path):
        hs = self._write(tmp_path)
        F.write_feature_store(tmp_path / "features.bin", [h.id for h in hs[:3]] + ["zz"],
                              F.feature_matrix(hs))
        with pytest.raises(InvalidInput) as e:
            F.load_dataset(tmp_path / "houses.csv", tmp_path / "features.bin")
        assert "h3" in str(e.value) and "zz" in str(e.value)

    def test_bad_price_row(self, tmp_path):
        self._write(tmp_path)
        text = (tmp_path / "houses.csv").read_text().splitlines()
        text[2] = "h1,40.01,-75.0,-3"
        (tmp_path / "houses.csv").write_text("\n".join(text) + "\n")
        with pytest.raises(InvalidInput, match="price"):
            F.load_dataset(tmp_path / "houses.csv", tmp_path / "features.bin")

    def test_bad_header(self, tmp_path):
        (tmp_path / "houses.csv").write_text("name,lat,lon,price\n")
        with pytest.raises(InvalidInput):
            F.read_houses_csv(tmp_path / "houses.csv")


def test_outlier_filter():
    hs = [house(i, 100 + (i % 3), lat=40 + i * 1e-4) for i in range(12)]
    hs.append(house(99, 500.0, lat=40.0005))
    kept, dropped = F.filter_outliers(hs, KernelConfig(), k=3.0)
    assert [h.id for h in dropped] == ["h99"]
    assert len(kept) == 12

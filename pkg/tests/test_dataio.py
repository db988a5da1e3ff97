import numpy as np
import pytest

from hmdn.dataio import (
    ColumnSchema,
    NOT_DETECTED,
    SplitSpec,
    load_csv,
    load_model,
    normalize_rssi,
    save_model,
    split,
    table_to_csv,
    write_dataset_csv,
)
from hmdn.errors import ParseError, SchemaError
from hmdn.mdn import MdnConfig, train
from hmdn.numcore import Rng


FIXTURE = """WAP001,WAP002,WAP003,WAP004,LONGITUDE,LATITUDE,NOTE
-50,-60.5,100,-80,1.5,2.5,first
-55,100,-70,-90,3.25,4.75,second
-104,0,-45,100,5,6,third
"""


@pytest.fixture
def fixture_csv(tmp_path):
    path = tmp_path / "fingerprints.csv"
    path.write_text(FIXTURE)
    return path


class TestLoadCsv:
    def test_shapes_and_values(self, fixture_csv):
        table = load_csv(fixture_csv)
        assert table.n_records == 3
        assert table.n_waps == 4
        assert table.wap_names == ("WAP001", "WAP002", "WAP003", "WAP004")
        assert table.rssi[0, 0] == -50.0
        assert table.coords[1].tolist() == [3.25, 4.75]
        assert table.metadata["NOTE"] == ("first", "second", "third")

    def test_sentinel_flagged_and_excluded_from_stats(self, fixture_csv):
        table = load_csv(fixture_csv)
        mask = table.detected_mask()
        assert not mask[0, 2] and not mask[1, 1] and not mask[2, 3]
        detected = table.rssi[mask]
        assert detected.max() == 0.0
        assert detected.min() == -104.0
        assert NOT_DETECTED not in detected

    def test_malformed_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "WAP001,WAP002,WAP003,LONGITUDE,LATITUDE\n"
            "-50,-60,-70,0,0\n"
            "-50,-60,oops,0,0\n"
        )
        with pytest.raises(ParseError, match=r"row 2.*WAP003"):
            load_csv(path)

    def test_out_of_range_cell_rejected(self, tmp_path):
        path = tmp_path / "range.csv"
        path.write_text("WAP001,LONGITUDE,LATITUDE\n17,0,0\n")
        with pytest.raises(ParseError, match="row 1"):
            load_csv(path)

    def test_missing_declared_column(self, fixture_csv):
        schema = ColumnSchema(wap_columns=("WAP001", "WAP009"))
        with pytest.raises(SchemaError, match="WAP009"):
            load_csv(fixture_csv, schema)

    def test_missing_coordinate_column(self, tmp_path):
        path = tmp_path / "nocoord.csv"
        path.write_text("WAP001,LONGITUDE\n-50,0\n")
        with pytest.raises(SchemaError, match="LATITUDE"):
            load_csv(path)

    def test_only_declared_waps_ingested(self, fixture_csv):
        schema = ColumnSchema(wap_columns=("WAP002", "WAP004"))
        table = load_csv(fixture_csv, schema)
        assert table.n_waps == 2
        # undeclared WAP columns ride along as metadata
        assert "WAP001" in table.metadata


class TestNormalize:
    def test_zero_one_endpoints(self, fixture_csv):
        table = load_csv(fixture_csv)
        norm = normalize_rssi(table, "zero_one")
        # -104 dBm maps just above zero, 0 dBm maps to 1
        assert norm.features[2, 0] == pytest.approx(1.0 / 105.0, rel=1e-12)
        assert norm.features[2, 1] == 1.0

    def test_sentinel_maps_to_exact_zero(self, fixture_csv):
        norm = normalize_rssi(load_csv(fixture_csv), "zero_one")
        assert norm.features[0, 2] == 0.0
        assert norm.features[1, 1] == 0.0

    def test_round_trip_detected_values(self, fixture_csv):
        table = load_csv(fixture_csv)
        for mode in ("zero_one", "powed"):
            norm = normalize_rssi(table, mode)
            mask = table.detected_mask()
            back = norm.inverse_detected(norm.features[mask])
            assert np.allclose(back, table.rssi[mask], atol=1e-12)

    def test_monotone_on_detected(self, fixture_csv):
        table = load_csv(fixture_csv)
        for mode in ("zero_one", "powed"):
            norm = normalize_rssi(table, mode)
            values = np.linspace(-104.0, 0.0, 300)
            fake = table.rssi.copy()
            feats = []
            for v in values:
                fake_row = np.full((1, table.n_waps), v)
                t2 = type(table)(
                    wap_names=table.wap_names,
                    rssi=fake_row,
                    coords=np.zeros((1, 2)),
                    schema=table.schema,
                )
                feats.append(normalize_rssi(t2, mode).features[0, 0])
            assert all(a < b for a, b in zip(feats, feats[1:]))
            assert fake is not None

    def test_powed_compresses_weak_signals(self, fixture_csv):
        table = load_csv(fixture_csv)
        z = normalize_rssi(table, "zero_one").features
        p = normalize_rssi(table, "powed").features
        mask = table.detected_mask() & (table.rssi < -1)
        assert np.all(p[mask] < z[mask])


class TestSplit:
    def make_table(self, n=100):
        rng = Rng(4)
        rssi = (rng.uniform(n * 3) * -90).reshape(n, 3)
        coords = rng.uniform(n * 2).reshape(n, 2)
        from hmdn.dataio import FingerprintTable

        return FingerprintTable(
            wap_names=("WAP001", "WAP002", "WAP003"),
            rssi=rssi,
            coords=coords,
            metadata={"ID": tuple(str(i) for i in range(n))},
        )

    def test_fraction_one_rejected(self):
        with pytest.raises(ValueError):
            SplitSpec(train_fraction=1.0)
        with pytest.raises(ValueError):
            SplitSpec(train_fraction=0.0)

    def test_eighty_twenty(self):
        train, test = split(self.make_table(100), SplitSpec(train_fraction=0.8, seed=1))
        assert train.n_records == 80
        assert test.n_records == 20

    def test_same_seed_same_indices(self):
        t = self.make_table(60)
        spec = SplitSpec(train_fraction=0.75, seed=42)
        a_train, a_test = split(t, spec)
        b_train, b_test = split(t, spec)
        assert a_train.metadata["ID"] == b_train.metadata["ID"]
        assert a_test.metadata["ID"] == b_test.metadata["ID"]

    def test_partition(self):
        t = self.make_table(57)
        train, test = split(t, SplitSpec(train_fraction=0.6, seed=9))
        ids = sorted(train.metadata["ID"] + test.metadata["ID"], key=int)
        assert ids == [str(i) for i in range(57)]
        assert set(train.metadata["ID"]).isdisjoint(test.metadata["ID"])

    def test_by_record_order(self):
        t = self.make_table(10)
        train, test = split(t, SplitSpec(train_fraction=0.7, strategy="by_record_order"))
        assert train.metadata["ID"] == tuple(str(i) for i in range(7))
        assert test.metadata["ID"] == ("7", "8", "9")


class TestCsvRoundTrip:
    def test_value_identical(self, fixture_csv, tmp_path):
        table = load_csv(fixture_csv)
        out = tmp_path / "export.csv"
        table_to_csv(table, out)
        back = load_csv(out)
        assert np.array_equal(back.rssi, table.rssi)
        assert np.array_equal(back.coords, table.coords)
        assert back.metadata == table.metadata

    def test_write_dataset_with_extra_columns(self, tmp_path):
        path = tmp_path / "sim.csv"
        write_dataset_csv(
            path,
            wap_names=("WAP001", "WAP002"),
            rssi=[[-40.0, -50.0], [-45.0, 100.0]],
            coords=[[1.0, 2.0], [3.0, 4.0]],
            extra={"LUX_sunny": [200.5, 300.25]},
        )
        table = load_csv(path)
        assert table.n_records == 2
        assert table.metadata_floats("LUX_sunny").tolist() == [200.5, 300.25]


class TestModelPersistence:
    def train_tiny(self):
        rng = Rng(12)
        X = (rng.uniform(80) * 2 - 1).reshape(-1, 2)
        Y = (X[:, :1] * 2.0 + 0.5) + 0.1 * rng.normals(40).reshape(-1, 1)
        cfg = MdnConfig(
            input_dim=2, target_dim=1, n_components=2, hidden_layers=(6,), epochs=40, seed=5
        )
        return train((X, Y), cfg)

    def test_round_trip_bit_exact(self, tmp_path):
        model = self.train_tiny()
        path = tmp_path / "model.txt"
        save_model(model, path)
        back = load_model(path)
        assert back.config == model.config
        assert np.array_equal(back.input_mean, model.input_mean)
        assert np.array_equal(back.input_std, model.input_std)
        assert back.training_log == model.training_log
        for a, b in zip(model.weights, back.weights):
            assert np.array_equal(a.array, b.array)

    def test_save_is_idempotent_bytes(self, tmp_path):
        model = self.train_tiny()
        p1, p2 = tmp_path / "m1.txt", tmp_path / "m2.txt"
        save_model(model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_header_rejected(self, tmp_path):
        p = tmp_path / "junk.txt"
        p.write_text("not a model\n")
        with pytest.raises(SchemaError):
            load_model(p)

import csv
import json
import logging

import numpy as np
import pytest

from decocrit import harness
from decocrit.channels import ChannelParams
from decocrit.cli import main
from decocrit.harness import (
    TABLE_HEADERS,
    ConfigError,
    SweepConfig,
    emit_tables,
    load_jsonl,
    new_manifest,
    run_point,
    run_sweep,
)
from decocrit.observables import ObservableRecord
from decocrit.oracle import exact_correlators, exact_pipeline

EXACT = {"chi_max": 256, "sv_cutoff": 1e-12}


def _config(tmp_path, **kw):
    base = {"L_list": [6], "pzz_list": [0.0, 0.2, 0.4], "output_dir": str(tmp_path / "out"), **EXACT}
    base.update(kw)
    return SweepConfig.from_dict(base)


@pytest.fixture(autouse=True)
def _fresh_cache():
    harness._doubled_cache.clear()
    yield
    harness._doubled_cache.clear()


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            SweepConfig.from_dict({"L_list": [6], "pzz_list": [0.1], "chimax": 3})

    def test_critical_line_forbids_px(self):
        with pytest.raises(ConfigError):
            SweepConfig(L_list=[6], pzz_list=[0.1], explicit_px_list=[0.1])

    def test_explicit_px_pairing(self):
        with pytest.raises(ConfigError):
            SweepConfig(L_list=[6], pzz_list=[0.1, 0.2], constraint_mode="explicit_px", explicit_px_list=[0.1])
        cfg = SweepConfig(L_list=[6], pzz_list=[0.1, 0.2], constraint_mode="explicit_px", explicit_px_list=[0.3, 0.05])
        assert cfg.channel_params(0.2, 1.0).p_x == 0.05

    @pytest.mark.parametrize("bad", [
        {"L_list": []},
        {"pzz_list": [0.7]},
        {"L_list": [1]},
        {"constraint_mode": "other"},
        {"observables_requested": ["entropy", "magic"]},
        {"jh_scan": {"p_zz": 0.1}},
        {"jh_scan": {"p_zz": 0.1, "J_over_h": [0.0]}},
        {"chi_max": 1},
    ])
    def test_invalid_values(self, bad):
        data = {"L_list": [6], "pzz_list": [0.1], **bad}
        with pytest.raises(ConfigError):
            SweepConfig.from_dict(data)

    def test_bad_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            SweepConfig.from_file(path)

    def test_point_count(self):
        cfg = SweepConfig(L_list=[6, 8], pzz_list=[0.0, 0.1, 0.2], jh_scan={"p_zz": 0.1, "J_over_h": [1.1, 1.2]})
        assert len(cfg.points()) == 2 * 3 + 2 * 2
        assert len(new_manifest(cfg)["points"]) == 10

    def test_critical_line_px(self):
        cfg = SweepConfig(L_list=[6], pzz_list=[0.2])
        assert cfg.channel_params(0.2, 1.2).p_x == pytest.approx(0.5 - 0.5 * 0.6 ** (1 / 1.2))
        assert cfg.channel_params(0.2, 1.2).J == pytest.approx(1.2)

    def test_dict_roundtrip(self):
        cfg = SweepConfig(L_list=[6], pzz_list=[0.2], jh_scan={"p_zz": 0.1, "J_over_h": [1.1]})
        assert SweepConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


class TestRunPoint:
    def test_matches_oracle(self, tmp_path):
        cfg = _config(tmp_path)
        res = run_point(cfg, 6, 0.2, 1.0)
        params = ChannelParams.critical_line(0.2)
        exact = exact_correlators(exact_pipeline(6, params), params)
        for name in ObservableRecord.CURVES:
            a = np.array([v for _, v in getattr(res.record, name)])
            b = np.array([v for _, v in getattr(exact, name)])
            assert np.abs(a - b).max() < 1e-8
        assert res.status == "done"

    def test_rerun_byte_identical(self, tmp_path):
        cfg = _config(tmp_path)
        store = harness.ResultsStore(tmp_path / "a")
        run_point(cfg, 6, 0.2, 1.0, store)
        first = store.point_path("L6_pzz0.2_jh1.0").read_bytes()
        harness._doubled_cache.clear()
        run_point(cfg, 6, 0.2, 1.0, store)
        assert store.point_path("L6_pzz0.2_jh1.0").read_bytes() == first

    def test_record_persisted_before_fit(self, tmp_path, monkeypatch):
        cfg = _config(tmp_path)
        store = harness.ResultsStore(tmp_path / "b")

        def boom(*a, **k):
            raise RuntimeError("fit crashed")

        monkeypatch.setattr(harness, "fit_record", boom)
        with pytest.raises(RuntimeError):
            run_point(cfg, 6, 0.2, 1.0, store)
        saved = json.loads(store.point_path("L6_pzz0.2_jh1.0").read_text())
        assert saved["record"]["L"] == 6 and saved["fits"] == {}

    def test_nonconvergence_marks_failed(self, tmp_path):
        cfg = _config(tmp_path, L_list=[10], chi_max=2, sv_cutoff=0.0, sweep_tol=1e-14, max_sweeps=6)
        res = run_point(cfg, 10, 0.1, 1.0)
        assert res.status == "failed"
        assert any("DMRG" in m for m in res.messages)

    def test_fits_on_critical_line(self, tmp_path):
        cfg = _config(tmp_path, L_list=[12], **{"chi_max": 300, "sv_cutoff": 1e-6})
        res = run_point(cfg, 12, 0.1, 1.0)
        assert {"cft_mi", "cft_s2", "eta", "eta_X"} <= set(res.fits)
        off = run_point(cfg, 12, 0.1, 1.2)
        assert "exp" in off.fits and "eta" not in off.fits


class TestSweep:
    def test_resume_skips_done(self, tmp_path, monkeypatch):
        cfg = _config(tmp_path)
        run_sweep(cfg)
        calls = []
        monkeypatch.setattr(harness, "run_point", lambda *a, **k: calls.append(a))
        store = run_sweep(cfg, resume=True)
        assert calls == []
        assert all(p["status"] == "done" for p in store.load_manifest()["points"].values())
        assert len(store.load_records()) == 3

    def test_interrupt_and_resume(self, tmp_path, monkeypatch):
        ref = run_sweep(_config(tmp_path, output_dir=str(tmp_path / "ref")))
        cfg = _config(tmp_path, output_dir=str(tmp_path / "int"))
        real = harness.run_point
        count = {"n": 0}

        def flaky(*a, **k):
            count["n"] += 1
            if count["n"] == 2:
                raise KeyboardInterrupt
            return real(*a, **k)

        monkeypatch.setattr(harness, "run_point", flaky)
        with pytest.raises(KeyboardInterrupt):
            run_sweep(cfg)
        statuses = [p["status"] for p in json.loads((tmp_path / "int" / "manifest.json").read_text())["points"].values()]
        assert statuses.count("done") == 1 and statuses.count("pending") == 2
        monkeypatch.setattr(harness, "run_point", real)
        harness._doubled_cache.clear()
        store = run_sweep(cfg, resume=True)

        def by_key(s):
            return {e["key"]: e for e in s.load_records()}

        assert by_key(store) == by_key(ref)

    def test_resume_with_other_config(self, tmp_path):
        cfg = _config(tmp_path, pzz_list=[0.1])
        run_sweep(cfg)
        with pytest.raises(ConfigError):
            run_sweep(_config(tmp_path, pzz_list=[0.2]), resume=True)

    def test_monotone_status(self, tmp_path):
        manifest = new_manifest(_config(tmp_path))
        key = next(iter(manifest["points"]))
        harness._set_status(manifest, key, "done")
        with pytest.raises(RuntimeError):
            harness._set_status(manifest, key, "failed")

    def test_failure_keeps_manifest_valid(self, tmp_path, monkeypatch):
        cfg = _config(tmp_path)
        real = harness.run_point

        def sometimes(config, L, p, jh, store=None):
            if p == 0.2:
                raise ValueError("synthetic failure")
            return real(config, L, p, jh, store)

        monkeypatch.setattr(harness, "run_point", sometimes)
        store = run_sweep(cfg)
        points = store.load_manifest()["points"]
        assert sorted(p["status"] for p in points.values()) == ["done", "done", "failed"]

    def test_process_pool(self, tmp_path):
        cfg = _config(tmp_path, pzz_list=[0.1, 0.3])
        store = run_sweep(cfg, jobs=2)
        serial = run_sweep(_config(tmp_path, pzz_list=[0.1, 0.3], output_dir=str(tmp_path / "serial")))
        a = {e["key"]: e["record"] for e in store.load_records()}
        b = {e["key"]: e["record"] for e in serial.load_records()}
        assert a == b


class TestTables:
    @pytest.fixture
    def store(self, tmp_path):
        cfg = _config(tmp_path, L_list=[8], pzz_list=[0.0, 0.2], jh_scan={"p_zz": 0.2, "J_over_h": [1.2, 1.4, 1.6]},
                      **{"chi_max": 300, "sv_cutoff": 1e-6})
        return run_sweep(cfg)

    def test_headers_and_rows(self, store, tmp_path):
        paths = emit_tables(store.load_records(), tmp_path / "tables")
        for name, header in TABLE_HEADERS.items():
            with open(paths[name]) as fh:
                rows = list(csv.reader(fh))
            assert rows[0] == header
        with open(paths["mi_profile.csv"]) as fh:
            mi = list(csv.DictReader(fh))
        assert len(mi) == 2 * 7
        assert len({(r["L"], r["p_zz"], r["L_A"]) for r in mi}) == len(mi)
        with open(paths["ceff.csv"]) as fh:
            ceff = list(csv.DictReader(fh))
        assert len(ceff) == 2 and all(r["residual_rms"] for r in ceff)
        with open(paths["corr.csv"]) as fh:
            kinds = {r["kind"] for r in csv.DictReader(fh)}
        assert kinds == {"CZ", "CX", "C2ZZ", "CSTX"}

    def test_jsonl_roundtrip(self, store, tmp_path):
        entries = store.load_records()
        paths = emit_tables(entries, tmp_path / "tables")
        again = load_jsonl(paths["records.jsonl"])
        assert again == entries
        for e in again:
            rec = ObservableRecord.from_dict(e["record"])
            assert rec.to_dict() == e["record"]

    def test_failed_points_omitted(self, store, tmp_path, caplog):
        entries = store.load_records()
        entries[0] = dict(entries[0], status="failed")
        with caplog.at_level(logging.WARNING):
            paths = emit_tables(entries, tmp_path / "tables")
        assert "omitting 1" in caplog.text
        assert len(load_jsonl(paths["records.jsonl"])) == len(entries) - 1

    def test_no_points(self, tmp_path):
        with pytest.raises(ValueError):
            emit_tables([], tmp_path)


class TestCli:
    def test_config_error_exit(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"L_list": [6], "pzz_list": [0.1], "typo": 1}))
        assert main(["run", "--config", str(path)]) == 2

    def test_missing_args(self):
        assert main(["run"]) == 2

    def test_run_tables_fit(self, tmp_path, capsys):
        cfg = {"L_list": [8], "pzz_list": [0.1], "output_dir": str(tmp_path / "out")}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(path), "--jobs", "1"]) == 0
        assert main(["run", "--config", str(path), "--resume"]) == 0
        assert main(["tables", "--in", str(tmp_path / "out"), "--out", str(tmp_path / "t")]) == 0
        assert (tmp_path / "t" / "ceff.csv").exists()
        capsys.readouterr()
        assert main(["fit", "--in", str(tmp_path / "out" / "records.jsonl"), "--kind", "cft_mi"]) == 0
        line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert line["kind"] == "cft_mi"

    def test_partial_failure_exit(self, tmp_path):
        cfg = {"L_list": [10], "pzz_list": [0.1], "output_dir": str(tmp_path / "out"),
               "chi_max": 2, "sv_cutoff": 0.0, "sweep_tol": 1e-14, "max_sweeps": 6}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(path)]) == 3

    def test_oracle_check(self, capsys):
        assert main(["oracle-check", "--L", "4", "--pzz", "0.25"]) == 0
        assert "PASS" in capsys.readouterr().out
        assert main(["oracle-check", "--L", "14", "--pzz", "0.25"]) == 2

"""Sweep orchestration: ground state -> doubling -> decoherence -> observables -> fits.

Output directory layout::

    manifest.json      config snapshot, version, per-point status
    records.jsonl      one line per finished point (source of truth)
    points/<key>.json  per-point record, written before fitting
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable

from . import __version__
from .channels import TRUNCATION_ALARM, ChannelParams, apply_decoherence, px_from_pzz
from .choi import ChoiState, double_pure_compressed
from .dmrg import DmrgResult, DmrgSettings, build_tfim_mpo, ground_state
from .fits import FitError, FitResult, fit_cft_mi, fit_cft_s2, fit_exp_decay, fit_nu, fit_powerlaw_chord
from .observables import ObservableRecord, measure_all

logger = logging.getLogger(__name__)

OBSERVABLE_GROUPS = ("entropy", "correlators", "susceptibilities")
# summed discarded weight above which a point is marked failed
TRUNCATION_FAIL = 1e-3
_DOUBLED_CACHE_SIZE = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    L_list: tuple[int, ...]
    pzz_list: tuple[float, ...]
    J: float = 1.0
    h: float = 1.0
    constraint_mode: str = "critical_line"
    explicit_px_list: tuple[float, ...] | None = None
    jh_scan: dict[str, Any] | None = None
    chi_max: int = 300
    sv_cutoff: float = 1e-6
    sweep_tol: float = 1e-5
    max_sweeps: int = 40
    seed: int = 0
    observables_requested: tuple[str, ...] = OBSERVABLE_GROUPS
    output_dir: str = "results"

    def __post_init__(self) -> None:
        for name in ("L_list", "pzz_list", "observables_requested"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.explicit_px_list is not None:
            object.__setattr__(self, "explicit_px_list", tuple(self.explicit_px_list))
        self.validate()

    def validate(self) -> None:
        if not self.L_list or not self.pzz_list:
            raise ConfigError("L_list and pzz_list must be nonempty")
        if any(int(L) != L or L < 2 for L in self.L_list):
            raise ConfigError("every L must be an integer >= 2")
        if any(not 0.0 <= p <= 0.5 for p in self.pzz_list):
            raise ConfigError("p_zz values must lie in [0, 1/2]")
        if self.J <= 0 or self.h <= 0:
            raise ConfigError("J and h must be positive")
        if self.constraint_mode not in ("critical_line", "explicit_px"):
            raise ConfigError(f"unknown constraint_mode {self.constraint_mode!r}")
        if self.constraint_mode == "critical_line" and self.explicit_px_list is not None:
            raise ConfigError("constraint_mode=critical_line forbids explicit_px_list")
        if self.constraint_mode == "explicit_px":
            if self.explicit_px_list is None or len(self.explicit_px_list) != len(self.pzz_list):
                raise ConfigError("explicit_px mode needs explicit_px_list paired with pzz_list")
            if any(not 0.0 <= p <= 0.5 for p in self.explicit_px_list):
                raise ConfigError("p_x values must lie in [0, 1/2]")
        if self.jh_scan is not None:
            if set(self.jh_scan) != {"p_zz", "J_over_h"}:
                raise ConfigError("jh_scan needs exactly the keys 'p_zz' and 'J_over_h'")
            if not self.jh_scan["J_over_h"] or any(v <= 0 for v in self.jh_scan["J_over_h"]):
                raise ConfigError("jh_scan J_over_h values must be positive and nonempty")
            if not 0.0 <= self.jh_scan["p_zz"] <= 0.5:
                raise ConfigError("jh_scan p_zz must lie in [0, 1/2]")
        unknown = set(self.observables_requested) - set(OBSERVABLE_GROUPS)
        if unknown:
            raise ConfigError(f"unknown observables {sorted(unknown)}")
        if self.chi_max < 2 or self.sv_cutoff < 0 or self.sweep_tol <= 0 or self.max_sweeps < 1:
            raise ConfigError("invalid truncation or convergence settings")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SweepConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> SweepConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @property
    def dmrg_settings(self) -> DmrgSettings:
        return DmrgSettings(self.chi_max, self.sv_cutoff, self.sweep_tol, self.max_sweeps, self.seed)

    def points(self) -> list[Point]:
        pts = []
        for L in self.L_list:
            for p in self.pzz_list:
                pts.append(Point(int(L), float(p), self.J / self.h))
        if self.jh_scan is not None:
            for L in self.L_list:
                for jh in self.jh_scan["J_over_h"]:
                    pts.append(Point(int(L), float(self.jh_scan["p_zz"]), float(jh)))
        return list(OrderedDict((p.key, p) for p in pts).values())

    def channel_params(self, p_zz: float, J_over_h: float) -> ChannelParams:
        J = J_over_h * self.h
        if self.constraint_mode == "explicit_px" and J_over_h == self.J / self.h and p_zz in self.pzz_list:
            p_x = self.explicit_px_list[self.pzz_list.index(p_zz)]
        else:
            p_x = px_from_pzz(p_zz, J_over_h)
        return ChannelParams(p_zz, p_x, J, self.h)


@dataclass(frozen=True)
class Point:
    L: int
    p_zz: float
    J_over_h: float

    @property
    def key(self) -> str:
        return f"L{self.L}_pzz{self.p_zz!r}_jh{self.J_over_h!r}"


@dataclass
class PointResult:
    key: str
    point: Point
    status: str
    record: ObservableRecord | None
    fits: dict[str, Any] = field(default_factory=dict)
    dmrg_energy: float = math.nan
    dmrg_converged: bool = True
    truncation_budget: float = 0.0
    messages: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "key": self.key,
            "L": self.point.L,
            "p_zz": self.point.p_zz,
            "J_over_h": self.point.J_over_h,
            "status": self.status,
            "record": self.record.to_dict() if self.record is not None else None,
            "fits": self.fits,
            "dmrg_energy": self.dmrg_energy,
            "dmrg_converged": self.dmrg_converged,
            "truncation_budget": self.truncation_budget,
            "messages": self.messages,
        }


# --------------------------------------------------------------------------- pipeline

_doubled_cache: OrderedDict[tuple, tuple[ChoiState, DmrgResult]] = OrderedDict()


def prepare_doubled(L: int, J: float, h: float, settings: DmrgSettings) -> tuple[ChoiState, DmrgResult]:
    """Ground state of the periodic chain, doubled and compressed; memoized per process."""
    key = (L, J, h, settings)
    if key in _doubled_cache:
        _doubled_cache.move_to_end(key)
        return _doubled_cache[key]
    result = ground_state(build_tfim_mpo(L, J, h, periodic=True), settings)
    doubled = double_pure_compressed(result.state, settings.chi_max, settings.sv_cutoff)
    _doubled_cache[key] = (doubled, result)
    while len(_doubled_cache) > _DOUBLED_CACHE_SIZE:
        _doubled_cache.popitem(last=False)
    return doubled, result


def simulate(L: int, params: ChannelParams, settings: DmrgSettings) -> tuple[ChoiState, DmrgResult]:
    """Decohered Choi state for one parameter point."""
    doubled, result = prepare_doubled(L, params.J, params.h, settings)
    return apply_decoherence(doubled, params), result


def _try_fit(fn, *args, **kwargs) -> dict[str, Any]:
    try:
        return fn(*args, **kwargs).to_dict()
    except FitError as exc:
        return {"error": str(exc)}


def fit_record(record: ObservableRecord, J_over_h: float = 1.0) -> dict[str, Any]:
    """Per-point fits: CFT forms on the critical line, exponential decay off it."""
    L = record.L
    out: dict[str, Any] = {}
    if record.mi_profile and L >= 8:
        out["cft_mi"] = _try_fit(fit_cft_mi, record.mi_profile, L)
        out["cft_s2"] = _try_fit(fit_cft_s2, record.s2_profile, L)

    def half(curve):
        return [(r, v) for r, v in curve if r <= L // 2]

    if record.czz_curve and L >= 8:
        if J_over_h == 1.0:
            out["eta"] = _try_fit(fit_powerlaw_chord, half(record.czz_curve), L)
        else:
            out["exp"] = _try_fit(fit_exp_decay, half(record.czz_curve), (2, L // 2))
    if record.cxx_curve and L >= 8 and J_over_h == 1.0:
        out["eta_X"] = _try_fit(fit_powerlaw_chord, half(record.cxx_curve), L, exponent="eta_X")
    return out


def run_point(config: SweepConfig, L: int, p_zz: float, J_over_h: float = 1.0,
              store: ResultsStore | None = None) -> PointResult:
    """Run the full pipeline for one point; the record is persisted before fitting."""
    point = Point(int(L), float(p_zz), float(J_over_h))
    params = config.channel_params(point.p_zz, point.J_over_h)
    state, dmrg = simulate(point.L, params, config.dmrg_settings)
    record = measure_all(state, params, set(config.observables_requested))
    messages = []
    status = "done"
    if not dmrg.converged:
        status = "failed"
        messages.append(f"DMRG not converged (last dE={dmrg.last_delta:.3e})")
    if record.truncation_budget > TRUNCATION_ALARM:
        messages.append(f"truncation alarm: discarded weight {record.truncation_budget:.3e}")
    if record.truncation_budget > TRUNCATION_FAIL:
        status = "failed"
    result = PointResult(point.key, point, status, record, {}, dmrg.energy, dmrg.converged,
                         record.truncation_budget, messages)
    if store is not None:
        store.write_point(result)
    result.fits = fit_record(record, point.J_over_h)
    if store is not None:
        store.write_point(result)
    return result


def _worker(config_dict: dict, point: Point, out_dir: str) -> dict:
    config = SweepConfig.from_dict(config_dict)
    return run_point(config, point.L, point.p_zz, point.J_over_h, ResultsStore(out_dir)).to_dict()


# --------------------------------------------------------------------------- persistence


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True)


class ResultsStore:
    """Files of one sweep under ``root``."""

    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def records_path(self) -> Path:
        return self.root / "records.jsonl"

    def point_path(self, key: str) -> Path:
        return self.root / "points" / f"{key}.json"

    def write_point(self, result: PointResult) -> None:
        atomic_write(self.point_path(result.key), dumps(result.to_dict()) + "\n")

    def append_record(self, entry: dict) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.records_path, "a") as fh:
            fh.write(dumps(entry) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def load_manifest(self) -> dict | None:
        if not self.manifest_path.exists():
            return None
        return json.loads(self.manifest_path.read_text())

    def save_manifest(self, manifest: dict) -> None:
        manifest["updated"] = _now()
        atomic_write(self.manifest_path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    def load_records(self) -> list[dict]:
        """Entries of ``records.jsonl``, last line per key winning."""
        return load_jsonl(self.records_path)


def load_jsonl(path: str | os.PathLike) -> list[dict]:
    entries: OrderedDict[str, dict] = OrderedDict()
    path = Path(path)
    if not path.exists():
        return []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError:
            logger.warning("skipping truncated line in %s", path)
            continue
        entries[entry["key"]] = entry
    return list(entries.values())


def _set_status(manifest: dict, key: str, status: str, **extra: Any) -> None:
    entry = manifest["points"][key]
    if entry["status"] != "pending" and status != entry["status"]:
        raise RuntimeError(f"illegal status change {entry['status']} -> {status} for {key}")
    entry["status"] = status
    entry.update(extra)


def new_manifest(config: SweepConfig) -> dict:
    return {
        "config": config.to_dict(),
        "version": __version__,
        "created": _now(),
        "updated": _now(),
        "points": {
            p.key: {"L": p.L, "p_zz": p.p_zz, "J_over_h": p.J_over_h, "status": "pending",
                    "truncation_budget": None, "started": None, "finished": None, "messages": []}
            for p in config.points()
        },
    }


def run_sweep(config: SweepConfig, jobs: int = 1, resume: bool = False,
              output_dir: str | os.PathLike | None = None) -> ResultsStore:
    """Execute every pending point, updating the manifest after each one.

    With ``resume`` an existing manifest is reused and points already marked
    done or failed are skipped. Without it, any previous results in the
    output directory are replaced.
    """
    store = ResultsStore(output_dir or config.output_dir)
    store.root.mkdir(parents=True, exist_ok=True)
    manifest = store.load_manifest() if resume else None
    if manifest is None:
        manifest = new_manifest(config)
        if store.records_path.exists():
            store.records_path.unlink()
    elif manifest["config"] != config.to_dict():
        raise ConfigError("resume: config differs from the one recorded in the manifest")
    store.save_manifest(manifest)

    points = {p.key: p for p in config.points()}
    todo = [points[k] for k, v in manifest["points"].items() if v["status"] == "pending"]
    logger.info("%d of %d points to run", len(todo), len(points))

    def finish(entry: dict) -> None:
        store.append_record(entry)
        _set_status(manifest, entry["key"], entry["status"], finished=_now(),
                    truncation_budget=entry["truncation_budget"], messages=entry["messages"])
        store.save_manifest(manifest)
        logger.info("point %s: %s", entry["key"], entry["status"])

    def fail(key: str, exc: BaseException) -> None:
        logger.error("point %s failed: %s", key, exc)
        _set_status(manifest, key, "failed", finished=_now(), messages=[repr(exc)])
        store.save_manifest(manifest)

    # group by chain so the doubled ground state is reused within a worker
    todo.sort(key=lambda p: (p.L, p.J_over_h, p.p_zz))
    jobs = max(1, min(jobs, len(todo)))
    if jobs == 1:
        for p in todo:
            manifest["points"][p.key]["started"] = _now()
            try:
                finish(run_point(config, p.L, p.p_zz, p.J_over_h, store).to_dict())
            except Exception as exc:  # noqa: BLE001
                fail(p.key, exc)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {}
            for p in todo:
                manifest["points"][p.key]["started"] = _now()
                futures[pool.submit(_worker, config.to_dict(), p, str(store.root))] = p.key
            store.save_manifest(manifest)
            for fut in as_completed(futures):
                try:
                    finish(fut.result())
                except Exception as exc:  # noqa: BLE001
                    fail(futures[fut], exc)
    return store


# --------------------------------------------------------------------------- tables

TABLE_HEADERS = {
    "mi_profile.csv": ["L", "p_zz", "p_x", "L_A", "MI2"],
    "ceff.csv": ["L", "p_zz", "c_eff", "beta1", "residual_rms", "window_lo", "window_hi"],
    "corr.csv": ["L", "p_zz", "kind", "r", "value"],
    "exponents.csv": ["L", "p_zz", "eta", "eta_X", "eta_residual_rms", "eta_X_residual_rms"],
    "swssb.csv": ["L", "p_zz", "chi_I", "chi_II"],
    "nu.csv": ["p_zz", "L", "nu", "residual_rms"],
}
CORR_KINDS = {"CZ": "czz_curve", "CX": "cxx_curve", "C2ZZ": "c2zz_curve", "CSTX": "cstx_curve"}


def _fit_value(fit: dict | None, name: str) -> float | str:
    if not fit or "error" in fit:
        return ""
    if name == "residual_rms":
        return fit["residual_rms"]
    return fit["parameters"].get(name, "")


def nu_fits(entries: Iterable[dict]) -> dict[tuple[float, int], FitResult]:
    """``nu`` per ``(p_zz, L)`` from the off-critical exponential fits."""
    groups: dict[tuple[float, int], list[tuple[float, float]]] = {}
    for e in entries:
        fit = e["fits"].get("exp")
        if e["J_over_h"] == 1.0 or not fit or "error" in fit:
            continue
        groups.setdefault((e["p_zz"], e["L"]), []).append(
            (abs(e["J_over_h"] - 1.0), fit["parameters"]["xi"]))
    out = {}
    for key, pts in sorted(groups.items()):
        try:
            out[key] = fit_nu(pts)
        except FitError as exc:
            logger.warning("nu fit for p_zz=%s L=%s failed: %s", key[0], key[1], exc)
    return out


def emit_tables(entries: list[dict], out_dir: str | os.PathLike) -> dict[str, Path]:
    """Write the CSV views and a JSONL copy of the finished records."""
    done = [e for e in entries if e["status"] == "done" and e.get("record")]
    skipped = len(entries) - len(done)
    if not done:
        raise ValueError("no finished points to tabulate")
    if skipped:
        logger.warning("omitting %d unfinished or failed points from the tables", skipped)
    out = Path(out_dir)
    rows: dict[str, list[list]] = {name: [] for name in TABLE_HEADERS}
    critical = sorted((e for e in done if e["J_over_h"] == 1.0), key=lambda e: (e["L"], e["p_zz"]))
    for e in critical:
        rec = e["record"]
        L, p = e["L"], e["p_zz"]
        for la, mi in rec["mi_profile"]:
            rows["mi_profile.csv"].append([L, p, rec["params"]["p_x"], la, mi])
        cft = e["fits"].get("cft_mi")
        if cft is not None:
            win = cft.get("window", ["", ""])
            rows["ceff.csv"].append([L, p, _fit_value(cft, "c_eff"), _fit_value(cft, "beta1"),
                                     _fit_value(cft, "residual_rms"), win[0], win[1]])
        for kind, name in CORR_KINDS.items():
            for r, v in rec[name]:
                rows["corr.csv"].append([L, p, kind, r, v])
        eta, eta_x = e["fits"].get("eta"), e["fits"].get("eta_X")
        if eta is not None or eta_x is not None:
            rows["exponents.csv"].append([L, p, _fit_value(eta, "eta"), _fit_value(eta_x, "eta_X"),
                                          _fit_value(eta, "residual_rms"), _fit_value(eta_x, "residual_rms")])
        if not math.isnan(rec["chi_I"]):
            rows["swssb.csv"].append([L, p, rec["chi_I"], rec["chi_II"]])
    for (p, L), fit in nu_fits(done).items():
        rows["nu.csv"].append([p, L, fit["nu"], fit.residual_rms])

    paths = {}
    for name, header in TABLE_HEADERS.items():
        path = out / name
        with tempfile.NamedTemporaryFile("w", dir=out if out.exists() else None, delete=False,
                                         suffix=".tmp", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows[name])
        out.mkdir(parents=True, exist_ok=True)
        os.replace(fh.name, path)
        paths[name] = path
    jsonl = out / "records.jsonl"
    atomic_write(jsonl, "".join(dumps(e) + "\n" for e in done))
    paths["records.jsonl"] = jsonl
    return paths

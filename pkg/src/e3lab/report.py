"""Result files: detail CSV, summary CSV, run manifest and (non-reproducible) timings.

Everything except ``timings.json`` is a pure function of the config and the
master seed, so reruns produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import platform
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import scipy

from .protocols import ProtocolResult

DETAIL_FILE = "results.csv"
SUMMARY_FILE = "summary.csv"
MANIFEST_FILE = "run_manifest.json"
TIMINGS_FILE = "timings.json"

DETAIL_HEADER = ["method", "protocol", "episode", "source_id", "metric", "value", "seed"]
SUMMARY_HEADER = ["method", "protocol", "episode", "generator", "average_auc", "average_accuracy", "seed"]
MIXED_SOURCE = "mixed"


def _fmt(x: float) -> str:
    return repr(float(x))


def _as_list(results) -> List[ProtocolResult]:
    if results is None:
        return []
    return [results] if isinstance(results, ProtocolResult) else list(results)


def detail_rows(results: Iterable[ProtocolResult]) -> List[list]:
    rows = []
    for res in results:
        for ep in res.episodes:
            for src, auc in ep.per_source_auc.items():
                rows.append([res.label, res.protocol, ep.episode, src, "auc", _fmt(auc), res.master_seed])
                rows.append([res.label, res.protocol, ep.episode, src, "accuracy",
                             _fmt(ep.per_source_accuracy[src]), res.master_seed])
            for metric, value in sorted(ep.extra.items()):
                rows.append([res.label, res.protocol, ep.episode, MIXED_SOURCE, metric, _fmt(value), res.master_seed])
    return rows


def summary_rows(results: Iterable[ProtocolResult]) -> List[list]:
    return [[res.label, res.protocol, ep.episode, ep.generator or "", _fmt(ep.average_auc),
             _fmt(ep.average_accuracy), res.master_seed]
            for res in results for ep in res.episodes]


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def versions() -> Dict[str, str]:
    from . import __version__

    return {"e3lab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def write_report(results: Union[ProtocolResult, Sequence[ProtocolResult], None], out_dir,
                 config=None) -> Dict[str, Path]:
    """Write the CSVs and manifests for ``results`` into ``out_dir``; returns the paths."""
    results = _as_list(results)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"detail": out / DETAIL_FILE, "summary": out / SUMMARY_FILE, "manifest": out / MANIFEST_FILE,
             "timings": out / TIMINGS_FILE}
    _write_csv(paths["detail"], DETAIL_HEADER, detail_rows(results))
    _write_csv(paths["summary"], SUMMARY_HEADER, summary_rows(results))
    manifest = OrderedDict([
        ("config_fingerprint", sorted({r.config_fingerprint for r in results})),
        ("master_seed", sorted({r.master_seed for r in results})),
        ("runs", [{"label": r.label, "protocol": r.protocol, "episodes": len(r.episodes)} for r in results]),
        ("versions", versions()),
        ("config", json.loads(config.to_json()) if config is not None else None),
    ])
    paths["manifest"].write_text(json.dumps(manifest, indent=1, sort_keys=True))
    timings = [{"label": r.label, "protocol": r.protocol, "episode": ep.episode, "wall_time": ep.wall_time}
               for r in results for ep in r.episodes]
    paths["timings"].write_text(json.dumps(timings, indent=1))
    return paths


def read_detail(path) -> List[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["episode"] = int(row["episode"])
        row["value"] = float(row["value"])
    return rows


def summarize_detail(rows: Sequence[dict]) -> List[list]:
    """Per-episode averages recomputed from detail rows, ordered as first seen."""
    groups: "OrderedDict[tuple, dict]" = OrderedDict()
    for row in rows:
        if row["source_id"] == MIXED_SOURCE:
            continue
        key = (row["method"], row["protocol"], row["episode"], row["seed"])
        groups.setdefault(key, {"auc": [], "accuracy": []})[row["metric"]].append(row["value"])
    return [[m, p, e, _fmt(np.mean(v["auc"])), _fmt(np.mean(v["accuracy"])), s]
            for (m, p, e, s), v in groups.items()]


def render_summary(in_dir, fmt: str = "csv") -> str:
    rows = summarize_detail(read_detail(Path(in_dir) / DETAIL_FILE))
    header = ["method", "protocol", "episode", "average_auc", "average_accuracy", "seed"]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt == "text":
        lines = [f"{'method':<16} {'protocol':<11} {'ep':>3} {'avg AUC':>8} {'avg acc':>8}"]
        lines += [f"{m:<16} {p:<11} {e:>3} {float(a):8.4f} {float(c):8.4f}" for m, p, e, a, c, _ in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")

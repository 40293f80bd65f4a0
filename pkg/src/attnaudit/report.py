"""Structured audit documents: JSON reports for scans, sweeps and baselines,
plus the persisted reference-profile artifact.

Documents are rendered with sorted keys and a fixed layout so identical
inputs produce byte-identical files; the only unstable field is the
``generated_at`` timestamp, which callers can suppress. Files are written
atomically (temp file + rename), so error paths never leave partial output.
"""

from __future__ import annotations

import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .detector import DetectionReport, ReferenceProfile
from .entropy import EntropyConfig

DOCUMENT_FORMAT = 1


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def dumps_document(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_text(content: str, path: str | Path) -> None:
    """Write atomically: a failed run never leaves a partial file behind."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bytes(content: bytes, path: str | Path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_document(doc: dict, path: str | Path) -> None:
    write_text(dumps_document(doc), path)


def _config_doc(config: EntropyConfig) -> dict:
    return {
        "measure": config.measure,
        "q": config.q,
        "alpha": config.alpha,
        "epsilon": config.epsilon,
    }


def _config_from_doc(doc: dict) -> EntropyConfig:
    return EntropyConfig(
        measure=doc["measure"], q=doc["q"], alpha=doc["alpha"], epsilon=doc["epsilon"]
    )


def _profile_doc(profile: ReferenceProfile) -> dict:
    return {
        "layer": profile.layer,
        "mu_ref": profile.mu_ref,
        "sigma_ref": profile.sigma_ref,
        "median_m": profile.median_m,
        "sample_count": profile.sample_count,
    }


def scan_document(
    report: DetectionReport,
    reference_label: str,
    target_label: str,
    timestamp: str | None = None,
) -> dict:
    doc = {
        "kind": "scan-report",
        "format": DOCUMENT_FORMAT,
        "config": _config_doc(report.profile.config),
        "layer": report.layer,
        "tau": report.tau,
        "auc": report.auc,
        "verdict": report.verdict,
        "reference": reference_label,
        "target": target_label,
        "profile": _profile_doc(report.profile),
        "scores": {
            "reference": report.per_sample.s_ref.tolist(),
            "target": report.per_sample.s_target.tolist(),
        },
        "warnings": list(report.warnings),
    }
    if timestamp is not None:
        doc["generated_at"] = timestamp
    return doc


def sweep_document(
    per_layer: dict[int, float],
    config: EntropyConfig,
    reference_label: str,
    target_label: str,
    timestamp: str | None = None,
) -> dict:
    best = max(per_layer, key=lambda l: per_layer[l])
    doc = {
        "kind": "sweep-report",
        "format": DOCUMENT_FORMAT,
        "config": _config_doc(config),
        "per_layer": [{"layer": l, "auc": per_layer[l]} for l in sorted(per_layer)],
        "argmax_layer": best,
        "reference": reference_label,
        "target": target_label,
    }
    if timestamp is not None:
        doc["generated_at"] = timestamp
    return doc


def profile_document(
    profile: ReferenceProfile,
    signatures: np.ndarray,
    source_label: str,
    timestamp: str | None = None,
) -> dict:
    doc = {
        "kind": "reference-profile",
        "format": DOCUMENT_FORMAT,
        "config": _config_doc(profile.config),
        **_profile_doc(profile),
        # Per-sample reference signatures: keeping them makes later scans
        # reproduce the trace-anchored AUC exactly without re-reading the
        # reference trace.
        "signatures": [float(s) for s in signatures],
        "source": source_label,
    }
    if timestamp is not None:
        doc["generated_at"] = timestamp
    return doc


def load_profile(path: str | Path) -> tuple[ReferenceProfile, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("kind") != "reference-profile":
        raise ValueError(f"{path}: not a reference-profile document")
    profile = ReferenceProfile(
        layer=int(doc["layer"]),
        mu_ref=float(doc["mu_ref"]),
        sigma_ref=float(doc["sigma_ref"]),
        median_m=float(doc["median_m"]),
        sample_count=int(doc["sample_count"]),
        config=_config_from_doc(doc["config"]),
    )
    signatures = np.asarray(doc["signatures"], dtype=np.float64)
    if signatures.size != profile.sample_count:
        raise ValueError(f"{path}: signature count does not match sample_count")
    return profile, signatures

"""Preference dataset container and its JSON-lines file format.

Training code reads ``annotator_id`` and ``features`` only. Generative ground
truth lives in the optional ``debug`` block and is reserved for evaluation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .score_model import Features


@dataclass
class GroundTruth:
    p_star: np.ndarray  # P(annotated winner is collectively preferred)
    z: np.ndarray  # 1 if the stored orientation agrees with the collective preference
    flipped: np.ndarray  # 1 if inject_noise swapped the pair at least an odd number of times

    def take(self, idx) -> "GroundTruth":
        return GroundTruth(self.p_star[idx], self.z[idx], self.flipped[idx])


@dataclass
class PreferencePair:
    id: int
    annotator_id: int
    phi_w: np.ndarray
    phi_l: np.ndarray
    len_w: int
    len_l: int
    p_star_true: float | None = None
    z_true: int | None = None
    flipped: bool = False

    def __post_init__(self):
        if self.z_true is not None and self.p_star_true is None:
            raise ValueError("z_true requires p_star_true")


@dataclass
class PreferenceDataset:
    ids: np.ndarray
    annotator_id: np.ndarray
    features: Features
    debug: GroundTruth | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.annotator_id = np.asarray(self.annotator_id, dtype=np.int64)
        if not (len(self.ids) == len(self.annotator_id) == len(self.features)):
            raise ValueError("ids, annotator ids and features must have equal length")
        if np.any(self.annotator_id < 0):
            raise ValueError("annotator ids must be non-negative")

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i: int) -> PreferencePair:
        f = self.features
        g = self.debug
        return PreferencePair(
            id=int(self.ids[i]),
            annotator_id=int(self.annotator_id[i]),
            phi_w=f.phi_w[i],
            phi_l=f.phi_l[i],
            len_w=int(f.len_w[i]),
            len_l=int(f.len_l[i]),
            p_star_true=None if g is None else float(g.p_star[i]),
            z_true=None if g is None else int(g.z[i]),
            flipped=False if g is None else bool(g.flipped[i]),
        )

    @property
    def n_annotators(self) -> int:
        return int(self.annotator_id.max()) + 1 if len(self) else 0

    def take(self, idx) -> "PreferenceDataset":
        return PreferenceDataset(
            ids=self.ids[idx],
            annotator_id=self.annotator_id[idx],
            features=self.features.take(idx),
            debug=None if self.debug is None else self.debug.take(idx),
            meta=dict(self.meta),
        )

    def without_debug(self) -> "PreferenceDataset":
        return PreferenceDataset(self.ids, self.annotator_id, self.features, None, dict(self.meta))


def concat(datasets: list[PreferenceDataset], annotator_ids: list[int] | None = None) -> PreferenceDataset:
    """Stack datasets; optionally relabel each part with a single annotator id."""
    parts_ann = [
        d.annotator_id if annotator_ids is None else np.full(len(d), annotator_ids[j])
        for j, d in enumerate(datasets)
    ]
    feats = Features(
        np.concatenate([d.features.phi_w for d in datasets]),
        np.concatenate([d.features.phi_l for d in datasets]),
        np.concatenate([d.features.len_w for d in datasets]),
        np.concatenate([d.features.len_l for d in datasets]),
    )
    debug = None
    if all(d.debug is not None for d in datasets):
        debug = GroundTruth(
            np.concatenate([d.debug.p_star for d in datasets]),
            np.concatenate([d.debug.z for d in datasets]),
            np.concatenate([d.debug.flipped for d in datasets]),
        )
    return PreferenceDataset(np.arange(len(feats)), np.concatenate(parts_ann), feats, debug)


def _pair_record(ds: PreferenceDataset, i: int, extra: dict | None) -> dict:
    f = ds.features
    rec = {
        "id": int(ds.ids[i]),
        "annotator_id": int(ds.annotator_id[i]),
        "phi_w": f.phi_w[i].tolist(),
        "phi_l": f.phi_l[i].tolist(),
        "len_w": int(f.len_w[i]),
        "len_l": int(f.len_l[i]),
    }
    if ds.debug is not None:
        g = ds.debug
        rec["debug"] = {"p_star": float(g.p_star[i]), "z": int(g.z[i]), "flipped": bool(g.flipped[i])}
    if extra:
        rec.update(extra)
    return rec


def to_jsonl(ds: PreferenceDataset, extra: dict | None = None) -> bytes:
    lines = [json.dumps(_pair_record(ds, i, extra)) for i in range(len(ds))]
    return ("\n".join(lines) + ("\n" if lines else "")).encode()


def write_jsonl(ds: PreferenceDataset, path: str | Path, extra: dict | None = None) -> str:
    """Write the dataset and return the sha256 of the bytes written."""
    payload = to_jsonl(ds, extra)
    Path(path).write_bytes(payload)
    return hashlib.sha256(payload).hexdigest()


def read_jsonl(path: str | Path) -> PreferenceDataset:
    ids, ann, pw, pl, lw, ll = [], [], [], [], [], []
    ps, zs, fl = [], [], []
    have_debug = True
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ids.append(int(rec["id"]))
                ann.append(int(rec["annotator_id"]))
                pw.append(rec["phi_w"])
                pl.append(rec["phi_l"])
                lw.append(int(rec["len_w"]))
                ll.append(int(rec["len_l"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed pair record ({exc})") from exc
            dbg = rec.get("debug")
            if dbg is None:
                have_debug = False
            else:
                ps.append(dbg["p_star"])
                zs.append(dbg["z"])
                fl.append(dbg["flipped"])
    if not ids:
        return PreferenceDataset(np.zeros(0), np.zeros(0), Features(np.zeros((0, 0)), np.zeros((0, 0)), [], []))
    if len({len(v) for v in pw + pl}) != 1:
        raise ValueError(f"{path}: inconsistent feature dimensions")
    debug = None
    if have_debug:
        debug = GroundTruth(np.array(ps, float), np.array(zs, np.int64), np.array(fl, bool))
    return PreferenceDataset(ids, ann, Features(np.array(pw), np.array(pl), lw, ll), debug)

"""In-memory dataset objects and the on-disk dataset directory layout.

Layout::

    manifest.json
    crf_gt.csv
    view_000/ldr.ppm  view_000/events.csv  view_000/hdr_gt.pfm
    test_000/hdr_gt.pfm  test_000/hdr_blur.pfm
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as fio
from .events import EventStream
from .render import Camera, TimedPose

MANIFEST = "manifest.json"


@dataclass
class ExposureBlock:
    """One blurry training exposure with its events."""

    view_id: int
    camera: Camera
    exposure: float
    timed_poses: list
    ldr: np.ndarray
    events: EventStream
    reference_pose: np.ndarray
    gt_sharp_hdr: np.ndarray | None = None

    @property
    def t_start(self):
        return self.timed_poses[0].t

    @property
    def t_end(self):
        return self.timed_poses[-1].t


@dataclass
class TestView:
    view_id: int
    pose: np.ndarray
    hdr_gt: np.ndarray
    hdr_blur: np.ndarray | None = None


@dataclass
class Dataset:
    camera: Camera
    near: float
    far: float
    views: list
    tests: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    crf_gt: np.ndarray | None = None

    @property
    def exposure(self):
        return self.views[0].exposure if self.views else self.meta.get("exposure")


def _pose_list(timed_poses):
    return [{"t": tp.t, "matrix": tp.pose.tolist()} for tp in timed_poses]


def save_dataset(ds: Dataset, out_dir, event_format="csv"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "evhdr-dataset/1",
        "sensor": {"width": ds.camera.width, "height": ds.camera.height},
        "intrinsics": ds.camera.to_dict(),
        "near": ds.near,
        "far": ds.far,
        "meta": ds.meta,
        "views": [],
        "tests": [],
    }
    ext = "bin" if event_format == "bin" else "csv"
    for v in ds.views:
        d = out / f"view_{v.view_id:03d}"
        d.mkdir(exist_ok=True)
        fio.write_ppm(d / "ldr.ppm", v.ldr)
        fio.write_events(d / f"events.{ext}", v.events)
        entry = {
            "id": v.view_id,
            "exposure": v.exposure,
            "t_start": v.t_start,
            "t_end": v.t_end,
            "poses": _pose_list(v.timed_poses),
            "reference_pose": np.asarray(v.reference_pose).tolist(),
            "ldr": f"{d.name}/ldr.ppm",
            "events": f"{d.name}/events.{ext}",
        }
        if v.gt_sharp_hdr is not None:
            fio.write_pfm(d / "hdr_gt.pfm", v.gt_sharp_hdr)
            entry["hdr_gt"] = f"{d.name}/hdr_gt.pfm"
        manifest["views"].append(entry)
    for t in ds.tests:
        d = out / f"test_{t.view_id:03d}"
        d.mkdir(exist_ok=True)
        fio.write_pfm(d / "hdr_gt.pfm", t.hdr_gt)
        entry = {"id": t.view_id, "pose": np.asarray(t.pose).tolist(),
                 "hdr_gt": f"{d.name}/hdr_gt.pfm"}
        if t.hdr_blur is not None:
            fio.write_pfm(d / "hdr_blur.pfm", t.hdr_blur)
            entry["hdr_blur"] = f"{d.name}/hdr_blur.pfm"
        manifest["tests"].append(entry)
    if ds.crf_gt is not None:
        fio.write_crf_csv(out / "crf_gt.csv", ds.crf_gt)
        manifest["crf_gt"] = "crf_gt.csv"
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def _require(base, rel):
    p = base / rel
    if not p.exists():
        raise FileNotFoundError(f"dataset file missing: {p}")
    return p


def load_dataset(path) -> Dataset:
    base = Path(path)
    mpath = base / MANIFEST
    if not mpath.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {base}")
    try:
        m = json.loads(mpath.read_text())
        cam = Camera(**m["intrinsics"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"{mpath}: malformed manifest ({exc})") from None
    views = []
    b_sim = m.get("meta", {}).get("b_sim")
    for e in m["views"]:
        poses = [TimedPose(p["t"], np.array(p["matrix"])) for p in e["poses"]]
        if b_sim is not None and len(poses) != b_sim + 1:
            raise ValueError(f"{mpath}: view {e['id']} has {len(poses)} poses, expected {b_sim + 1}")
        hdr = fio.read_pfm(_require(base, e["hdr_gt"])).astype(np.float64) if "hdr_gt" in e else None
        views.append(ExposureBlock(
            view_id=e["id"], camera=cam, exposure=e["exposure"], timed_poses=poses,
            ldr=fio.read_ppm(_require(base, e["ldr"])),
            events=fio.read_events(_require(base, e["events"]), cam.width, cam.height),
            reference_pose=np.array(e["reference_pose"]), gt_sharp_hdr=hdr))
    tests = []
    for e in m.get("tests", []):
        blur = fio.read_pfm(_require(base, e["hdr_blur"])).astype(np.float64) \
            if "hdr_blur" in e else None
        tests.append(TestView(e["id"], np.array(e["pose"]),
                              fio.read_pfm(_require(base, e["hdr_gt"])).astype(np.float64), blur))
    crf = fio.read_crf_csv(_require(base, m["crf_gt"])) if "crf_gt" in m else None
    return Dataset(cam, m["near"], m["far"], views, tests, m.get("meta", {}), crf)

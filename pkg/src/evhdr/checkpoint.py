"""Training checkpoints: a JSON manifest plus raw little-endian float64 vectors.

Layout of a checkpoint directory::

    checkpoint.json   config, step, RNG state, topology, camera and exposure info
    params.bin        scene | crf | ev parameters, concatenated
    moments.bin       Adam first then second moments, same order

Everything needed to resume training bit-for-bit or to render and evaluate is
in these three files.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .render import Camera
from .train import GROUPS, TrainConfig, TrainState, init_state

FORMAT = "evhdr-checkpoint/1"
MANIFEST = "checkpoint.json"
DTYPE = np.dtype("<f8")


def _write_vector(path, vec):
    path.write_bytes(np.ascontiguousarray(vec, dtype=DTYPE).tobytes())


def _read_vector(path, n):
    data = path.read_bytes()
    if len(data) != n * DTYPE.itemsize:
        raise ValueError(f"{path}: expected {n * DTYPE.itemsize} bytes, found {len(data)}")
    return np.frombuffer(data, dtype=DTYPE).astype(np.float64)


def save_checkpoint(path, state: TrainState, config: TrainConfig, info=None):
    """Write ``state`` to directory ``path``.

    ``info`` carries dataset-side context (camera, near/far, exposure, tone-map
    constants, trained log-exposure range) so the checkpoint alone suffices for
    rendering and CRF export.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    sizes = {g: int(state.params(g).size) for g in GROUPS}
    bounds = [np.asarray(b).tolist() for b in state.scene.bounds]
    manifest = {
        "format": FORMAT,
        "step": int(state.step),
        "config": asdict(config),
        "bounds": bounds,
        "sizes": sizes,
        "rng": state.rng.bit_generator.state,
        "info": info or {},
    }
    _write_vector(out / "params.bin", state.flat_params())
    _write_vector(out / "moments.bin", np.concatenate(
        [state.moments[g][0] for g in GROUPS] + [state.moments[g][1] for g in GROUPS]))
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def load_checkpoint(path):
    """Returns ``(state, config, info)``."""
    base = Path(path)
    mpath = base / MANIFEST
    if not mpath.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {base}")
    try:
        m = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{mpath}: malformed manifest ({exc})") from None
    if m.get("format") != FORMAT:
        raise ValueError(f"{mpath}: unsupported checkpoint format {m.get('format')!r}")
    config = TrainConfig.from_dict(m["config"])
    state = init_state(config, tuple(tuple(b) for b in m["bounds"]))
    sizes = {g: int(state.params(g).size) for g in GROUPS}
    if sizes != {g: int(n) for g, n in m["sizes"].items()}:
        raise ValueError(f"{mpath}: parameter sizes do not match the stored config")
    total = sum(sizes.values())
    state.set_flat_params(_read_vector(base / "params.bin", total))
    moments = _read_vector(base / "moments.bin", 2 * total)
    off = 0
    first = {}
    for g in GROUPS:
        first[g] = moments[off:off + sizes[g]]
        off += sizes[g]
    for g in GROUPS:
        state.moments[g] = (first[g], moments[off:off + sizes[g]])
        off += sizes[g]
    state.step = int(m["step"])
    state.rng.bit_generator.state = m["rng"]
    return state, config, m.get("info", {})


def camera_from_info(info):
    return Camera(**info["camera"])

import pytest

from evhdr.simulate import generate_dataset

# small enough to simulate in well under a second
TINY = {
    "name": "tiny",
    "resolution": [6, 6, 6],
    "primitives": [
        {"type": "box", "min": [-1, -1, 0.4], "max": [1, 1, 1], "density": 30,
         "emission": [0.5, 0.4, 0.3], "checker": {"cells": 3, "emission": [2.0, 1.5, 1.0]}},
        {"type": "sphere", "center": [0, 0, -0.2], "radius": 0.4, "density": 30,
         "emission": [20.0, 10.0, 5.0]},
    ],
    "camera": {"width": 12, "height": 12, "fov": 30.0},
    "rig": {"train_views": 2, "test_views": 1, "radius": 3.5, "elevation_deg": 10.0,
            "azimuth_span_deg": 30.0},
    "near": 1.5, "far": 5.5, "exposure": 0.02,
    "shake": {"rotation_deg": 2.0, "translation": 0.05},
    "render_samples": 32,
    "sim": {"b_sim": 4, "spurious_rate": 5.0},
}


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_dataset(TINY, seed=0)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny") / "ds"
    generate_dataset(TINY, out, seed=0)
    return out


GRADCHECK_SCENE = {
    "name": "gradcheck",
    "resolution": [4, 4, 4],
    "primitives": [
        {"type": "box", "min": [-1, -1, -1], "max": [1, 1, 1], "density": 1.0,
         "emission": [1.0, 0.8, 0.6]},
        {"type": "sphere", "center": [0.2, 0, 0], "radius": 0.5, "density": 4.0,
         "emission": [60.0, 30.0, 20.0]},
    ],
    "camera": {"width": 4, "height": 4, "fov": 30.0},
    "rig": {"train_views": 1, "test_views": 0, "radius": 3.0, "elevation_deg": 0.0,
            "azimuth_span_deg": 0.0},
    "near": 1.8, "far": 4.2, "exposure": 0.05,
    "shake": {"rotation_deg": 8.0, "translation": 0.2},
    "render_samples": 16,
    "sim": {"b_sim": 6, "spurious_rate": 0.0},
}


def gradcheck_problem(seed=0, n_samples=8):
    """Two-node-per-axis voxel scene, b=2, 4x4 pixels, linear soft counts.

    Returns ``(state, data, config, loss_fn)`` where ``loss_fn(flat)`` gives the
    full combined loss and its gradient over every parameter of all three fields.
    """
    import numpy as np

    from evhdr.simulate import generate_dataset
    from evhdr.train import GROUPS, TrainConfig, batch_loss, init_state, prepare_data

    ds = generate_dataset(GRADCHECK_SCENE, seed=seed)
    config = TrainConfig(b=2, grid_resolution=2, n_samples=n_samples, batch_rays=16,
                         soft_counts="linear", event_weight=0.05, crf_hidden=(6,),
                         ev_hidden=(4,), seed=seed)
    state = init_state(config)
    rng = np.random.default_rng(seed + 1)
    state.scene.raw[:] = rng.normal(0.0, 0.5, state.scene.raw.shape)
    data = prepare_data(ds, config)
    views = np.zeros(16, dtype=int)
    pixels = np.arange(16)
    u = rng.uniform(0.2, 0.8, (16, config.b + 1, n_samples))

    def loss_fn(flat):
        state.set_flat_params(flat)
        parts, grads = batch_loss(state, data, config, views, pixels, u)
        return parts["loss_total"], np.concatenate([grads[g] for g in GROUPS])

    return state, data, config, loss_fn


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from clipstream.rasterizer import Camera
from clipstream.synth import SceneSpec, generate
from clipstream.trainer import TrainConfig

TINY_SCENE = dict(static_count=24, dynamic_count=1, cameras=3, frames=6, frames_per_clip=2, width=16, height=16,
                  camera_radius=2.8, fov_deg=40.0)

TINY_TRAIN = dict(reference_iterations=6, iterations_per_clip=4, frames_per_clip=2, clip_count=3, stf_levels=2,
                  stf_base_resolution=2, stf_max_resolution=8, stf_log2_table_size=8, stf_features_per_entry=2,
                  hidden_width=16, k=2, log_every=1)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate(SceneSpec(**TINY_SCENE))


@pytest.fixture
def tiny_config():
    return TrainConfig(**TINY_TRAIN)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def front_camera(width=8, height=8, f=10.0, z=0.0):
    """Camera at the origin looking down +z."""
    return Camera(f, f, width / 2, height / 2, np.eye(3), [0.0, 0.0, z], width, height)


# --------------------------------------------------------------------------- acceptance runs

# Training budget for the bouncer acceptance runs (reference clip, then each source clip).
ACCEPTANCE_TRAIN = dict(reference_iterations=1000, iterations_per_clip=200)

ACCEPTANCE_LINES = []


def record(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bouncer():
    return generate(SceneSpec())


@pytest.fixture(scope="session")
def bouncer_sweep(bouncer, tmp_path_factory):
    """Every variant trained and evaluated once on the bouncer scene; shared by all acceptance checks."""
    import time

    from clipstream.evaluation import run_variants
    from clipstream.trainer import VARIANTS

    work = tmp_path_factory.mktemp("sweep")
    cfg = TrainConfig(**ACCEPTANCE_TRAIN)
    t0 = time.perf_counter()
    reports = run_variants(bouncer, cfg, VARIANTS, work)
    return {"reports": reports, "work": work, "config": cfg, "seconds": time.perf_counter() - t0}

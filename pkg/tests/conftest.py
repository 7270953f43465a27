from __future__ import annotations

import numpy as np
import pytest

from synthdet.assets import random_model, write_demo_assets
from synthdet.config import load_config
from synthdet.geometry import CameraIntrinsics, normalize_mesh

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    print(line)
    ACCEPTANCE_RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


SMALL_CAMERA = {"fx": 300.0, "fy": 300.0, "cx": 160.0, "cy": 120.0, "width": 320, "height": 240,
                "jitter_fraction": 0.05}


@pytest.fixture(scope="session")
def demo_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    write_demo_assets(root, num_foreground=8, num_background=40, num_photos=6, seed=0)
    return root


@pytest.fixture(scope="session")
def demo_config(demo_dir):
    return load_config(demo_dir / "config.yaml")


@pytest.fixture(scope="session")
def small_config(demo_config):
    """Demo assets at 320x240 for fast end-to-end tests."""
    return demo_config.with_overrides(camera=SMALL_CAMERA, num_images=4)


@pytest.fixture(scope="session")
def small_cam():
    return CameraIntrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)


@pytest.fixture(scope="session")
def model_set():
    rng = np.random.default_rng(123)
    return [normalize_mesh(random_model(rng, tex_size=32)) for _ in range(10)]

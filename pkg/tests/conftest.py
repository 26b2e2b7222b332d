import numpy as np
import pytest
from hypothesis import settings

from depthwin.synthetic import synthetic_window

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[number] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_window():
    """3-frame 16x24 oracle window."""
    frames, adjacent, spec = synthetic_window(3, width=24, height=16, seed=1)
    return frames, adjacent, spec


@pytest.fixture(scope="session")
def window64():
    frames, adjacent, spec = synthetic_window(3, width=128, height=64, seed=0)
    return frames, adjacent, spec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scene_files(tmp_path):
    """Scene spec and camera-to-world pose file for a small 3-frame window."""
    from depthwin.io import write_poses
    from depthwin.synthetic import slanted_spec

    spec = slanted_spec(width=48, height=32, seed=2)
    spec_path = tmp_path / "scene.json"
    spec_path.write_text(spec.to_json())
    poses_path = tmp_path / "poses.txt"
    write_poses(poses_path, [[0, 0.004 * i, 0, -0.1 + 0.1 * i, 0, 0] for i in range(3)])
    return spec_path, poses_path

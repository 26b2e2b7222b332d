import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from depthwin.errors import DegenerateGeometryError, InvalidArgumentError
from depthwin.geometry import Intrinsics
from depthwin.slam_init import (
    InitConfig,
    InitOutcome,
    MatchResult,
    OracleDepth,
    backproject,
    detect_and_match,
    detect_corners,
    init_table_csv,
    initialize,
    rigid_align,
)
from depthwin.synthetic import init_sequence


@pytest.fixture(scope="module")
def textured():
    return init_sequence("rich", n=2).images[0]


def test_config_validation():
    assert InitConfig().M == 100
    for bad in [dict(M=7), dict(max_frames=1), dict(patch_size=6), dict(search_radius=-1), dict(depth_gate=0)]:
        with pytest.raises(InvalidArgumentError):
            InitConfig(**bad)


def test_identical_images_match_themselves(textured):
    cfg = InitConfig()
    corners = detect_corners(textured, cfg)
    assert len(corners) > 100
    m = detect_and_match(textured, textured, cfg)
    assert m.count == len(corners)
    assert np.array_equal(m.pts_a, m.pts_b)


def test_shifted_image_matches_with_offset(textured):
    cfg = InitConfig()
    # b shows the same content 3 px further right, both cropped to shared support
    a_c, b_c = textured[:, 3:-3], textured[:, :-6]
    m = detect_and_match(a_c, b_c, cfg)
    corners = detect_corners(a_c, cfg)
    margin = cfg.patch_size // 2 + 1
    w = a_c.shape[1]
    interior = corners[(corners[:, 0] + 3 >= margin) & (corners[:, 0] + 3 < w - margin)]
    hits = np.all(m.pts_b - m.pts_a == [3, 0], axis=1).sum()
    assert hits >= 0.8 * len(interior)


def test_uniform_images_have_no_corners():
    img = np.full((40, 50), 0.4)
    assert len(detect_corners(img, InitConfig())) == 0
    assert detect_and_match(img, img).count == 0


def test_matching_rejects_shape_mismatch_and_ungated_depth(textured):
    with pytest.raises(InvalidArgumentError):
        detect_and_match(textured, textured[:-1])
    with pytest.raises(InvalidArgumentError):
        detect_and_match(textured, textured, gate=True)


def test_depth_gate_filters_inconsistent_depths(textured):
    d = np.full(textured.shape, 2.0)
    far = np.full(textured.shape, 3.0)
    assert detect_and_match(textured, textured, depth_a=d, depth_b=far, gate=True).count == 0
    near = np.full(textured.shape, 2.3)
    assert detect_and_match(textured, textured, depth_a=d, depth_b=near, gate=True).count > 0


def test_with_depth_keeps_positive_pairs():
    m = MatchResult([[0, 0], [1, 1], [2, 2]], [[0, 0], [1, 1], [2, 2]], [1.0, 0.0, 2.0], [1.0, 1.0, 0.0])
    assert m.with_depth().count == 1 and len(m) == 3
    assert MatchResult([[0, 0]], [[0, 0]]).with_depth().count == 0
    with pytest.raises(InvalidArgumentError):
        MatchResult([[0, 0]], [[0, 0], [1, 1]])


def random_points(seed, n=30):
    return np.random.default_rng(seed).normal(0, 1, (n, 3)) + [0, 0, 4]


def test_rigid_align_identity():
    A = random_points(0)
    assert np.allclose(rigid_align(A, A), np.eye(4), atol=1e-12)


@given(st.integers(0, 10_000))
def test_rigid_align_recovers_transform(seed):
    rng = np.random.default_rng(seed)
    R = Rotation.random(random_state=seed).as_matrix()
    t = rng.normal(0, 2, 3)
    A = random_points(seed)
    T = rigid_align(A, A @ R.T + t)
    assert np.max(np.abs(T[:3, :3] - R)) < 1e-9
    assert np.max(np.abs(T[:3, 3] - t)) < 1e-9


def test_rigid_align_planar_points_are_fine():
    rng = np.random.default_rng(1)
    A = np.column_stack([rng.normal(size=(20, 2)), np.full(20, 3.0)])
    R = Rotation.from_rotvec([0.1, -0.2, 0.3]).as_matrix()
    T = rigid_align(A, A @ R.T + [0.5, 0, 0])
    assert np.max(np.abs(T[:3, :3] - R)) < 1e-9


def test_rigid_align_degenerate():
    line = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometryError):
        rigid_align(line, line + 1)
    with pytest.raises(DegenerateGeometryError):
        rigid_align(np.ones((5, 3)), np.ones((5, 3)))
    with pytest.raises(DegenerateGeometryError):
        rigid_align(random_points(0, 2), random_points(1, 2))
    with pytest.raises(InvalidArgumentError):
        rigid_align(random_points(0, 4), random_points(1, 5))


def test_backproject():
    K = Intrinsics(100.0, 100.0, 10.0, 20.0)
    X = backproject(np.array([[10.0, 20.0], [110.0, 20.0]]), np.array([2.0, 3.0]), K)
    assert np.allclose(X, [[0, 0, 2], [3, 0, 3]])


class ScriptedMatcher:
    """Returns a fixed count with depth; a second count when gated."""

    def __init__(self, plain, gated):
        self.plain, self.gated = plain, gated
        self.calls = []

    def __call__(self, a, b, cfg, depth_a=None, depth_b=None, gate=False):
        self.calls.append(gate)
        n = self.gated if gate else self.plain
        rng = np.random.default_rng(n)
        pts = rng.integers(0, 50, (n, 2))
        z = np.ones(n)
        return MatchResult(pts, pts, z, z)


def frames(n=6):
    return [np.zeros((8, 8))] * n


def test_scripted_success_on_first_pair():
    src = OracleDepth([np.ones((8, 8))] * 6)
    out = initialize(frames(), [None] * 6, src, InitConfig(M=20), matcher=ScriptedMatcher(20, 0))
    assert out.initialized and out.frames_consumed == 2 and out.fallbacks == 0
    assert src.calls == 0


def test_scripted_fallback_rescues_first_pair():
    src = OracleDepth([np.ones((8, 8))] * 6)
    matcher = ScriptedMatcher(19, 30)
    out = initialize(frames(), [None] * 6, src, InitConfig(M=20), matcher=matcher)
    assert out.initialized and out.frames_consumed == 2 and out.fallbacks == 1
    assert matcher.calls == [False, True]
    assert out.trace[0].matches == 19 and out.trace[0].fallback_matches == 30


def test_scripted_always_short():
    src = OracleDepth([np.ones((8, 8))] * 10)
    matcher = ScriptedMatcher(5, 10)
    out = initialize(frames(10), [None] * 10, src, InitConfig(M=20, max_frames=6), matcher=matcher)
    assert not out.initialized and out.frames_consumed == 6
    assert out.fallbacks == 5 and matcher.calls.count(True) == 5
    assert out.fallbacks <= out.frames_consumed and out.pose is None


def test_no_fallback_provider():
    out = initialize(frames(4), None, None, InitConfig(M=20), matcher=ScriptedMatcher(5, 50))
    assert not out.initialized and out.fallbacks == 0 and out.frames_consumed == 4


def test_initialize_input_checks():
    with pytest.raises(InvalidArgumentError):
        initialize(frames(1), [None])
    with pytest.raises(InvalidArgumentError):
        initialize(frames(3), [None])


@pytest.fixture(scope="module")
def weak():
    return init_sequence("weak", n=8)


def test_fallback_only_when_short(weak):
    cfg = InitConfig()
    out = initialize(weak.images, weak.sensor_depths, OracleDepth(weak.depths), cfg, weak.spec.K)
    for rec in out.trace:
        assert rec.fallback == (rec.matches < cfg.M)
    assert out.initialized


def test_fallback_never_needs_more_frames(weak):
    base = initialize(weak.images, weak.sensor_depths, None)
    fb = initialize(weak.images, weak.sensor_depths, OracleDepth(weak.depths))
    assert fb.frames_consumed <= base.frames_consumed


def test_recovered_pose_matches_ground_truth():
    seq = init_sequence("rich", n=3)
    out = initialize(seq.images, seq.sensor_depths, None, InitConfig(), seq.spec.K)
    assert out.initialized and out.frames_consumed == 2
    gt = seq.adjacent[0]
    assert np.max(np.abs(out.pose[:3, :3] - gt[:3, :3])) < 1e-2
    assert np.linalg.norm(out.pose[:3, 3] - gt[:3, 3]) < 0.01


def test_initialize_deterministic_and_serializes(weak):
    a = initialize(weak.images, weak.sensor_depths, OracleDepth(weak.depths), K=weak.spec.K)
    b = initialize(weak.images, weak.sensor_depths, OracleDepth(weak.depths), K=weak.spec.K)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert set(d) == {"initialized", "frames_consumed", "fallbacks", "pose", "trace"}


def test_init_table_csv():
    csv = init_table_csv("weak", InitOutcome(True, 7, 0), InitOutcome(True, 2, 1))
    assert csv.splitlines() == [
        "scene,baseline_frames,fallback_frames,baseline_initialized,fallback_initialized",
        "weak,7,2,1,1",
    ]


def test_oracle_depth_degradation():
    d = np.full((4, 4), 2.0)
    src = OracleDepth([d], scale=1.5, noise=0.1, seed=3)
    a, b = src(0), src(0)
    assert np.array_equal(a, b) and src.calls == 2
    assert abs(a.mean() - 3.0) < 0.3 and not np.all(a == 3.0)

import numpy as np
import pytest

from nerfvs.geometry import CameraModel, TriangleMesh
from nerfvs.scene import SceneSpec, build_scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_camera(rng, width=32, height=24):
    from scipy.spatial.transform import Rotation

    m = np.eye(4)
    m[:3, :3] = Rotation.random(random_state=np.random.RandomState(int(rng.integers(1 << 31)))).as_matrix()
    m[:3, 3] = rng.uniform(-0.5, 0.5, 3)
    return CameraModel(
        fx=rng.uniform(20, 60), fy=rng.uniform(20, 60),
        cx=width / 2 + rng.uniform(-2, 2), cy=height / 2 + rng.uniform(-2, 2),
        width=width, height=height, cam_to_world=m,
    )


def random_mesh(rng, n_triangles=1000, scale=1.0):
    """Random triangle soup inside [-scale, scale]^3."""
    centers = rng.uniform(-0.9 * scale, 0.9 * scale, (n_triangles, 3))
    offs = rng.uniform(-0.08 * scale, 0.08 * scale, (n_triangles, 2, 3))
    v0 = centers
    v1 = centers + offs[:, 0]
    v2 = centers + offs[:, 1]
    verts = np.concatenate([v0, v1, v2], axis=0)
    tris = np.stack(
        [np.arange(n_triangles), np.arange(n_triangles) + n_triangles,
         np.arange(n_triangles) + 2 * n_triangles], axis=1)
    # drop near-degenerate ones
    areas = 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)
    keep = areas > 1e-9
    return TriangleMesh(vertices=verts, triangles=tris[keep].astype(np.int32))


@pytest.fixture
def wall_quad():
    """Unit wall at z = -2 spanning x,y in [-3,3], two triangles."""
    verts = np.array([
        [-3.0, -3.0, -2.0], [3.0, -3.0, -2.0], [3.0, 3.0, -2.0], [-3.0, 3.0, -2.0],
    ])
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    return TriangleMesh(vertices=verts, triangles=tris)


def make_l_room(z0=-0.5, z1=0.5):
    """L-shaped room: full-width wing along y<0, half-width wing along x<0."""
    fp = [(-0.9, -0.9), (0.9, -0.9), (0.9, 0.0), (0.0, 0.0), (0.0, 0.9), (-0.9, 0.9)]
    verts = []
    tris = []

    def quad(a, b, c, d):
        base = len(verts)
        verts.extend([a, b, c, d])
        tris.append([base, base + 1, base + 2])
        tris.append([base, base + 2, base + 3])

    n = len(fp)
    for i in range(n):
        (x0, y0), (x1, y1) = fp[i], fp[(i + 1) % n]
        quad((x0, y0, z0), (x1, y1, z0), (x1, y1, z1), (x0, y0, z1))
    for z in (z0, z1):
        quad((-0.9, -0.9, z), (0.9, -0.9, z), (0.9, 0.0, z), (-0.9, 0.0, z))
        quad((-0.9, 0.0, z), (0.0, 0.0, z), (0.0, 0.9, z), (-0.9, 0.9, z))
    return TriangleMesh(vertices=np.array(verts, dtype=np.float64),
                        triangles=np.array(tris, dtype=np.int32))


def l_room_cameras(size=192, fov=50.0):
    """One camera per wing, each looking down its wing's long axis."""
    from nerfvs.scene import look_at

    cam_a = look_at((0.6, -0.45, 0.0), (-0.85, -0.45, 0.0), size, size, fov)
    cam_b = look_at((-0.45, 0.6, 0.0), (-0.45, -0.85, 0.0), size, size, fov)
    return [cam_a, cam_b]


@pytest.fixture(scope="session")
def l_room():
    return make_l_room(), l_room_cameras()


@pytest.fixture(scope="session")
def tiny_scene_spec():
    return SceneSpec(
        room_half_extents=(0.9, 0.9, 0.55),
        objects=(
            {"type": "box", "center": [0.35, 0.0, -0.3], "half": [0.2, 0.25, 0.18],
             "albedo": [0.75, 0.3, 0.2], "checker": 0.12},
        ),
        image_size=32,
        n_train=6,
        focus=(0.35, 0.0, -0.2),
        extrap_grid=(2, 2, 1),
        extrap_directions=4,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny_scene_spec, tmp_path_factory):
    from nerfvs.scene import generate_dataset

    out = tmp_path_factory.mktemp("tiny_dataset")
    generate_dataset(tiny_scene_spec, out, threads=2)
    return out

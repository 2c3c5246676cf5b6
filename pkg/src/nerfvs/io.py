"""File formats: PFM rasters, binary PPM images, OBJ meshes, camera JSON."""

import json
import struct

import numpy as np

from .errors import DataError


# ---------------------------------------------------------------------------
# PFM (grayscale "Pf", little-endian, bottom-up rows)

def write_pfm(path, values):
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise DataError("PFM writer expects a 2D array")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale = little endian
        f.write(values[::-1].astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"Pf":
            raise DataError(f"{path}: not a grayscale PFM file")
        w, h = (int(tok) for tok in f.readline().split())
        scale = float(f.readline())
        raw = f.read(w * h * 4)
        if len(raw) != w * h * 4:
            raise DataError(f"{path}: truncated PFM payload")
        data = np.frombuffer(raw, dtype="<f4" if scale < 0 else ">f4")
    return data.reshape(h, w)[::-1].astype(np.float64)


# ---------------------------------------------------------------------------
# PPM (binary P6, 8-bit)

def write_ppm(path, image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError("PPM writer expects an HxWx3 array")
    if image.dtype != np.uint8:
        image = (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_ppm(path):
    """Read a binary P6 image; returns floats in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise DataError(f"{path}: not a binary PPM file")
    # header = magic, width, height, maxval; comments not supported
    fields = data.split(None, 4)
    if len(fields) < 5:
        raise DataError(f"{path}: truncated PPM header")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM supported")
    pixels = np.frombuffer(fields[4][: w * h * 3], dtype=np.uint8)
    if pixels.size != w * h * 3:
        raise DataError(f"{path}: truncated PPM payload")
    return pixels.reshape(h, w, 3).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# OBJ (v / triangular f lines only; other line types ignored)

def read_obj(path):
    """Parse the `v`/`f` subset of Wavefront OBJ (1-based, triangles only).

    Returns (vertices (V,3) float64, triangles (T,3) int32).
    """
    vertices = []
    triangles = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise DataError(f"{path}:{lineno}: malformed vertex line")
                vertices.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise DataError(f"{path}:{lineno}: only triangular faces supported")
                idx = [int(p.split("/")[0]) for p in parts[1:4]]
                triangles.append([i - 1 for i in idx])
    if not vertices or not triangles:
        raise DataError(f"{path}: no geometry found")
    return (
        np.asarray(vertices, dtype=np.float64),
        np.asarray(triangles, dtype=np.int32),
    )


def write_obj(path, vertices, triangles):
    with open(path, "w") as f:
        for v in np.asarray(vertices, dtype=np.float64):
            f.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in np.asarray(triangles):
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# ---------------------------------------------------------------------------
# Camera sets: JSON array of {fx, fy, cx, cy, width, height, cam_to_world[16]}

def cameras_to_json(cameras):
    records = []
    for c in cameras:
        records.append(
            {
                "fx": c.fx,
                "fy": c.fy,
                "cx": c.cx,
                "cy": c.cy,
                "width": c.width,
                "height": c.height,
                "cam_to_world": [float(x) for x in np.asarray(c.cam_to_world).reshape(16)],
            }
        )
    return records


def write_cameras(path, cameras):
    with open(path, "w") as f:
        json.dump(cameras_to_json(cameras), f, indent=1, sort_keys=True)
        f.write("\n")


def read_cameras(path):
    from .geometry import CameraModel

    with open(path, "r") as f:
        records = json.load(f)
    cameras = []
    for r in records:
        cameras.append(
            CameraModel(
                fx=float(r["fx"]),
                fy=float(r["fy"]),
                cx=float(r["cx"]),
                cy=float(r["cy"]),
                width=int(r["width"]),
                height=int(r["height"]),
                cam_to_world=np.asarray(r["cam_to_world"], dtype=np.float64).reshape(4, 4),
            )
        )
    return cameras


def sha256_of(path):
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

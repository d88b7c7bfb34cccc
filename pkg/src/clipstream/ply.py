"""Point clouds as PLY (float positions, optional uint8 RGB)."""
import numpy as np
from plyfile import PlyData, PlyElement


def write_points(path, positions, colors=None) -> None:
    positions = np.asarray(positions, dtype=np.float32).reshape(-1, 3)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(len(positions), dtype=fields)
    rec["x"], rec["y"], rec["z"] = positions.T
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        rec["red"], rec["green"], rec["blue"] = colors.T
    PlyData([PlyElement.describe(rec, "vertex")], byte_order="<").write(str(path))


def read_points(path):
    """Return (positions (n, 3) float32, colors (n, 3) uint8 or None)."""
    v = PlyData.read(str(path))["vertex"].data
    pos = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float32)
    names = v.dtype.names
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.uint8)
    return pos, colors

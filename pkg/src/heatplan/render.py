"""Static SVG rendering of simulation ticks and binary grids.

Legend: drivable area in grey, agents in blue, the ego in black, heatmap
pixels in red, high collision density in yellow, the plan as green dots.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Optional

import numpy as np

from .geometry import GridFrame, polygon_from_box
from .raster import SpatialTemporalGrid

SVG_NS = "http://www.w3.org/2000/svg"


def _points(poly) -> str:
    return " ".join(f"{x:.3f},{y:.3f}" for x, y in np.asarray(poly, dtype=float))


def _svg(view: tuple, width_px: int = 800) -> ET.Element:
    x0, y0, w, h = view
    root = ET.Element("svg", xmlns=SVG_NS, width=str(width_px), height=str(int(width_px * h / w)),
                      viewBox=f"{x0:.3f} {y0:.3f} {w:.3f} {h:.3f}")
    return root


def _world_group(root: ET.Element) -> ET.Element:
    # flip y so +y points up on screen
    return ET.SubElement(root, "g", transform="scale(1,-1)")


def _pixel_layer(parent: ET.Element, frame_dict: dict, pixels: list, color: str, cls: str) -> int:
    """One rotated square per listed pixel, opacity = max value over timesteps."""
    if not pixels:
        return 0
    frame = GridFrame.from_dict(frame_dict)
    best = {}
    for _, u, v, val in pixels:
        best[(u, v)] = max(best.get((u, v), 0.0), val)
    g = ET.SubElement(parent, "g", {"class": cls})
    r = frame.resolution
    deg = np.degrees(frame.orientation)
    for (u, v), val in sorted(best.items()):
        cx, cy = frame.grid_to_world([[u, v]])[0]
        ET.SubElement(g, "rect", x=f"{cx - r / 2:.3f}", y=f"{cy - r / 2:.3f}", width=f"{r:.3f}", height=f"{r:.3f}",
                      fill=color, transform=f"rotate({deg:.4f} {cx:.3f} {cy:.3f})",
                      **{"fill-opacity": f"{min(max(val, 0.0), 1.0):.3f}", "class": cls})
    return len(best)


def render_tick(log, tick: int, show_heatmap: bool = True, show_danger: bool = True,
                extent: float = 60.0) -> str:
    """SVG of one simulation tick; planner layers come from the latest replan."""
    if not 0 <= tick < len(log.ticks):
        raise IndexError(f"tick {tick} outside [0, {len(log.ticks)})")
    meta = log.meta
    rec = log.ticks[tick]
    planner = next((log.ticks[i]["planner"] for i in range(tick, -1, -1) if "planner" in log.ticks[i]), None)
    ex, ey, eh, _ = rec["ego"]
    view = (ex - extent / 2, -(ey + extent / 2), 2 * extent, extent)
    root = _svg(view)
    world = _world_group(root)

    g = ET.SubElement(world, "g", {"class": "drivable"})
    for poly in meta.get("drivable_area", []):
        ET.SubElement(g, "polygon", points=_points(poly), fill="#dddddd", stroke="none")
    g = ET.SubElement(world, "g", {"class": "static"})
    for poly in meta.get("static_objects", []):
        ET.SubElement(g, "polygon", points=_points(poly), fill="#555555", **{"class": "static"})

    use_heat = show_heatmap and meta.get("sim", {}).get("use_heatmap", True)
    if planner is not None and use_heat and planner.get("heat"):
        _pixel_layer(world, planner["heat_frame"], planner["heat"], "red", "heat")
    if planner is not None and show_danger and planner.get("danger"):
        _pixel_layer(world, planner["danger_frame"], planner["danger"], "yellow", "danger")

    sizes = meta.get("agent_sizes", {})
    g = ET.SubElement(world, "g", {"class": "agents"})
    for aid, (x, y, h, _) in sorted(rec["agents"].items()):
        length, width = sizes.get(aid, (4.5, 2.0))
        ET.SubElement(g, "polygon", points=_points(polygon_from_box(x, y, h, length, width)), fill="#3366cc",
                      **{"class": "agent", "data-id": aid})

    ego_l, ego_w = meta.get("ego_size", (4.0, 2.0))
    ET.SubElement(world, "polygon", points=_points(polygon_from_box(ex, ey, eh, ego_l, ego_w)), fill="black",
                  **{"class": "ego"})

    if planner is not None and planner.get("used"):
        g = ET.SubElement(world, "g", {"class": "plan"})
        for x, y, _, _ in planner["used"]:
            ET.SubElement(g, "circle", cx=f"{x:.3f}", cy=f"{y:.3f}", r="0.35", fill="green", **{"class": "plan"})
    return ET.tostring(root, encoding="unicode")


def render_grid(grid: SpatialTemporalGrid, t: Optional[int] = None, color: str = "red",
                pixel: float = 4.0) -> str:
    """One square per pixel of plane ``t`` (max over time when None); +v points up."""
    plane = grid.values.max(axis=0) if t is None else grid.plane(t)
    H, W = plane.shape
    root = _svg((0.0, 0.0, W * pixel, H * pixel), width_px=int(W * pixel))
    g = ET.SubElement(root, "g", {"class": "grid"})
    for v in range(H):
        y = (H - 1 - v) * pixel
        for u in range(W):
            ET.SubElement(g, "rect", x=f"{u * pixel:g}", y=f"{y:g}", width=f"{pixel:g}", height=f"{pixel:g}",
                          fill=color, **{"fill-opacity": f"{plane[v, u]:.3f}", "class": "pixel"})
    return ET.tostring(root, encoding="unicode")

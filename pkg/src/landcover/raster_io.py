"""Canonical tile, stack, and feature-cube I/O.

A tile is a pair of files sharing one stem: ``<stem>.json`` holds the header
(grid, nodata, optional timestamp and metadata) and ``<stem>.bin`` holds the
payload as row-major little-endian IEEE-754 float32. Headers are serialized
canonically (sorted keys, two-space indent, trailing newline) so that
write -> read -> write round-trips byte-identically.

A scene stack is a directory with a ``stack.json`` manifest naming the sensor,
band list, and per-scene band tiles plus an optional validity-mask tile.
Scene timestamps and metadata are read from the band tile headers (the writer
stamps every band of a scene identically).

A feature cube is a directory with a ``cube.json`` manifest mapping layer
names to tiles, plus per-layer provenance tags and free-form flags.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from pathlib import Path

import numpy as np

from .grid import NODATA, GridSpec, Raster, SceneStack, TimedScene

log = logging.getLogger(__name__)

STACK_MANIFEST = "stack.json"
CUBE_MANIFEST = "cube.json"

_HEADER_FIELDS = {"width", "height", "origin_x", "origin_y", "cell_size", "crs_tag", "nodata"}


class TileError(ValueError):
    """Malformed tile header or payload."""


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _tile_paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == ".json":
        stem = p.with_suffix("")
    elif p.suffix == ".bin":
        stem = p.with_suffix("")
    else:
        stem = p
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def write_raster(
    raster: Raster,
    path: str | Path,
    timestamp: dt.date | None = None,
    metadata: dict[str, str] | None = None,
) -> None:
    """Write one tile (header + payload) in the canonical format."""
    header_path, payload_path = _tile_paths(path)
    header = {
        "width": raster.grid.width,
        "height": raster.grid.height,
        "origin_x": raster.grid.origin_x,
        "origin_y": raster.grid.origin_y,
        "cell_size": raster.grid.cell_size,
        "crs_tag": raster.grid.crs_tag,
        "nodata": raster.nodata,
    }
    if timestamp is not None:
        header["timestamp"] = timestamp.isoformat()
    if metadata:
        header["metadata"] = {str(k): str(v) for k, v in metadata.items()}
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header_path.write_text(_canonical_json(header), encoding="utf-8")
    payload = np.ascontiguousarray(raster.values, dtype="<f4")
    payload_path.write_bytes(payload.tobytes())


def read_tile_header(path: str | Path) -> dict:
    header_path, _ = _tile_paths(path)
    if not header_path.exists():
        raise FileNotFoundError(f"tile header not found: {header_path}")
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TileError(f"malformed tile header {header_path}: {exc}") from exc
    if not isinstance(header, dict) or not _HEADER_FIELDS.issubset(header):
        missing = _HEADER_FIELDS - set(header) if isinstance(header, dict) else _HEADER_FIELDS
        raise TileError(f"tile header {header_path} missing fields: {sorted(missing)}")
    return header


def read_raster(path: str | Path) -> Raster:
    """Read one tile; inverse of :func:`write_raster`."""
    header_path, payload_path = _tile_paths(path)
    header = read_tile_header(header_path)
    try:
        grid = GridSpec(
            width=int(header["width"]),
            height=int(header["height"]),
            origin_x=float(header["origin_x"]),
            origin_y=float(header["origin_y"]),
            cell_size=float(header["cell_size"]),
            crs_tag=str(header["crs_tag"]),
        )
        nodata = float(header["nodata"])
    except (TypeError, ValueError) as exc:
        raise TileError(f"invalid header values in {header_path}: {exc}") from exc
    if not payload_path.exists():
        raise FileNotFoundError(f"tile payload not found: {payload_path}")
    raw = payload_path.read_bytes()
    expected = grid.width * grid.height * 4
    if len(raw) != expected:
        raise TileError(
            f"payload {payload_path} holds {len(raw)} bytes, header implies {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4").reshape(grid.shape)
    return Raster(grid, values.copy(), nodata)


def _scene_timestamp(header: dict, where: str) -> dt.date:
    stamp = header.get("timestamp")
    if stamp is None:
        raise TileError(f"scene tile {where} carries no timestamp")
    try:
        return dt.date.fromisoformat(str(stamp))
    except ValueError as exc:
        raise TileError(f"unparseable timestamp {stamp!r} in {where}") from exc


def write_stack(stack: SceneStack, directory: str | Path) -> None:
    """Persist a scene stack as a tile directory plus manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    band_names = sorted({name for scene in stack.scenes for name in scene.bands})
    manifest: dict = {"sensor": stack.sensor, "bands": band_names, "scenes": []}
    for i, scene in enumerate(stack.scenes):
        entry: dict = {"bands": {}, "valid_mask": None}
        for name in sorted(scene.bands):
            stem = f"s{i:04d}_{name}"
            write_raster(scene.bands[name], directory / stem, scene.timestamp, scene.metadata)
            entry["bands"][name] = stem
        if scene.valid_mask is not None and not scene.valid_mask.all():
            stem = f"s{i:04d}_mask"
            mask = Raster(scene.grid, scene.valid_mask.astype(np.float32), nodata=NODATA)
            write_raster(mask, directory / stem, scene.timestamp)
            entry["valid_mask"] = stem
        manifest["scenes"].append(entry)
    (directory / STACK_MANIFEST).write_text(_canonical_json(manifest), encoding="utf-8")


def read_stack(directory: str | Path) -> SceneStack:
    directory = Path(directory)
    manifest_path = directory / STACK_MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"stack manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    scenes = []
    for entry in manifest.get("scenes", []):
        bands: dict[str, Raster] = {}
        timestamp = None
        metadata: dict[str, str] = {}
        for name, stem in sorted(entry["bands"].items()):
            header = read_tile_header(directory / stem)
            bands[name] = read_raster(directory / stem)
            if timestamp is None:
                timestamp = _scene_timestamp(header, str(directory / stem))
                metadata = dict(header.get("metadata", {}))
        if timestamp is None:
            raise TileError(f"scene entry without bands in {manifest_path}")
        mask = None
        if entry.get("valid_mask"):
            mask = read_raster(directory / entry["valid_mask"]).values > 0.5
        scenes.append(TimedScene(bands[next(iter(bands))].grid, timestamp, bands, mask, metadata))
    return SceneStack(scenes, manifest["sensor"])


def write_cube(cube, directory: str | Path) -> None:
    """Persist a feature cube (layers dict + provenance + flags)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"layers": {}, "provenance": dict(cube.provenance), "flags": dict(cube.flags)}
    for name in cube.layer_names():
        write_raster(cube.layers[name], directory / name)
        manifest["layers"][name] = name
    (directory / CUBE_MANIFEST).write_text(_canonical_json(manifest), encoding="utf-8")


def read_cube(directory: str | Path):
    from .features import FeatureCube

    directory = Path(directory)
    manifest_path = directory / CUBE_MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"cube manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    layers = {name: read_raster(directory / stem) for name, stem in manifest["layers"].items()}
    if not layers:
        raise TileError(f"cube manifest {manifest_path} lists no layers")
    grid = next(iter(layers.values())).grid
    return FeatureCube(
        grid=grid,
        layers=layers,
        provenance=dict(manifest.get("provenance", {})),
        flags=dict(manifest.get("flags", {})),
    )

"""File formats: image export, k-space bundle directories and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .simulation import KSpaceBundle, RespSignal
from .trajectory import read_csv, write_csv

__all__ = [
    "FormatError",
    "ArtifactWriter",
    "export_image",
    "export_rgb",
    "read_raw",
    "save_bundle",
    "load_bundle",
    "load_coil_maps",
    "write_resp_csv",
    "write_json",
]

_KSP_MAGIC = b"JRKSPB01"
_KSP_HEADER = struct.Struct("<8sIIQ")
_COIL_MAGIC = b"JRCOIL01"
_COIL_HEADER = struct.Struct("<8sIII")


class FormatError(ValueError):
    """A file exists but its contents do not match the expected layout."""

    def __init__(self, path, offset, msg):
        super().__init__(f"{path}: {msg} (byte offset {offset})")
        self.path = str(path)
        self.offset = offset


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ArtifactWriter:
    """Tracks files emitted into an output directory and writes ``manifest.json``."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._files = []

    def path(self, name):
        p = self.out_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, *paths):
        for p in paths:
            p = Path(p)
            if p not in self._files:
                self._files.append(p)
        return paths[0] if len(paths) == 1 else paths

    def finalize(self):
        entries = []
        for p in sorted(self._files):
            entries.append(
                {"path": p.relative_to(self.out_dir).as_posix(), "bytes": p.stat().st_size, "sha256": _sha256(p)}
            )
        return write_json(self.out_dir / "manifest.json", {"artifacts": entries})


def _window(img, normalization, window):
    if normalization == "percentile99":
        hi = float(np.percentile(img, 99)) if img.size else 0.0
        return 0.0, hi
    if normalization == "fixed_window":
        if window is None or len(window) != 2:
            raise ValueError("fixed_window normalization needs window=(lo, hi)")
        return float(window[0]), float(window[1])
    raise ValueError(f"unknown normalization {normalization!r}")


def export_image(img, path, normalization="percentile99", window=None):
    """Write ``<path>.png`` (16-bit grayscale), ``<path>.raw`` and ``<path>.json``.

    Complex input is exported as magnitude. The raw file holds little-endian
    float64 values in C order; the JSON sidecar records dims, dtype and the
    display window. Returns the three paths.
    """
    arr = np.asarray(img)
    if np.iscomplexobj(arr):
        arr = np.abs(arr)
    arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot export non-finite image")
    if arr.ndim != 2:
        raise ValueError("export_image expects a 2D image")
    base = Path(path)
    lo, hi = _window(arr, normalization, window)
    scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    u16 = np.round(np.clip(scaled, 0.0, 1.0) * 65535).astype(np.uint16)
    png = base.with_suffix(".png")
    raw = base.with_suffix(".raw")
    side = base.with_suffix(".json")
    Image.fromarray(u16).save(png)
    raw.write_bytes(arr.astype("<f8").tobytes())
    write_json(side, {"dims": list(arr.shape), "dtype": "<f8", "window": [lo, hi], "normalization": normalization})
    return png, raw, side


def export_rgb(channels, path, window=(0.0, 1.0)):
    """8-bit color PNG of ``(3, n, m)`` channels plus raw float64 and sidecar."""
    ch = np.asarray(channels)
    if np.iscomplexobj(ch):
        ch = np.abs(ch)
    ch = ch.astype(np.float64)
    if ch.ndim != 3 or ch.shape[0] != 3:
        raise ValueError("export_rgb expects (3, n, m) channels")
    base = Path(path)
    lo, hi = window
    rgb = np.round(np.clip((ch - lo) / (hi - lo), 0, 1) * 255).astype(np.uint8)
    png = base.with_suffix(".png")
    raw = base.with_suffix(".raw")
    side = base.with_suffix(".json")
    Image.fromarray(np.moveaxis(rgb, 0, -1), mode="RGB").save(png)
    raw.write_bytes(ch.astype("<f8").tobytes())
    write_json(side, {"dims": list(ch.shape), "dtype": "<f8", "window": [lo, hi], "normalization": "fixed_window"})
    return png, raw, side


def read_raw(path):
    """Load a raw image written by :func:`export_image` using its JSON sidecar."""
    base = Path(path)
    raw = base.with_suffix(".raw")
    meta = json.loads(base.with_suffix(".json").read_text())
    data = raw.read_bytes()
    need = int(np.prod(meta["dims"])) * 8
    if len(data) != need:
        raise FormatError(raw, min(len(data), need), f"expected {need} bytes, found {len(data)}")
    return np.frombuffer(data, dtype=meta["dtype"]).reshape(meta["dims"]).astype(np.float64)


def write_resp_csv(resp: RespSignal, path, readouts=None):
    path = Path(path)
    ids = np.arange(len(resp)) if readouts is None else np.asarray(readouts)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["readout", "time_s", "amplitude"])
        for r, t, a in zip(ids.tolist(), resp.times.tolist(), resp.amplitude.tolist()):
            wr.writerow([r, repr(t), repr(a)])
    return path


def save_bundle(bundle: KSpaceBundle, directory, resp: RespSignal | None = None, coil_maps=None):
    """Write ``meta.json``, ``bin_<t>.ksp`` samples and ``traj_<t>.csv`` per motion state.

    Optional extras are ``resp.csv`` (respiratory signal) and ``coils.bin``
    (coil sensitivities, same header layout with magic ``JRCOIL01``).
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for t, (traj, data) in enumerate(zip(bundle.trajs, bundle.data)):
        C, E, M = data.shape
        kp = d / f"bin_{t}.ksp"
        with kp.open("wb") as fh:
            fh.write(_KSP_HEADER.pack(_KSP_MAGIC, C, E, M))
            fh.write(np.ascontiguousarray(data, dtype="<c16").tobytes())
        written.append(kp)
        written.append(write_csv(traj, d / f"traj_{t}.csv"))
    if resp is not None:
        written.append(write_resp_csv(resp, d / "resp.csv"))
    if coil_maps is not None:
        maps = np.asarray(coil_maps)
        cp = d / "coils.bin"
        with cp.open("wb") as fh:
            fh.write(_COIL_HEADER.pack(_COIL_MAGIC, *maps.shape))
            fh.write(np.ascontiguousarray(maps, dtype="<c16").tobytes())
        written.append(cp)
    meta = {
        "format": "jointrecon-kspace-bundle/1",
        "C": bundle.num_coils,
        "E": bundle.num_echoes,
        "T": bundle.num_states,
        "tes_ms": list(bundle.tes_ms),
        "grid": bundle.grid,
        "seed": bundle.seed,
        "bin_amplitudes": list(bundle.bin_amplitudes),
    }
    written.append(write_json(d / "meta.json", meta))
    return written


def _read_ksp(path):
    raw = Path(path).read_bytes()
    if len(raw) < _KSP_HEADER.size:
        raise FormatError(path, len(raw), "truncated header")
    magic, C, E, M = _KSP_HEADER.unpack_from(raw, 0)
    if magic != _KSP_MAGIC:
        raise FormatError(path, 0, "bad magic")
    need = _KSP_HEADER.size + 16 * C * E * M
    if len(raw) != need:
        raise FormatError(path, min(len(raw), need), f"expected {need} bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype="<c16", offset=_KSP_HEADER.size).reshape(C, E, M)
    return arr.astype(np.complex128)


def load_coil_maps(directory):
    """Coil maps from ``coils.bin`` in a bundle directory, or ``None`` if absent."""
    path = Path(directory) / "coils.bin"
    if not path.is_file():
        return None
    raw = path.read_bytes()
    if len(raw) < _COIL_HEADER.size:
        raise FormatError(path, len(raw), "truncated header")
    magic, C, nx, ny = _COIL_HEADER.unpack_from(raw, 0)
    if magic != _COIL_MAGIC:
        raise FormatError(path, 0, "bad magic")
    need = _COIL_HEADER.size + 16 * C * nx * ny
    if len(raw) != need:
        raise FormatError(path, min(len(raw), need), f"expected {need} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<c16", offset=_COIL_HEADER.size).reshape(C, nx, ny).astype(np.complex128)


def load_bundle(directory) -> KSpaceBundle:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"{meta_path}: missing bundle metadata")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(meta_path, exc.pos, f"invalid JSON: {exc.msg}") from exc
    for key in ("C", "E", "T", "tes_ms", "grid"):
        if key not in meta:
            raise FormatError(meta_path, 0, f"missing key {key!r}")
    trajs, data, readouts = [], [], []
    for t in range(int(meta["T"])):
        arr = _read_ksp(d / f"bin_{t}.ksp")
        if arr.shape[:2] != (meta["C"], meta["E"]):
            raise FormatError(d / f"bin_{t}.ksp", 8, "coil/echo counts disagree with meta.json")
        tp = d / f"traj_{t}.csv"
        try:
            traj = read_csv(tp)
        except (ValueError, IndexError) as exc:
            raise FormatError(tp, 0, str(exc)) from exc
        if traj.num_samples != arr.shape[2]:
            raise FormatError(d / f"bin_{t}.ksp", 16, "sample count disagrees with trajectory")
        trajs.append(traj)
        data.append(arr)
        readouts.append(np.unique(traj.readout_index))
    return KSpaceBundle(
        tuple(trajs),
        tuple(data),
        tuple(readouts),
        tuple(meta["tes_ms"]),
        int(meta["grid"]),
        int(meta.get("seed", 0)),
        tuple(meta.get("bin_amplitudes", ())),
    )

"""Artifact formats: binary cubes, network checkpoints and CSV tables.

Cube files: 8-byte magic "XVAPATHS", u32 version, three u64 dimensions
(i, p, n), then row-major little-endian float64 with i outermost.
Checkpoint files: magic "XVANNPRM", u32 version, u32 count of layer widths,
the widths as u64, u64 parameter count, then float64 parameters; each has a
JSON sidecar.  Binary headers have no room for the configuration hash, so it
lives in the sidecars and in the run manifest.
"""

from __future__ import annotations

import csv
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from .bsde import TrainableState
from .exposure import ExposureProfile
from .market import PathCube
from .neural import AdamState, MlpSpec

__all__ = [
    "FormatError",
    "CUBE_MAGIC",
    "PARAM_MAGIC",
    "write_cube",
    "read_cube",
    "save_paths",
    "load_paths",
    "write_params",
    "read_params",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_csv",
    "write_exposure_csv",
    "read_exposure_csv",
    "write_xy_csv",
    "write_text",
]

CUBE_MAGIC = b"XVAPATHS"
PARAM_MAGIC = b"XVANNPRM"
VERSION = 1


class FormatError(ValueError):
    pass


def write_cube(path, cube) -> None:
    a = np.asarray(cube, dtype="<f8")
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise FormatError("cubes are three-dimensional")
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<I3Q", VERSION, *a.shape))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_cube(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != CUBE_MAGIC:
        raise FormatError(f"{path}: not a cube file")
    version, i, p, n = struct.unpack_from("<I3Q", raw, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = raw[8 + 28:]
    if len(body) != 8 * i * p * n:
        raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(body, dtype="<f8").reshape(i, p, n).astype(float)


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def save_paths(directory, paths: PathCube, config_hash: str = "") -> None:
    """factors.bin, increments.bin, numeraire.bin plus paths.json (times, names, diffusion)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_cube(d / "factors.bin", paths.factors)
    write_cube(d / "increments.bin", paths.increments)
    write_cube(d / "numeraire.bin", paths.numeraire[None])
    _dump_json(d / "paths.json", {
        "config_hash": config_hash,
        "times": paths.times.tolist(),
        "names": list(paths.names),
        "diffusion": paths.diffusion.tolist(),
    })


def load_paths(directory) -> tuple[PathCube, str]:
    d = Path(directory)
    meta = json.loads((d / "paths.json").read_text())
    cube = PathCube(np.array(meta["times"]), read_cube(d / "factors.bin"), read_cube(d / "increments.bin"),
                    np.array(meta["diffusion"]), read_cube(d / "numeraire.bin")[0], tuple(meta["names"]))
    return cube, meta["config_hash"]


def write_params(path, widths, params) -> None:
    p = np.asarray(params, dtype="<f8").ravel()
    w = [int(v) for v in widths]
    with open(path, "wb") as fh:
        fh.write(PARAM_MAGIC)
        fh.write(struct.pack(f"<II{len(w)}QQ", VERSION, len(w), *w, p.size))
        fh.write(p.tobytes())


def read_params(path):
    """(widths, params) from a checkpoint file."""
    raw = Path(path).read_bytes()
    if raw[:8] != PARAM_MAGIC:
        raise FormatError(f"{path}: not a parameter file")
    version, nw = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 16
    widths = struct.unpack_from(f"<{nw}Q", raw, off)
    off += 8 * nw
    (size,) = struct.unpack_from("<Q", raw, off)
    off += 8
    body = raw[off:]
    if len(body) != 8 * size:
        raise FormatError(f"{path}: truncated payload")
    return tuple(widths), np.frombuffer(body, dtype="<f8").astype(float)


def save_checkpoint(directory, state: TrainableState, config_hash: str = "") -> None:
    """One parameter file and sidecar per time-step network plus manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    spec = state.spec
    files = []
    for n, net in enumerate(state.nets, start=1):
        name = f"net_{n:04d}.bin"
        write_params(d / name, spec.widths, net)
        side = {"config_hash": config_hash, "step": n, "activation": list(spec.activation), "bias": spec.bias}
        if not state.shared:
            side["input_mean"] = state.input_mean[n - 1].tolist()
            side["input_std"] = state.input_std[n - 1].tolist()
        _dump_json(d / f"net_{n:04d}.json", side)
        files.append(name)
    manifest = {
        "config_hash": config_hash,
        "widths": list(spec.widths),
        "activation": list(spec.activation),
        "bias": spec.bias,
        "shared": state.shared,
        "v0": state.v0,
        "z0": state.z0.tolist(),
        "scale": state.scale,
        "input_mean": state.input_mean.tolist(),
        "input_std": state.input_std.tolist(),
        "files": files,
    }
    if state.adam is not None:
        a = state.adam
        write_params(d / "adam_m.bin", [a.size], a.m)
        write_params(d / "adam_v.bin", [a.size], a.v)
        manifest["adam"] = {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step}
    _dump_json(d / "manifest.json", manifest)


def load_checkpoint(directory, expect_hash: str | None = None) -> TrainableState:
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    if expect_hash is not None and man["config_hash"] != expect_hash:
        raise FormatError(f"{d}: checkpoint config hash {man['config_hash']} != {expect_hash}")
    w = man["widths"]
    spec = MlpSpec(w[0], tuple(w[1:-1]), w[-1], tuple(man["activation"]), man["bias"])
    nets = []
    for name in man["files"]:
        widths, p = read_params(d / name)
        if list(widths) != w:
            raise FormatError(f"{name}: layer widths {widths} differ from the manifest")
        nets.append(p)
    state = TrainableState(spec, float(man["v0"]), np.array(man["z0"]), np.array(nets),
                           np.array(man["input_mean"]).reshape(-1, w[0]),
                           np.array(man["input_std"]).reshape(-1, w[0]), float(man["scale"]), bool(man["shared"]))
    if "adam" in man:
        a = man["adam"]
        _, m = read_params(d / "adam_m.bin")
        _, v = read_params(d / "adam_v.bin")
        state.adam = AdamState(m.size, a["lr"], a["beta1"], a["beta2"], a["eps"], a["step"], m, v)
    return state


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path, header, rows, config_hash, comments=()) -> None:
    buf = _io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def write_loss_csv(path, losses, config_hash: str = "") -> None:
    _write_csv(path, ["step", "loss"], [(k, _fmt(v)) for k, v in enumerate(losses)], config_hash)


def write_exposure_csv(path, profile: ExposureProfile, config_hash: str = "") -> None:
    rows = [(_fmt(t), _fmt(e), _fmt(es), _fmt(g), _fmt(gs), s, profile.method)
            for t, e, es, g, gs, s in zip(profile.times, profile.epe, profile.epe_se, profile.ene,
                                          profile.ene_se, profile.side)]
    _write_csv(path, ["date_years", "epe", "epe_se", "ene", "ene_se", "side", "method"], rows, config_hash,
               [f"discounted={profile.discounted}"])


def read_exposure_csv(path) -> ExposureProfile:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
    disc = "discounted=False" not in Path(path).read_text()
    return ExposureProfile(col("date_years"), np.array([r["side"] for r in rows]), col("epe"), col("epe_se"),
                           col("ene"), col("ene_se"), disc, rows[0]["method"] if rows else "nn")


def write_xy_csv(path, x, v, names=("x", "v"), config_hash: str = "") -> None:
    _write_csv(path, list(names), [(_fmt(a), _fmt(b)) for a, b in zip(x, v)], config_hash)


def write_text(path, text: str, config_hash: str = "") -> None:
    Path(path).write_text(f"# config_hash={config_hash}\n{text.rstrip()}\n")

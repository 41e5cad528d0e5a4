"""Checkpoint files.

A checkpoint is an uncompressed NumPy ``.npz`` archive.  Entry ``__meta__``
holds UTF-8 JSON with keys ``format`` (``"snds-checkpoint"``), ``version``
(currently 1), ``layers``, ``spec`` (the :class:`NetworkSpec` fields),
``lambda``, ``d_min``, ``d_max``, ``delta`` and ``sampler_counts`` (depth ->
count, string keys).  Every other entry is a float64 array named after the
parameter it stores (e.g. ``layer3.conv1.weight``); batch-norm running
statistics are stored as ``<norm>.running_mean`` / ``<norm>.running_var``.
"""

from __future__ import annotations

import dataclasses
import json
import zipfile
from pathlib import Path

import numpy as np

from snds.autodiff import Parameter
from snds.errors import DataFormatError
from snds.network import GrowingNetwork, NetworkSpec
from snds.posterior import TruncatedPoissonPosterior

FORMAT = "snds-checkpoint"
VERSION = 1


def save_checkpoint(path, net: GrowingNetwork, posterior: TruncatedPoissonPosterior | None = None,
                    sampler_counts: dict[int, int] | None = None) -> Path:
    path = Path(path)
    spec = dataclasses.asdict(net.spec)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "layers": net.depth,
        "spec": {k: list(v) if isinstance(v, tuple) else v for k, v in spec.items()},
        "lambda": None if posterior is None else posterior.lambda_value,
        "d_min": None if posterior is None else posterior.d_min,
        "d_max": None if posterior is None else posterior.d_max,
        "delta": None if posterior is None else posterior.delta,
        "sampler_counts": {str(k): int(v) for k, v in sorted((sampler_counts or {}).items())},
    }
    arrays = {p.name: p.data for p in net.parameters()}
    for norm in net.norms():
        if norm.running is not None:
            arrays[f"{norm.name}.running_mean"] = norm.running["mean"]
            arrays[f"{norm.name}.running_var"] = norm.running["var"]
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    # Written entry by entry with a fixed timestamp so identical state gives identical bytes.
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arrays[name]), allow_pickle=False)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            if "__meta__" not in data.files:
                raise DataFormatError(f"{path}: not a checkpoint (no __meta__ entry)")
            meta = json.loads(data["__meta__"].tobytes().decode())
            arrays = {k: data[k] for k in data.files if k != "__meta__"}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise DataFormatError(f"{path}: unreadable checkpoint ({exc})") from exc
    if meta.get("format") != FORMAT:
        raise DataFormatError(f"{path}: expected format {FORMAT!r}, found {meta.get('format')!r}")
    if meta.get("version") != VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    return meta, arrays


def load_checkpoint(path) -> tuple[GrowingNetwork, TruncatedPoissonPosterior | None, dict[int, int]]:
    meta, arrays = read_checkpoint(path)
    spec_fields = dict(meta["spec"])
    spec_fields["input_shape"] = tuple(spec_fields["input_shape"])
    spec_fields["downsample_at"] = tuple(spec_fields["downsample_at"])
    spec_fields["scalar_init"] = tuple(spec_fields["scalar_init"])
    net = GrowingNetwork(NetworkSpec(**spec_fields))
    if meta["layers"]:
        net.grow_to(meta["layers"])
    for p in net.parameters():
        if p.name not in arrays:
            raise DataFormatError(f"{path}: missing parameter {p.name}")
        if arrays[p.name].shape != p.shape:
            raise DataFormatError(f"{path}: {p.name} has shape {arrays[p.name].shape}, expected {p.shape}")
        p.data = np.array(arrays[p.name], dtype=np.float64)
    for norm in net.norms():
        if norm.running is not None:
            norm.running["mean"] = np.array(arrays[f"{norm.name}.running_mean"])
            norm.running["var"] = np.array(arrays[f"{norm.name}.running_var"])
    posterior = None
    if meta["lambda"] is not None:
        posterior = TruncatedPoissonPosterior(Parameter(meta["lambda"], name="depth.lambda"), meta["d_min"],
                                              meta["d_max"], meta["delta"])
    counts = {int(k): v for k, v in meta["sampler_counts"].items()}
    return net, posterior, counts

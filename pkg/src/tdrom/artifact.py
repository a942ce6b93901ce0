"""Binary container for offline results.

Layout::

    b"TDROMART"                 8 bytes
    header length               8 bytes, little-endian unsigned
    header                      UTF-8 JSON (sorted keys)
    arrays                      little-endian raw data, in header order

The header records the format version, the configuration and its SHA-256
hash, scalar metadata, and the name, dtype and shape of every array.
Writing is atomic (temporary file, then rename) and deterministic, so
``save(load(save(x)))`` reproduces ``save(x)`` byte for byte.
"""

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .eim import EimOperator
from .estimator import LipschitzTable
from .exceptions import ConfigurationError
from .greedy import GreedyResult
from .reduced import OfflineQuantities, TimeDependentBasis

__all__ = ["OfflineArtifact", "config_hash", "save_artifact", "load_artifact", "to_bytes", "from_bytes",
           "FORMAT_VERSION"]

MAGIC = b"TDROMART"
FORMAT_VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8", "b1": "|b1"}

_OFFLINE_ARRAYS = ("transition", "A_red", "g_red", "eim_premult", "residual_factor", "alpha0", "support",
                   "eim_indices", "V_rows")
_OFFLINE_SCALARS = ("scheme", "dt", "K", "r", "m", "Q_A", "Q_g", "time_dependent", "constant", "delta0")
_EIM_SCALARS = ("tol", "train_error", "converged", "condition")


def config_hash(config):
    """SHA-256 of the canonical JSON form of ``config``."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class OfflineArtifact:
    """A greedy result together with the configuration that produced it."""

    config: dict
    result: GreedyResult

    @property
    def config_hash(self):
        return config_hash(self.config)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def _kind(a):
    if a.dtype == bool:
        return "b1"
    if np.issubdtype(a.dtype, np.integer):
        return "i8"
    return "f8"


def _pack(art):
    res = art.result
    arrays = {}
    meta = {
        "method": res.method,
        "final_max_indicator": float(res.final_max_indicator),
        "n_full_solves": int(res.n_full_solves),
        "converged": bool(res.converged),
        "stop_reason": res.stop_reason,
    }

    def put(name, value):
        if value is not None:
            arrays[name] = np.asarray(value)

    put("greedy.selected", res.selected)
    put("greedy.selected_indices", np.asarray(res.selected_indices, dtype=np.int64))
    put("greedy.history", np.asarray(res.history, dtype=float))
    put("greedy.dims", np.asarray(res.dims, dtype=np.int64))
    put("greedy.final_indicators", res.final_indicators)
    if res.basis is not None:
        b = res.basis
        meta["basis"] = {"dt": b.dt, "K": b.K}
        put("basis.V", b.V)
        put("basis.active", b.active)
        put("basis.coefficients", b.coefficients)
    if res.offline is not None:
        o = res.offline
        meta["offline"] = {k: getattr(o, k) for k in _OFFLINE_SCALARS}
        for k in _OFFLINE_ARRAYS:
            put(f"offline.{k}", getattr(o, k))
    if res.eim is not None:
        e = res.eim
        meta["eim"] = {k: getattr(e, k) for k in _EIM_SCALARS}
        meta["eim"]["converged"] = bool(e.converged)
        put("eim.basis", e.basis)
        put("eim.indices", e.indices)
        put("eim.U", e.U)
        put("eim.history", np.asarray(e.history, dtype=float).reshape(-1, 2))
    if res.lipschitz is not None:
        t = res.lipschitz
        meta["lipschitz"] = True
        put("lipschitz.A_values", t.A_values)
        put("lipschitz.h_values", t.h_values)
        put("lipschitz.params", t.params)
    return meta, arrays


def to_bytes(art):
    """Serialize an :class:`OfflineArtifact`."""
    meta, arrays = _pack(art)
    specs, blobs = [], []
    for name, a in arrays.items():
        kind = _kind(a)
        data = np.ascontiguousarray(a, dtype=_DTYPES[kind])
        specs.append({"name": name, "dtype": kind, "shape": list(data.shape)})
        blobs.append(data.tobytes(order="C"))
    header = {
        "format": "tdrom-artifact",
        "version": FORMAT_VERSION,
        "config": art.config,
        "config_hash": art.config_hash,
        "meta": meta,
        "arrays": specs,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), default=_jsonable).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<Q", len(head)), head, *blobs])


def _unpack_arrays(buf, offset, specs):
    out = {}
    for s in specs:
        dt = np.dtype(_DTYPES[s["dtype"]])
        n = int(np.prod(s["shape"], dtype=np.int64)) * dt.itemsize
        if offset + n > len(buf):
            raise ConfigurationError(f"artifact truncated while reading {s['name']}")
        out[s["name"]] = np.frombuffer(buf, dtype=dt, count=n // dt.itemsize, offset=offset).reshape(s["shape"]).copy()
        offset += n
    if offset != len(buf):
        raise ConfigurationError("artifact has trailing bytes")
    return out


def from_bytes(buf, metric=None):
    """Inverse of :func:`to_bytes`; ``metric`` is attached to the Lipschitz table."""
    if len(buf) < 16 or buf[:8] != MAGIC:
        raise ConfigurationError("not an offline artifact")
    (n,) = struct.unpack("<Q", buf[8:16])
    try:
        header = json.loads(buf[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"corrupt artifact header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise ConfigurationError(f"artifact version {header.get('version')} is not supported")
    if config_hash(header["config"]) != header["config_hash"]:
        raise ConfigurationError("artifact header is inconsistent with its configuration")
    arr = _unpack_arrays(buf, 16 + n, header["arrays"])
    meta = header["meta"]

    table = None
    if meta.get("lipschitz"):
        table = LipschitzTable(arr["lipschitz.A_values"], arr.get("lipschitz.h_values"),
                               arr.get("lipschitz.params"), metric)
    eim = None
    if "eim" in meta:
        e = meta["eim"]
        eim = EimOperator(arr["eim.basis"], arr["eim.indices"], arr["eim.U"], e["tol"], e["train_error"],
                          e["converged"], e["condition"],
                          [(int(m), float(v)) for m, v in arr["eim.history"]])
    basis = None
    if "basis" in meta:
        basis = TimeDependentBasis(arr["basis.V"], meta["basis"]["dt"], meta["basis"]["K"],
                                   active=arr["basis.active"], coefficients=arr.get("basis.coefficients"))
    offline = None
    if "offline" in meta:
        kw = dict(meta["offline"])
        kw.update({k: arr.get(f"offline.{k}") for k in _OFFLINE_ARRAYS})
        offline = OfflineQuantities(**kw, lipschitz=table)
    result = GreedyResult(
        method=meta["method"],
        selected=arr["greedy.selected"],
        selected_indices=[int(i) for i in arr["greedy.selected_indices"]],
        history=[float(v) for v in arr["greedy.history"]],
        dims=[int(v) for v in arr["greedy.dims"]],
        final_max_indicator=meta["final_max_indicator"],
        basis=basis,
        offline=offline,
        eim=eim,
        lipschitz=table,
        n_full_solves=meta["n_full_solves"],
        converged=meta["converged"],
        stop_reason=meta["stop_reason"],
        final_indicators=arr.get("greedy.final_indicators"),
    )
    return OfflineArtifact(header["config"], result)


def save_artifact(path, art):
    """Write ``art`` to ``path`` atomically."""
    data = to_bytes(art)
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".artifact-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_artifact(path, expected_hash=None, metric=None):
    """Read an artifact; refuse it when ``expected_hash`` differs from the stored hash."""
    with open(path, "rb") as fh:
        art = from_bytes(fh.read(), metric=metric)
    if expected_hash is not None and art.config_hash != expected_hash:
        raise ConfigurationError(
            f"artifact {path} was built from a different configuration "
            f"(hash {art.config_hash[:12]} vs expected {expected_hash[:12]})")
    return art

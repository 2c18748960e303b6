"""Binary field snapshots.

Layout (little endian, 56-byte header followed by float64 payload)::

    offset  type   field
    0       4s     magic b"ACNS"
    4       u4     format version (1)
    8       u4     N
    12      f8     L
    20      u4     flags
    24      u4     n_phi   length of each scalar array
    28      u4     n_u     length of the velocity array
    32      f8     t       (dt for increment records)
    40      u8     step
    48      f8     lambda
    56      ...    payload

Flags: bit 0 cosine (Neumann) basis, bit 1 velocity present, bit 2 chemical
potential present, bit 3 increment record, bit 4 pressure record.

Field records carry phi [n_phi], then mu [n_phi] if bit 2, then u [n_u] if
bit 1, all in real orthonormal coordinates sorted by eigenvalue.  Increment
records carry dW1 [n_u] followed by dW2 [n_phi].  Pressure records carry pi
and its time primitive, both [n_phi].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"ACNS"
VERSION = 1
HEADER = struct.Struct("<4sIIdIIIdQd")

NEUMANN = 1
VELOCITY = 2
CHEMICAL = 4
INCREMENT = 8
PRESSURE = 16


class SnapshotError(ValueError):
    pass


@dataclass
class Snapshot:
    N: int
    L: float
    flags: int
    t: float
    step: int
    lam: float
    arrays: dict

    @property
    def neumann(self) -> bool:
        return bool(self.flags & NEUMANN)


def _layout(flags, n_phi, n_u):
    if flags & INCREMENT:
        return [("dW1", n_u), ("dW2", n_phi)]
    if flags & PRESSURE:
        return [("pi", n_phi), ("primitive", n_phi)]
    out = [("phi", n_phi)]
    if flags & CHEMICAL:
        out.append(("mu", n_phi))
    if flags & VELOCITY:
        out.append(("u", n_u))
    return out


def pack(snap: Snapshot) -> bytes:
    arrays = snap.arrays
    if snap.flags & INCREMENT:
        n_u, n_phi = len(arrays["dW1"]), len(arrays["dW2"])
    else:
        n_phi = len(arrays["phi"] if "phi" in arrays else arrays["pi"])
        n_u = len(arrays.get("u", ()))
    head = HEADER.pack(MAGIC, VERSION, snap.N, snap.L, snap.flags, n_phi, n_u, snap.t, snap.step, snap.lam)
    body = b"".join(np.asarray(arrays[name], dtype="<f8").tobytes() for name, _ in _layout(snap.flags, n_phi, n_u))
    return head + body


def unpack(data: bytes) -> Snapshot:
    if len(data) < HEADER.size:
        raise SnapshotError("truncated header")
    magic, version, N, L, flags, n_phi, n_u, t, step, lam = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"unsupported version {version}")
    arrays = {}
    off = HEADER.size
    for name, n in _layout(flags, n_phi, n_u):
        end = off + 8 * n
        if end > len(data):
            raise SnapshotError(f"truncated payload in {name}")
        arrays[name] = np.frombuffer(data[off:end], dtype="<f8").astype(float)
        off = end
    if off != len(data):
        raise SnapshotError("trailing bytes after payload")
    return Snapshot(N, L, flags, t, step, lam, arrays)


def write(path, snap: Snapshot):
    Path(path).write_bytes(pack(snap))


def read(path) -> Snapshot:
    return unpack(Path(path).read_bytes())


def from_state(basis, state, with_mu=True) -> Snapshot:
    flags = NEUMANN if basis.boundary_mode == "neumann_cosine" else 0
    arrays = {"phi": basis.scalar_to_real(state.b)}
    if with_mu:
        flags |= CHEMICAL
        arrays["mu"] = basis.scalar_to_real(state.c)
    if state.a is not None:
        flags |= VELOCITY
        arrays["u"] = basis.velocity_to_real(state.a)
    return Snapshot(basis.N, basis.L, flags, state.t, state.step, state.lam, arrays)


def to_coefficients(basis, snap: Snapshot):
    """(a, b) coefficient arrays of a field record on ``basis``."""
    if snap.N != basis.N or snap.L != basis.L:
        raise SnapshotError(f"snapshot is for N={snap.N}, L={snap.L}; basis has N={basis.N}, L={basis.L}")
    b = basis.scalar_from_real(snap.arrays["phi"])
    a = basis.velocity_from_real(snap.arrays["u"]) if "u" in snap.arrays else None
    return a, b


def increment_record(inc, step) -> Snapshot:
    return Snapshot(0, 0.0, INCREMENT, inc.dt, step, 0.0, {"dW1": inc.dW1, "dW2": inc.dW2})


def pressure_record(basis, t, step, pi, primitive) -> Snapshot:
    return Snapshot(basis.N, basis.L, PRESSURE, t, step, 0.0,
                    {"pi": basis.scalar_to_real(pi), "primitive": basis.scalar_to_real(primitive)})

"""Reproducible random streams and the keyed Gaussian scenery.

Two kinds of randomness are used:

* sequential streams (walk steps, Gaussian noise) come from numpy's
  ``Philox`` bit generator, keyed by ``SeedSequence(master_seed,
  spawn_key=(stream_id, substream_id))``;
* scenery values are a pure function of ``(master_seed, replica, site)``,
  computed with a Philox4x32-10 block whose 128-bit counter is the offset
  lattice site plus the replica index.  Nothing is stored, so a site gives
  the same value no matter when or how often it is visited.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba as nb
import numpy as np

WALK = 0
SCENERY = 1
NOISE = 2

COORD_LIMIT = 2**31
GENERATOR_VERSION = "persistmc-rng-1"
GAUSSIAN_METHOD = {
    "streams": "numpy Philox4x64 + ziggurat normal",
    "scenery": "Philox4x32-10 counter hash + 128-layer ziggurat",
}

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    stream_id: int = 0
    substream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id", "substream_id"):
            v = getattr(self, name)
            if not 0 <= int(v) <= _MASK64:
                raise ValueError(f"{name}={v} is not an unsigned 64-bit integer")


def derive_stream(key: StreamKey) -> np.random.Generator:
    """Generator whose output is a pure function of ``key``."""
    ss = np.random.SeedSequence(int(key.master_seed),
                                spawn_key=(int(key.stream_id), int(key.substream_id)))
    return np.random.Generator(np.random.Philox(ss))


def sample_standard_gaussian(state: np.random.Generator) -> float:
    return float(state.standard_normal())


def scenery_key(master_seed: int) -> tuple[int, int]:
    """64-bit Philox4x32 key for the scenery of ``master_seed``."""
    if not 0 <= int(master_seed) <= _MASK64:
        raise ValueError(f"master_seed={master_seed} is not an unsigned 64-bit integer")
    words = np.random.SeedSequence(int(master_seed), spawn_key=(SCENERY,)).generate_state(2, np.uint32)
    return int(words[0]), int(words[1])


# -- Philox4x32-10 ---------------------------------------------------------

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox4x32 rounds; all arguments are uint64 holding 32-bit words."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _LO
        hi1 = p1 >> _S32
        lo1 = p1 & _LO
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + _W0) & _LO
        k1 = (k1 + _W1) & _LO
    return c0, c1, c2, c3


def _ziggurat_tables():
    """128-layer Marsaglia-Tsang tables for a signed 32-bit magnitude word."""
    m1 = 2.0**31
    dn = tn = 3.442619855899
    vn = 9.91256303526217e-3
    kn = np.zeros(128)
    wn = np.zeros(128)
    fn = np.zeros(128)
    q = vn / np.exp(-0.5 * dn * dn)
    kn[0] = (dn / q) * m1
    wn[0] = q / m1
    wn[127] = dn / m1
    fn[0] = 1.0
    fn[127] = np.exp(-0.5 * dn * dn)
    for i in range(126, 0, -1):
        dn = np.sqrt(-2.0 * np.log(vn / dn + np.exp(-0.5 * dn * dn)))
        kn[i + 1] = (dn / tn) * m1
        tn = dn
        fn[i] = np.exp(-0.5 * dn * dn)
        wn[i] = dn / m1
    return kn, wn, fn


_ZKN, _ZWN, _ZFN = _ziggurat_tables()
_ZR = 3.442619855899
_TWO_M32 = 1.0 / 4294967296.0
_SIGN = np.uint64(0x80000000)
_LOW7 = np.uint64(127)


@nb.njit(cache=True, inline="always")
def site_normal(k0, k1, x, y, z, stream):
    """N(0,1) value attached to lattice site (x, y, z) of replica ``stream``.

    Coordinates are int64 with |c| < 2**31; unused axes are passed as 0.
    Ziggurat sampling: word 0 is the signed magnitude, word 1 picks the layer,
    words 2-3 feed the rare wedge/tail tests.  A rejected attempt moves to an
    independent Philox block by perturbing the key with the attempt number.
    """
    off = np.int64(COORD_LIMIT)
    c0 = np.uint64(x + off)
    c1 = np.uint64(y + off)
    c2 = np.uint64(z + off)
    c3 = np.uint64(stream)
    attempt = np.uint64(0)
    while True:
        r0, r1, r2, r3 = philox4x32(c0, c1, c2, c3, k0 ^ attempt, k1)
        hz = np.int64(r0) - np.int64(4294967296) if r0 & _SIGN else np.int64(r0)
        iz = np.int64(r1 & _LOW7)
        if abs(hz) < _ZKN[iz]:
            return hz * _ZWN[iz]
        ua = (np.int64(r2) + 0.5) * _TWO_M32
        ub = (np.int64(r3) + 0.5) * _TWO_M32
        if iz == 0:
            # the tail is sampled to completion; only its uniforms are redrawn
            while True:
                tx = -np.log(ua) / _ZR
                ty = -np.log(ub)
                if ty + ty >= tx * tx:
                    return _ZR + tx if hz > 0 else -_ZR - tx
                attempt += np.uint64(1)
                r0, r1, r2, r3 = philox4x32(c0, c1, c2, c3, k0 ^ attempt, k1)
                ua = (np.int64(r2) + 0.5) * _TWO_M32
                ub = (np.int64(r3) + 0.5) * _TWO_M32
        else:
            v = hz * _ZWN[iz]
            if _ZFN[iz] + ua * (_ZFN[iz - 1] - _ZFN[iz]) < np.exp(-0.5 * v * v):
                return v
        attempt += np.uint64(1)


@nb.njit(cache=True)
def _site_normals(k0, k1, coords, streams, out):
    n, d = coords.shape
    for i in range(n):
        x = coords[i, 0]
        y = coords[i, 1] if d > 1 else 0
        z = coords[i, 2] if d > 2 else 0
        out[i] = site_normal(k0, k1, x, y, z, streams[i])


def _check_coords(coords: np.ndarray) -> None:
    if coords.ndim != 2 or not 1 <= coords.shape[1] <= 3:
        raise ValueError("site coordinates must have shape (n, d) with d in {1, 2, 3}")
    if coords.size and np.abs(coords).max() >= COORD_LIMIT:
        raise OverflowError(f"site coordinate out of range: |x| must be < 2**31")


def site_gaussians(master_seed: int, coords, streams=0) -> np.ndarray:
    """Vectorised scenery lookup: one value per row of ``coords``."""
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords[:, None]
    _check_coords(coords)
    streams = np.broadcast_to(np.asarray(streams, dtype=np.int64), (coords.shape[0],))
    if streams.size and (streams.min() < 0 or streams.max() >= 2**32):
        raise OverflowError("scenery stream index must fit in 32 bits")
    k0, k1 = scenery_key(master_seed)
    out = np.empty(coords.shape[0])
    _site_normals(np.uint64(k0), np.uint64(k1), np.ascontiguousarray(coords),
                  np.ascontiguousarray(streams), out)
    return out


def site_gaussian(master_seed: int, site: Sequence[int], stream: int = 0) -> float:
    """Scenery value xi_x for a single site (a tuple of 1 to 3 integers)."""
    return float(site_gaussians(master_seed, np.asarray(site, dtype=np.int64)[None, :], stream)[0])

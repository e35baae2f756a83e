# -*- coding: utf-8 -*-
"""Baseline JPEG decoding to the DCT coefficient domain.

Frames are entropy decoded and dequantized, but never inverse transformed:
the output is one block of 64 zigzag-ordered coefficients per 8x8 luma block,
plus the chroma DC values covering each luma block.
"""
from dataclasses import dataclass, field
from typing import Any
import logging
import struct

import numba
import numpy as np
import numpy.typing as npt
import scipy as sp

from dctscene.units import BLOCK_SIZE, COEFFS_PER_BLOCK, blocks_for_pixels

# Markers (second byte after 0xFF)
SOI = 0xD8
EOI = 0xD9
SOS = 0xDA
DQT = 0xDB
DHT = 0xC4
DRI = 0xDD
DNL = 0xDC
DAC = 0xCC
SOF_BASELINE = (0xC0, 0xC1)
SOF_PROGRESSIVE = (0xC2, 0xC6, 0xCA, 0xCE)
SOF_OTHER = (0xC3, 0xC5, 0xC7, 0xC9, 0xCB, 0xCD, 0xCF)
RST_FIRST = 0xD0
RST_LAST = 0xD7

# Zigzag index -> row-major index inside the 8x8 block
ZIGZAG_TO_NATURAL = np.array([
    0, 1, 8, 16, 9, 2, 3, 10,
    17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63], dtype=np.int64)

# (h, v) of the luma component when both chroma components are (1, 1)
SUPPORTED_SAMPLING = {(1, 1): "4:4:4", (2, 1): "4:2:2", (2, 2): "4:2:0"}

_SCAN_ERRORS = {
    1: "truncated entropy-coded data",
    2: "invalid Huffman code",
    3: "missing restart marker",
    4: "coefficient index out of range",
}


class JpegDecodeError(ValueError):
    """Raised for malformed or truncated JPEG data."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.message = message
        self.offset = offset


class UnsupportedJpegError(JpegDecodeError):
    """Raised for valid JPEG data that is not baseline sequential Huffman."""


@dataclass(frozen=True)
class CoefficientPlanes:
    """Dequantized DCT coefficients of one frame.

    Attributes
    ----------
    width, height
        Frame size.
        Unit: pixels
    y_coeffs
        Shape (height_blocks, width_blocks, 64), zigzag order, dequantized,
        without level shift.
    cb_dc, cr_dc
        Shape (height_blocks, width_blocks). Chroma DC of the chroma block
        covering each luma block. Zero for grayscale frames.
    """
    width: int
    height: int
    y_coeffs: npt.NDArray[Any]
    cb_dc: npt.NDArray[Any]
    cr_dc: npt.NDArray[Any]
    sampling: str = field(default="4:4:4")

    def __post_init__(self) -> None:
        if self.y_coeffs.ndim != 3 or self.y_coeffs.shape[2] != COEFFS_PER_BLOCK:
            raise ValueError(f"y_coeffs must have shape (rows, cols, 64), got {self.y_coeffs.shape}")
        grid = self.y_coeffs.shape[:2]
        if self.cb_dc.shape != grid or self.cr_dc.shape != grid:
            raise ValueError(f"chroma DC grids {self.cb_dc.shape}/{self.cr_dc.shape} do not match luma grid {grid}")
        for array in (self.y_coeffs, self.cb_dc, self.cr_dc):
            array.flags.writeable = False

    @property
    def width_blocks(self) -> int:
        return int(self.y_coeffs.shape[1])

    @property
    def height_blocks(self) -> int:
        return int(self.y_coeffs.shape[0])

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.height_blocks, self.width_blocks)


@dataclass
class _Component:
    ident: int
    h: int
    v: int
    tq: int
    coeffs: npt.NDArray[np.int32] | None = None


@dataclass
class _FrameState:
    qtables: npt.NDArray[np.int32] = field(default_factory=lambda: np.zeros((4, 64), dtype=np.int32))
    qdefined: list[bool] = field(default_factory=lambda: [False] * 4)
    # index 0: DC tables, 1: AC tables
    maxcode: npt.NDArray[np.int32] = field(default_factory=lambda: np.full((2, 4, 17), -1, dtype=np.int32))
    valptr: npt.NDArray[np.int32] = field(default_factory=lambda: np.zeros((2, 4, 17), dtype=np.int32))
    mincode: npt.NDArray[np.int32] = field(default_factory=lambda: np.zeros((2, 4, 17), dtype=np.int32))
    huffval: npt.NDArray[np.uint8] = field(default_factory=lambda: np.zeros((2, 4, 256), dtype=np.uint8))
    hdefined: npt.NDArray[np.bool_] = field(default_factory=lambda: np.zeros((2, 4), dtype=np.bool_))
    restart_interval: int = 0
    width: int = 0
    height: int = 0
    components: list[_Component] = field(default_factory=list)


@numba.jit(nopython=True, cache=True)
def _next_bit(data: npt.NDArray[np.uint8], st: npt.NDArray[np.int64]) -> int:
    # st = [byte position, bit buffer, bits left in buffer]
    if st[2] == 0:
        p = st[0]
        if p >= data.shape[0]:
            return -1
        b = data[p]
        if b == 0xFF:
            if p + 1 >= data.shape[0] or data[p + 1] != 0:
                return -1
            st[0] = p + 2
        else:
            st[0] = p + 1
        st[1] = b
        st[2] = 8
    st[2] -= 1
    return np.int64((st[1] >> st[2]) & 1)


@numba.jit(nopython=True, cache=True)
def _receive(data: npt.NDArray[np.uint8], st: npt.NDArray[np.int64], n_bits: int) -> int:
    value = 0
    for _ in range(n_bits):
        bit = _next_bit(data, st)
        if bit < 0:
            return -1
        value = (value << 1) | bit
    return np.int64(value)


@numba.jit(nopython=True, cache=True)
def _extend(value: int, n_bits: int) -> int:
    if value < (1 << (n_bits - 1)):
        return value - (1 << n_bits) + 1
    return value


@numba.jit(nopython=True, cache=True)
def _decode_symbol(data, st, maxcode, valptr, mincode, huffval, table):
    code = _next_bit(data, st)
    if code < 0:
        return -1
    length = 1
    while code > maxcode[table, length]:
        bit = _next_bit(data, st)
        if bit < 0:
            return -1
        code = (code << 1) | bit
        length += 1
        if length > 16:
            return -2
    return np.int64(huffval[table, valptr[table, length] + code - mincode[table, length]])


@numba.jit(nopython=True, cache=True)
def _decode_scan(data, start, n_mcus, slot_comp, slot_dc, slot_ac, n_comps, restart_interval,
                 maxcode, valptr, mincode, huffval, out):
    """Entropy decodes one scan into `out` (rows in scan order, zigzag columns).

    Returns (status, byte position); status 0 means success.
    """
    st = np.zeros(3, dtype=np.int64)
    st[0] = start
    pred = np.zeros(n_comps, dtype=np.int64)
    n_slots = slot_comp.shape[0]
    n = data.shape[0]
    for mcu in range(n_mcus):
        if restart_interval > 0 and mcu > 0 and mcu % restart_interval == 0:
            st[2] = 0
            p = st[0]
            while p + 1 < n and data[p] == 0xFF and data[p + 1] == 0xFF:
                p += 1
            if p + 1 >= n or data[p] != 0xFF or data[p + 1] < 0xD0 or data[p + 1] > 0xD7:
                return 3, p
            st[0] = p + 2
            for c in range(n_comps):
                pred[c] = 0
        for s in range(n_slots):
            row = mcu * n_slots + s
            comp = slot_comp[s]
            ssss = _decode_symbol(data, st, maxcode[0], valptr[0], mincode[0], huffval[0], slot_dc[s])
            if ssss < 0:
                return (1 if ssss == -1 else 2), st[0]
            if ssss > 11:
                return 2, st[0]
            if ssss > 0:
                raw = _receive(data, st, ssss)
                if raw < 0:
                    return 1, st[0]
                pred[comp] += _extend(raw, ssss)
            out[row, 0] = pred[comp]
            k = 1
            while k < 64:
                rs = _decode_symbol(data, st, maxcode[1], valptr[1], mincode[1], huffval[1], slot_ac[s])
                if rs < 0:
                    return (1 if rs == -1 else 2), st[0]
                run = rs >> 4
                ssss = rs & 15
                if ssss == 0:
                    if run == 15:
                        k += 16
                        continue
                    break
                k += run
                if k > 63:
                    return 4, st[0]
                raw = _receive(data, st, ssss)
                if raw < 0:
                    return 1, st[0]
                out[row, k] = _extend(raw, ssss)
                k += 1
    return 0, st[0]


def build_huffman_table(counts: bytes, values: bytes, offset: int = 0) -> tuple[
        npt.NDArray[np.int32], npt.NDArray[np.int32], npt.NDArray[np.int32], npt.NDArray[np.uint8]]:
    """Builds the canonical decoding tables of a DHT table definition.

    Parameters
    ----------
    counts
        16 code counts, one per code length 1..16.
    values
        Symbols in order of increasing code length.
    offset
        Byte offset of the table, used for error messages.

    Returns
    -------
    (maxcode, valptr, mincode, huffval)
        Arrays indexed by code length (index 0 unused); maxcode is -1 for
        lengths without codes.
    """
    maxcode = np.full(17, -1, dtype=np.int32)
    valptr = np.zeros(17, dtype=np.int32)
    mincode = np.zeros(17, dtype=np.int32)
    huffval = np.zeros(256, dtype=np.uint8)
    huffval[:len(values)] = np.frombuffer(values, dtype=np.uint8)

    code = 0
    k = 0
    for length in range(1, 17):
        n = counts[length - 1]
        if n:
            valptr[length] = k
            mincode[length] = code
            code += n
            k += n
            maxcode[length] = code - 1
            if code > (1 << length):
                raise JpegDecodeError("over-subscribed Huffman table", offset)
        code <<= 1
    return maxcode, valptr, mincode, huffval


def _read_u16(data: npt.NDArray[np.uint8], pos: int) -> int:
    if pos + 2 > data.shape[0]:
        raise JpegDecodeError("unexpected end of data", pos)
    return (int(data[pos]) << 8) | int(data[pos + 1])


def _read_segment(data: npt.NDArray[np.uint8], pos: int) -> tuple[bytes, int]:
    """Returns (segment body, position after the segment)."""
    length = _read_u16(data, pos)
    if length < 2:
        raise JpegDecodeError(f"invalid segment length {length}", pos)
    end = pos + length
    if end > data.shape[0]:
        raise JpegDecodeError("segment extends past end of data", pos)
    return data[pos + 2:end].tobytes(), end


def _next_marker(data: npt.NDArray[np.uint8], pos: int) -> tuple[int, int]:
    n = data.shape[0]
    if pos >= n:
        raise JpegDecodeError("unexpected end of data, EOI marker missing", pos)
    if data[pos] != 0xFF:
        raise JpegDecodeError(f"expected marker, found byte 0x{int(data[pos]):02X}", pos)
    while pos < n and data[pos] == 0xFF:
        pos += 1
    if pos >= n:
        raise JpegDecodeError("unexpected end of data inside marker", pos)
    return int(data[pos]), pos + 1


def _skip_entropy_data(data: npt.NDArray[np.uint8], pos: int) -> int:
    """Returns the position of the first marker after entropy-coded data."""
    n = data.shape[0]
    while pos + 1 < n:
        if data[pos] == 0xFF:
            follower = data[pos + 1]
            if follower != 0x00 and follower != 0xFF and not (RST_FIRST <= follower <= RST_LAST):
                return pos
        pos += 1
    raise JpegDecodeError("unexpected end of data after scan, EOI marker missing", n)


def _parse_dqt(body: bytes, state: _FrameState, offset: int) -> None:
    i = 0
    while i < len(body):
        pq, tq = body[i] >> 4, body[i] & 15
        i += 1
        if tq > 3 or pq > 1:
            raise JpegDecodeError(f"invalid quantization table spec {pq}/{tq}", offset + i)
        size = 128 if pq else 64
        if i + size > len(body):
            raise JpegDecodeError("truncated quantization table", offset + i)
        fmt = ">64H" if pq else "64B"
        state.qtables[tq] = np.array(struct.unpack(fmt, body[i:i + size]), dtype=np.int32)
        state.qdefined[tq] = True
        i += size


def _parse_dht(body: bytes, state: _FrameState, offset: int) -> None:
    i = 0
    while i < len(body):
        tc, th = body[i] >> 4, body[i] & 15
        if tc > 1 or th > 3:
            raise JpegDecodeError(f"invalid Huffman table spec {tc}/{th}", offset + i)
        counts = body[i + 1:i + 17]
        if len(counts) < 16:
            raise JpegDecodeError("truncated Huffman table", offset + i)
        n_values = sum(counts)
        values = body[i + 17:i + 17 + n_values]
        if len(values) < n_values or n_values > 256:
            raise JpegDecodeError("truncated Huffman table", offset + i)
        tables = build_huffman_table(counts, values, offset + i)
        state.maxcode[tc, th], state.valptr[tc, th], state.mincode[tc, th], state.huffval[tc, th] = tables
        state.hdefined[tc, th] = True
        i += 17 + n_values


def _parse_sof(body: bytes, state: _FrameState, offset: int) -> None:
    if state.components:
        raise JpegDecodeError("more than one frame header", offset)
    if len(body) < 6:
        raise JpegDecodeError("truncated frame header", offset)
    precision, height, width, nf = struct.unpack(">BHHB", body[:6])
    if precision != 8:
        raise UnsupportedJpegError(f"{precision}-bit sample precision is not supported", offset)
    if height == 0:
        raise UnsupportedJpegError("DNL-defined frame height is not supported", offset)
    if width == 0:
        raise JpegDecodeError("zero frame width", offset)
    if nf not in (1, 3):
        raise UnsupportedJpegError(f"{nf}-component frames are not supported", offset)
    if len(body) < 6 + 3 * nf:
        raise JpegDecodeError("truncated frame header", offset)
    for c in range(nf):
        ident, hv, tq = body[6 + 3 * c:9 + 3 * c]
        h, v = hv >> 4, hv & 15
        if not (1 <= h <= 4 and 1 <= v <= 4) or tq > 3:
            raise JpegDecodeError(f"invalid component specification for component {ident}", offset)
        state.components.append(_Component(ident, h, v, tq))
    if nf == 1:
        state.components[0].h = state.components[0].v = 1
    else:
        y, cb, cr = state.components
        if (cb.h, cb.v, cr.h, cr.v) != (1, 1, 1, 1) or (y.h, y.v) not in SUPPORTED_SAMPLING:
            raise UnsupportedJpegError(
                f"chroma subsampling {y.h}x{y.v},{cb.h}x{cb.v},{cr.h}x{cr.v} is not supported", offset)
    state.width, state.height = width, height


def _component_grid(state: _FrameState, comp: _Component) -> tuple[int, int]:
    hmax = max(c.h for c in state.components)
    vmax = max(c.v for c in state.components)
    comp_width = -(-state.width * comp.h // hmax)
    comp_height = -(-state.height * comp.v // vmax)
    return blocks_for_pixels(comp_height), blocks_for_pixels(comp_width)


def _parse_sos(data: npt.NDArray[np.uint8], body: bytes, state: _FrameState, offset: int, start: int) -> int:
    if not state.components:
        raise JpegDecodeError("scan before frame header", offset)
    ns = body[0] if body else 0
    if ns < 1 or ns > 4 or len(body) < 4 + 2 * ns:
        raise JpegDecodeError("invalid scan header", offset)
    by_ident = {c.ident: i for i, c in enumerate(state.components)}
    scan = []
    for j in range(ns):
        cs, tables = body[1 + 2 * j], body[2 + 2 * j]
        if cs not in by_ident:
            raise JpegDecodeError(f"scan references unknown component {cs}", offset)
        td, ta = tables >> 4, tables & 15
        if td > 3 or ta > 3 or not state.hdefined[0, td] or not state.hdefined[1, ta]:
            raise JpegDecodeError(f"scan references undefined Huffman table {td}/{ta}", offset)
        scan.append((by_ident[cs], td, ta))
    ss, se, ahal = body[1 + 2 * ns:4 + 2 * ns]
    if ss != 0 or se != 63 or ahal != 0:
        raise UnsupportedJpegError("spectral selection or successive approximation is not supported", offset)

    if ns == 1:
        comp_index, td, ta = scan[0]
        rows, cols = _component_grid(state, state.components[comp_index])
        n_mcus, layout = rows * cols, [(comp_index, 1, 1)]
        slot_comp, slot_dc, slot_ac = [0], [td], [ta]
    else:
        hmax = max(c.h for c in state.components)
        vmax = max(c.v for c in state.components)
        mcu_cols = -(-state.width // (BLOCK_SIZE * hmax))
        mcu_rows = -(-state.height // (BLOCK_SIZE * vmax))
        n_mcus, layout = mcu_rows * mcu_cols, []
        slot_comp, slot_dc, slot_ac = [], [], []
        for j, (comp_index, td, ta) in enumerate(scan):
            comp = state.components[comp_index]
            layout.append((comp_index, comp.h, comp.v))
            slot_comp += [j] * (comp.h * comp.v)
            slot_dc += [td] * (comp.h * comp.v)
            slot_ac += [ta] * (comp.h * comp.v)

    n_slots = len(slot_comp)
    out = np.zeros((n_mcus * n_slots, COEFFS_PER_BLOCK), dtype=np.int32)
    status, end = _decode_scan(
        data, start, n_mcus,
        np.array(slot_comp, dtype=np.int64), np.array(slot_dc, dtype=np.int64), np.array(slot_ac, dtype=np.int64),
        len(scan), state.restart_interval,
        state.maxcode, state.valptr, state.mincode, state.huffval, out)
    if status != 0:
        raise JpegDecodeError(_SCAN_ERRORS[int(status)], int(end))

    if ns == 1:
        comp_index = layout[0][0]
        rows, cols = _component_grid(state, state.components[comp_index])
        grids = {comp_index: out.reshape(rows, cols, COEFFS_PER_BLOCK)}
    else:
        per_mcu = out.reshape(mcu_rows, mcu_cols, n_slots, COEFFS_PER_BLOCK)
        grids, first = {}, 0
        for comp_index, h, v in layout:
            part = per_mcu[:, :, first:first + h * v, :].reshape(mcu_rows, mcu_cols, v, h, COEFFS_PER_BLOCK)
            grids[comp_index] = part.transpose(0, 2, 1, 3, 4).reshape(mcu_rows * v, mcu_cols * h, COEFFS_PER_BLOCK)
            first += h * v

    for comp_index, grid in grids.items():
        comp = state.components[comp_index]
        if not state.qdefined[comp.tq]:
            raise JpegDecodeError(f"component {comp.ident} uses undefined quantization table {comp.tq}", offset)
        rows, cols = _component_grid(state, comp)
        comp.coeffs = grid[:rows, :cols] * state.qtables[comp.tq]
    return _skip_entropy_data(data, int(end))


def _replicate_dc(dc: npt.NDArray[np.int32], factor_rows: int, factor_cols: int, shape: tuple[int, int]):
    wide = np.repeat(np.repeat(dc, factor_rows, axis=0), factor_cols, axis=1)
    return np.ascontiguousarray(wide[:shape[0], :shape[1]])


def decode_jpeg_dct(jpeg_bytes: bytes | bytearray | memoryview) -> CoefficientPlanes:
    """Decodes a baseline JPEG frame to dequantized DCT coefficients.

    No inverse DCT and no level shift are applied.

    Parameters
    ----------
    jpeg_bytes
        One complete JPEG image, SOI to EOI.

    Returns
    -------
    The coefficient planes of the frame.

    Raises
    ------
    JpegDecodeError
        Malformed or truncated data; `offset` holds the byte position.
    UnsupportedJpegError
        Progressive, lossless, arithmetic-coded, 12-bit or unsupported
        subsampling.
    """
    data = np.frombuffer(bytes(jpeg_bytes), dtype=np.uint8)
    if data.shape[0] < 4 or data[0] != 0xFF or data[1] != SOI:
        raise JpegDecodeError("missing SOI marker", 0)

    state = _FrameState()
    pos = 2
    while True:
        marker_offset = pos
        marker, pos = _next_marker(data, pos)
        if marker == EOI:
            break
        if RST_FIRST <= marker <= RST_LAST or marker == SOI:
            raise JpegDecodeError(f"unexpected marker 0xFF{marker:02X}", marker_offset)
        if marker in SOF_PROGRESSIVE:
            raise UnsupportedJpegError("progressive JPEG is not supported", marker_offset)
        if marker in SOF_OTHER or marker == DAC:
            raise UnsupportedJpegError(f"JPEG process 0xFF{marker:02X} is not supported", marker_offset)
        body, end = _read_segment(data, pos)
        if marker in SOF_BASELINE:
            _parse_sof(body, state, marker_offset)
        elif marker == DQT:
            _parse_dqt(body, state, pos + 2)
        elif marker == DHT:
            _parse_dht(body, state, pos + 2)
        elif marker == DRI:
            if len(body) < 2:
                raise JpegDecodeError("truncated restart interval", pos)
            state.restart_interval = struct.unpack(">H", body[:2])[0]
        elif marker == SOS:
            end = _parse_sos(data, body, state, marker_offset, end)
        elif marker == DNL:
            raise UnsupportedJpegError("DNL marker is not supported", marker_offset)
        pos = end

    if not state.components:
        raise JpegDecodeError("no frame header before EOI", pos)
    for comp in state.components:
        if comp.coeffs is None:
            raise JpegDecodeError(f"no scan data for component {comp.ident}", pos)

    luma = state.components[0]
    assert luma.coeffs is not None
    y_coeffs = np.ascontiguousarray(luma.coeffs, dtype=np.int32)
    grid = y_coeffs.shape[:2]
    if len(state.components) == 3:
        cb, cr = state.components[1], state.components[2]
        assert cb.coeffs is not None and cr.coeffs is not None
        cb_dc = _replicate_dc(cb.coeffs[:, :, 0], luma.v // cb.v, luma.h // cb.h, grid)
        cr_dc = _replicate_dc(cr.coeffs[:, :, 0], luma.v // cr.v, luma.h // cr.h, grid)
        sampling = SUPPORTED_SAMPLING[(luma.h, luma.v)]
    else:
        cb_dc = np.zeros(grid, dtype=np.int32)
        cr_dc = np.zeros(grid, dtype=np.int32)
        sampling = "gray"
    logging.debug(f"Decoded {state.width}x{state.height} {sampling} frame into {grid[1]}x{grid[0]} blocks.")
    return CoefficientPlanes(state.width, state.height, y_coeffs, cb_dc, cr_dc, sampling)


def idct_blocks(coeffs: npt.NDArray[Any]) -> npt.NDArray[np.float64]:
    """Inverse transforms zigzag-ordered coefficient blocks and level shifts them.

    Parameters
    ----------
    coeffs
        Shape (..., 64), zigzag order, dequantized.

    Returns
    -------
    Sample values, shape (..., 8, 8), not rounded or clamped.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    natural = np.zeros_like(coeffs)
    natural[..., ZIGZAG_TO_NATURAL] = coeffs
    natural = natural.reshape(coeffs.shape[:-1] + (BLOCK_SIZE, BLOCK_SIZE))
    return sp.fft.idctn(natural, axes=(-2, -1), norm="ortho") + 128.0


def luma_from_planes(planes: CoefficientPlanes) -> npt.NDArray[np.uint8]:
    """Reconstructs the luma image of `planes`, cropped to the frame size."""
    blocks = idct_blocks(planes.y_coeffs)
    rows, cols = planes.grid_shape
    image = blocks.transpose(0, 2, 1, 3).reshape(rows * BLOCK_SIZE, cols * BLOCK_SIZE)
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)[:planes.height, :planes.width]

# -*- coding: utf-8 -*-
"""Motion-JPEG framing.

Splits concatenated JPEG streams, frame directories and HTTP multipart
streams into single JPEG frames. No decoding happens here.
"""
from pathlib import Path
from typing import Iterator, Optional
import logging
import re

SOI_BYTES = b"\xff\xd8"
_EOI = 0xD9
_SOS = 0xDA
_RST_FIRST = 0xD0
_RST_LAST = 0xD7
_FILE_CHUNK = 1 << 20
_HTTP_CHUNK = 1 << 14
_MAX_BUFFER = 64 << 20
_JPEG_SUFFIXES = (".jpg", ".jpeg", ".jpe", ".jfif")


def find_frame_end(data: bytes | bytearray, start: int) -> int:
    """Returns the index just past the EOI of the frame whose SOI is at `start`.

    The marker segments are walked by their lengths and entropy-coded data is
    skipped, so EOI bytes inside embedded thumbnails do not end the frame.

    Returns
    -------
    End index, or -1 if the data ends before the frame is complete.
    """
    n = len(data)
    pos = start + 2
    while pos + 1 < n:
        if data[pos] != 0xFF:
            pos = data.find(b"\xff", pos)
            if pos < 0:
                return -1
            continue
        marker = data[pos + 1]
        if marker == 0xFF:
            pos += 1
        elif marker == _EOI:
            return pos + 2
        elif _RST_FIRST <= marker <= _RST_LAST or marker == 0x01 or marker == 0x00:
            pos += 2
        else:
            if pos + 3 >= n:
                return -1
            pos += 2 + ((data[pos + 2] << 8) | data[pos + 3])
            if marker == _SOS:
                pos = _skip_entropy_coded(data, pos)
                if pos < 0:
                    return -1
    return -1


def _skip_entropy_coded(data: bytes | bytearray, pos: int) -> int:
    n = len(data)
    while True:
        pos = data.find(b"\xff", pos)
        if pos < 0 or pos + 1 >= n:
            return -1
        follower = data[pos + 1]
        if follower == 0x00 or _RST_FIRST <= follower <= _RST_LAST:
            pos += 2
        elif follower == 0xFF:
            pos += 1
        else:
            return pos


def frame_ranges(data: bytes | bytearray) -> Iterator[tuple[int, int]]:
    """Yields (start, end) byte ranges of the complete frames in `data`."""
    pos = 0
    while True:
        start = data.find(SOI_BYTES, pos)
        if start < 0:
            return
        end = find_frame_end(data, start)
        if end < 0:
            return
        yield start, end
        pos = end


class ConcatenatedSplitter:
    """Incremental splitter for back-to-back JPEG frames (SOI ... EOI).

    Bytes between frames, such as multipart headers, are skipped.
    """

    def __init__(self) -> None:
        self.buffer = bytearray()

    def feed(self, chunk: bytes) -> list[bytes]:
        self.buffer += chunk
        frames = []
        consumed = 0
        for start, end in frame_ranges(self.buffer):
            frames.append(bytes(self.buffer[start:end]))
            consumed = end
        del self.buffer[:consumed]
        start = self.buffer.find(SOI_BYTES)
        if start < 0:
            # keep a trailing 0xFF which may start the next SOI
            del self.buffer[:max(0, len(self.buffer) - 1)]
        elif start > 0:
            del self.buffer[:start]
        if len(self.buffer) > _MAX_BUFFER:
            logging.warning(f"Dropping {len(self.buffer)} bytes without a complete JPEG frame.")
            self.buffer.clear()
        return frames


class MultipartSplitter:
    """Incremental splitter for `multipart/x-mixed-replace` bodies.

    Parts are delimited by the boundary string; a `Content-Length` header is
    honoured when present. The JPEG frame is then located inside each part.
    """

    def __init__(self, boundary: str):
        boundary = boundary.strip().strip('"')
        self.delimiter = boundary.encode("latin-1") if boundary.startswith("--") else b"--" + boundary.encode("latin-1")
        self.buffer = bytearray()

    def _next_part(self) -> Optional[bytes]:
        start = self.buffer.find(self.delimiter)
        if start < 0:
            return None
        header_end = self.buffer.find(b"\r\n\r\n", start)
        if header_end < 0:
            return None
        headers = bytes(self.buffer[start + len(self.delimiter):header_end]).decode("latin-1", "replace")
        body_start = header_end + 4
        length = re.search(r"content-length:\s*(\d+)", headers, re.IGNORECASE)
        if length is not None:
            body_end = body_start + int(length.group(1))
            if body_end > len(self.buffer):
                return None
            next_start = body_end
        else:
            body_end = self.buffer.find(self.delimiter, body_start)
            if body_end < 0:
                return None
            next_start = body_end
        part = bytes(self.buffer[body_start:body_end])
        del self.buffer[:next_start]
        return part

    def feed(self, chunk: bytes) -> list[bytes]:
        self.buffer += chunk
        frames = []
        while (part := self._next_part()) is not None:
            ranges = list(frame_ranges(part))
            if not ranges:
                logging.warning(f"Multipart section of {len(part)} bytes holds no complete JPEG frame.")
                continue
            start, end = ranges[0]
            frames.append(part[start:end])
        return frames


def multipart_boundary(content_type: str) -> Optional[str]:
    """Returns the boundary parameter of a multipart content type, if any."""
    if not content_type.lower().startswith("multipart/"):
        return None
    match = re.search(r'boundary="?([^";]+)"?', content_type, re.IGNORECASE)
    return match.group(1) if match else None


def _iter_http(url: str, timeout: float) -> Iterator[bytes]:
    import requests

    with requests.get(url, stream=True, timeout=timeout) as response:
        response.raise_for_status()
        boundary = multipart_boundary(response.headers.get("Content-Type", ""))
        splitter: ConcatenatedSplitter | MultipartSplitter
        splitter = MultipartSplitter(boundary) if boundary else ConcatenatedSplitter()
        logging.info(f"Streaming {url} ({'multipart' if boundary else 'concatenated'} framing).")
        for chunk in response.iter_content(chunk_size=_HTTP_CHUNK):
            if chunk:
                yield from splitter.feed(chunk)


def _iter_file(path: Path) -> Iterator[bytes]:
    splitter = ConcatenatedSplitter()
    with open(path, "rb") as stream:
        while chunk := stream.read(_FILE_CHUNK):
            yield from splitter.feed(chunk)
    if splitter.buffer.find(SOI_BYTES) >= 0:
        logging.warning(f"Ignoring incomplete trailing frame of {len(splitter.buffer)} bytes in {path}.")
        # the incomplete frame is still handed out so the decoder reports it
        yield bytes(splitter.buffer)


def iter_mjpeg_frames(source: str | Path, *, timeout: float = 10.0) -> Iterator[bytes]:
    """Yields the JPEG frames of `source`, in stream order.

    Parameters
    ----------
    source
        A JPEG or concatenated MJPEG file, a directory of JPEG files (sorted
        by name) or an http(s) URL.
    timeout
        Network timeout for URLs.
        Unit: seconds
    """
    text = str(source)
    if text.startswith(("http://", "https://")):
        yield from _iter_http(text, timeout)
        return
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"Input not found: {path}")
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in _JPEG_SUFFIXES)
        logging.info(f"Reading {len(files)} frame files from {path}.")
        for file in files:
            yield file.read_bytes()
    else:
        yield from _iter_file(path)

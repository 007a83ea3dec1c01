"""PDF document model: cross-reference parsing, object access, filters, pages.

Supports the file-structure subset needed for figure extraction from
research PDFs: classic xref tables, cross-reference streams, object
streams, Flate/ASCII85/ASCIIHex filters with PNG predictors, and DCT
(JPEG) passthrough. Encrypted files are rejected.
"""

from __future__ import annotations

import base64
import io
import re
import zlib
from typing import Any, BinaryIO, Iterator

from .objects import Lexer, PdfError, PdfName, PdfRef, PdfStream

_OBJ_HEADER_RE = re.compile(rb"(\d+)\s+(\d+)\s+obj\b")


# ---------------------------------------------------------------------------
# stream filters


def _apply_png_predictor(data: bytes, colors: int, bpc: int, columns: int) -> bytes:
    bpp = max(1, (colors * bpc + 7) // 8)
    rowlen = (colors * bpc * columns + 7) // 8
    out = bytearray()
    prev = bytearray(rowlen)
    pos = 0
    while pos < len(data):
        ftype = data[pos]
        row = bytearray(data[pos + 1 : pos + 1 + rowlen])
        pos += 1 + rowlen
        if ftype == 1:  # Sub
            for i in range(bpp, len(row)):
                row[i] = (row[i] + row[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            for i in range(len(row)):
                row[i] = (row[i] + prev[i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(len(row)):
                left = row[i - bpp] if i >= bpp else 0
                row[i] = (row[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(len(row)):
                a = row[i - bpp] if i >= bpp else 0
                b = prev[i]
                c = prev[i - bpp] if i >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                if pa <= pb and pa <= pc:
                    pred = a
                elif pb <= pc:
                    pred = b
                else:
                    pred = c
                row[i] = (row[i] + pred) & 0xFF
        elif ftype != 0:
            raise PdfError(f"unknown PNG predictor row filter {ftype}")
        out.extend(row)
        prev = row
    return bytes(out)


def _apply_predictor(data: bytes, parms: dict) -> bytes:
    predictor = parms.get("Predictor", 1)
    if predictor in (None, 1):
        return data
    colors = parms.get("Colors", 1)
    bpc = parms.get("BitsPerComponent", 8)
    columns = parms.get("Columns", 1)
    if predictor == 2:  # TIFF horizontal differencing, 8-bit only
        if bpc != 8:
            raise PdfError("TIFF predictor supported for 8-bit samples only")
        rowlen = colors * columns
        out = bytearray(data)
        for r in range(0, len(out) - rowlen + 1, rowlen):
            for i in range(colors, rowlen):
                out[r + i] = (out[r + i] + out[r + i - colors]) & 0xFF
        return bytes(out)
    if predictor >= 10:
        return _apply_png_predictor(data, colors, bpc, columns)
    raise PdfError(f"unsupported predictor {predictor}")


def _decode_ascii85(data: bytes) -> bytes:
    data = data.strip()
    if data.endswith(b"~>"):
        data = data[:-2]
    return base64.a85decode(data, ignorechars=b" \t\n\r\x0c\x00")


def _decode_asciihex(data: bytes) -> bytes:
    data = data.split(b">", 1)[0]
    digits = re.sub(rb"[^0-9A-Fa-f]", b"", data)
    if len(digits) % 2:
        digits += b"0"
    return bytes.fromhex(digits.decode("ascii"))


# filters whose output is not sample data but a compressed image payload
PASSTHROUGH_FILTERS = {"DCTDecode", "DCT", "JPXDecode"}


class PdfDocument:
    """Random-access reader over a parsed PDF byte buffer."""

    def __init__(self, data: bytes):
        if not data.startswith(b"%PDF-"):
            raise PdfError("missing %PDF header")
        self.data = data
        # objnum -> file offset, or ("objstm", container_num, index)
        self._offsets: dict[int, Any] = {}
        self.trailer: dict[str, Any] = {}
        self._cache: dict[int, Any] = {}
        self._objstm_cache: dict[int, dict[int, Any]] = {}
        try:
            self._load_xref()
        except PdfError:
            self._offsets.clear()
        if not self._offsets or "Root" not in self.trailer:
            self._rebuild_by_scan()
        if "Encrypt" in self.trailer:
            raise PdfError("encrypted PDFs are not supported")
        if "Root" not in self.trailer:
            raise PdfError("document catalog not found")

    @classmethod
    def open(cls, source: str | bytes | BinaryIO) -> "PdfDocument":
        if isinstance(source, bytes):
            return cls(source)
        if hasattr(source, "read"):
            return cls(source.read())  # type: ignore[union-attr]
        with open(source, "rb") as fh:
            return cls(fh.read())

    # -- xref loading ------------------------------------------------------

    def _load_xref(self) -> None:
        tail = self.data[-2048:]
        m = None
        for m in re.finditer(rb"startxref\s+(\d+)", tail):
            pass
        if m is None:
            raise PdfError("startxref not found")
        offset = int(m.group(1))
        seen: set[int] = set()
        while offset and offset not in seen:
            seen.add(offset)
            trailer = self._load_xref_section(offset)
            for key, value in trailer.items():
                self.trailer.setdefault(key, value)
            prev = trailer.get("Prev")
            offset = prev if isinstance(prev, int) else 0

    def _load_xref_section(self, offset: int) -> dict:
        lex = Lexer(self.data, offset)
        lex.skip_whitespace()
        if self.data[lex.pos : lex.pos + 4] == b"xref":
            return self._load_xref_table(lex)
        num, _gen, obj = lex.parse_indirect_object(self._resolve_length)
        if not isinstance(obj, PdfStream):
            raise PdfError(f"expected xref stream at offset {offset}")
        self._load_xref_stream(obj)
        return dict(obj.dict)

    def _load_xref_table(self, lex: Lexer) -> dict:
        lex.pos += 4  # 'xref'
        while True:
            lex.skip_whitespace()
            if self.data[lex.pos : lex.pos + 7] == b"trailer":
                lex.pos += 7
                trailer = lex.parse_object()
                if not isinstance(trailer, dict):
                    raise PdfError("malformed trailer")
                # hybrid files keep extra entries in an xref stream
                xstm = trailer.get("XRefStm")
                if isinstance(xstm, int):
                    try:
                        self._load_xref_section(xstm)
                    except PdfError:
                        pass
                return trailer
            start = lex.parse_object()
            count = lex.parse_object()
            if not isinstance(start, int) or not isinstance(count, int):
                raise PdfError("malformed xref subsection header")
            lex.skip_whitespace()
            for i in range(count):
                entry = self.data[lex.pos : lex.pos + 20]
                m = re.match(rb"(\d{10})\s+(\d{5})\s+([nf])", entry)
                if not m:
                    raise PdfError(f"malformed xref entry at {lex.pos}")
                if m.group(3) == b"n":
                    self._offsets.setdefault(start + i, int(m.group(1)))
                lex.pos += m.end()
                lex.skip_whitespace()

    def _load_xref_stream(self, stream: PdfStream) -> None:
        data = self.decode_stream(stream)
        w = [int(x) for x in stream.dict.get("W", [])]
        if len(w) < 3:
            raise PdfError("xref stream missing /W")
        size = stream.dict.get("Size", 0)
        index = stream.dict.get("Index", [0, size])
        entry_len = sum(w)
        pos = 0

        def field(buf: bytes, width: int, default: int) -> int:
            if width == 0:
                return default
            return int.from_bytes(buf[:width], "big")

        for i in range(0, len(index) - 1, 2):
            start, count = int(index[i]), int(index[i + 1])
            for objnum in range(start, start + count):
                if pos + entry_len > len(data):
                    return
                raw = data[pos : pos + entry_len]
                pos += entry_len
                ftype = field(raw, w[0], 1)
                f2 = field(raw[w[0] :], w[1], 0)
                f3 = field(raw[w[0] + w[1] :], w[2], 0)
                if ftype == 1:
                    self._offsets.setdefault(objnum, f2)
                elif ftype == 2:
                    self._offsets.setdefault(objnum, ("objstm", f2, f3))

    def _rebuild_by_scan(self) -> None:
        """Recover object offsets by scanning for 'N G obj' headers."""
        for m in _OBJ_HEADER_RE.finditer(self.data):
            # keep the last occurrence: later bodies supersede earlier ones
            self._offsets[int(m.group(1))] = m.start()
        if "Root" not in self.trailer:
            tpos = self.data.rfind(b"trailer")
            if tpos >= 0:
                try:
                    lex = Lexer(self.data, tpos + 7)
                    trailer = lex.parse_object()
                    if isinstance(trailer, dict):
                        for key, value in trailer.items():
                            self.trailer.setdefault(key, value)
                except PdfError:
                    pass
        if "Root" not in self.trailer:
            for num in sorted(self._offsets):
                try:
                    obj = self.get_object(num)
                except PdfError:
                    continue
                if isinstance(obj, dict) and obj.get("Type") == "Catalog":
                    self.trailer["Root"] = PdfRef(num, 0)
                    break

    # -- object access -----------------------------------------------------

    def _resolve_length(self, ref: Any) -> int | None:
        if isinstance(ref, PdfRef):
            try:
                value = self.get_object(ref.num)
            except PdfError:
                return None
            return value if isinstance(value, int) else None
        return ref if isinstance(ref, int) else None

    def get_object(self, num: int) -> Any:
        if num in self._cache:
            return self._cache[num]
        loc = self._offsets.get(num)
        if loc is None:
            return None
        if isinstance(loc, tuple):
            obj = self._get_from_object_stream(loc[1], num)
        else:
            lex = Lexer(self.data, loc)
            got_num, _gen, obj = lex.parse_indirect_object(self._resolve_length)
            if got_num != num:
                raise PdfError(f"xref points object {num} at object {got_num}")
        self._cache[num] = obj
        return obj

    def _get_from_object_stream(self, container: int, num: int) -> Any:
        if container not in self._objstm_cache:
            stream = self.get_object(container)
            if not isinstance(stream, PdfStream):
                raise PdfError(f"object stream {container} missing")
            data = self.decode_stream(stream)
            count = self.resolve(stream.dict.get("N", 0))
            first = self.resolve(stream.dict.get("First", 0))
            header = Lexer(data)
            pairs = []
            for _ in range(count):
                onum = header.parse_object()
                ooff = header.parse_object()
                pairs.append((onum, ooff))
            table = {}
            for onum, ooff in pairs:
                table[onum] = Lexer(data, first + ooff).parse_object()
            self._objstm_cache[container] = table
        return self._objstm_cache[container].get(num)

    def resolve(self, obj: Any) -> Any:
        while isinstance(obj, PdfRef):
            obj = self.get_object(obj.num)
        return obj

    def dget(self, d: dict, key: str, default: Any = None) -> Any:
        value = self.resolve(d.get(key, default))
        return default if value is None else value

    # -- stream decoding ---------------------------------------------------

    def stream_filters(self, stream: PdfStream) -> list[tuple[str, dict]]:
        filters = self.resolve(stream.dict.get("Filter"))
        if filters is None:
            filters = []
        elif isinstance(filters, PdfName):
            filters = [filters]
        parms = self.resolve(stream.dict.get("DecodeParms"))
        if parms is None:
            parms = [{}] * len(filters)
        elif isinstance(parms, dict):
            parms = [parms]
        parms = [self.resolve(p) or {} for p in parms]
        while len(parms) < len(filters):
            parms.append({})
        return [(str(f), {k: self.resolve(v) for k, v in p.items()}) for f, p in zip(filters, parms)]

    def decode_stream(self, stream: PdfStream, stop_at_passthrough: bool = False) -> bytes:
        """Run the filter chain. With ``stop_at_passthrough`` the data is
        returned as-is once a DCT/JPX filter is reached (it is then a
        complete JPEG/JPEG2000 payload, not raw samples)."""
        data = stream.raw
        for name, parms in self.stream_filters(stream):
            if name in ("FlateDecode", "Fl"):
                try:
                    data = zlib.decompress(data)
                except zlib.error as exc:
                    raise PdfError(f"flate decode failed: {exc}") from exc
                data = _apply_predictor(data, parms)
            elif name in ("ASCII85Decode", "A85"):
                try:
                    data = _decode_ascii85(data)
                except ValueError as exc:
                    raise PdfError(f"ascii85 decode failed: {exc}") from exc
            elif name in ("ASCIIHexDecode", "AHx"):
                data = _decode_asciihex(data)
            elif name in PASSTHROUGH_FILTERS:
                if stop_at_passthrough:
                    return data
                raise PdfError(f"filter {name} yields compressed image data")
            else:
                raise PdfError(f"unsupported stream filter {name}")
        return data

    def final_filter(self, stream: PdfStream) -> str | None:
        filters = self.stream_filters(stream)
        return filters[-1][0] if filters else None

    # -- page tree ---------------------------------------------------------

    def catalog(self) -> dict:
        root = self.resolve(self.trailer.get("Root"))
        if not isinstance(root, dict):
            raise PdfError("document catalog not found")
        return root

    def pages(self) -> list["PdfPage"]:
        return list(self.iter_pages())

    def iter_pages(self) -> Iterator["PdfPage"]:
        root = self.resolve(self.catalog().get("Pages"))
        if not isinstance(root, dict):
            raise PdfError("page tree root not found")
        inheritable = ("Resources", "MediaBox", "CropBox", "Rotate")
        stack: list[tuple[dict, dict]] = [(root, {})]
        index = 0
        seen: set[int] = set()
        while stack:
            node, inherited = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            merged = dict(inherited)
            for key in inheritable:
                if key in node:
                    merged[key] = node[key]
            if self.dget(node, "Type") == "Page" or "Contents" in node and "Kids" not in node:
                yield PdfPage(self, node, merged, index)
                index += 1
            else:
                kids = self.dget(node, "Kids", [])
                for kid in reversed([self.resolve(k) for k in kids]):
                    if isinstance(kid, dict):
                        stack.append((kid, merged))


class PdfPage:
    """A page leaf plus its inherited attributes."""

    def __init__(self, doc: PdfDocument, node: dict, inherited: dict, index: int):
        self.doc = doc
        self.node = node
        self.inherited = inherited
        self.index = index

    @property
    def mediabox(self) -> tuple[float, float, float, float]:
        box = self.doc.resolve(self.inherited.get("MediaBox", [0, 0, 612, 792]))
        vals = [float(self.doc.resolve(v)) for v in box]
        x0, y0, x1, y1 = vals
        return (min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))

    @property
    def width(self) -> float:
        b = self.mediabox
        return b[2] - b[0]

    @property
    def height(self) -> float:
        b = self.mediabox
        return b[3] - b[1]

    @property
    def resources(self) -> dict:
        res = self.doc.resolve(self.inherited.get("Resources", {}))
        return res if isinstance(res, dict) else {}

    def content_bytes(self) -> bytes:
        contents = self.doc.resolve(self.node.get("Contents"))
        if contents is None:
            return b""
        if isinstance(contents, PdfStream):
            streams = [contents]
        else:
            streams = [self.doc.resolve(c) for c in contents]
        parts = []
        for stream in streams:
            if isinstance(stream, PdfStream):
                parts.append(self.doc.decode_stream(stream))
        return b"\n".join(parts)

    def xobjects(self) -> dict[str, PdfStream]:
        xdict = self.doc.dget(self.resources, "XObject", {})
        out = {}
        for name, ref in xdict.items():
            obj = self.doc.resolve(ref)
            if isinstance(obj, PdfStream):
                out[str(name)] = obj
        return out


def open_pdf(source: str | bytes | BinaryIO) -> PdfDocument:
    """Convenience wrapper mirroring :meth:`PdfDocument.open`."""
    return PdfDocument.open(source)

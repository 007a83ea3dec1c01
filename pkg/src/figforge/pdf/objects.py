"""Low-level PDF object lexer and parser.

Parses the COS object layer of a PDF file: numbers, names, strings,
arrays, dictionaries, indirect references and streams. Byte-oriented;
strings are kept as ``bytes`` and only decoded to text by callers that
know the encoding context. Comments are skipped everywhere.
"""

from __future__ import annotations

import re
from typing import Any, Callable, NamedTuple


class PdfError(Exception):
    """Raised when the input cannot be parsed as the PDF subset we support."""


class PdfName(str):
    """A PDF name object (``/Foo``), distinct from a string literal."""

    __slots__ = ()

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"/{str.__str__(self)}"


class PdfRef(NamedTuple):
    num: int
    gen: int


class PdfStream:
    """A stream object: its dictionary plus the raw (still encoded) bytes."""

    def __init__(self, dictionary: dict, raw: bytes):
        self.dict = dictionary
        self.raw = raw

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"<PdfStream {len(self.raw)} raw bytes {self.dict!r}>"


WHITESPACE = b"\x00\t\n\x0c\r "
DELIMITERS = b"()<>[]{}/%"

_NUMBER_RE = re.compile(rb"[+-]?(?:\d+\.?\d*|\.\d+)")
_REF_AHEAD_RE = re.compile(rb"\s+(\d+)\s+R(?![A-Za-z0-9])")


def _is_regular(ch: int) -> bool:
    return ch not in WHITESPACE and ch not in DELIMITERS


class Lexer:
    """Cursor over a PDF byte buffer with object-level parsing."""

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    # -- character-level helpers ------------------------------------------

    def skip_whitespace(self) -> None:
        data, n = self.data, len(self.data)
        while self.pos < n:
            ch = data[self.pos]
            if ch in WHITESPACE:
                self.pos += 1
            elif ch == 0x25:  # '%' comment to end of line
                while self.pos < n and data[self.pos] not in b"\r\n":
                    self.pos += 1
            else:
                return

    def peek(self) -> int:
        if self.pos >= len(self.data):
            raise PdfError("unexpected end of data")
        return self.data[self.pos]

    def read_keyword(self) -> bytes:
        start = self.pos
        while self.pos < len(self.data) and _is_regular(self.data[self.pos]):
            self.pos += 1
        if self.pos == start:
            raise PdfError(f"expected keyword at offset {start}")
        return self.data[start : self.pos]

    def expect_keyword(self, kw: bytes) -> None:
        self.skip_whitespace()
        got = self.read_keyword()
        if got != kw:
            raise PdfError(f"expected {kw!r}, got {got!r} at offset {self.pos}")

    # -- object parsing ----------------------------------------------------

    def parse_object(self) -> Any:
        self.skip_whitespace()
        ch = self.peek()
        if ch == 0x2F:  # '/'
            return self._parse_name()
        if ch == 0x28:  # '('
            return self._parse_literal_string()
        if ch == 0x3C:  # '<'
            if self.data[self.pos : self.pos + 2] == b"<<":
                return self._parse_dict()
            return self._parse_hex_string()
        if ch == 0x5B:  # '['
            return self._parse_array()
        if ch in b"+-." or 0x30 <= ch <= 0x39:
            return self._parse_number_or_ref()
        kw = self.read_keyword()
        if kw == b"true":
            return True
        if kw == b"false":
            return False
        if kw == b"null":
            return None
        raise PdfError(f"unexpected keyword {kw!r} at offset {self.pos}")

    def _parse_name(self) -> PdfName:
        self.pos += 1  # '/'
        out = bytearray()
        data, n = self.data, len(self.data)
        while self.pos < n and _is_regular(data[self.pos]):
            ch = data[self.pos]
            if ch == 0x23 and self.pos + 2 < n:  # '#xx' escape
                try:
                    out.append(int(data[self.pos + 1 : self.pos + 3], 16))
                    self.pos += 3
                    continue
                except ValueError:
                    pass
            out.append(ch)
            self.pos += 1
        return PdfName(out.decode("latin-1"))

    def _parse_literal_string(self) -> bytes:
        self.pos += 1  # '('
        out = bytearray()
        depth = 1
        data, n = self.data, len(self.data)
        while self.pos < n:
            ch = data[self.pos]
            self.pos += 1
            if ch == 0x5C:  # backslash
                if self.pos >= n:
                    break
                esc = data[self.pos]
                self.pos += 1
                if esc in b"nrtbf":
                    out.append({0x6E: 10, 0x72: 13, 0x74: 9, 0x62: 8, 0x66: 12}[esc])
                elif esc in b"()\\":
                    out.append(esc)
                elif 0x30 <= esc <= 0x37:  # octal, up to 3 digits
                    digits = [esc - 0x30]
                    while len(digits) < 3 and self.pos < n and 0x30 <= data[self.pos] <= 0x37:
                        digits.append(data[self.pos] - 0x30)
                        self.pos += 1
                    val = 0
                    for d in digits:
                        val = val * 8 + d
                    out.append(val & 0xFF)
                elif esc in b"\r\n":  # line continuation
                    if esc == 0x0D and self.pos < n and data[self.pos] == 0x0A:
                        self.pos += 1
                else:
                    out.append(esc)
            elif ch == 0x28:
                depth += 1
                out.append(ch)
            elif ch == 0x29:
                depth -= 1
                if depth == 0:
                    return bytes(out)
                out.append(ch)
            else:
                out.append(ch)
        raise PdfError("unterminated literal string")

    def _parse_hex_string(self) -> bytes:
        self.pos += 1  # '<'
        end = self.data.find(b">", self.pos)
        if end < 0:
            raise PdfError("unterminated hex string")
        hex_digits = re.sub(rb"[^0-9A-Fa-f]", b"", self.data[self.pos : end])
        self.pos = end + 1
        if len(hex_digits) % 2:
            hex_digits += b"0"
        return bytes.fromhex(hex_digits.decode("ascii"))

    def _parse_array(self) -> list:
        self.pos += 1  # '['
        items = []
        while True:
            self.skip_whitespace()
            if self.peek() == 0x5D:  # ']'
                self.pos += 1
                return items
            items.append(self.parse_object())

    def _parse_dict(self) -> dict:
        self.pos += 2  # '<<'
        out: dict[str, Any] = {}
        while True:
            self.skip_whitespace()
            if self.data[self.pos : self.pos + 2] == b">>":
                self.pos += 2
                return out
            key = self.parse_object()
            if not isinstance(key, PdfName):
                raise PdfError(f"dictionary key is not a name: {key!r}")
            out[str(key)] = self.parse_object()

    def _parse_number_or_ref(self) -> Any:
        m = _NUMBER_RE.match(self.data, self.pos)
        if not m:
            raise PdfError(f"malformed number at offset {self.pos}")
        tok = m.group(0)
        self.pos = m.end()
        if b"." in tok:
            return float(tok)
        value = int(tok)
        # "num gen R" forms an indirect reference
        if value >= 0 and tok[0:1] not in b"+-":
            ahead = _REF_AHEAD_RE.match(self.data, self.pos)
            if ahead:
                self.pos = ahead.end()
                return PdfRef(value, int(ahead.group(1)))
        return value

    # -- indirect objects and streams -------------------------------------

    def parse_indirect_object(
        self, length_resolver: Callable[[Any], int | None] | None = None
    ) -> tuple[int, int, Any]:
        """Parse ``num gen obj ... endobj`` at the current position.

        ``length_resolver`` maps a (possibly indirect) /Length value to an
        int; when it cannot, the stream extent is recovered by scanning for
        the ``endstream`` keyword.
        """
        self.skip_whitespace()
        num = self.parse_object()
        gen = self.parse_object()
        if not isinstance(num, int) or not isinstance(gen, int):
            raise PdfError(f"malformed indirect object header at {self.pos}")
        self.expect_keyword(b"obj")
        obj = self.parse_object()
        self.skip_whitespace()
        if self.data[self.pos : self.pos + 6] == b"stream":
            if not isinstance(obj, dict):
                raise PdfError("stream without a dictionary")
            obj = self._read_stream(obj, length_resolver)
        return num, gen, obj

    def _read_stream(self, dictionary: dict, length_resolver) -> PdfStream:
        self.pos += 6  # 'stream'
        if self.data[self.pos : self.pos + 2] == b"\r\n":
            self.pos += 2
        elif self.data[self.pos : self.pos + 1] in (b"\n", b"\r"):
            self.pos += 1
        start = self.pos

        length = dictionary.get("Length")
        if isinstance(length, PdfRef) and length_resolver is not None:
            length = length_resolver(length)
        if not isinstance(length, int):
            length = None

        end = None
        if length is not None:
            candidate = start + length
            tail = self.data[candidate : candidate + 20]
            if re.match(rb"\s*endstream", tail):
                end = candidate
        if end is None:  # untrusted /Length: scan
            idx = self.data.find(b"endstream", start)
            if idx < 0:
                raise PdfError("unterminated stream")
            end = idx
            while end > start and self.data[end - 1] in b"\r\n":
                end -= 1
        raw = self.data[start:end]
        self.pos = end
        m = re.compile(rb"\s*endstream").match(self.data, self.pos)
        if m:
            self.pos = m.end()
        return PdfStream(dictionary, raw)


def parse_standalone(data: bytes) -> Any:
    """Parse a single object from a byte buffer (for tests and tools)."""
    return Lexer(data).parse_object()

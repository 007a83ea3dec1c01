"""Content-stream interpretation: text runs and placed images per page.

A deliberately small interpreter: it tracks the graphics state needed to
locate text and images on the page (CTM, text matrices, font size and
leading) and ignores painting state such as colors, paths and clipping.
Coordinates produced here follow PDF conventions (origin bottom-left,
y increasing upward); callers flip to a top-down frame if they need one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator

from .document import PdfDocument, PdfPage
from .objects import Lexer, PdfError, PdfName, PdfStream

Matrix = tuple[float, float, float, float, float, float]

IDENTITY: Matrix = (1.0, 0.0, 0.0, 1.0, 0.0, 0.0)

# Estimated glyph metrics (fractions of font size) used when the font
# carries no width table. Captions only need coarse boxes, not typography.
DEFAULT_GLYPH_WIDTH = 0.5
ASCENT = 0.8
DESCENT = 0.2


def mat_mul(m: Matrix, n: Matrix) -> Matrix:
    a1, b1, c1, d1, e1, f1 = m
    a2, b2, c2, d2, e2, f2 = n
    return (
        a1 * a2 + b1 * c2,
        a1 * b2 + b1 * d2,
        c1 * a2 + d1 * c2,
        c1 * b2 + d1 * d2,
        e1 * a2 + f1 * c2 + e2,
        e1 * b2 + f1 * d2 + f2,
    )


def mat_apply(m: Matrix, x: float, y: float) -> tuple[float, float]:
    a, b, c, d, e, f = m
    return (a * x + c * y + e, b * x + d * y + f)


def mat_scale_y(m: Matrix) -> float:
    return (m[1] ** 2 + m[3] ** 2) ** 0.5


@dataclass
class TextRun:
    """A single shown string, positioned in page space (y-up)."""

    text: str
    x: float
    y: float
    width: float
    font_size: float


@dataclass
class RawTextBlock:
    """All runs of one BT..ET object, grouped into lines."""

    lines: list[list[TextRun]] = field(default_factory=list)

    def runs(self) -> Iterator[TextRun]:
        for line in self.lines:
            yield from line


@dataclass
class RawImagePlacement:
    """An image XObject painted through `Do`, with its placement CTM."""

    name: str
    stream: PdfStream
    ctm: Matrix

    def corners(self) -> list[tuple[float, float]]:
        return [mat_apply(self.ctm, x, y) for x, y in ((0, 0), (1, 0), (0, 1), (1, 1))]

    def bbox(self) -> tuple[float, float, float, float]:
        pts = self.corners()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        return (min(xs), min(ys), max(xs), max(ys))


class _TextState:
    def __init__(self) -> None:
        self.tm: Matrix = IDENTITY
        self.tlm: Matrix = IDENTITY
        self.font_size = 0.0
        self.leading = 0.0
        self.char_spacing = 0.0
        self.word_spacing = 0.0


class ContentInterpreter:
    def __init__(self, doc: PdfDocument, resources: dict):
        self.doc = doc
        self.resources = resources
        self.ctm: Matrix = IDENTITY
        self.stack: list[Matrix] = []
        self.text_blocks: list[RawTextBlock] = []
        self.images: list[RawImagePlacement] = []
        self._ts = _TextState()
        self._block: RawTextBlock | None = None

    # -- resource lookups --------------------------------------------------

    def _xobject(self, name: str) -> PdfStream | None:
        xdict = self.doc.dget(self.resources, "XObject", {})
        obj = self.doc.resolve(xdict.get(name))
        return obj if isinstance(obj, PdfStream) else None

    # -- text helpers ------------------------------------------------------

    def _begin_text(self) -> None:
        self._ts.tm = IDENTITY
        self._ts.tlm = IDENTITY
        self._block = RawTextBlock()

    def _end_text(self) -> None:
        if self._block is not None and self._block.lines:
            self.text_blocks.append(self._block)
        self._block = None

    def _newline(self) -> None:
        if self._block is not None and (not self._block.lines or self._block.lines[-1]):
            self._block.lines.append([])

    def _translate_line(self, tx: float, ty: float) -> None:
        self._ts.tlm = mat_mul((1, 0, 0, 1, tx, ty), self._ts.tlm)
        self._ts.tm = self._ts.tlm
        if ty != 0:
            self._newline()

    def _show(self, raw: bytes) -> None:
        if self._block is None:
            return
        text = raw.decode("latin-1")
        trm = mat_mul(self._ts.tm, self.ctm)
        x, y = mat_apply(trm, 0.0, 0.0)
        size = self._ts.font_size * mat_scale_y(trm)
        advance = 0.0
        for ch in text:
            advance += DEFAULT_GLYPH_WIDTH * self._ts.font_size + self._ts.char_spacing
            if ch == " ":
                advance += self._ts.word_spacing
        if not self._block.lines:
            self._block.lines.append([])
        if text:
            width = advance * (mat_scale_y(self._ts.tm) or 1.0)
            self._block.lines[-1].append(TextRun(text, x, y, width, size))
        self._ts.tm = mat_mul((1, 0, 0, 1, advance, 0), self._ts.tm)

    def _adjust(self, amount: float) -> None:
        shift = -amount / 1000.0 * self._ts.font_size
        self._ts.tm = mat_mul((1, 0, 0, 1, shift, 0), self._ts.tm)

    # -- main loop ---------------------------------------------------------

    def run(self, content: bytes, depth: int = 0) -> None:
        operands: list[Any] = []
        for kind, value in iter_content_tokens(content):
            if kind == "obj":
                operands.append(value)
                continue
            try:
                self._execute(value, operands, depth)
            except (PdfError, ValueError, TypeError, IndexError):
                pass  # tolerate operators we cannot honor; keep scanning
            operands = []

    def _execute(self, op: bytes, args: list[Any], depth: int) -> None:
        ts = self._ts
        if op == b"q":
            self.stack.append(self.ctm)
        elif op == b"Q":
            if self.stack:
                self.ctm = self.stack.pop()
        elif op == b"cm":
            m = tuple(float(a) for a in args[-6:])
            self.ctm = mat_mul(m, self.ctm)  # type: ignore[arg-type]
        elif op == b"BT":
            self._begin_text()
        elif op == b"ET":
            self._end_text()
        elif op == b"Tf":
            ts.font_size = float(args[-1])
        elif op == b"TL":
            ts.leading = float(args[-1])
        elif op == b"Tc":
            ts.char_spacing = float(args[-1])
        elif op == b"Tw":
            ts.word_spacing = float(args[-1])
        elif op == b"Td":
            self._translate_line(float(args[-2]), float(args[-1]))
        elif op == b"TD":
            ts.leading = -float(args[-1])
            self._translate_line(float(args[-2]), float(args[-1]))
        elif op == b"Tm":
            m = tuple(float(a) for a in args[-6:])
            moved = ts.tlm != m
            ts.tm = ts.tlm = m  # type: ignore[assignment]
            if moved:
                self._newline()
        elif op == b"T*":
            self._translate_line(0.0, -ts.leading)
        elif op == b"Tj":
            self._show(args[-1] if isinstance(args[-1], bytes) else b"")
        elif op == b"'":
            self._translate_line(0.0, -ts.leading)
            self._show(args[-1] if isinstance(args[-1], bytes) else b"")
        elif op == b'"':
            ts.word_spacing = float(args[-3])
            ts.char_spacing = float(args[-2])
            self._translate_line(0.0, -ts.leading)
            self._show(args[-1] if isinstance(args[-1], bytes) else b"")
        elif op == b"TJ":
            for item in args[-1]:
                if isinstance(item, bytes):
                    self._show(item)
                elif isinstance(item, (int, float)):
                    self._adjust(float(item))
        elif op == b"Do":
            self._do_xobject(str(args[-1]), depth)

    def _do_xobject(self, name: str, depth: int) -> None:
        stream = self._xobject(name)
        if stream is None:
            return
        subtype = self.doc.dget(stream.dict, "Subtype")
        if subtype == "Image":
            self.images.append(RawImagePlacement(name, stream, self.ctm))
        elif subtype == "Form" and depth < 8:
            saved_ctm, saved_stack = self.ctm, list(self.stack)
            saved_res = self.resources
            matrix = self.doc.dget(stream.dict, "Matrix", [1, 0, 0, 1, 0, 0])
            self.ctm = mat_mul(tuple(float(v) for v in matrix), self.ctm)  # type: ignore[arg-type]
            inner_res = self.doc.dget(stream.dict, "Resources")
            if isinstance(inner_res, dict):
                self.resources = inner_res
            try:
                self.run(self.doc.decode_stream(stream), depth + 1)
            except PdfError:
                pass
            self.ctm, self.stack, self.resources = saved_ctm, saved_stack, saved_res


def iter_content_tokens(data: bytes) -> Iterator[tuple[str, Any]]:
    """Yield ('obj', value) operands and ('op', keyword) operators."""
    lex = Lexer(data)
    n = len(data)
    while True:
        lex.skip_whitespace()
        if lex.pos >= n:
            return
        ch = data[lex.pos]
        if ch in b"/([<" or ch in b"+-." or 0x30 <= ch <= 0x39:
            try:
                yield ("obj", lex.parse_object())
            except PdfError:
                lex.pos += 1
            continue
        if ch in b"'\"":
            lex.pos += 1
            yield ("op", bytes([ch]))
            continue
        if ch in b"]}>)":  # stray delimiter; skip defensively
            lex.pos += 1
            continue
        if ch == 0x7B:  # '{' (PostScript function braces, not expected)
            lex.pos += 1
            continue
        start = lex.pos
        while lex.pos < n and data[lex.pos] not in b"\x00\t\n\x0c\r ()<>[]{}/%":
            lex.pos += 1
        kw = data[start : lex.pos]
        if not kw:
            lex.pos += 1
            continue
        if kw == b"true":
            yield ("obj", True)
        elif kw == b"false":
            yield ("obj", False)
        elif kw == b"null":
            yield ("obj", None)
        elif kw == b"BI":
            # inline image: scan past binary payload to EI at a token boundary
            idx = lex.pos
            while True:
                idx = data.find(b"EI", idx)
                if idx < 0:
                    lex.pos = n
                    break
                before_ok = idx == 0 or data[idx - 1] in b"\x00\t\n\x0c\r "
                after = data[idx + 2 : idx + 3]
                after_ok = not after or after[0] in b"\x00\t\n\x0c\r /([<"
                if before_ok and after_ok:
                    lex.pos = idx + 2
                    break
                idx += 2
        else:
            yield ("op", kw)


def interpret_page(page: PdfPage) -> ContentInterpreter:
    """Run a page's content streams and return the populated interpreter."""
    interp = ContentInterpreter(page.doc, page.resources)
    interp.run(page.content_bytes())
    return interp

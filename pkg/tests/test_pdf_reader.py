"""Tests for the PDF object/document/content layers.

Fixtures come from reportlab (an independent writer) and from
hand-assembled byte buffers, so these tests check interoperability
rather than round-tripping our own output.
"""

import io

import pytest
from PIL import Image

from figforge.pdf import PdfDocument, PdfError, PdfName, PdfRef, open_pdf
from figforge.pdf.content import interpret_page
from figforge.pdf.document import _apply_png_predictor, _decode_ascii85, _decode_asciihex
from figforge.pdf.figures import collect_page, decode_image_xobject
from figforge.pdf.objects import Lexer, parse_standalone

import pdf_fixtures as fx


# ---------------------------------------------------------------------------
# object layer


class TestLexer:
    def test_numbers(self):
        assert parse_standalone(b" 42 ") == 42
        assert parse_standalone(b"-17") == -17
        assert parse_standalone(b"3.14") == pytest.approx(3.14)
        assert parse_standalone(b"-.5") == pytest.approx(-0.5)
        assert parse_standalone(b"4.") == pytest.approx(4.0)

    def test_booleans_null(self):
        assert parse_standalone(b"true") is True
        assert parse_standalone(b"false") is False
        assert parse_standalone(b"null") is None

    def test_name_with_hex_escape(self):
        name = parse_standalone(b"/Name#20With#20Spaces")
        assert isinstance(name, PdfName)
        assert str(name) == "Name With Spaces"

    def test_literal_string_escapes(self):
        assert parse_standalone(rb"(line\n\(nested\))") == b"line\n(nested)"
        assert parse_standalone(b"(a(b)c)") == b"a(b)c"
        assert parse_standalone(rb"(\101\102\103)") == b"ABC"
        assert parse_standalone(b"(one\\\ntwo)") == b"onetwo"  # escaped newline continues

    def test_hex_string(self):
        assert parse_standalone(b"<48 65 6C 6C 6F>") == b"Hello"
        assert parse_standalone(b"<484>") == b"H@"  # odd digit padded with 0

    def test_array_and_dict(self):
        obj = parse_standalone(b"[1 /Two (three) [4]]")
        assert obj == [1, PdfName("Two"), b"three", [4]]
        obj = parse_standalone(b"<< /A 1 /B << /C (x) >> >>")
        assert obj == {"A": 1, "B": {"C": b"x"}}

    def test_indirect_reference(self):
        assert parse_standalone(b"12 0 R") == PdfRef(12, 0)
        # bare int when R is actually part of a keyword
        lex = Lexer(b"12 0 Rot")
        assert lex.parse_object() == 12

    def test_comments_skipped(self):
        assert parse_standalone(b"% a comment\n 7") == 7
        assert parse_standalone(b"[1 % mid-array\n 2]") == [1, 2]

    def test_stream_with_wrong_length_recovers(self):
        data = b"1 0 obj\n<< /Length 999 >>\nstream\nHELLO\nendstream\nendobj"
        num, gen, obj = Lexer(data).parse_indirect_object()
        assert (num, gen) == (1, 0)
        assert obj.raw == b"HELLO"


class TestFilters:
    def test_ascii85(self):
        import base64

        payload = b"some binary \x00\xff payload"
        encoded = base64.a85encode(payload) + b"~>"
        assert _decode_ascii85(encoded) == payload

    def test_asciihex(self):
        assert _decode_asciihex(b"48656C 6C6F>") == b"Hello"

    def test_png_predictor_roundtrip(self):
        rows = [bytes([i, i + 1, i + 2, i + 3]) for i in range(0, 40, 4)]
        raw = b"".join(rows)
        encoded = fx._png_predictor_encode(raw, 4)
        assert _apply_png_predictor(encoded, colors=1, bpc=8, columns=4) == raw


# ---------------------------------------------------------------------------
# document layer


def _page_text(doc: PdfDocument, index: int = 0) -> str:
    page = doc.pages()[index]
    interp = interpret_page(page)
    return "\n".join(
        "".join(run.text for run in block.runs()) for block in interp.text_blocks
    )


class TestFileStructure:
    def test_xref_stream_and_object_stream(self):
        doc = PdfDocument(fx.build_xref_stream_pdf(compress_xref=False))
        pages = doc.pages()
        assert len(pages) == 1
        assert pages[0].mediabox == (0, 0, 200, 200)
        assert "Hello" in _page_text(doc)

    def test_xref_stream_with_predictor(self):
        doc = PdfDocument(fx.build_xref_stream_pdf(compress_xref=True))
        assert "Hello" in _page_text(doc)

    def test_indirect_stream_length(self):
        doc = PdfDocument(fx.build_indirect_length_pdf())
        assert "Len" in _page_text(doc)

    def test_scan_fallback_on_broken_xref(self):
        doc = PdfDocument(fx.build_broken_xref_pdf())
        assert "Len" in _page_text(doc)

    def test_not_a_pdf(self):
        with pytest.raises(PdfError):
            PdfDocument(b"GIF89a not a pdf")

    def test_open_from_path(self, tmp_path):
        p = tmp_path / "t.pdf"
        p.write_bytes(fx.build_indirect_length_pdf())
        assert len(open_pdf(str(p)).pages()) == 1


# ---------------------------------------------------------------------------
# reportlab interop: text and image geometry


@pytest.fixture(scope="module")
def simple_doc():
    pil = fx.solid_image(160, 120, (200, 40, 40))
    page = fx.FixturePage(
        images=[fx.FixtureImage(pil, 100, 500, 160, 120, "pair:X")],
        texts=[fx.FixtureText(100, 480, "Figure X: a caption", size=12)],
    )
    return fx.render_pdf([page]), pil


class TestReportlabInterop:

    def test_page_count_and_size(self, simple_doc):
        doc = PdfDocument(simple_doc[0])
        pages = doc.pages()
        assert len(pages) == 1
        assert pages[0].width == pytest.approx(612)
        assert pages[0].height == pytest.approx(792)

    def test_text_located_at_baseline(self, simple_doc):
        doc = PdfDocument(simple_doc[0])
        interp = interpret_page(doc.pages()[0])
        runs = [r for b in interp.text_blocks for r in b.runs()]
        assert len(runs) == 1
        run = runs[0]
        assert run.text == "Figure X: a caption"
        assert run.x == pytest.approx(100, abs=0.01)
        assert run.y == pytest.approx(480, abs=0.01)
        assert run.font_size == pytest.approx(12, abs=0.01)

    def test_image_placement_bbox(self, simple_doc):
        doc = PdfDocument(simple_doc[0])
        interp = interpret_page(doc.pages()[0])
        assert len(interp.images) == 1
        bbox = interp.images[0].bbox()
        assert bbox == pytest.approx((100, 500, 260, 620), abs=0.01)

    def test_image_pixels_roundtrip(self, simple_doc):
        doc = PdfDocument(simple_doc[0])
        interp = interpret_page(doc.pages()[0])
        pil, payload, fmt = decode_image_xobject(doc, interp.images[0].stream)
        assert fmt == "png"
        assert pil.size == (160, 120)
        original = simple_doc[1].convert(pil.mode)
        assert pil.tobytes() == original.tobytes()

    def test_collect_page_flips_to_top_down(self, simple_doc):
        doc = PdfDocument(simple_doc[0])
        geom, images, blocks, issues = collect_page(doc.pages()[0])
        assert geom.origin_convention == "y-down"
        assert not issues
        assert len(images) == 1
        assert images[0].bbox == pytest.approx((100, 172, 260, 292), abs=0.01)
        assert len(blocks) == 1
        # block top edge sits one ascent above the flipped baseline
        assert blocks[0].bbox[1] == pytest.approx(792 - 480 - 0.8 * 12, abs=0.05)

    @pytest.mark.parametrize("mode", ["L", "CMYK"])
    def test_non_rgb_modes_decode(self, mode):
        pil = fx.solid_image(96, 80, (90, 140, 30), mode=mode)
        page = fx.FixturePage(images=[fx.FixtureImage(pil, 50, 300, 96, 80, "x")])
        doc = PdfDocument(fx.render_pdf([page]))
        interp = interpret_page(doc.pages()[0])
        assert len(interp.images) == 1
        decoded, _, _ = decode_image_xobject(doc, interp.images[0].stream)
        assert decoded.size == (96, 80)
        expected = pil.convert(decoded.mode)
        assert decoded.tobytes() == expected.tobytes()

    def test_jpeg_file_passthrough(self, tmp_path):
        pil = Image.new("RGB", (120, 90), (10, 60, 200))
        jpg = tmp_path / "img.jpg"
        pil.save(jpg, format="JPEG", quality=92)
        import reportlab.pdfgen.canvas as rc

        buf = io.BytesIO()
        c = rc.Canvas(buf, pagesize=(fx.PAGE_W, fx.PAGE_H))
        c.drawImage(str(jpg), 80, 400, width=120, height=90)
        c.showPage()
        c.save()
        doc = PdfDocument(buf.getvalue())
        interp = interpret_page(doc.pages()[0])
        assert len(interp.images) == 1
        decoded, payload, fmt = decode_image_xobject(doc, interp.images[0].stream)
        assert fmt == "jpeg"
        assert decoded.size == (120, 90)
        # lossy codec: grade on mean color instead of exact bytes
        from PIL import ImageStat

        mean = ImageStat.Stat(decoded.convert("RGB")).mean
        assert mean == pytest.approx([10, 60, 200], abs=6)

    def test_multiline_text_block(self):
        page = fx.FixturePage(texts=[fx.FixtureText(72, 700, "Figure 9: line one\nline two", size=10)])
        doc = PdfDocument(fx.render_pdf([page]))
        _, _, blocks, _ = collect_page(doc.pages()[0])
        assert len(blocks) == 1
        assert blocks[0].text == "Figure 9: line one\nline two"

    def test_multipage_order(self):
        pages = []
        for i in range(3):
            pages.append(fx.FixturePage(texts=[fx.FixtureText(72, 700, f"Figure {i}: page {i}")]))
        doc = PdfDocument(fx.render_pdf(pages))
        got = [p.index for p in doc.pages()]
        assert got == [0, 1, 2]
        for i, page in enumerate(doc.pages()):
            _, _, blocks, _ = collect_page(page)
            assert f"page {i}" in blocks[0].text

    def test_uncompressed_content(self):
        page = fx.FixturePage(texts=[fx.FixtureText(72, 700, "Figure 0: plain streams")])
        doc = PdfDocument(fx.render_pdf([page], compress=0))
        _, _, blocks, _ = collect_page(doc.pages()[0])
        assert "plain streams" in blocks[0].text

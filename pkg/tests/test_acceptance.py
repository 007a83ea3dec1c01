"""Release gate: eight checks, one printed pass/fail line each.

Every check pins its tolerances and wall-clock budget inline. The suite
runs entirely offline; the only sockets opened are loopback mock servers.
"""

import json
import math
import os
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, os.path.dirname(__file__))
import pdf_fixtures as fx

from figforge.chat_templates import ChatTurn, render_turns
from figforge.cli import main as cli_main
from figforge.corpus import CorpusRecord, CorpusStore, make_record, render_chat
from figforge.mechanics import (
    DamageConfig,
    classification_report,
    diff_proportion,
    normalize_damage,
    parse_answer_vector,
    r_squared,
)
from figforge.moe import (
    GateConfig,
    GateParams,
    dense_mixture,
    gate_loss,
    gate_loss_grad,
    gate_topk,
    make_cluster_samples,
    merge_plan,
    moe_combine,
    routing_accuracy,
    train_gate,
)
from figforge.pdf.document import PdfDocument
from figforge.pdf.figures import caption_distance, collect_page, extract_document


@contextmanager
def gate(capsys, num, title, budget_s):
    """Time a criterion and print exactly one PASS/FAIL line for it."""
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"[acceptance {num}/8] FAIL  {title}")
        raise
    elapsed = time.perf_counter() - t0
    ok = elapsed < budget_s
    with capsys.disabled():
        status = "PASS" if ok else "FAIL"
        print(f"[acceptance {num}/8] {status}  {title}  ({elapsed:.2f}s, budget {budget_s:g}s)")
    assert ok, f"{title}: {elapsed:.2f}s exceeded the {budget_s:g}s budget"


class TestAcceptance:
    def test_1_layer_merge_arithmetic(self, capsys):
        with gate(capsys, 1, "layer merge arithmetic", 1.0):
            plan = merge_plan(32, 8)
            assert plan.donor_indices == tuple(range(24, 32))
            assert plan.total_layers == 40
            assert merge_plan(32, 16).total_layers == 48

    def test_2_router_math(self, capsys):
        with gate(capsys, 2, "router weights, combine, gradient", 30.0):
            rng = np.random.default_rng(20)

            # 10^3 random draws: selected weights sum to 1 within 1e-9
            for _ in range(1000):
                n_exp = int(rng.integers(2, 9))
                dim = int(rng.integers(1, 9))
                params = GateParams(
                    weight=rng.standard_normal((n_exp, dim)),
                    bias=rng.standard_normal(n_exp),
                )
                k = int(rng.integers(1, n_exp + 1))
                weights, indices = gate_topk(rng.standard_normal(dim), params, k)
                assert abs(float(weights.sum()) - 1.0) <= 1e-9
                assert len(set(indices.tolist())) == k

            # k=1 output is bit-equal to the selected expert's output
            for _ in range(100):
                dim = int(rng.integers(1, 9))
                n_exp = int(rng.integers(2, 6))
                params = GateParams(
                    weight=rng.standard_normal((n_exp, dim)),
                    bias=rng.standard_normal(n_exp),
                )
                mats = [rng.standard_normal((dim, dim)) for _ in range(n_exp)]
                experts = [(lambda m: (lambda v: m @ v))(m) for m in mats]
                h = rng.standard_normal(dim)
                _, indices = gate_topk(h, params, 1)
                combined = moe_combine(h, params, 1, experts)
                assert np.array_equal(combined, mats[int(indices[0])] @ h)

                # k = n_exp matches the dense softmax mixture within 1e-6
                full = moe_combine(h, params, n_exp, experts)
                oracle = dense_mixture(h, params, experts)
                scale = max(1.0, float(np.abs(oracle).max()))
                assert float(np.abs(full - oracle).max()) <= 1e-6 * scale

            # analytic gradient vs central differences, d <= 8
            for _ in range(6):
                n_exp = int(rng.integers(2, 6))
                dim = int(rng.integers(2, 9))
                n = int(rng.integers(4, 13))
                x = rng.standard_normal((n, dim))
                y = rng.integers(0, n_exp, size=n)
                params = GateParams(
                    weight=0.3 * rng.standard_normal((n_exp, dim)),
                    bias=0.3 * rng.standard_normal(n_exp),
                )
                gw, gb = gate_loss_grad(params, x, y)
                eps = 1e-6
                for idx in np.ndindex(params.weight.shape):
                    w_hi = params.weight.copy()
                    w_lo = params.weight.copy()
                    w_hi[idx] += eps
                    w_lo[idx] -= eps
                    fd = (
                        gate_loss(GateParams(w_hi, params.bias), x, y)
                        - gate_loss(GateParams(w_lo, params.bias), x, y)
                    ) / (2 * eps)
                    assert abs(gw[idx] - fd) <= 1e-4
                for e in range(n_exp):
                    b_hi = params.bias.copy()
                    b_lo = params.bias.copy()
                    b_hi[e] += eps
                    b_lo[e] -= eps
                    fd = (
                        gate_loss(GateParams(params.weight, b_hi), x, y)
                        - gate_loss(GateParams(params.weight, b_lo), x, y)
                    ) / (2 * eps)
                    assert abs(gb[e] - fd) <= 1e-4

    def test_3_gate_routing_accuracy(self, capsys):
        with gate(capsys, 3, "gate routing on separated clusters", 60.0):
            cfg = GateConfig(num_experts=3, k=1, hidden_dim=64)
            train = make_cluster_samples(3, 64, per_expert=50, separation=5.0, seed=0)
            held_out = make_cluster_samples(3, 64, per_expert=50, separation=5.0, seed=1)
            params = train_gate(train, cfg, epochs=1000, lr=5e-5)
            acc = routing_accuracy(params, held_out)
            assert acc >= 0.99, f"held-out routing accuracy {acc:.4f} < 0.99"

    def test_4_pdf_pairing_vs_oracle(self, capsys):
        with gate(capsys, 4, "figure/caption pairing vs brute-force oracle", 10.0):
            # the 3-4-5 right triangle, scaled by 10: distance is exactly 50.0
            d = caption_distance((0.0, 50.0, 150.0, 100.0), (40.0, 130.0, 300.0, 142.0))
            assert d == 50.0

            docs = fx.fixture_corpus()
            assert len(docs) >= 20
            checked = 0
            for i, (name, pages) in enumerate(docs):
                pdf = fx.render_pdf(pages, compress=i % 2)
                pairs, issues = extract_document(pdf, doc_id=name)
                doc = PdfDocument(pdf)
                want_pairs = set()
                n_decoded = 0
                for page in doc.iter_pages():
                    _, images, blocks, _ = collect_page(page)
                    n_decoded += len(images)
                    caps = [
                        b for b in blocks if b.text.strip().lower().startswith(("fig",))
                    ]
                    for img in images:
                        w, h = img.intrinsic_width_px, img.intrinsic_height_px
                        if max(w, h) / min(w, h) > 8.0 or min(w, h) < 64:
                            continue  # the default policy drops it
                        best = None
                        for cap in caps:
                            cap_top, cap_left = cap.bbox[1], cap.bbox[0]
                            img_bottom, img_left = img.bbox[3], img.bbox[0]
                            if cap_top < img_bottom - 2.0:
                                continue
                            dist = math.hypot(cap_top - img_bottom, cap_left - img_left)
                            if best is None or dist < best[0]:
                                best = (dist, cap.text)
                        if best is None:
                            continue  # nothing below it; must be rejected
                        want_pairs.add(
                            (page.index, img.content_hash, best[1], round(best[0], 9))
                        )
                got_pairs = {
                    (p.image.page_index, p.image.content_hash, p.caption.text, round(p.distance, 9))
                    for p in pairs
                }
                assert got_pairs == want_pairs, f"{name}: pairing differs from oracle"
                n_rejects = sum(1 for issue in issues if issue.image is not None)
                assert len(pairs) + n_rejects == n_decoded, f"{name}: images unaccounted"
                checked += len(pairs)
            assert checked >= 20  # the corpus must actually exercise the matcher

    def test_5_damage_metric(self, capsys):
        with gate(capsys, 5, "pixel-difference damage metric", 5.0):
            w, h = 50, 40
            n_px = w * h
            base = Image.new("RGB", (w, h), (0, 0, 0))
            measured = []
            for frac in (0.0, 0.25, 0.5, 1.0):
                flipped = Image.new("RGB", (w, h), (0, 0, 0))
                px = flipped.load()
                target = round(frac * n_px)
                done = 0
                for y in range(h):
                    for x in range(w):
                        if done >= target:
                            break
                        px[x, y] = (120, 0, 0)  # 120/255 = 0.47 unit distance, over 0.15
                        done += 1
                prop = diff_proportion(
                    base, flipped, DamageConfig(color_distance_threshold=0.15)
                )
                assert abs(prop - frac) <= 1.0 / n_px, f"p={frac}: got {prop}"
                measured.append(prop)
            scaled = normalize_damage(measured)
            assert scaled[0] == 0.0 and scaled[-1] == 1.0

    def test_6_metrics_and_answer_round_trip(self, capsys):
        with gate(capsys, 6, "classification, r-squared, answer vectors", 5.0):
            rep = classification_report(
                pred=[True, True, True, False], gt=[True, True, False, False]
            )
            assert (rep.tp, rep.fp, rep.tn, rep.fn) == (2, 1, 1, 0)
            assert rep.precision == 2 / 3
            assert rep.recall == 1.0
            assert rep.f1 == 0.8
            assert rep.accuracy == 0.75

            assert r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
            assert r_squared([1.0, 2.0, 4.0], [1.0, 2.0, 3.0]) == 0.5

            for text, task in (("[0.678, 0.603, 0.624]", "stress"), ("[0.139, True]", "crack")):
                assert parse_answer_vector(text, task).render() == text

    def test_7_corpus_split_and_templates(self, capsys, tmp_path):
        with gate(capsys, 7, "deterministic split, export identity, chat layout", 10.0):
            store = CorpusStore(str(tmp_path / "store"))
            records = [
                make_record("text_only", f"question {i:04d}?", f"answer {i:04d}.")
                for i in range(2000)
            ]
            added, dups, rejected = store.add_records(records)
            assert (added, dups, rejected) == (2000, 0, [])
            counts = store.assign_splits(ratio=0.9, seed=13)
            assert counts == {"train": 1800, "test": 200}

            assignment = {r.id: r.split for r in store.records()}
            assert len(assignment) == 2000  # exhaustive
            assert sorted(assignment.values()).count("train") == 1800  # disjoint counts

            twin = CorpusStore(str(tmp_path / "twin"))
            twin.add_records(records)
            twin.assign_splits(ratio=0.9, seed=13)
            assert {r.id: r.split for r in twin.records()} == assignment

            exp_dir = str(tmp_path / "exp")
            store.export(exp_dir, name="gate")
            back = CorpusStore.import_export(exp_dir, str(tmp_path / "back"))
            assert {r.id: r.to_json() for r in back.records()} == {
                r.id: r.to_json() for r in store.records()
            }

            turns = [
                ChatTurn("{prompt_1}", "{response_1}"),
                ChatTurn("{prompt_2}", "{response_2}"),
            ]
            assert render_turns(turns, "idefics_style") == (
                "User:<image>{prompt_1}<end_of_utterance>\n"
                "Assistant:{response_1}<end_of_utterance>\n"
                "User:{prompt_2}<end_of_utterance>\n"
                "Assistant:{response_2}<end_of_utterance>"
            )
            assert render_turns(turns, "phi3_style", n_images=2) == (
                "<|user|>\n"
                "<|image_1|><|image_2|>\n"
                "{prompt_1}<|end|>\n"
                "<|assistant|>\n"
                "{response_1}<|end|>\n"
                "<|user|>\n"
                "{prompt_2}<|end|>\n"
                "<|assistant|>\n"
                "{response_2}<|end|>"
            )
            one_turn = render_chat([store.records()[0]], "idefics_style")[0]
            assert one_turn.startswith("User:") and one_turn.endswith("<end_of_utterance>")

    def test_8_end_to_end_smoke(self, capsys, tmp_path, wiki_site, refine_endpoint):
        with gate(capsys, 8, "offline pipeline through the command line", 30.0):
            page = fx.FixturePage()
            fx._stack(page, 80, 700, "E1", (200, 60, 60))
            fx._stack(page, 330, 700, "E2", (60, 60, 200))
            pdf = tmp_path / "smoke.pdf"
            pdf.write_bytes(fx.render_pdf([page]))

            pairs_dir = tmp_path / "pairs"
            assert cli_main(
                ["extract-pdf", "--pdf", str(pdf), "--out", str(pairs_dir), "--doc-id", "smoke"]
            ) == 0

            kw = tmp_path / "kw.txt"
            kw.write_text("spider silk\ncomposite beams\n")
            harvest_dir = tmp_path / "harvest"
            assert cli_main(
                [
                    "harvest",
                    "--out", str(harvest_dir),
                    "--keywords", str(kw),
                    "--base-url", wiki_site.base_url,
                    "--min-interval", "0",
                ]
            ) == 0

            refined_pairs = tmp_path / "refined_pairs"
            refined_wiki = tmp_path / "refined_wiki"
            for src_flag, src, out in (
                ("--from-pairs", pairs_dir, refined_pairs),
                ("--from-harvest", harvest_dir, refined_wiki),
            ):
                assert cli_main(
                    [
                        "refine",
                        src_flag, str(src),
                        "--out", str(out),
                        "--template", "paper_concise" if src_flag == "--from-pairs" else "wiki",
                        "--endpoint", refine_endpoint.base_url,
                        "--model", "mock-model",
                    ]
                ) == 0

            store = tmp_path / "store"
            assert cli_main(
                ["corpus", "add", "--store", str(store),
                 "--from-pairs", str(pairs_dir), "--refined", str(refined_pairs)]
            ) == 0
            assert cli_main(
                ["corpus", "add", "--store", str(store),
                 "--from-harvest", str(harvest_dir), "--refined", str(refined_wiki)]
            ) == 0
            assert cli_main(
                ["corpus", "split", "--store", str(store), "--ratio", "0.5", "--seed", "1"]
            ) == 0
            exp = tmp_path / "exported"
            assert cli_main(
                ["corpus", "export", "--store", str(store), "--out", str(exp), "--name", "smoke"]
            ) == 0
            capsys.readouterr()  # the JSON status lines are not under test here

            rows = []
            for name in ("train.jsonl", "test.jsonl"):
                path = exp / name
                if path.exists():
                    rows += [json.loads(l) for l in open(path)]
            assert len(rows) >= 3, f"only {len(rows)} records survived the pipeline"
            assert not (exp / "export_errors.jsonl").exists()
            for row in rows:
                rec = CorpusRecord.from_json(row)
                rec.validate()
                assert rec.answer.startswith("The image shows")
                assert rec.image_ref and (exp / rec.image_ref).exists()
                assert rec.original_caption
                if rec.source == "wikipedia":
                    assert rec.image_url and rec.image_url.startswith("http")
                    assert rec.article_url and "/wiki/" in rec.article_url
                else:
                    assert rec.source == "paper_pdf"
            sources = {r["source"] for r in rows}
            assert sources == {"wikipedia", "paper_pdf"}

"""Command line front end for the corpus pipeline.

Every stage is a subcommand; stages that write files also drop a run
manifest (tool version, effective-config digest, input digests) into the
output directory so a finished directory documents how it was produced.
Settings resolve as flags > config file > built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Any

from . import __version__
from .config import PipelineConfig, config_digest, digest_inputs, load_config

log = logging.getLogger("figforge")

# question attached to harvested/extracted figure descriptions
DEFAULT_QUERY = "What does the image show?"


def _eff(flag, cfg_value, default):
    if flag is not None:
        return flag
    if cfg_value is not None:
        return cfg_value
    return default


def _write_run_manifest(out_dir: str, command: str, effective: dict[str, Any], inputs: list[str]) -> str:
    os.makedirs(out_dir, exist_ok=True)
    slug = command.replace(" ", "_").replace("-", "_")
    path = os.path.join(out_dir, f"run_{slug}.json")
    manifest = {
        "tool": "figforge",
        "tool_version": __version__,
        "command": command,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config_digest": config_digest(effective),
        "effective_config": effective,
        "input_digests": digest_inputs(inputs),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return path


def _emit(payload: dict) -> None:
    print(json.dumps(payload, ensure_ascii=False, default=str))


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


# ---------------------------------------------------------------------------
# extract-pdf


def _iter_pdf_paths(inputs: list[str]) -> list[str]:
    paths = []
    for item in inputs:
        if os.path.isdir(item):
            for name in sorted(os.listdir(item)):
                if name.lower().endswith(".pdf"):
                    paths.append(os.path.join(item, name))
        else:
            paths.append(item)
    return paths


def cmd_extract_pdf(args, cfg: PipelineConfig) -> int:
    from .pdf.figures import FilterPolicy, extract_document, write_outputs

    fcfg = cfg.filter
    max_aspect = float(_eff(args.max_aspect, fcfg.get("max_aspect"), 8.0))
    min_px = int(_eff(args.min_px, fcfg.get("min_px"), 64))
    exclusions_path = _eff(args.exclusions, fcfg.get("exclusions"), None)
    exclusions: frozenset[str] = frozenset()
    if exclusions_path:
        with open(exclusions_path, encoding="utf-8") as fh:
            exclusions = frozenset(line.strip() for line in fh if line.strip())
    policy = FilterPolicy(max_aspect=max_aspect, min_px=min_px, exclusion_hashes=exclusions)

    pdf_paths = _iter_pdf_paths(args.pdf)
    if not pdf_paths:
        raise FileNotFoundError("no PDF inputs found")
    os.makedirs(args.out, exist_ok=True)

    total_pairs = 0
    issue_rows = []
    for path in pdf_paths:
        with open(path, "rb") as fh:
            data = fh.read()
        doc_id = args.doc_id if (args.doc_id and len(pdf_paths) == 1) else None
        pairs, issues = extract_document(data, policy=policy, doc_id=doc_id)
        doc = pairs[0].doc_id if pairs else (doc_id or os.path.splitext(os.path.basename(path))[0])
        write_outputs(pairs, args.out, doc)
        total_pairs += len(pairs)
        for issue in issues:
            issue_rows.append(
                {
                    "doc_id": doc,
                    "source": os.path.basename(path),
                    "page": issue.page_index,
                    "code": issue.reason.code,
                    "detail": issue.reason.detail,
                }
            )
    with open(os.path.join(args.out, "issues.jsonl"), "w", encoding="utf-8") as fh:
        for row in issue_rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    effective = {"max_aspect": max_aspect, "min_px": min_px, "exclusions": sorted(exclusions)}
    _write_run_manifest(args.out, "extract-pdf", effective, pdf_paths)
    _emit({"command": "extract-pdf", "documents": len(pdf_paths), "pairs": total_pairs, "issues": len(issue_rows), "out": args.out})
    return 0


# ---------------------------------------------------------------------------
# harvest


def cmd_harvest(args, cfg: PipelineConfig) -> int:
    from .wiki import WikiClient, harvest, load_default_keywords, load_keywords_file

    wcfg = cfg.wiki
    keywords_path = _eff(args.keywords, cfg.keywords_file, None)
    keywords = load_keywords_file(keywords_path) if keywords_path else load_default_keywords()
    client = WikiClient(
        base_url=_eff(args.base_url, wcfg.get("base_url"), "https://en.wikipedia.org"),
        api_path=_eff(None, wcfg.get("api_path"), "/w/api.php"),
        article_path=_eff(None, wcfg.get("article_path"), "/wiki/"),
        timeout=float(_eff(args.timeout, wcfg.get("timeout"), 30.0)),
        max_attempts=int(_eff(None, wcfg.get("max_attempts"), 3)),
        backoff=float(_eff(None, wcfg.get("backoff"), 0.5)),
        min_interval=float(_eff(args.min_interval, wcfg.get("min_interval"), 0.5)),
    )
    limit = int(_eff(args.limit, wcfg.get("limit"), 100))
    max_workers = int(_eff(args.max_workers, wcfg.get("max_workers"), 4))
    icon_min_px = int(_eff(args.icon_min_px, wcfg.get("icon_min_px"), 128))
    download_min_px = int(_eff(args.download_min_px, wcfg.get("download_min_px"), 128))

    added = harvest(
        keywords,
        limit_per_keyword=limit,
        out_dir=args.out,
        client=client,
        max_workers=max_workers,
        icon_min_px=icon_min_px,
        download_min_px=download_min_px,
    )
    effective = {
        "base_url": client.base_url,
        "limit_per_keyword": limit,
        "max_workers": max_workers,
        "icon_min_px": icon_min_px,
        "download_min_px": download_min_px,
        "min_interval": client.min_interval,
        "keywords": keywords,
    }
    _write_run_manifest(args.out, "harvest", effective, [keywords_path] if keywords_path else [])
    _emit({"command": "harvest", "records_added": len(added), "keywords": len(keywords), "out": args.out})
    return 0


# ---------------------------------------------------------------------------
# refine


def _endpoint_from(args, cfg: PipelineConfig, parser: argparse.ArgumentParser):
    from .refine import EndpointConfig

    ecfg = cfg.endpoint
    base_url = _eff(args.endpoint, ecfg.get("base_url"), None)
    model_name = _eff(args.model, ecfg.get("model_name"), None)
    if not base_url or not model_name:
        parser.error("refine requires --endpoint and --model (flags or [endpoint] config)")
    return EndpointConfig(
        base_url=base_url,
        model_name=model_name,
        max_in_flight=int(_eff(args.max_in_flight, ecfg.get("max_in_flight"), 2)),
        timeout=float(_eff(args.timeout, ecfg.get("timeout"), 60.0)),
        max_attempts=int(_eff(None, ecfg.get("max_attempts"), 3)),
        backoff=float(_eff(None, ecfg.get("backoff"), 0.5)),
        temperature=float(_eff(args.temperature, ecfg.get("temperature"), 0.2)),
        max_tokens=int(_eff(args.max_tokens, ecfg.get("max_tokens"), 1024)),
        api_key_env=str(_eff(None, ecfg.get("api_key_env"), "FIGFORGE_API_KEY")),
    )


def _items_from_harvest(harvest_dir: str):
    from .refine import BatchItem
    from .wiki import load_harvest_records

    items = []
    for rec in load_harvest_records(harvest_dir):
        if not rec.content_hash:
            continue
        image_path = os.path.join(harvest_dir, rec.image_ref) if rec.image_ref else None
        items.append(BatchItem(record_id=rec.content_hash, caption=rec.original_caption, image_path=image_path))
    return items


def _items_from_pairs(pairs_dir: str):
    """Batch items from an extract-pdf output directory (JSONL sidecars)."""
    from .refine import BatchItem

    items = []
    for name in sorted(os.listdir(pairs_dir)):
        if not name.endswith(".jsonl") or name == "issues.jsonl":
            continue
        for row in _read_jsonl(os.path.join(pairs_dir, name)):
            if "content_hash" not in row:
                continue
            items.append(
                BatchItem(
                    record_id=row["content_hash"],
                    caption=row["caption"],
                    image_path=os.path.join(pairs_dir, row["image"]),
                )
            )
    return items


def cmd_refine(args, cfg: PipelineConfig, parser: argparse.ArgumentParser) -> int:
    from .refine import load_templates, refine_batch

    endpoint = _endpoint_from(args, cfg, parser)
    templates = load_templates(args.templates)
    if args.template not in templates:
        parser.error(f"unknown template {args.template!r}; have {sorted(templates)}")
    template = templates[args.template]

    if args.from_harvest:
        items = _items_from_harvest(args.from_harvest)
        source_dir = args.from_harvest
    else:
        items = _items_from_pairs(args.from_pairs)
        source_dir = args.from_pairs

    results = refine_batch(endpoint, items, template, args.out)
    ok = sum(1 for r in results if not r.validation.startswith("error"))
    effective = {
        "endpoint": endpoint.base_url,
        "model_name": endpoint.model_name,
        "template": template.id,
        "max_in_flight": endpoint.max_in_flight,
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
    }
    _write_run_manifest(args.out, "refine", effective, [source_dir])
    _emit({"command": "refine", "items": len(items), "succeeded": ok, "failed": len(items) - ok, "out": args.out})
    return 0


# ---------------------------------------------------------------------------
# corpus


def _load_refined(refined_dir: str | None) -> dict[str, str]:
    """Map record_id -> refined text from a refine output directory."""
    if not refined_dir:
        return {}
    path = os.path.join(refined_dir, "results.jsonl")
    refined: dict[str, str] = {}
    if os.path.exists(path):
        for row in _read_jsonl(path):
            if str(row.get("validation", "")).startswith("error"):
                continue
            refined[row["record_id"]] = row["refined_text"]
    return refined


def cmd_corpus_add(args, cfg: PipelineConfig, parser: argparse.ArgumentParser) -> int:
    from .corpus import CorpusStore, make_record

    store = CorpusStore(args.store)
    query = args.query or DEFAULT_QUERY
    refined = _load_refined(args.refined)
    records = []
    skipped_unrefined = 0

    if args.records:
        from .corpus import CorpusRecord

        for row in _read_jsonl(args.records):
            records.append(CorpusRecord.from_json(row))
        inputs = [args.records]
    elif args.from_harvest:
        from .wiki import load_harvest_records

        for rec in load_harvest_records(args.from_harvest):
            answer = refined.get(rec.content_hash)
            if answer is None:
                if args.refined:
                    skipped_unrefined += 1
                    continue
                answer = rec.original_caption
            if not answer or not rec.image_ref:
                skipped_unrefined += 1
                continue
            image_ref = store.ingest_image(os.path.join(args.from_harvest, rec.image_ref))
            records.append(
                make_record(
                    source="wikipedia",
                    query=query,
                    answer=answer,
                    image_content_hash=rec.content_hash,
                    image_ref=image_ref,
                    image_url=rec.image_url,
                    article_url=rec.article_url,
                    original_caption=rec.original_caption,
                )
            )
        inputs = [args.from_harvest]
    elif args.from_pairs:
        for name in sorted(os.listdir(args.from_pairs)):
            if not name.endswith(".jsonl") or name == "issues.jsonl":
                continue
            for row in _read_jsonl(os.path.join(args.from_pairs, name)):
                if "content_hash" not in row:
                    continue
                answer = refined.get(row["content_hash"])
                if answer is None:
                    if args.refined:
                        skipped_unrefined += 1
                        continue
                    answer = row["caption"]
                image_ref = store.ingest_image(os.path.join(args.from_pairs, row["image"]))
                records.append(
                    make_record(
                        source="paper_pdf",
                        query=query,
                        answer=answer,
                        image_content_hash=row["content_hash"],
                        image_ref=image_ref,
                        original_caption=row["caption"],
                    )
                )
        inputs = [args.from_pairs]
    else:
        parser.error("corpus add needs one of --records, --from-harvest, --from-pairs")

    added, duplicates, rejected = store.add_records(records)
    effective = {"query": query, "refined": bool(args.refined), "store": args.store}
    _write_run_manifest(args.store, "corpus-add", effective, inputs)
    _emit(
        {
            "command": "corpus add",
            "added": added,
            "duplicates": duplicates,
            "rejected": len(rejected),
            "skipped_unrefined": skipped_unrefined,
            "total": len(store),
        }
    )
    return 0


def cmd_corpus_split(args, cfg: PipelineConfig) -> int:
    from .corpus import CorpusStore

    ratio = float(_eff(args.ratio, cfg.split_ratio if cfg.raw else None, 0.9))
    seed = int(_eff(args.seed, cfg.raw.get("seed") if cfg.raw else None, 0))
    store = CorpusStore(args.store)
    counts = store.assign_splits(ratio=ratio, seed=seed)
    effective = {"ratio": ratio, "seed": seed}
    _write_run_manifest(args.store, "corpus-split", effective, [store.records_path])
    _emit({"command": "corpus split", "ratio": ratio, "seed": seed, **counts})
    return 0


def cmd_corpus_export(args, cfg: PipelineConfig) -> int:
    from .corpus import CorpusStore

    store = CorpusStore(args.store)
    manifest = store.export(args.out, name=args.name)
    effective = {"name": args.name, "store": args.store}
    _write_run_manifest(args.out, "corpus-export", effective, [store.records_path])
    _emit({"command": "corpus export", "out": args.out, **manifest.to_json()})
    return 0


def cmd_corpus_stats(args, cfg: PipelineConfig) -> int:
    from .corpus import CorpusStore

    store = CorpusStore(args.store)
    by_source: dict[str, int] = {}
    for rec in store.records():
        by_source[rec.source] = by_source.get(rec.source, 0) + 1
    _emit(
        {
            "command": "corpus stats",
            "records": len(store),
            "splits": store.split_counts(),
            "by_source": by_source,
            "split_seed": store.split_seed,
        }
    )
    return 0


# ---------------------------------------------------------------------------
# stats


def _corpus_records(corpus_dir: str):
    """Records from a store root or an export directory."""
    from .corpus import CorpusRecord, CorpusStore

    if os.path.exists(os.path.join(corpus_dir, "records.jsonl")):
        return CorpusStore(corpus_dir).records()
    records = []
    for name in sorted(os.listdir(corpus_dir)):
        if name.endswith(".jsonl") and name != "export_errors.jsonl":
            for row in _read_jsonl(os.path.join(corpus_dir, name)):
                records.append(CorpusRecord.from_json(row))
    return records


def cmd_stats_tokens(args, cfg: PipelineConfig) -> int:
    from .stats import TOKEN_FIELDS, load_adapter, token_histogram, write_histogram_csv

    adapter = load_adapter(_eff(args.adapter, cfg.tokenizer_adapter if cfg.raw else None, "whitespace"))
    records = _corpus_records(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    written = {}
    for field in TOKEN_FIELDS:
        h = token_histogram(records, field, adapter, args.bins)
        path = os.path.join(args.out, f"tokens_{field}.csv")
        write_histogram_csv(h, path)
        written[field] = path
    effective = {"adapter": adapter.id, "bins": args.bins}
    _write_run_manifest(args.out, "stats-tokens", effective, [args.corpus])
    _emit({"command": "stats tokens", "records": len(records), "adapter": adapter.id, "files": sorted(written.values())})
    return 0


def cmd_stats_resolutions(args, cfg: PipelineConfig) -> int:
    from .stats import AXES, resolution_histogram, write_histogram_csv

    images_dir = args.images or os.path.join(args.corpus, "images")
    if not os.path.isdir(images_dir):
        raise FileNotFoundError(f"no images directory at {images_dir}")
    paths = [os.path.join(images_dir, n) for n in sorted(os.listdir(images_dir))]
    os.makedirs(args.out, exist_ok=True)
    written = []
    skipped = 0
    for axis in AXES:
        h = resolution_histogram(paths, axis, args.bins)
        skipped = h.skipped
        path = os.path.join(args.out, f"resolution_{axis.lower()}.csv")
        write_histogram_csv(h, path)
        written.append(path)
    effective = {"bins": args.bins}
    _write_run_manifest(args.out, "stats-resolutions", effective, [images_dir])
    _emit({"command": "stats resolutions", "images": len(paths), "skipped": skipped, "files": written})
    return 0


# ---------------------------------------------------------------------------
# instruct


def cmd_instruct_build(args, cfg: PipelineConfig, parser: argparse.ArgumentParser) -> int:
    from .mechanics import (
        DamageConfig,
        build_instruction,
        diff_proportion,
        field_statistics,
        normalize_damage,
    )

    rows = _read_jsonl(args.input)
    out_rows = []
    if args.task in ("stress", "energy"):
        for row in rows:
            stats = field_statistics(row["values"], ddof=args.ddof)
            rec = build_instruction(
                args.task,
                (stats.std_dev, stats.mean, stats.median),
                record_id=row["record_id"],
                image_ref=row.get("image_ref"),
            )
            out_rows.append(rec)
    else:  # crack
        threshold = float(_eff(args.threshold, cfg.damage.get("color_distance_threshold"), 0.15))
        dcfg = DamageConfig(color_distance_threshold=threshold)
        diffs = [diff_proportion(row["image_a"], row["image_b"], dcfg) for row in rows]
        damages = normalize_damage(diffs) if len(diffs) > 1 else diffs
        for row, damage in zip(rows, damages):
            rec = build_instruction(
                "crack",
                (damage, bool(row["initiate"])),
                record_id=row["record_id"],
                image_ref=row.get("image_ref"),
            )
            out_rows.append(rec)

    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in out_rows:
            row = {
                "id": rec.record_id,
                "task": rec.task,
                "query": rec.instruction,
                "answer": rec.answer.render(),
                "image_ref": rec.image_ref,
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    effective = {"task": args.task, "ddof": args.ddof}
    _write_run_manifest(os.path.dirname(os.path.abspath(args.out)) or ".", "instruct-build", effective, [args.input])
    _emit({"command": "instruct build", "task": args.task, "records": len(out_rows), "out": args.out})
    return 0


def cmd_instruct_eval(args, cfg: PipelineConfig) -> int:
    from .mechanics import InstructionRecord, evaluate_run, parse_answer_vector

    records = []
    for row in _read_jsonl(args.records):
        task = row["task"]
        records.append(
            InstructionRecord(
                record_id=row["id"],
                task=task,
                instruction=row["query"],
                answer=parse_answer_vector(row["answer"], task),
                image_ref=row.get("image_ref"),
            )
        )
    responses = {}
    for row in _read_jsonl(args.responses):
        rid = row.get("id", row.get("record_id"))
        responses[rid] = row.get("response", row.get("text", ""))

    report = evaluate_run(records, responses)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "eval_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
    effective = {"tasks": sorted({r.task for r in records})}
    _write_run_manifest(args.out, "instruct-eval", effective, [args.records, args.responses])
    _emit({"command": "instruct eval", "evaluated": report.evaluated, "unparsed": report.unparsed, "out": args.out})
    return 0


# ---------------------------------------------------------------------------
# moe-demo / merge-plan


def cmd_moe_demo(args, cfg: PipelineConfig) -> int:
    from .moe import run_demo

    result = run_demo(
        num_experts=args.experts,
        k=args.k,
        hidden_dim=args.dim,
        per_expert=args.per_expert,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
    )
    _emit({"command": "moe-demo", **result})
    return 0


def cmd_merge_plan(args, cfg: PipelineConfig) -> int:
    from .moe import merge_plan, plan_table

    plan = merge_plan(args.base, args.take)
    if args.json:
        _emit(
            {
                "command": "merge-plan",
                "base_layers": plan.base_layers,
                "donor_take": plan.donor_take,
                "donor_indices": list(plan.donor_indices),
                "total_layers": plan.total_layers,
                "trainable": sum(plan.trainable_mask),
            }
        )
    else:
        print(plan_table(plan))
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figforge",
        description="Build, refine, and evaluate figure-caption corpora for vision-language training.",
    )
    parser.add_argument("--config", help="TOML config file; flags override its values")
    parser.add_argument("--version", action="version", version=f"figforge {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-pdf", help="extract figure/caption pairs from PDFs")
    p.add_argument("--pdf", nargs="+", required=True, help="PDF files or directories of PDFs")
    p.add_argument("--out", required=True)
    p.add_argument("--doc-id", help="document id override (single PDF only)")
    p.add_argument("--max-aspect", type=float)
    p.add_argument("--min-px", type=int)
    p.add_argument("--exclusions", help="file of content hashes to drop")

    p = sub.add_parser("harvest", help="collect captioned images from a wiki")
    p.add_argument("--out", required=True)
    p.add_argument("--keywords", help="keyword file, one per line")
    p.add_argument("--limit", type=int, help="articles per keyword")
    p.add_argument("--base-url")
    p.add_argument("--max-workers", type=int)
    p.add_argument("--icon-min-px", type=int)
    p.add_argument("--download-min-px", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--min-interval", type=float)

    p = sub.add_parser("refine", help="rewrite captions through a chat-completions endpoint")
    p.add_argument("--out", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--from-harvest", help="harvest output directory")
    src.add_argument("--from-pairs", help="extract-pdf output directory")
    p.add_argument("--template", required=True, help="template id (wiki, paper_concise, paper_reasoned)")
    p.add_argument("--templates", help="template JSON file override")
    p.add_argument("--endpoint", help="chat-completions base URL")
    p.add_argument("--model")
    p.add_argument("--max-in-flight", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", type=int)

    corpus = sub.add_parser("corpus", help="manage the record store")
    csub = corpus.add_subparsers(dest="subcommand", required=True)

    p = csub.add_parser("add", help="add records to a store")
    p.add_argument("--store", required=True)
    p.add_argument("--records", help="JSONL of ready-made records")
    p.add_argument("--from-harvest", help="harvest output directory")
    p.add_argument("--from-pairs", help="extract-pdf output directory")
    p.add_argument("--refined", help="refine output directory to take answers from")
    p.add_argument("--query", help="question attached to each record")

    p = csub.add_parser("split", help="assign train/test splits")
    p.add_argument("--store", required=True)
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int)

    p = csub.add_parser("export", help="write split JSONL files plus manifest")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="corpus")

    p = csub.add_parser("stats", help="print store counts")
    p.add_argument("--store", required=True)

    stats = sub.add_parser("stats", help="token and resolution histograms")
    ssub = stats.add_subparsers(dest="subcommand", required=True)

    p = ssub.add_parser("tokens", help="token-count histograms over a corpus")
    p.add_argument("--corpus", required=True, help="store root or export directory")
    p.add_argument("--out", required=True)
    p.add_argument("--adapter", help="'whitespace' or a merge-table JSON file")
    p.add_argument("--bins", type=int, default=50)

    p = ssub.add_parser("resolutions", help="image resolution histograms")
    p.add_argument("--corpus", help="directory containing an images/ pool")
    p.add_argument("--images", help="image directory (overrides --corpus)")
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=50)

    instruct = sub.add_parser("instruct", help="mechanics instruction records")
    isub = instruct.add_subparsers(dest="subcommand", required=True)

    p = isub.add_parser("build", help="build instruction records from raw values")
    p.add_argument("--task", required=True, choices=("stress", "energy", "crack"))
    p.add_argument("--in", dest="input", required=True, help="JSONL of raw per-record inputs")
    p.add_argument("--out", required=True)
    p.add_argument("--ddof", type=int, default=0)
    p.add_argument("--threshold", type=float, help="color distance threshold (crack)")

    p = isub.add_parser("eval", help="score endpoint responses against records")
    p.add_argument("--records", required=True)
    p.add_argument("--responses", required=True, help="JSONL rows {id, response}")
    p.add_argument("--out", required=True)

    p = sub.add_parser("moe-demo", help="train a small router and report accuracy")
    p.add_argument("--experts", type=int, default=3)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--per-expert", type=int, default=50)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("merge-plan", help="layer plan for grafting donor blocks")
    p.add_argument("--base", type=int, required=True, help="layer count of the base stack")
    p.add_argument("--take", type=int, required=True, help="how many top donor layers to graft")
    p.add_argument("--json", action="store_true")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        if args.command == "extract-pdf":
            return cmd_extract_pdf(args, cfg)
        if args.command == "harvest":
            return cmd_harvest(args, cfg)
        if args.command == "refine":
            return cmd_refine(args, cfg, parser)
        if args.command == "corpus":
            if args.subcommand == "add":
                return cmd_corpus_add(args, cfg, parser)
            if args.subcommand == "split":
                return cmd_corpus_split(args, cfg)
            if args.subcommand == "export":
                return cmd_corpus_export(args, cfg)
            return cmd_corpus_stats(args, cfg)
        if args.command == "stats":
            if args.subcommand == "tokens":
                return cmd_stats_tokens(args, cfg)
            return cmd_stats_resolutions(args, cfg)
        if args.command == "instruct":
            if args.subcommand == "build":
                return cmd_instruct_build(args, cfg, parser)
            return cmd_instruct_eval(args, cfg)
        if args.command == "moe-demo":
            return cmd_moe_demo(args, cfg)
        if args.command == "merge-plan":
            return cmd_merge_plan(args, cfg)
        parser.error(f"unknown command {args.command!r}")
    except Exception as exc:  # CLI boundary: every failure becomes a machine-readable error
        json.dump({"error": type(exc).__name__, "detail": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

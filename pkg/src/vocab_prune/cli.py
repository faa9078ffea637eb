"""Command-line entry point.

Exit codes: 0 success, 1 verification mismatches, 2 parse/format errors,
3 invariant violations, 4 I/O errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .bench import BenchConfig, check_numerics, run_bench
from .container import SurgeryPlan, apply_surgery, read_container
from .errors import InvariantError, OutputExists, ParseError, VocabPruneError
from .metrics import verify_segmentation, wpr
from .prune import PruneConfig, PruneMap, make_prune_map, prune, token_records
from .scripts import ScriptTag, format_tags
from .tokenizer import TokenizerDef, parse_tokenizer, serialize_tokenizer

log = logging.getLogger("vocab_prune")

TOKENIZER_FILE = "tokenizer.json"
INDEX_FILE = "model.safetensors.index.json"
REPORT_FILE = "prune_report.json"
MANIFEST_FILE = "manifest.json"


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _dump_json(obj: Any) -> bytes:
    return (json.dumps(obj, ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def _load_json(path: Path) -> Any:
    try:
        return json.loads(path.read_bytes())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from None


def load_tokenizer(model_dir: Path) -> TokenizerDef:
    path = model_dir / TOKENIZER_FILE if model_dir.is_dir() else model_dir
    try:
        return parse_tokenizer(path.read_bytes())
    except VocabPruneError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def shard_files(model_dir: Path) -> list[Path]:
    index = model_dir / INDEX_FILE
    if index.exists():
        weight_map = _load_json(index).get("weight_map") or {}
        return [model_dir / name for name in sorted(set(weight_map.values()))]
    shards = sorted(model_dir.glob("*.safetensors"))
    if not shards:
        raise FileNotFoundError(f"{model_dir}: no .safetensors container found")
    return shards


def resolve_config(args: argparse.Namespace, fallback: dict | None = None) -> PruneConfig:
    doc: dict[str, Any] = {}
    if getattr(args, "config", None):
        doc = _load_json(Path(args.config))
        if not isinstance(doc, dict):
            raise ParseError(f"{args.config}: config must be a JSON object")
    elif fallback:
        doc = dict(fallback)
    if getattr(args, "preset", None):
        doc = {**doc, "preset": args.preset}
    if not doc.get("preset") and not doc.get("allowed_scripts"):
        raise ParseError("no pruning configuration: pass --preset or --config")
    return PruneConfig.from_json(doc)


def family_plans() -> dict[str, Any]:
    return json.loads(resources.files("vocab_prune").joinpath("plans.json").read_text("utf-8"))


def resolve_plan(args: argparse.Namespace, model_dir: Path) -> dict[str, Any]:
    """Tensor names for the vocabulary tensors: --plan file, else per-family
    defaults (``--family`` or config.json ``model_type``), then flag overrides."""
    if args.plan:
        plan = _load_json(Path(args.plan))
    else:
        plans = family_plans()
        family = args.family
        cfg_path = model_dir / "config.json"
        if family is None and cfg_path.exists():
            family = _load_json(cfg_path).get("model_type")
        if family not in plans["families"]:
            if args.family:
                raise ParseError(f"unknown model family {args.family!r}; known: {sorted(plans['families'])}")
            family = plans["default_family"]
        plan = dict(plans["families"][family])
    if args.embedding:
        plan["embedding"] = args.embedding
    if args.output:
        plan["output"] = args.output
    if args.tied:
        plan["output"] = None
    if not plan.get("embedding"):
        raise ParseError("surgery plan names no embedding tensor")
    plan.setdefault("output", None)
    plan.setdefault("vocab_axis", 0)
    if plan["vocab_axis"] not in (0, 1):
        raise ParseError(f"vocab_axis must be 0 or 1, got {plan['vocab_axis']!r}")
    return plan


def _remap_config(cfg: dict[str, Any], pmap: PruneMap, size: int) -> dict[str, Any]:
    out = dict(cfg)
    if "vocab_size" in out:
        out["vocab_size"] = size
    for key in ("bos_token_id", "eos_token_id", "pad_token_id"):
        v = out.get(key)
        if isinstance(v, int):
            out[key] = pmap.forward.get(v)
        elif isinstance(v, list):
            out[key] = [pmap.forward[x] for x in v if x in pmap.forward]
    return out


def cmd_prune(args: argparse.Namespace) -> int:
    started = _now()
    model_dir = Path(args.model_dir)
    out_dir = Path(args.out)
    if not model_dir.is_dir():
        raise FileNotFoundError(f"{model_dir}: model directory not found")
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise OutputExists(f"{out_dir}: output directory is not empty (use --force to overwrite)")
    if out_dir.resolve() == model_dir.resolve():
        raise OutputExists("output directory must differ from the model directory")

    tok_path = model_dir / TOKENIZER_FILE
    shards = shard_files(model_dir)
    inputs = [tok_path, *shards]
    for extra in (INDEX_FILE, "config.json"):
        if (model_dir / extra).exists():
            inputs.append(model_dir / extra)
    digests_before = {str(p): sha256(p) for p in inputs}

    cfg = resolve_config(args)
    tok = load_tokenizer(model_dir)
    result = prune(tok, cfg)
    plan = resolve_plan(args, model_dir)
    log.info("keeping %d of %d tokens", result.map.size, tok.size)

    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []
    new_tok_path = out_dir / TOKENIZER_FILE
    new_tok_path.write_bytes(serialize_tokenizer(result.tokenizer))
    outputs.append(new_tok_path)

    found_embedding = found_output = False
    hidden_dim = dtype_bytes = 0
    shard_sizes: dict[str, int] = {}
    for shard in shards:
        raw = shard.read_bytes()
        container = read_container(raw)
        present = [n for n in (plan["embedding"], plan["output"]) if n and n in container.entries]
        dest = out_dir / shard.name
        if not present:
            dest.write_bytes(raw)
        else:
            emb_here = plan["embedding"] in container.entries
            out_here = bool(plan["output"]) and plan["output"] in container.entries
            found_embedding |= emb_here
            found_output |= out_here
            if emb_here:
                e = container.entries[plan["embedding"]]
                hidden_dim = e.shape[1 - plan["vocab_axis"]] if len(e.shape) == 2 else 0
                dtype_bytes = e.width
            surgery = SurgeryPlan(
                embedding_tensor=plan["embedding"] if emb_here else plan["output"],
                output_tensor=plan["output"] if (emb_here and out_here) else None,
                vocab_axis=plan["vocab_axis"],
                map=result.map,
                original_size=tok.size,
            )
            dest.write_bytes(apply_surgery(container, surgery))
        shard_sizes[shard.name] = dest.stat().st_size
        outputs.append(dest)
    if not found_embedding:
        raise InvariantError(f"embedding tensor {plan['embedding']!r} not found in any container shard")
    tied = not found_output

    index = model_dir / INDEX_FILE
    if index.exists():
        doc = _load_json(index)
        total = 0
        for shard in shards:
            c = read_container((out_dir / shard.name).read_bytes())
            total += sum(e.nbytes for e in c.entries.values())
        doc.setdefault("metadata", {})["total_size"] = total
        (out_dir / INDEX_FILE).write_bytes(_dump_json(doc))
        outputs.append(out_dir / INDEX_FILE)
    if (model_dir / "config.json").exists():
        cfg_doc = _remap_config(_load_json(model_dir / "config.json"), result.map, result.tokenizer.size)
        (out_dir / "config.json").write_bytes(_dump_json(cfg_doc))
        outputs.append(out_dir / "config.json")

    report = result.report(tok, cfg, hidden_dim, dtype_bytes, tied)
    report_doc = {"config": cfg.to_json(), "plan": {**plan, "tied": tied}, "report": report.to_json()}
    (out_dir / REPORT_FILE).write_bytes(_dump_json(report_doc))
    outputs.append(out_dir / REPORT_FILE)

    digests_after = {str(p): sha256(p) for p in inputs}
    if digests_after != digests_before:
        raise InvariantError("an input file changed while pruning")
    manifest = {
        "tool": "vocab-prune",
        "tool_version": __version__,
        "command": "prune",
        "started": started,
        "finished": _now(),
        "inputs": [{"path": p, "sha256": d} for p, d in digests_before.items()],
        "outputs": [{"path": str(p), "sha256": sha256(p)} for p in outputs],
        "config": cfg.to_json(),
        "report": report.to_json(),
    }
    (out_dir / MANIFEST_FILE).write_bytes(_dump_json(manifest))
    sys.stdout.write(json.dumps(report.to_json(), ensure_ascii=False) + "\n")
    return 0


def recover_map(original: TokenizerDef, pruned: TokenizerDef) -> PruneMap:
    """Rebuild the old->new id map by matching stored token strings."""
    added_old = {a.content: a.id for a in original.added}
    old_ids = []
    for new_id in range(pruned.size):
        text = pruned.token_text(new_id)
        old = original.vocab.get(text, added_old.get(text))
        if old is None:
            raise InvariantError(f"pruned token {text!r} (id {new_id}) does not exist in the original tokenizer")
        old_ids.append(old)
    pmap = make_prune_map(old_ids)
    if list(pmap.kept) != old_ids:
        raise InvariantError("pruned ids are not an order-preserving renumbering of the original ids")
    return pmap


def cmd_verify(args: argparse.Namespace) -> int:
    original_dir, pruned_dir = Path(args.original_dir), Path(args.pruned_dir)
    corpus_path = Path(args.corpus)
    lines = corpus_path.read_text("utf-8").splitlines()
    original = load_tokenizer(original_dir)
    pruned = load_tokenizer(pruned_dir)
    manifest_cfg = None
    manifest = pruned_dir / MANIFEST_FILE
    if manifest.exists():
        manifest_cfg = _load_json(manifest).get("config")
    cfg = resolve_config(args, manifest_cfg)
    pmap = recover_map(original, pruned)
    report = verify_segmentation(original, pruned, pmap, lines, cfg.allowed, closure=cfg.closure.value)
    _emit(args, _dump_json(report.to_json()))
    return 0 if report.ok else 1


def _parse_scripts(names: str) -> frozenset[ScriptTag]:
    try:
        return frozenset(ScriptTag.parse(s) for s in names.split(",") if s.strip())
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def cmd_wpr(args: argparse.Namespace) -> int:
    text = Path(args.text_file).read_text("utf-8")
    result = wpr(text, _parse_scripts(args.scripts))
    _emit(args, _dump_json(result.to_json(max_failures=args.max_failures)))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        sizes = tuple(int(v.replace("_", "")) for v in args.vocab_sizes.split(",") if v.strip())
    except ValueError:
        raise ParseError(f"--vocab-sizes must be comma-separated integers, got {args.vocab_sizes!r}") from None
    cfg = BenchConfig(
        hidden_dim=args.hidden_dim,
        vocab_sizes=sizes,
        batch=args.batch,
        warmup_iters=args.warmup,
        timed_iters=args.iters,
        seed=args.seed,
        decoder_layers=args.decoder_layers,
    )
    if args.check_numerics:
        diag = check_numerics(min(cfg.hidden_dim, 64), min(max(sizes), 256), cfg.seed)
        log.info("numerics ok: %s", diag)
    result = run_bench(cfg)
    _emit(args, result.to_csv().encode("utf-8"))
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    tok = load_tokenizer(Path(args.model_dir))
    lines = ["id\tsurface\ttags\tspecial\tadded"]
    for r in token_records(tok):
        surface = json.dumps(r.surface, ensure_ascii=False)
        lines.append(f"{r.id}\t{surface}\t{format_tags(r.tags)}\t{int(r.is_special)}\t{int(r.is_added)}")
    _emit(args, ("\n".join(lines) + "\n").encode("utf-8"))
    return 0


def _emit(args: argparse.Namespace, payload: bytes) -> None:
    if getattr(args, "out", None):
        Path(args.out).write_bytes(payload)
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vocab-prune", description="Language-aware vocabulary pruning")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", help="PruneConfig JSON file")
        p.add_argument("--preset", choices=["enko", "enkozh"], help="overrides scripts from --config")

    p = sub.add_parser("prune", help="prune tokenizer and checkpoint")
    p.add_argument("model_dir")
    p.add_argument("--out", required=True, help="output directory")
    add_config_flags(p)
    p.add_argument("--plan", help="surgery plan JSON: {embedding, output, vocab_axis}")
    p.add_argument("--family", help="model family for default tensor names (see plans.json)")
    p.add_argument("--embedding", help="embedding tensor name")
    p.add_argument("--output", help="output projection tensor name")
    p.add_argument("--tied", action="store_true", help="treat embeddings as tied; gather only the embedding")
    p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("verify", help="check that pruning preserved segmentation")
    p.add_argument("original_dir")
    p.add_argument("pruned_dir")
    p.add_argument("corpus", help="UTF-8 text, one sample per line")
    add_config_flags(p)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("wpr", help="word-level pass rate of a text file")
    p.add_argument("text_file")
    p.add_argument("--scripts", required=True, help="comma-separated target scripts, e.g. hangul,latin")
    p.add_argument("--max-failures", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_wpr)

    p = sub.add_parser("bench", help="decode-step latency versus vocabulary size")
    p.add_argument("--hidden-dim", type=int, default=2048)
    p.add_argument("--vocab-sizes", default="65269,56660,41704")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decoder-layers", type=int, default=28, help="0 times the output projection alone")
    p.add_argument("--check-numerics", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("classify", help="dump per-token script tags as TSV")
    p.add_argument("model_dir", help="model directory or tokenizer file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except VocabPruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point wiring the pipeline stages together.

Every command that uses randomness refuses to run without an explicit --seed,
so any output can be regenerated bit-for-bit from its config. --dry-run
validates inputs and prints the execution plan without writing anything.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import asset_bank
from .corpus import MixSpec, TrainingExample, assemble_corpus, corpus_stats, render_stats, to_training_example
from .errors import AgroforgeError, UsageError
from .evals import GroupAccuracyTable, aggregate, build_eval_set, compare, run_eval
from .evals import EvalItem, Prediction
from .expert_eval import ExpertEvalStore, StudyConfig, create_app
from .gateway import Gateway, load_backend_configs
from .ingest import AttributeSchema, DatasetManifest, load_catalog, load_dataset, save_catalog, split_holdout
from .jsonl import read_jsonl, write_jsonl
from .knowledge import coverage_report, load_knowledge
from .synthesis import (
    Conversation,
    Description,
    Turn,
    generate_conversations,
    generate_descriptions,
)

log = logging.getLogger("agroforge")


def emit(args, event: str, **fields) -> None:
    if args.log_json:
        print(json.dumps({"event": event, **fields}, sort_keys=True))
    else:
        details = " ".join(f"{key}={value}" for key, value in fields.items())
        print(f"{event}: {details}" if details else event)


def _fail(message: str) -> "NoReturn":
    raise UsageError(message)


def _require_seed(args) -> int:
    if args.seed is None:
        _fail("--seed is required for this command (no implicit entropy)")
    return args.seed


def _config_value(args, key: str, default=None):
    value = getattr(args, key, None)
    if value not in (None, ""):
        return value
    return (args.config_data or {}).get(key, default)


def _require(args, key: str, flag: str):
    value = _config_value(args, key)
    if value in (None, ""):
        _fail(f"{flag} is required (flag or config file)")
    return value


def _existing_path(args, key: str, flag: str) -> Path:
    path = Path(_require(args, key, flag))
    if not path.exists():
        _fail(f"{flag}: path does not exist: {path}")
    return path


def _load_catalog_dir(path: Path):
    files = sorted(path.glob("*.json"))
    if not files:
        _fail(f"no catalog files in {path}")
    return [load_catalog(file) for file in files]


def _plan(args, lines: list[str]) -> bool:
    """Print the execution plan; return True when this is a dry run and the
    caller must stop before side effects."""
    for line in lines:
        emit(args, "plan", step=line)
    return args.dry_run


def _gateway(args) -> tuple[Gateway, str]:
    backends_path = _existing_path(args, "backends", "--backends")
    configs = load_backend_configs(backends_path)
    backend_id = _require(args, "backend", "--backend")
    if backend_id not in configs:
        _fail(f"--backend: {backend_id!r} not present in {backends_path}")
    cache_dir = _config_value(args, "cache_dir")
    return Gateway(configs, cache_dir=cache_dir), backend_id


def cmd_ingest(args) -> int:
    manifest_paths = [Path(p) for p in args.manifest]
    for path in manifest_paths:
        if not path.is_file():
            _fail(f"--manifest: no such file: {path}")
    out_dir = Path(_require(args, "out", "--out"))
    fraction = args.holdout_fraction
    if fraction is not None:
        _require_seed(args)
        if not 0.0 < fraction < 1.0:
            _fail(f"--holdout-fraction must be strictly between 0 and 1, got {fraction}")
        if args.holdout_out is None:
            _fail("--holdout-out is required with --holdout-fraction")
    if _plan(args, [f"ingest {len(manifest_paths)} manifest(s) -> {out_dir}"]
             + ([f"split holdout fraction {fraction} -> {args.holdout_out}"] if fraction else [])):
        return 0
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in manifest_paths:
        manifest = DatasetManifest.from_file(path)
        base = path.parent
        schema = AttributeSchema.from_file((base / manifest.schema_path) if not Path(manifest.schema_path).is_absolute() else manifest.schema_path)
        root = Path(manifest.root)
        if not root.is_absolute():
            root = base / root
        catalog = load_dataset(root, manifest, schema)
        if fraction is not None:
            train, holdout = split_holdout(catalog, fraction, args.seed)
            save_catalog(train, out_dir / f"{catalog.dataset_id}.json")
            holdout_dir = Path(args.holdout_out)
            holdout_dir.mkdir(parents=True, exist_ok=True)
            save_catalog(holdout, holdout_dir / f"{catalog.dataset_id}.json")
            emit(args, "ingested", dataset=catalog.dataset_id, records=len(catalog.records),
                 train=len(train.records), holdout=len(holdout.records))
        else:
            save_catalog(catalog, out_dir / f"{catalog.dataset_id}.json")
            emit(args, "ingested", dataset=catalog.dataset_id, records=len(catalog.records),
                 classes=len(catalog.classes))
    return 0


def cmd_knowledge(args) -> int:
    root = _existing_path(args, "root", "--root")
    catalog_dir = _existing_path(args, "catalogs", "--catalogs")
    out = Path(_require(args, "out", "--out"))
    if _plan(args, [f"load knowledge from {root}", f"coverage against catalogs in {catalog_dir} -> {out}"]):
        return 0
    kb = load_knowledge(root)
    catalogs = _load_catalog_dir(catalog_dir)
    report = coverage_report(kb, catalogs)
    payload = {
        coverage.domain: {
            "covered": coverage.covered,
            "missing": coverage.missing,
            "percent": round(coverage.percent, 2),
        }
        for coverage in report
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for coverage in report:
        emit(args, "coverage", domain=coverage.domain, percent=round(coverage.percent, 2),
             missing=len(coverage.missing))
    return 0


def cmd_synth_desc(args) -> int:
    seed = _require_seed(args)
    catalog_dir = _existing_path(args, "catalogs", "--catalogs")
    out = Path(_require(args, "out", "--out"))
    if _plan(args, [f"describe every record in {catalog_dir} via backend", f"write descriptions -> {out}"]):
        return 0
    gateway, backend_id = _gateway(args)
    qset = asset_bank.description_questions(_config_value(args, "questions"))
    catalogs = _load_catalog_dir(catalog_dir)
    image_root = _config_value(args, "image_root")
    rows = []
    failure_rows = []
    for catalog in catalogs:
        descriptions, failures = generate_descriptions(
            catalog.records, qset, gateway, backend_id, seed,
            image_root=Path(image_root) if image_root else None,
        )
        for description in descriptions:
            row = description.to_dict()
            row["domain"] = catalog.domain
            rows.append(row)
        failure_rows.extend(
            {"image_id": f.image_id, "stage": f.stage, "error": f.error, "detail": f.detail} for f in failures
        )
    rows.sort(key=lambda row: row["image_id"])
    write_jsonl(out, rows)
    if failure_rows:
        write_jsonl(out.with_suffix(".failures.jsonl"), failure_rows)
    emit(args, "descriptions", written=len(rows), failed=len(failure_rows), out=str(out))
    return 0


def cmd_synth_conv(args) -> int:
    catalog_dir = _existing_path(args, "catalogs", "--catalogs")
    descriptions_path = _existing_path(args, "descriptions", "--descriptions")
    knowledge_root = _existing_path(args, "knowledge_root", "--knowledge-root")
    out = Path(_require(args, "out", "--out"))
    if _plan(args, [f"assemble context from {catalog_dir}, {descriptions_path}, {knowledge_root}",
                    f"generate conversations -> {out}"]):
        return 0
    gateway, backend_id = _gateway(args)
    kb = load_knowledge(knowledge_root)
    example_bank = asset_bank.incontext_examples(_config_value(args, "examples"))
    prompt_bank = asset_bank.system_prompts(_config_value(args, "prompts"))
    blocklist = asset_bank.refusal_blocklist()
    descriptions = {}
    domains_from_rows = {}
    for row in read_jsonl(descriptions_path):
        descriptions[row["image_id"]] = Description.from_dict(row)
        if row.get("domain"):
            domains_from_rows[row["image_id"]] = row["domain"]
    catalogs = _load_catalog_dir(catalog_dir)
    rows = []
    failure_rows = []
    for catalog in catalogs:
        domain_by_record = {record.id: catalog.domain for record in catalog.records}
        conversations, failures = generate_conversations(
            catalog.records, descriptions, kb, example_bank, prompt_bank,
            domain_by_record, gateway, backend_id, refusal_blocklist=blocklist,
        )
        for conversation in conversations:
            row = conversation.to_dict()
            row["domain"] = catalog.domain
            rows.append(row)
        failure_rows.extend(
            {"image_id": f.image_id, "stage": f.stage, "error": f.error, "detail": f.detail} for f in failures
        )
    rows.sort(key=lambda row: row["image_id"])
    write_jsonl(out, rows)
    if failure_rows:
        write_jsonl(out.with_suffix(".failures.jsonl"), failure_rows)
    emit(args, "conversations", written=len(rows), failed=len(failure_rows), out=str(out))
    return 0


def cmd_synth_simple(args) -> int:
    seed = _require_seed(args)
    catalog_dir = _existing_path(args, "catalogs", "--catalogs")
    out = Path(_require(args, "out", "--out"))
    if _plan(args, [f"render rule-based QA pairs for records in {catalog_dir} -> {out}"]):
        return 0
    bank = asset_bank.simpleqa_templates(_config_value(args, "templates"))
    from .simpleqa import default_templates, render

    rows = []
    for catalog in _load_catalog_dir(catalog_dir):
        templates = default_templates(catalog.domain, bank)
        for record in catalog.records:
            for qa in render(record, templates, seed):
                row = qa.to_conversation().to_dict()
                row["domain"] = catalog.domain
                row["attribute_key"] = qa.attribute_key
                rows.append(row)
    rows.sort(key=lambda row: (row["image_id"], row["attribute_key"]))
    write_jsonl(out, rows)
    emit(args, "simple_qa", written=len(rows), out=str(out))
    return 0


def _pool_examples(pools_dir: Path, placeholder: str) -> dict[str, list[TrainingExample]]:
    """Convert the three synthesis outputs into training examples, keyed by
    kind. Descriptions become single-turn conversations whose question is the
    asset question they were generated from."""
    system_messages = asset_bank.corpus_system_messages()
    qset = asset_bank.description_questions()
    pools: dict[str, list[TrainingExample]] = {"description": [], "complex": [], "simple": []}
    seen: dict[str, int] = {}

    def example_id(kind: str, image_id: str) -> str:
        base = f"{kind}:{image_id}"
        count = seen.get(base, 0)
        seen[base] = count + 1
        return base if count == 0 else f"{base}#{count}"

    paths = {
        "description": pools_dir / "descriptions.jsonl",
        "complex": pools_dir / "conversations.jsonl",
        "simple": pools_dir / "simple.jsonl",
    }
    for kind, path in paths.items():
        if not path.is_file():
            continue
        for row in read_jsonl(path):
            if kind == "description":
                description = Description.from_dict(row)
                conv = Conversation(
                    image_id=description.image_id,
                    kind="description",
                    turns=(Turn(question=qset[description.question_index], answer=description.text),),
                    generator_model=description.generator_model,
                )
            else:
                conv = Conversation.from_dict(row)
            pools[kind].append(
                to_training_example(
                    conv,
                    system_messages[kind],
                    placeholder=placeholder,
                    example_id=example_id(kind, conv.image_id),
                    domain=row.get("domain", ""),
                )
            )
    return pools


def cmd_assemble(args) -> int:
    seed = _require_seed(args)
    pools_dir = _existing_path(args, "pools", "--pools")
    try:
        mix = MixSpec.parse(_require(args, "mix", "--mix"), seed=seed)
    except ValueError as exc:
        _fail(f"--mix: {exc}")
    out = Path(_require(args, "out", "--out"))
    if _plan(args, [f"load pools from {pools_dir}",
                    f"sample mix description={mix.description} complex={mix.complex} simple={mix.simple}",
                    f"write corpus -> {out}"]):
        return 0
    placeholder = _config_value(args, "placeholder", "<image>")
    pools = _pool_examples(pools_dir, placeholder)
    corpus = assemble_corpus(pools, mix)
    write_jsonl(out, (example.to_dict() for example in corpus))
    stats = corpus_stats(corpus)
    stats_path = Path(_config_value(args, "stats") or out.with_suffix(".stats.json"))
    stats_path.write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    emit(args, "corpus", size=stats.total, out=str(out), stats=str(stats_path))
    return 0


def cmd_eval_build(args) -> int:
    seed = _require_seed(args)
    holdout_dir = _existing_path(args, "holdout", "--holdout")
    out = Path(_require(args, "out", "--out"))
    if _plan(args, [f"build eval items from {holdout_dir} (cap {args.cap}) -> {out}"]):
        return 0
    tasks = asset_bank.eval_tasks(_config_value(args, "tasks_file"))
    if args.tasks:
        wanted = {name.strip() for name in args.tasks.split(",")}
        unknown = wanted - {task.task_id for task in tasks}
        if unknown:
            _fail(f"--tasks: unknown task ids: {', '.join(sorted(unknown))}")
        tasks = [task for task in tasks if task.task_id in wanted]
    catalogs = _load_catalog_dir(holdout_dir)
    items = build_eval_set(catalogs, tasks, args.cap, seed)
    write_jsonl(out, (item.to_dict() for item in items))
    emit(args, "eval_items", written=len(items), out=str(out))
    return 0


def cmd_eval_run(args) -> int:
    items_path = _existing_path(args, "items", "--items")
    out = Path(_require(args, "out", "--out"))
    if _plan(args, [f"run eval items {items_path} against backend -> {out}"]):
        return 0
    gateway, backend_id = _gateway(args)
    items = [EvalItem.from_dict(row) for row in read_jsonl(items_path)]
    image_root = _config_value(args, "image_root")
    predictions = run_eval(items, gateway, backend_id, image_root=Path(image_root) if image_root else None)
    write_jsonl(out, (prediction.to_dict() for prediction in predictions))
    failed = sum(1 for prediction in predictions if prediction.failed)
    emit(args, "eval_run", items=len(items), failed=failed, out=str(out))
    return 0


def cmd_eval_grade(args) -> int:
    items_path = _existing_path(args, "items", "--items")
    predictions_path = _existing_path(args, "predictions", "--predictions")
    out = Path(_require(args, "out", "--out"))
    if _plan(args, [f"grade {predictions_path} against {items_path} ({args.mode}) -> {out}"]):
        return 0
    items = [EvalItem.from_dict(row) for row in read_jsonl(items_path)]
    predictions = [Prediction.from_dict(row) for row in read_jsonl(predictions_path)]
    table = aggregate(items, predictions, mode=args.mode)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    text = compare([(args.name, table)])
    print(text)
    if args.text_out:
        Path(args.text_out).write_text(text + "\n", encoding="utf-8")
    emit(args, "eval_grade", out=str(out))
    return 0


def cmd_eval_compare(args) -> int:
    named = []
    for entry in args.table:
        name, _, path = entry.partition("=")
        if not path:
            _fail(f"--table expects NAME=REPORT.json, got {entry!r}")
        if not Path(path).is_file():
            _fail(f"--table: no such file: {path}")
        named.append((name, path))
    if _plan(args, [f"compare tables: {', '.join(name for name, _ in named)}"]):
        return 0
    tables = [
        (name, GroupAccuracyTable.from_dict(json.loads(Path(path).read_text(encoding="utf-8"))))
        for name, path in named
    ]
    text = compare(tables)
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_serve(args) -> int:
    config_path = _existing_path(args, "study_config", "--config")
    data_dir = Path(_require(args, "data_dir", "--data-dir"))
    study = StudyConfig.from_file(config_path)
    if _plan(args, [f"serve preference study ({len(study.items)} items) on port {args.port}",
                    f"persist votes under {data_dir}"]):
        return 0
    store = ExpertEvalStore(data_dir, default_config=study)
    static_dir = _config_value(args, "static_dir")
    images_root = _config_value(args, "images_root")
    app = create_app(store, static_dir=static_dir, images_root=images_root)
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_report(args) -> int:
    corpus_path = _existing_path(args, "corpus", "--corpus")
    out = Path(_require(args, "out", "--out"))
    if _plan(args, [f"compute corpus statistics for {corpus_path} -> {out}"]):
        return 0
    examples = [TrainingExample.from_dict(row) for row in read_jsonl(corpus_path)]
    stats = corpus_stats(examples)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    text = render_stats(stats)
    print(text)
    if args.text_out:
        Path(args.text_out).write_text(text + "\n", encoding="utf-8")
    emit(args, "report", total=stats.total, out=str(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agroforge", description="Agricultural instruction-data pipeline and evals.")
    parser.add_argument("--config", help="JSON file of default values for flags")
    parser.add_argument("--seed", type=int, default=None, help="seed for all randomized steps")
    parser.add_argument("--dry-run", action="store_true", help="validate and print the plan, write nothing")
    parser.add_argument("--log-json", action="store_true", help="emit line-oriented JSON events")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="load datasets into attribute catalogs")
    ingest.add_argument("--manifest", action="append", required=True, help="dataset manifest JSON (repeatable)")
    ingest.add_argument("--out", help="catalog output directory")
    ingest.add_argument("--holdout-fraction", type=float, dest="holdout_fraction")
    ingest.add_argument("--holdout-out", dest="holdout_out")
    ingest.set_defaults(func=cmd_ingest)

    knowledge = commands.add_parser("knowledge", help="load the knowledge base and report class coverage")
    knowledge.add_argument("--root", help="knowledge directory (one subdirectory per domain)")
    knowledge.add_argument("--catalogs", help="catalog directory")
    knowledge.add_argument("--out", help="coverage report JSON path")
    knowledge.set_defaults(func=cmd_knowledge)

    synth_desc = commands.add_parser("synth-desc", help="generate grounded image descriptions")
    synth_desc.add_argument("--catalogs")
    synth_desc.add_argument("--backends", help="backend config JSON")
    synth_desc.add_argument("--backend", help="backend id to use")
    synth_desc.add_argument("--out")
    synth_desc.add_argument("--image-root", dest="image_root")
    synth_desc.add_argument("--cache-dir", dest="cache_dir")
    synth_desc.set_defaults(func=cmd_synth_desc)

    synth_conv = commands.add_parser("synth-conv", help="generate multi-turn conversations")
    synth_conv.add_argument("--catalogs")
    synth_conv.add_argument("--descriptions")
    synth_conv.add_argument("--knowledge-root", dest="knowledge_root")
    synth_conv.add_argument("--backends")
    synth_conv.add_argument("--backend")
    synth_conv.add_argument("--out")
    synth_conv.add_argument("--cache-dir", dest="cache_dir")
    synth_conv.set_defaults(func=cmd_synth_conv)

    synth_simple = commands.add_parser("synth-simple", help="render rule-based QA pairs")
    synth_simple.add_argument("--catalogs")
    synth_simple.add_argument("--out")
    synth_simple.set_defaults(func=cmd_synth_simple)

    assemble = commands.add_parser("assemble", help="sample the corpus mix and emit training JSONL")
    assemble.add_argument("--pools", help="directory with descriptions.jsonl, conversations.jsonl, simple.jsonl")
    assemble.add_argument("--mix", help="description,complex,simple target counts")
    assemble.add_argument("--out")
    assemble.add_argument("--stats")
    assemble.add_argument("--placeholder")
    assemble.set_defaults(func=cmd_assemble)

    evals = commands.add_parser("eval", help="build, run, grade, and compare evaluations")
    eval_commands = evals.add_subparsers(dest="eval_command", required=True)

    eval_build = eval_commands.add_parser("build", help="sample eval items from holdout catalogs")
    eval_build.add_argument("--holdout")
    eval_build.add_argument("--cap", type=int, default=50, help="max items per task")
    eval_build.add_argument("--tasks", help="comma-separated task ids (default: all six)")
    eval_build.add_argument("--out")
    eval_build.set_defaults(func=cmd_eval_build)

    eval_run = eval_commands.add_parser("run", help="collect model predictions")
    eval_run.add_argument("--items")
    eval_run.add_argument("--backends")
    eval_run.add_argument("--backend")
    eval_run.add_argument("--image-root", dest="image_root")
    eval_run.add_argument("--cache-dir", dest="cache_dir")
    eval_run.add_argument("--out")
    eval_run.set_defaults(func=cmd_eval_run)

    eval_grade = eval_commands.add_parser("grade", help="grade predictions and aggregate accuracies")
    eval_grade.add_argument("--items")
    eval_grade.add_argument("--predictions")
    eval_grade.add_argument("--mode", choices=["strict", "containment"], default="containment")
    eval_grade.add_argument("--name", default="model", help="column name in the rendered table")
    eval_grade.add_argument("--out")
    eval_grade.add_argument("--text-out", dest="text_out")
    eval_grade.set_defaults(func=cmd_eval_grade)

    eval_compare = eval_commands.add_parser("compare", help="render tables side by side")
    eval_compare.add_argument("--table", action="append", required=True, help="NAME=REPORT.json (repeatable)")
    eval_compare.add_argument("--out")
    eval_compare.set_defaults(func=cmd_eval_compare)

    serve = commands.add_parser("serve-expert-eval", help="run the preference-study HTTP service")
    serve.add_argument("--config", dest="study_config", help="study config JSON")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--data-dir", dest="data_dir")
    serve.add_argument("--static-dir", dest="static_dir")
    serve.add_argument("--images-root", dest="images_root")
    serve.set_defaults(func=cmd_serve)

    report = commands.add_parser("report", help="corpus statistics report")
    report.add_argument("--corpus")
    report.add_argument("--out")
    report.add_argument("--text-out", dest="text_out")
    report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args.config_data = None
    if args.config:
        config_path = Path(args.config)
        if not config_path.is_file():
            print(json.dumps({"event": "error", "error": "UsageError", "detail": f"no such config: {config_path}"}),
                  file=sys.stderr)
            return 2
        try:
            args.config_data = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            print(json.dumps({"event": "error", "error": "UsageError", "detail": f"config is not valid JSON: {exc}"}),
                  file=sys.stderr)
            return 2
        if args.seed is None and "seed" in args.config_data:
            args.seed = int(args.config_data["seed"])
    try:
        return args.func(args)
    except UsageError as exc:
        print(json.dumps({"event": "error", "error": exc.name, "detail": str(exc)}), file=sys.stderr)
        return 2
    except AgroforgeError as exc:
        print(json.dumps({"event": "error", "error": exc.name, "detail": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

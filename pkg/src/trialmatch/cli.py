"""Command-line entry point: match, evaluate, select, distill, serve, stats.

Exit codes: 0 success, 2 unreadable/invalid inputs, 3 unresolvable backend,
4 incomparable runs, 5 internal error. Pair-level generation failures do not
fail a run; they are listed in its manifest. Credentials come only from the
BACKEND_API_KEY environment variable.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import annotation as annotation_service
from . import corpus as corpus_io
from . import distill as distill_mod
from . import engine
from . import evalmetrics
from . import textmetrics
from .corpus import CorpusFormatError
from .gateway import GenerationConfig, HttpChatBackend, ScriptedBackend, TranscriptJournal
from .manifest import RunManifest, read_manifest
from .model import EligibilityLabel

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BACKEND = 3
EXIT_COMPARABILITY = 4
EXIT_INTERNAL = 5

logger = logging.getLogger(__name__)


class CliError(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _load_corpus(patients, trials, qrels, sigir_mapping):
    try:
        return corpus_io.load_corpus(patients, trials, qrels, sigir_mapping=sigir_mapping)
    except (OSError, CorpusFormatError) as exc:
        raise CliError(f"cannot load corpus: {exc}", EXIT_INPUT)


def _resolve_backend(backend: str, mock_script, corpus, endpoint, model):
    if backend == "mock":
        if not mock_script:
            raise CliError("--backend mock requires --mock-script", EXIT_BACKEND)
        try:
            return ScriptedBackend.load(mock_script, corpus)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load mock script: {exc}", EXIT_BACKEND)
    if backend in ("http", "http-chat"):
        if not endpoint or not model:
            raise CliError(f"--backend {backend} requires --endpoint and --model", EXIT_BACKEND)
        default_temperature = 0.4 if backend == "http-chat" else 0.0
        return HttpChatBackend(endpoint, model, default_temperature=default_temperature)
    raise CliError(f"unknown backend {backend!r}", EXIT_BACKEND)


corpus_options = [
    click.option("--patients", required=True, type=click.Path(), help="patients JSON-lines file"),
    click.option("--trials", required=True, type=click.Path(), help="trials JSON-lines file"),
    click.option("--qrels", required=True, type=click.Path(), help="judgments TSV file"),
    click.option(
        "--sigir-mapping",
        is_flag=True,
        help="treat qrels grades as referral classes (0 irrelevant, 1 dropped, 2 eligible)",
    ),
]

backend_options = [
    click.option("--backend", default="mock", show_default=True, help="mock, http or http-chat"),
    click.option("--mock-script", type=click.Path(), help="scripted responses JSON-lines file"),
    click.option("--endpoint", help="chat-completions URL for http backends"),
    click.option("--model", help="model name for http backends"),
    click.option("--temperature", type=float, default=None, help="override backend default"),
    click.option("--include-exemplar/--no-exemplar", default=True, show_default=True),
]


def add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return wrap


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="log at DEBUG level")
def main(verbose: bool) -> None:
    """Criterion-level patient-to-trial matching toolkit."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("match")
@add_options(corpus_options)
@add_options(backend_options)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="output run directory")
def cmd_match(
    patients, trials, qrels, sigir_mapping, backend, mock_script, endpoint, model,
    temperature, include_exemplar, workers, seed, out,
):
    """Assess every judged pair and write assessments, rankings and a manifest."""
    corpus = _load_corpus(patients, trials, qrels, sigir_mapping)
    backend_port = _resolve_backend(backend, mock_script, corpus, endpoint, model)
    config = GenerationConfig(temperature=temperature, include_exemplar=include_exemplar)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command="match", config=config.to_dict(), seed=seed, backend=backend_port.name
    ).start()
    for path in (patients, trials, qrels):
        manifest.add_input(path)
    if mock_script:
        manifest.add_input(mock_script)
    journal = TranscriptJournal(out_dir / "transcripts.jsonl")
    assessments, failures = engine.assess_corpus(
        corpus, backend_port, config, workers=workers, journal=journal
    )
    engine.write_assessments(out_dir / "assessments.jsonl", assessments)
    ranked = engine.rank_all(assessments, failures)
    engine.write_ranked_lists(out_dir / "rankings", ranked)
    manifest.failures = [f.to_dict() for f in failures]
    manifest.finish()
    manifest.write(out_dir)
    click.echo(
        f"assessed {len(assessments)} pairs ({len(failures)} failures) "
        f"over {len(ranked)} patients -> {out_dir}"
    )


def _flatten_rows(assessments) -> list[textmetrics.CriterionRow]:
    rows = []
    for ta in assessments:
        for a in list(ta.inclusion) + list(ta.exclusion):
            rows.append(
                textmetrics.CriterionRow(
                    criterion_text=a.criterion_text,
                    predicted_label=a.label,
                    patient_id=ta.patient_id,
                    trial_id=ta.trial_id,
                    kind=a.kind,
                )
            )
    return rows


@main.command("evaluate")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=False))
@click.option("--qrels", required=True, type=click.Path())
@click.option("--sigir-mapping", is_flag=True)
@click.option("--annotations", type=click.Path(), help="gold annotations JSON-lines file")
@click.option("--judgment-journal", type=click.Path(),
              help="annotation-service journal; stored verdicts override gold in head-to-head")
@click.option("--out", required=True, type=click.Path(), help="report JSON path")
@click.option("--threshold", type=float, default=0.9, show_default=True,
              help="criterion alignment similarity threshold")
def cmd_evaluate(run_dirs, qrels, sigir_mapping, annotations, judgment_journal, out, threshold):
    """Evaluate one or more match runs against judgments and gold annotations."""
    try:
        judgments = corpus_io.load_judgments(qrels, sigir_mapping=sigir_mapping)
    except (OSError, CorpusFormatError) as exc:
        raise CliError(f"cannot load judgments: {exc}", EXIT_INPUT)
    runs = {}
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        try:
            manifest = read_manifest(run_dir)
            assessments = engine.read_assessments(run_dir / "assessments.jsonl")
            ranked = engine.read_ranked_lists(run_dir / "rankings")
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise CliError(f"cannot load run {run_dir}: {exc}", EXIT_INPUT)
        name = run_dir.name
        suffix = 2
        while name in runs:
            name = f"{run_dir.name}-{suffix}"
            suffix += 1
        runs[name] = {
            "manifest": manifest,
            "assessments": assessments,
            "ranked": ranked,
        }
    patient_sets = {
        name: {r.patient_id for r in run["ranked"]} for name, run in runs.items()
    }
    reference = next(iter(patient_sets.values()))
    for name, patient_set in patient_sets.items():
        if patient_set != reference:
            raise CliError(
                f"run {name!r} covers a different patient set; runs are not comparable",
                EXIT_COMPARABILITY,
            )
    gold = None
    if annotations:
        try:
            gold = corpus_io.load_annotations(annotations)
        except (OSError, CorpusFormatError) as exc:
            raise CliError(f"cannot load annotations: {exc}", EXIT_INPUT)
    report: dict = {"runs": {}, "head_to_head": []}
    summary_rows = []
    for name, run in runs.items():
        entry: dict = {"manifest": run["manifest"]}
        try:
            ranking = evalmetrics.rank_eval(run["ranked"], judgments)
            entry["ranking"] = ranking.to_dict()
        except evalmetrics.UndefinedMetricError as exc:
            entry["ranking"] = {"error": str(exc)}
            ranking = None
        if gold:
            try:
                criterion = evalmetrics.criterion_eval(run["assessments"], gold, threshold)
                entry["criterion"] = criterion.to_dict()
            except evalmetrics.UndefinedMetricError as exc:
                entry["criterion"] = {"error": str(exc)}
        report["runs"][name] = entry
        if ranking is not None:
            summary_rows.append(
                (name, ranking.ndcg_at_10, ranking.precision_at_10, ranking.auroc)
            )
    if gold and len(runs) > 1:
        verdict_store = None
        if judgment_journal:
            try:
                verdict_store = annotation_service.AnnotationStore(judgment_journal)
            except (OSError, json.JSONDecodeError, KeyError) as exc:
                raise CliError(f"cannot load judgment journal: {exc}", EXIT_INPUT)
        names = sorted(runs)
        for i, name_a in enumerate(names):
            for name_b in names[i + 1 :]:
                overrides = None
                if verdict_store is not None:
                    overrides = annotation_service.overrides_from_verdicts(
                        verdict_store, gold, name_a, name_b, threshold
                    )
                h2h = evalmetrics.head_to_head(
                    runs[name_a]["assessments"],
                    runs[name_b]["assessments"],
                    gold,
                    model_a=name_a,
                    model_b=name_b,
                    threshold=threshold,
                    overrides=overrides,
                )
                report["head_to_head"].append(h2h.to_dict())
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(report, f, ensure_ascii=False, sort_keys=True, indent=2)
        f.write("\n")
    tsv_path = out_path.with_suffix(".tsv")
    with open(tsv_path, "w", encoding="utf-8") as f:
        f.write("model\tndcg_at_10\tprecision_at_10\tauroc\n")
        for name, ndcg, precision, roc in summary_rows:
            f.write(f"{name}\t{ndcg:.6f}\t{precision:.6f}\t{roc:.6f}\n")
    click.echo(f"report -> {out_path} (summary {tsv_path})")


@main.command("select")
@click.argument("run_dir", type=click.Path())
@click.option("--tau", type=float, default=0.7, show_default=True,
              help="novelty threshold; a criterion is kept while its best score stays below tau")
@click.option("--per-label", type=int, default=100, show_default=True,
              help="final sample size per predicted label")
@click.option("--selected-per-label", type=int, default=500, show_default=True,
              help="pre-novelty sample size per predicted label")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="output directory")
def cmd_select(run_dir, tau, per_label, selected_per_label, seed, out):
    """Build the annotation selection pool from a match run."""
    run_dir = Path(run_dir)
    try:
        assessments = engine.read_assessments(run_dir / "assessments.jsonl")
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot load run {run_dir}: {exc}", EXIT_INPUT)
    rows = _flatten_rows(assessments)
    try:
        pool = textmetrics.build_selection_pool(
            rows,
            tau=tau,
            selected_per_label=selected_per_label,
            final_per_label=per_label,
            seed=seed,
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command="select",
        config={
            "tau": tau,
            "per_label": per_label,
            "selected_per_label": selected_per_label,
        },
        seed=seed,
        backend=None,
    ).start()
    manifest.add_input(run_dir / "assessments.jsonl")
    textmetrics.write_selection_pool(out_dir / "selection.jsonl", pool)
    with open(out_dir / "tasks.jsonl", "w", encoding="utf-8") as f:
        for row in pool.final:
            f.write(json.dumps(row.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    manifest.finish()
    manifest.write(out_dir)
    per_label_counts: dict[str, int] = {}
    for row in pool.final:
        per_label_counts[row.predicted_label.value] = (
            per_label_counts.get(row.predicted_label.value, 0) + 1
        )
    click.echo(
        f"pool sizes: predicted {len(pool.predicted)}, reduced {len(pool.reduced)}, "
        f"selected {len(pool.selected)}, novel {len(pool.novel)}, final {len(pool.final)} "
        f"{per_label_counts} -> {out_dir}"
    )


@main.command("distill")
@add_options(corpus_options)
@add_options(backend_options)
@click.option("-n", "--num-pairs", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="output directory")
def cmd_distill(
    patients, trials, qrels, sigir_mapping, backend, mock_script, endpoint, model,
    temperature, include_exemplar, num_pairs, seed, out,
):
    """Export validated teacher outputs as fine-tuning records."""
    corpus = _load_corpus(patients, trials, qrels, sigir_mapping)
    backend_port = _resolve_backend(backend, mock_script, corpus, endpoint, model)
    config = GenerationConfig(temperature=temperature, include_exemplar=include_exemplar)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command="distill",
        config={**config.to_dict(), "num_pairs": num_pairs},
        seed=seed,
        backend=backend_port.name,
    ).start()
    for path in (patients, trials, qrels):
        manifest.add_input(path)
    if mock_script:
        manifest.add_input(mock_script)
    try:
        pairs = distill_mod.sample_pairs(corpus, num_pairs, seed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT)
    journal = TranscriptJournal(out_dir / "transcripts.jsonl")
    records, failures = distill_mod.build_records(pairs, corpus, backend_port, config, journal)
    distill_mod.export_jsonl(records, out_dir / "records.jsonl")
    manifest.failures = [f.to_dict() for f in failures]
    manifest.finish()
    manifest.write(out_dir)
    click.echo(
        f"{len(records)} records from {len(pairs)} pairs "
        f"({len(failures)} skipped) -> {out_dir}"
    )


@main.command("serve")
@click.option("--journal", required=True, type=click.Path(), help="journal JSON-lines path")
@click.option("--listen", default="127.0.0.1:8400", show_default=True, help="host:port")
@click.option("--tasks", type=click.Path(), help="annotation tasks (selection final rows)")
@click.option("--judgment-tasks", type=click.Path(), help="blind judgment contexts JSON-lines")
@click.option("--patients", type=click.Path(), help="patients file, required for imports")
@click.option("--trials", type=click.Path(), help="trials file, required for imports")
@click.option("--static", type=click.Path(), help="static UI bundle directory to serve at /")
@click.option("--seed", type=int, default=None, help="seed for blind x/y assignment")
def cmd_serve(journal, listen, tasks, judgment_tasks, patients, trials, static, seed):
    """Run the annotation/adjudication HTTP service."""
    store = annotation_service.AnnotationStore(journal)
    if tasks or judgment_tasks:
        if not patients or not trials:
            raise CliError("task import needs --patients and --trials", EXIT_INPUT)
        corpus = _load_corpus(patients, trials, None, False)
        if tasks:
            rows = []
            try:
                with open(tasks, encoding="utf-8") as f:
                    for line in f:
                        if line.strip():
                            rows.append(textmetrics.CriterionRow.from_dict(json.loads(line)))
            except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
                raise CliError(f"cannot load tasks: {exc}", EXIT_INPUT)
            try:
                imported = store.import_tasks(rows, corpus)
            except annotation_service.ImportError_ as exc:
                raise CliError(f"task import failed: {exc}", EXIT_INPUT)
            click.echo(f"imported {imported} annotation tasks")
        if judgment_tasks:
            try:
                with open(judgment_tasks, encoding="utf-8") as f:
                    contexts = [json.loads(line) for line in f if line.strip()]
                imported = store.import_judgment_tasks(contexts, corpus, seed=seed)
            except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
                raise CliError(f"cannot load judgment tasks: {exc}", EXIT_INPUT)
            except annotation_service.ImportError_ as exc:
                raise CliError(f"judgment import failed: {exc}", EXIT_INPUT)
            click.echo(f"imported {imported} judgment tasks")
    app = annotation_service.create_app(store)
    if static:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static, html=True), name="ui")
    host, _, port = listen.partition(":")
    import uvicorn

    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or "8400"), log_level="warning")


@main.command("stats")
@add_options(corpus_options)
@click.option("--out", type=click.Path(), help="optional directory for stats.json + manifest")
def cmd_stats(patients, trials, qrels, sigir_mapping, out):
    """Print corpus statistics (pairs, patients, trials, per-patient spreads)."""
    corpus = _load_corpus(patients, trials, qrels, sigir_mapping)
    stats = corpus_io.corpus_stats(corpus)
    report = stats.to_dict()
    width = max(len(k) for k in report)
    for key, value in report.items():
        if isinstance(value, list):
            click.echo(f"{key:<{width}}  {value[0]:.3f} ± {value[1]:.3f}")
        else:
            click.echo(f"{key:<{width}}  {value}")
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "stats.json", "w", encoding="utf-8") as f:
            json.dump(report, f, ensure_ascii=False, sort_keys=True, indent=2)
            f.write("\n")
        manifest = RunManifest(command="stats", config={}, seed=None, backend=None).start()
        for path in (patients, trials, qrels):
            manifest.add_input(path)
        manifest.finish()
        manifest.write(out_dir)


if __name__ == "__main__":
    main()

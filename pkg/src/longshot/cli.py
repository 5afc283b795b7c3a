"""Single `longshot` executable exposing the pipeline as subcommands.

Every command takes --seed and is a deterministic function of (config, inputs,
seed, cassettes): repeated runs produce byte-identical outputs. Exit codes:
0 success, 2 usage/config error, 3 external-service failure, 4 validation
failure. Secrets travel only via environment variables.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click

from . import corruption, dsa, harness, orthogonality
from .corruption import (
    RotationTransformer,
    TextEmbedTransformer,
    classify_sensitivity,
    load_shot_bank,
    sensitivity_summary,
    sweep,
    sweep_to_csv,
)
from .embedder import (
    CompositeProvider,
    EmbeddingStore,
    MockProvider,
    RemoteProvider,
    load_store,
    save_store_json,
)
from .errors import LongshotError, ServiceError, ValidationError
from .harness import build_suite, emit_report, human_aggregate, ingest_ratings
from .judge import ChatClient, JudgeConfig, judge_score, load_reference_bank
from .manifest import (
    load_manifest,
    load_prompt_suite,
    save_manifest,
    save_prompt_suite,
)
from .orthogonality import estimate_orthogonality, sample_ensemble
from .synthetic import mean_quality_metric

EXIT_SERVICE = 3
EXIT_VALIDATION = 4


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ServiceError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_SERVICE)
        except LongshotError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


def _load_config_file(path: str) -> dict:
    """Parse `command.flag = value` lines into a click default map."""
    defaults: dict[str, dict[str, str]] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{line_no}: expected 'command.flag = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise click.UsageError(f"{path}:{line_no}: key must look like 'command.flag'")
        section, option = key.split(".", 1)
        defaults.setdefault(section, {})[option] = value
    # click keys the default map by parameter name, not flag spelling
    for section, options in defaults.items():
        command = main.commands.get(section)
        if command is None:
            raise click.UsageError(f"{path}: unknown command {section!r}")
        by_flag = {
            opt.lstrip("-"): param.name
            for param in command.params
            for opt in param.opts
        }
        defaults[section] = {
            by_flag.get(flag, flag.replace("-", "_")): value
            for flag, value in options.items()
        }
    return defaults


@click.group()
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Key-value config file; flags override its values.",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Long-video structural metrics, judge scoring, corruption sweeps."""
    if config_path:
        ctx.default_map = _load_config_file(config_path)


def _build_provider(store_path, mock_dim, embed_endpoint, bank=None):
    if store_path and embed_endpoint:
        raise ValidationError("choose one of --store or --embed-endpoint, not both")
    if store_path:
        base = load_store(store_path)
    elif embed_endpoint:
        base = RemoteProvider(embed_endpoint)
    else:
        base = MockProvider(dim=mock_dim or 16)
    if bank is not None:
        return CompositeProvider(base, bank.overlay())
    return base


def _make_judge_client(cassettes, endpoint, mode) -> ChatClient:
    return ChatClient(endpoint=endpoint, cassette_dir=cassettes, mode=mode)


embedding_options = [
    click.option("--store", "store_path", type=click.Path(exists=True, dir_okay=False),
                 default=None, help="Embedding store file (JSON or binary)."),
    click.option("--mock-dim", type=int, default=None,
                 help="Use the deterministic mock embedder at this dimension."),
    click.option("--embed-endpoint", default=None, help="Remote embedding service URL."),
]


def with_options(options):
    def apply(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return apply


@main.command("score")
@click.option("--suite", "suite_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@with_options(embedding_options)
@click.option("--bank", "bank_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Shot bank whose embeddings overlay the provider (for corrupted manifests).")
@click.option("--mode", type=click.Choice(dsa.EMBED_MODES), default="positional-pool",
              show_default=True)
@click.option("--alpha", type=float, default=dsa.DEFAULT_ALPHA, show_default=True)
@click.option("--skip-judge", is_flag=True, help="Emit the structural score only.")
@click.option("--judge-cassettes", type=click.Path(file_okay=False), default=None)
@click.option("--judge-endpoint", default=None)
@click.option("--judge-mode", type=click.Choice(("replay", "record", "live")), default="replay",
              show_default=True)
@click.option("--judge-model", default="judge-model", show_default=True)
@click.option("--ref-bank", "ref_bank_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Reference bank JSON for judge rounds.")
@click.option("--jobs", type=int, default=4, show_default=True,
              help="Bound on in-flight judge requests.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def cmd_score(suite_path, manifest_path, store_path, mock_dim, embed_endpoint, bank_path,
              mode, alpha, skip_judge, judge_cassettes, judge_endpoint, judge_mode,
              judge_model, ref_bank_path, jobs, seed, out_path):
    """Score one manifest: structural metric plus (optionally) the judge score."""
    suite = load_prompt_suite(suite_path)
    manifest = load_manifest(manifest_path, suite=suite)
    bank = load_shot_bank(bank_path) if bank_path else None
    provider = _build_provider(store_path, mock_dim, embed_endpoint, bank)
    raw, m_dsa = dsa.score_manifest(suite, manifest, provider, mode=mode)
    if skip_judge:
        record = dsa.score_record(manifest, raw, m_dsa, embed_mode=mode)
    else:
        if not ref_bank_path:
            raise ValidationError("judge scoring needs --ref-bank (or pass --skip-judge)")
        if not judge_cassettes and judge_mode != "live":
            raise ValidationError("judge scoring needs --judge-cassettes (or --judge-mode live)")
        cfg = JudgeConfig(
            endpoint=judge_endpoint, model_name=judge_model, seed=seed, max_in_flight=jobs
        )
        client = _make_judge_client(judge_cassettes, judge_endpoint, judge_mode)
        transcript = judge_score(manifest, suite, load_reference_bank(ref_bank_path), cfg, client)
        fused = dsa.fuse(m_dsa, transcript.m_mllm, alpha=alpha, raw_spearman=raw)
        record = dsa.score_record(manifest, raw, m_dsa, embed_mode=mode, fused=fused)
    Path(out_path).write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(f"wrote {out_path}")


@main.command("corrupt")
@click.option("--op", "operator", required=True, type=click.Choice(corruption.OPERATORS))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--suite", "suite_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Prompt suite (needed by synthesize's default captioner).")
@with_options(embedding_options)
@click.option("--strength", type=float, default=None, help="Shuffle fraction in (0, 1].")
@click.option("--k", type=int, default=None, help="Block count for replace/edit/synthesize.")
@click.option("--bank", "bank_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--block-s", type=float, default=corruption.DEFAULT_BLOCK_S, show_default=True)
@click.option("--rewriter-prefix", default="surreal: ", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out-store", "out_store_path", type=click.Path(dir_okay=False), default=None,
              help="Where to write embeddings minted by edit/synthesize.")
@handle_errors
def cmd_corrupt(operator, manifest_path, suite_path, store_path, mock_dim, embed_endpoint,
                strength, k, bank_path, block_s, rewriter_prefix, seed, out_path,
                out_store_path):
    """Apply one corruption operator and write the corrupted manifest."""
    manifest = load_manifest(manifest_path)
    provider = _build_provider(store_path, mock_dim, embed_endpoint)
    transformer = None
    if operator == "shuffle":
        if strength is None:
            raise ValidationError("shuffle needs --strength")
        corrupted = corruption.shuffle(manifest, strength, seed, block_s=block_s)
    elif operator == "replace":
        if k is None or not bank_path:
            raise ValidationError("replace needs --k and --bank")
        bank = load_shot_bank(bank_path)
        corrupted = corruption.replace(manifest, bank, k, provider, seed, block_s=block_s)
    elif operator == "edit":
        if k is None:
            raise ValidationError("edit needs --k")
        transformer = RotationTransformer(provider)
        corrupted = corruption.edit(manifest, k, transformer, seed, block_s=block_s)
    else:
        if k is None:
            raise ValidationError("synthesize needs --k")
        if not suite_path:
            raise ValidationError("synthesize needs --suite for its captioner")
        suite = load_prompt_suite(suite_path)
        captions = {shot.index: shot.description for shot in suite.shots}

        def captioner(shot):
            return captions[shot.index]

        transformer = TextEmbedTransformer(provider)
        corrupted = corruption.synthesize(
            manifest, k, lambda c: rewriter_prefix + c, transformer, seed,
            captioner=captioner, block_s=block_s,
        )
    save_manifest(corrupted, out_path)
    if transformer is not None and transformer.overlay:
        if not out_store_path:
            raise ValidationError(f"{operator} mints embeddings; pass --out-store")
        dim = next(iter(transformer.overlay.values())).dim
        overlay_store = EmbeddingStore(embedder_id=provider.embedder_id, dim=dim)
        for ref, embedding in transformer.overlay.items():
            overlay_store.add(ref, embedding.values)
        save_store_json(overlay_store, out_store_path)
    click.echo(f"wrote {out_path}")


def _parse_strengths(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ValidationError(f"bad strength list {text!r}: {exc}") from None


@main.command("sweep")
@click.option("--op", "operator", required=True, type=click.Choice(("shuffle", "replace")))
@click.option("--metric", "metric_name", type=click.Choice(("dsa", "mean-quality")),
              default="dsa", show_default=True)
@click.option("--suite", "suite_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--manifest", "manifest_paths", multiple=True,
              type=click.Path(exists=True, dir_okay=False), required=True)
@with_options(embedding_options)
@click.option("--bank", "bank_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--strengths", default="0,0.2,0.4,0.8", show_default=True)
@click.option("--trials", type=int, default=3, show_default=True)
@click.option("--mode", type=click.Choice(dsa.EMBED_MODES), default="positional-pool",
              show_default=True)
@click.option("--block-s", type=float, default=corruption.DEFAULT_BLOCK_S, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-csv", required=True, type=click.Path(dir_okay=False))
@click.option("--out-summary", type=click.Path(dir_okay=False), default=None)
@handle_errors
def cmd_sweep(operator, metric_name, suite_path, manifest_paths, store_path, mock_dim,
              embed_endpoint, bank_path, strengths, trials, mode, block_s, seed,
              out_csv, out_summary):
    """Corrupt manifests over a strength schedule and tabulate metric scores."""
    bank = load_shot_bank(bank_path) if bank_path else None
    provider = _build_provider(store_path, mock_dim, embed_endpoint, bank)
    manifests = [load_manifest(p) for p in manifest_paths]
    strength_values = _parse_strengths(strengths)

    if metric_name == "dsa":
        if not suite_path:
            raise ValidationError("the dsa metric needs --suite")
        suite = load_prompt_suite(suite_path)

        def metric(m):
            return dsa.score_manifest(suite, m, provider, mode=mode)[1]
    else:
        metric = mean_quality_metric

    if operator == "shuffle":
        def apply_op(m, strength, trial_seed):
            return corruption.shuffle(m, strength, trial_seed, block_s=block_s)
    else:
        if bank is None:
            raise ValidationError("replace sweeps need --bank")

        def apply_op(m, strength, trial_seed):
            return corruption.replace(
                m, bank, int(strength), provider, trial_seed, block_s=block_s
            )

    result = sweep(metric, metric_name, manifests, operator, apply_op,
                   strength_values, trials, seed)
    sweep_to_csv(result, out_csv)
    if out_summary:
        sensitivity = classify_sensitivity(result)
        Path(out_summary).write_text(
            json.dumps(sensitivity_summary(result, sensitivity), indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
    click.echo(f"wrote {out_csv}")


@main.command("orthogonality")
@click.option("--regime", type=click.Choice(orthogonality.REGIMES), default="independent",
              show_default=True)
@click.option("--k", type=int, default=8, show_default=True)
@click.option("--n", type=int, default=10000, show_default=True)
@click.option("--bins", type=int, default=16, show_default=True)
@click.option("--phi", type=click.Choice(orthogonality.AGGREGATORS), default="mean",
              show_default=True)
@click.option("--dim", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def cmd_orthogonality(regime, k, n, bins, phi, dim, seed, out_path):
    """Estimate short-vs-long metric mutual information on a synthetic ensemble."""
    ensemble = sample_ensemble(k, n, regime, seed, dim=dim)
    report = estimate_orthogonality(ensemble, phi=phi, bins=bins)
    orthogonality.write_report(report, out_path)
    click.echo(
        f"{regime}: mi_bits={report.mi_bits:.4f} "
        f"permutation_invariance={report.permutation_invariance_holds}"
    )


def _load_score_table(path: str) -> tuple[dict[str, dict[str, float]], dict[str, str]]:
    """Score CSV (video_id,model_id,metric,value) -> per-metric scores + grouping."""
    scores: dict[str, dict[str, float]] = {}
    grouping: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["video_id", "model_id", "metric", "value"]
        if reader.fieldnames != expected:
            raise ValidationError(f"{path}: header must be {','.join(expected)}")
        for row in reader:
            scores.setdefault(row["metric"], {})[row["video_id"]] = float(row["value"])
            grouping[row["video_id"]] = row["model_id"]
    return scores, grouping


@main.command("correlate")
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ratings", "ratings_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(("csv", "json")), default="json",
              show_default=True)
@click.option("--ablate", "do_ablate", is_flag=True,
              help="Emit the per-dimension ablation grid instead of per-model correlations.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Accepted for CLI uniformity; this command has no stochastic step.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def cmd_correlate(scores_path, ratings_path, fmt, do_ablate, seed, out_path):
    """Correlate metric scores with human ratings and write the report."""
    scores, grouping = _load_score_table(scores_path)
    ratings = ingest_ratings(ratings_path)
    if do_ablate:
        for required in ("m_dsa", "m_mllm", "fused"):
            if required not in scores:
                raise ValidationError(f"ablation needs metric {required!r} in the score table")
        report = harness.ablate(scores["m_dsa"], scores["m_mllm"], scores["fused"], ratings)
        emit_report(report, out_path, format=fmt)
    else:
        human = human_aggregate(ratings, scope="overall")
        reports = [
            harness.correlate(scores[name], human, grouping, metric_name=name)
            for name in sorted(scores)
        ]
        emit_report(reports, out_path, format=fmt)
    click.echo(f"wrote {out_path}")


@main.command("build")
@click.option("--seed-frame", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--cassettes", type=click.Path(file_okay=False), default=None)
@click.option("--judge-endpoint", default=None)
@click.option("--judge-mode", type=click.Choice(("replay", "record", "live")), default="replay",
              show_default=True)
@click.option("--judge-model", default="judge-model", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def cmd_build(seed_frame, cassettes, judge_endpoint, judge_mode, judge_model, seed, out_path):
    """Build a prompt suite from a story-seed frame via the judge service."""
    cfg = JudgeConfig(endpoint=judge_endpoint, model_name=judge_model, seed=seed)
    client = _make_judge_client(cassettes, judge_endpoint, judge_mode)
    suite = build_suite(seed_frame, cfg, client)
    save_prompt_suite(suite, out_path)
    click.echo(f"wrote {out_path} ({suite.k} shots, {suite.total_duration_s:.0f} s)")


if __name__ == "__main__":
    main()

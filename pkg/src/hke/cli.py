"""Command line entry points: dataset generation, runs, ablations, serving."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .dataset import (
    Dataset,
    LatentHierarchy,
    generate_blobs,
    generate_shapes,
    load_dataset,
    save_dataset,
    shape_hierarchy,
)
from .experiment import (
    ExperimentConfig,
    report,
    run_ablation,
    run_elicitation,
    subseed,
)
from .hierarchy import HierarchyTree
from .participants import (
    VirtualParticipant,
    cifar_class_tree,
    make_paper_participants,
)

PAPER_NAMES = ("participant1", "participant2", "participant3")


def resolve_dataset(ref: str) -> tuple[Dataset, LatentHierarchy | None]:
    """A dataset reference is either a CSV path or a generator spec.

    Generator specs are "shapes:<seed>" and "blobs:<seed>"; the blob form
    builds the ten-class object dataset used by the canonical experiments.
    """
    kind, _, arg = ref.partition(":")
    if kind == "shapes":
        return generate_shapes(seed=int(arg or 0))
    if kind == "blobs":
        tree = cifar_class_tree()
        return generate_blobs(tree, per_leaf=100, dim=32, seed=int(arg or 0)), tree
    return load_dataset(ref), None


def resolve_participant(
    ref: str, dataset: Dataset, latent: LatentHierarchy | None, seed: int
) -> VirtualParticipant:
    """Participant references: participant1..3, or "latent" for the dataset's
    own generating hierarchy (shapes)."""
    if ref in PAPER_NAMES:
        participants = make_paper_participants(dataset, seed=seed)
        return participants[PAPER_NAMES.index(ref)]
    if ref == "latent":
        tree = latent or shape_hierarchy()
        return VirtualParticipant(ref, tree, dataset, seed=seed)
    raise click.ClickException(
        f"unknown participant {ref!r}; expected one of {PAPER_NAMES} or 'latent'"
    )


@click.group()
def main() -> None:
    """Hierarchy knowledge elicitation tools."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="run", show_default=True, type=click.Path())
def run(config_path: str, out_dir: str) -> None:
    """Run one elicitation experiment from a JSON config file."""
    config = ExperimentConfig.from_dict(json.loads(Path(config_path).read_text()))
    if not config.dataset or not config.participant:
        raise click.ClickException("config must set dataset and participant")
    dataset, latent = resolve_dataset(config.dataset)
    participant = resolve_participant(
        config.participant, dataset, latent, seed=subseed(config.seed, 6, 0)
    )
    result = run_elicitation(dataset, participant, config)
    paths = report(result, out_dir)
    click.echo(f"final purity {result.final_purity:.4f}")
    for name, path in sorted(paths.items()):
        click.echo(f"{name}: {path}")


@main.command()
@click.option("--dataset", "dataset_ref", required=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", default="ablation.json", show_default=True)
@click.option("--iterations", default=4, show_default=True, type=int)
@click.option("--initial", default=1000, show_default=True, type=int)
@click.option("--budget", default=600, show_default=True, type=int)
def ablate(
    dataset_ref: str, seed: int, out_path: str, iterations: int, initial: int, budget: int
) -> None:
    """Compare selection and margin strategies on the canonical participants."""
    dataset, _ = resolve_dataset(dataset_ref)
    participants = make_paper_participants(dataset, seed=subseed(seed, 6, 0))
    config = ExperimentConfig(
        initial_questions=initial, iterations=iterations, budget=budget, seed=seed
    )
    table = run_ablation(dataset, participants, config)
    Path(out_path).write_text(json.dumps(table, sort_keys=True, indent=2) + "\n")
    click.echo(f"wrote {out_path}")
    for name, curves in table["participants"].items():
        finals = {arm: round(curve[-1], 4) for arm, curve in curves.items()}
        click.echo(f"{name}: {finals}")


@main.command("export-tree")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def export_tree(run_dir: str, out_path: str | None) -> None:
    """Flatten a run's tree into item,leaf,path CSV rows."""
    tree = HierarchyTree.load(Path(run_dir) / "tree.json")
    csv_text = tree.assignments_csv()
    if out_path:
        Path(out_path).write_text(csv_text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(csv_text, nl=False)


@main.command("gen-shapes")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def gen_shapes(seed: int, out_dir: str) -> None:
    """Write the shape dataset as CSV plus its generating hierarchy."""
    dataset, latent = generate_shapes(seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "shapes.csv"
    save_dataset(dataset, csv_path)
    latent.save(out / "latent.json")
    click.echo(f"wrote {csv_path} ({len(dataset.items)} items)")


@main.command()
@click.option("--dataset", "dataset_ref", required=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--state-dir", default="state", show_default=True, type=click.Path())
def serve(
    dataset_ref: str, config_path: str | None, port: int, host: str, state_dir: str
) -> None:
    """Serve the elicitation HTTP API over a dataset."""
    import uvicorn

    from .service import create_app

    dataset, _ = resolve_dataset(dataset_ref)
    config = None
    if config_path:
        config = ExperimentConfig.from_dict(json.loads(Path(config_path).read_text()))
    app = create_app(dataset, state_dir, config)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()

"""Batch command-line front end.

Subcommands wire the analyses into the filter -> score -> model-check
pipeline: ``filter`` runs the rule engine over a descriptor directory,
``train``/``score`` drive the Bayes model, ``mc`` model-checks one pair,
and ``pipeline`` chains all three stages. Exit codes are script
friendly: 0 findings / 1 none / 2 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import bayes, model_checker, rule_engine
from .app_model import AppDescriptor, parse_descriptor
from .errors import CollusionScanError

EXIT_FINDINGS = 0
EXIT_NONE = 1
EXIT_ERROR = 2


@dataclass(frozen=True)
class PipelineConfig:
    threshold: float = bayes.DEFAULT_THRESHOLD
    max_path_len: int = 4
    max_states: int = 10000
    permission_map_path: Optional[str] = None
    criticality_path: Optional[str] = None
    model_path: Optional[str] = None

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.max_path_len < 2:
            raise ValueError("max_path_len must be at least 2")


def _load_descriptor_dir(path: str) -> list[AppDescriptor]:
    directory = Path(path)
    if not directory.is_dir():
        raise CollusionScanError(f"{path} is not a directory")
    descriptors = []
    for file in sorted(directory.glob("*.json")):
        descriptors.append(parse_descriptor(file.read_text("utf-8"), source=str(file)))
    if len(descriptors) < 2:
        raise CollusionScanError(f"{path}: need at least two descriptors, found {len(descriptors)}")
    # A stable, human-friendly order: numeric ids first, then the rest.
    descriptors.sort(key=lambda d: (0, int(d.id)) if d.id.isdigit() else (1, d.id))
    return descriptors


def _load_descriptor_file(path: str) -> AppDescriptor:
    return parse_descriptor(Path(path).read_text("utf-8"), source=path)


def _permission_map(path: Optional[str]) -> rule_engine.PermissionActionMap:
    if path is None:
        return rule_engine.default_permission_map()
    return rule_engine.load_permission_map(Path(path).read_text("utf-8"))


def _write_output(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _score_pairs(model, apps, threshold):
    reports = {}
    for i in range(len(apps)):
        for j in range(i + 1, len(apps)):
            pair = (apps[i].id, apps[j].id)
            reports[pair] = bayes.score(model, [apps[i], apps[j]], threshold)
    return reports


def _score_csv(apps: Sequence[AppDescriptor], reports) -> str:
    """Upper-triangular L_tau grid (lower half left empty, diagonal empty)."""
    ids = [a.id for a in apps]
    lines = ["id," + ",".join(ids)]
    for i, src in enumerate(ids):
        row = [src]
        for j, dst in enumerate(ids):
            if j <= i:
                row.append("")
            else:
                row.append(f"{reports[(src, dst)].l_tau:.6f}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _verdict_csv(apps: Sequence[AppDescriptor], reports) -> str:
    ids = [a.id for a in apps]
    lines = ["id," + ",".join(ids)]
    for i, src in enumerate(ids):
        row = [src]
        for j, dst in enumerate(ids):
            if j <= i:
                row.append("")
            else:
                verdict = reports[(src, dst)].verdict
                row.append("C" if verdict is bayes.Verdict.Colluding else "")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_filter(args) -> int:
    apps = _load_descriptor_dir(args.descriptor_dir)
    pmap = _permission_map(args.permission_map)
    matrix = rule_engine.detect(apps, pmap, max_len=args.max_path_len)
    if args.format == "json":
        text = json.dumps(rule_engine.matrix_to_json(matrix), indent=2) + "\n"
    else:
        text = rule_engine.matrix_to_csv(matrix)
    _write_output(text, args.out)
    if args.figures:
        from . import report

        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        report.render_collusion_matrix(matrix, str(fig_dir / "collusion_matrix.png"))
    return EXIT_FINDINGS if matrix.cells else EXIT_NONE


def cmd_train(args) -> int:
    rows = bayes.training_from_csv(Path(args.training_csv).read_text("utf-8"))
    criticality = bayes.DEFAULT_CRITICALITY
    if args.criticality:
        criticality = bayes.load_criticality(Path(args.criticality).read_text("utf-8"))
    model = bayes.estimate_lambdas([vec for vec, _ in rows], criticality)
    Path(args.out_model).write_text(bayes.save_model(model), encoding="utf-8")
    print(f"trained on {model.n_train} apps, {len(model.vocabulary)} permissions "
          f"-> {args.out_model}")
    return EXIT_FINDINGS


def cmd_score(args) -> int:
    apps = _load_descriptor_dir(args.descriptor_dir)
    model = bayes.load_model(Path(args.model).read_text("utf-8"))
    if not model.vocabulary:
        raise CollusionScanError("model vocabulary is empty")
    reports = _score_pairs(model, apps, args.threshold)
    if args.format == "json":
        doc = [
            {
                "pair": list(pair),
                "l_tau": report.l_tau,
                "l_com": report.l_com,
                "possibility": report.possibility,
                "verdict": report.verdict.value,
                "unknown_permissions": report.unknown_permissions,
            }
            for pair, report in sorted(reports.items())
        ]
        _write_output(json.dumps(doc, indent=2) + "\n", args.out)
    else:
        text = _score_csv(apps, reports)
        if args.out:
            _write_output(text, args.out)
            verdict_path = str(Path(args.out).with_suffix(".verdicts.csv"))
            Path(verdict_path).write_text(_verdict_csv(apps, reports), encoding="utf-8")
        else:
            sys.stdout.write(text)
            sys.stdout.write(_verdict_csv(apps, reports))
    if args.figures:
        from . import report

        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        report.render_score_matrix(
            [a.id for a in apps], reports, str(fig_dir / "score_matrix.png"),
            threshold=args.threshold,
        )
    colluding = any(r.verdict is bayes.Verdict.Colluding for r in reports.values())
    return EXIT_FINDINGS if colluding else EXIT_NONE


def cmd_mc(args) -> int:
    app_a = _load_descriptor_file(args.descriptor_a)
    app_b = _load_descriptor_file(args.descriptor_b)
    for app in (app_a, app_b):
        if not app.methods:
            raise CollusionScanError(f"descriptor {app.id} carries no methods")
    verdict = model_checker.explore([app_a, app_b], max_states=args.max_states)
    if verdict.colluding:
        print(f"colluding: {verdict.threat.code} "
              f"(states explored: {verdict.states_explored})")
        witness = model_checker.emit_witness(verdict.witness)
        sys.stdout.write(witness)
        if args.out:
            Path(args.out).write_text(witness, encoding="utf-8")
        return EXIT_FINDINGS
    print(f"non-colluding (states explored: {verdict.states_explored})")
    return EXIT_NONE


def _run_pipeline(apps: list[AppDescriptor], config: PipelineConfig) -> dict:
    pmap = _permission_map(config.permission_map_path)
    matrix = rule_engine.detect(apps, pmap, max_len=config.max_path_len)
    by_id = {a.id: a for a in apps}

    # Directed stage-1 findings admit the unordered pair to stage 2.
    suspect_pairs = sorted({tuple(sorted(pair, key=_pair_key)) for pair in matrix.cells})

    model = None
    if config.model_path:
        model = bayes.load_model(Path(config.model_path).read_text("utf-8"))

    stage2 = []
    survivors = []
    for pair in suspect_pairs:
        appset = [by_id[pair[0]], by_id[pair[1]]]
        if model is None:
            # No model provided: the statistical stage is a pass-through.
            stage2.append({"pair": list(pair), "skipped": "no model configured"})
            survivors.append(pair)
            continue
        report = bayes.score(model, appset, config.threshold)
        stage2.append(
            {
                "pair": list(pair),
                "l_tau": report.l_tau,
                "l_com": report.l_com,
                "possibility": report.possibility,
                "verdict": report.verdict.value,
            }
        )
        if report.verdict is bayes.Verdict.Colluding:
            survivors.append(pair)

    stage3 = []
    final = []
    for pair in survivors:
        app_a, app_b = by_id[pair[0]], by_id[pair[1]]
        if not (app_a.methods and app_b.methods):
            final.append({"pair": list(pair), "status": "suspected (unconfirmed)"})
            continue
        verdict = model_checker.explore([app_a, app_b], max_states=config.max_states)
        entry = {
            "pair": list(pair),
            "colluding": verdict.colluding,
            "states_explored": verdict.states_explored,
        }
        if verdict.colluding:
            entry["threat"] = verdict.threat.code
            entry["witness"] = model_checker.emit_witness(verdict.witness)
            final.append({"pair": list(pair), "status": "confirmed",
                          "threat": verdict.threat.code})
        else:
            final.append({"pair": list(pair), "status": "refuted"})
        stage3.append(entry)

    report_doc = {
        "stage1": rule_engine.matrix_to_json(matrix),
        "stage2": stage2,
        "stage3": stage3,
        "final": final,
    }
    if not survivors:
        report_doc["note"] = "no pairs survived stage 2; model checking skipped"
    return report_doc


def _pair_key(app_id: str):
    return (0, int(app_id)) if app_id.isdigit() else (1, app_id)


def cmd_pipeline(args) -> int:
    apps = _load_descriptor_dir(args.descriptor_dir)
    config = PipelineConfig(
        threshold=args.threshold,
        max_path_len=args.max_path_len,
        max_states=args.max_states,
        permission_map_path=args.permission_map,
        criticality_path=args.criticality,
        model_path=args.model,
    )
    report_doc = _run_pipeline(apps, config)
    _write_output(json.dumps(report_doc, indent=2) + "\n", args.out)
    if args.figures:
        from . import report

        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        matrix = rule_engine.matrix_from_json(report_doc["stage1"])
        report.render_collusion_matrix(matrix, str(fig_dir / "collusion_matrix.png"))
    confirmed = any(e["status"] == "confirmed" for e in report_doc["final"])
    suspected = any(
        e["status"] in ("confirmed", "suspected (unconfirmed)") for e in report_doc["final"]
    )
    return EXIT_FINDINGS if (confirmed or suspected) else EXIT_NONE


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collusionscan",
        description="Detect potential collusion in sets of Android-style apps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--out", help="write the primary output to this file")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--figures", metavar="DIR",
                       help="also render matplotlib figures into DIR")

    p_filter = sub.add_parser("filter", help="rule-based collusion filter")
    p_filter.add_argument("descriptor_dir")
    p_filter.add_argument("--permission-map", help="permission->action JSON config")
    p_filter.add_argument("--max-path-len", type=int, default=4)
    add_common(p_filter)
    p_filter.set_defaults(func=cmd_filter)

    p_train = sub.add_parser("train", help="estimate Bernoulli parameters")
    p_train.add_argument("training_csv")
    p_train.add_argument("out_model")
    p_train.add_argument("--criticality", help="permission criticality JSON config")
    p_train.set_defaults(func=cmd_train)

    p_score = sub.add_parser("score", help="pairwise collusion possibility")
    p_score.add_argument("descriptor_dir")
    p_score.add_argument("--model", required=True)
    p_score.add_argument("--threshold", type=float, default=bayes.DEFAULT_THRESHOLD)
    add_common(p_score)
    p_score.set_defaults(func=cmd_score)

    p_mc = sub.add_parser("mc", help="model-check one app pair")
    p_mc.add_argument("descriptor_a")
    p_mc.add_argument("descriptor_b")
    p_mc.add_argument("--max-states", type=int, default=10000)
    p_mc.add_argument("--out", help="write the witness to this file")
    p_mc.set_defaults(func=cmd_mc)

    p_pipe = sub.add_parser("pipeline", help="filter, score, then model-check")
    p_pipe.add_argument("descriptor_dir")
    p_pipe.add_argument("--model", help="Bernoulli model JSON (stage 2)")
    p_pipe.add_argument("--threshold", type=float, default=bayes.DEFAULT_THRESHOLD)
    p_pipe.add_argument("--max-path-len", type=int, default=4)
    p_pipe.add_argument("--max-states", type=int, default=10000)
    p_pipe.add_argument("--permission-map")
    p_pipe.add_argument("--criticality")
    add_common(p_pipe)
    p_pipe.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CollusionScanError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

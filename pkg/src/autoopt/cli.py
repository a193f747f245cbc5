"""Command-line entry points: headless optimization runs, scripted pipeline
replays, reference-direction generation, corpus classification, figure
rendering, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .agents import AgentBackend, AgentError, RemoteAgents, RuleBasedAgents, classify_corpus, load_fewshot
from .assets import asset_text
from .config import ProblemInstance, SpecError, parse_spec
from .moo import (
    SolverError,
    SolverParams,
    aasf_select,
    das_dennis_refdirs,
    nsga3_run,
    pareto_to_csv,
    pareto_to_dict,
    riesz_refdirs,
)
from .pipeline import Phase, SessionEngine, transcript
from .report import render_report
from .scene import SceneError, load_scene

DEFAULT_SEED = 42


def _print_timing_table(rows):
    print("Time cost (in seconds) of each module")
    width = max(len(name) for name, _ in rows)
    for name, seconds in rows:
        print(f"  {name:<{width}}  {seconds:8.3f}")


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _make_agents(kind: str, seed: int) -> AgentBackend:
    if kind == "remote":
        return RemoteAgents()
    return RuleBasedAgents(seed=seed)


def cmd_optimize(args) -> int:
    t_load = time.perf_counter()
    scene = load_scene(Path(args.scene).read_text(encoding="utf-8"))
    spec = parse_spec(Path(args.spec).read_text(encoding="utf-8"))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.candidates is not None:
        spec = replace(spec, candidate_count=args.candidates)
    problem = ProblemInstance(spec, scene)
    t_compile = time.perf_counter()

    params = SolverParams(
        population=args.population,
        generations=args.generations,
        seed=spec.seed,
        workers=args.workers,
    )
    refdirs = riesz_refdirs(problem.n_obj, params.population, seed=spec.seed)
    front = nsga3_run(problem, params, refdirs)
    t_solve = time.perf_counter()
    reduced = aasf_select(front, k=spec.candidate_count, seed=spec.seed)
    t_reduce = time.perf_counter()

    metadata = {
        "seed": spec.seed,
        "population": params.population,
        "generations": params.generations,
        "refdir_method": "riesz",
        "scene": scene.id,
        "objectives": [o.kind.value for o in spec.active_objectives],
        "candidate_count": spec.candidate_count,
    }
    out = Path(args.out)
    _write_text(out / "pareto.json", _dump_json(pareto_to_dict(front, metadata)))
    _write_text(out / "objectives.csv", pareto_to_csv(front))
    candidates_doc = {
        "candidates": [
            {
                **ind.to_dict(),
                "layout": {
                    n: [p.x, p.y, p.z]
                    for n, p in sorted(problem.decode(ind.genome).positions.items())
                },
            }
            for ind in reduced.members
        ],
        "weights_used": [[float(x) for x in w] for w in reduced.weights_used],
        "metadata": metadata,
    }
    _write_text(out / "candidates.json", _dump_json(candidates_doc))

    print(f"pareto front: {len(front)} individuals, {len(reduced)} candidates -> {out}")
    _print_timing_table(
        [
            ("load+validate", t_compile - t_load),
            ("optimization", t_solve - t_compile),
            ("scalarization", t_reduce - t_solve),
        ]
    )
    return 0


def cmd_pipeline(args) -> int:
    scene = load_scene(Path(args.scene).read_text(encoding="utf-8"))
    lines = [
        line.strip()
        for line in Path(args.instructions).read_text(encoding="utf-8").splitlines()
        if line.strip() and not line.strip().startswith("#")
    ]
    if not lines:
        print("instructions file is empty", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    engine = SessionEngine(
        {scene.id: scene},
        _make_agents(args.agents, seed),
        solver=SolverParams(
            population=args.population, generations=args.generations, seed=seed,
            workers=args.workers,
        ),
    )
    session = engine.create_session(scene.id)
    for line in lines:
        if session.phase is Phase.CLARIFYING:
            outcome = engine.submit_answer(session, line)
        else:
            outcome = engine.submit_instruction(session, line)
        if outcome.status == "question":
            print(f"> {line}")
            print(f"? {outcome.question}")
        else:
            print(f"> {line}")
            print(f"= {len(session.candidates)} candidates, recommended {outcome.recommended}")
    if session.phase is Phase.OPTIMIZED:
        engine.finalize(session)
        print(f"finalized candidate {session.recommended}")
    doc = transcript(session)
    doc["metadata"] = {"seed": seed, "agents": args.agents}
    out = Path(args.out)
    _write_text(out / "transcript.json", _dump_json(doc))
    print(f"transcript -> {out / 'transcript.json'}")
    _print_timing_table(sorted(session.timings.items()))
    return 0


def cmd_refdirs(args) -> int:
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    if args.method == "das-dennis":
        dirs = das_dennis_refdirs(args.m, args.n)
    else:
        dirs = riesz_refdirs(args.m, args.n, seed=seed)
    for row in dirs.dirs:
        print(",".join(f"{v:.6f}" for v in row))
    bad = [
        i
        for i, row in enumerate(dirs.dirs)
        if abs(sum(row) - 1.0) > 1e-9 or any(v < 0 for v in row)
    ]
    if bad:
        print(f"simplex invariant violated at rows {bad}", file=sys.stderr)
        return 1
    print(f"# method={args.method} m={args.m} n={len(dirs)} seed={seed}", file=sys.stderr)
    return 0


def cmd_classify(args) -> int:
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    if args.corpus:
        corpus_text = Path(args.corpus).read_text(encoding="utf-8")
    else:
        corpus_text = asset_text("corpus_24.jsonl")
    corpus = load_fewshot(corpus_text)
    if args.scene:
        scene = load_scene(Path(args.scene).read_text(encoding="utf-8"))
    else:
        scene = load_scene(asset_text("office.json"))
    accuracy, confusion = classify_corpus(corpus, _make_agents(args.agents, seed), scene)
    print(f"accuracy: {accuracy:.4f} ({len(corpus)} instructions, seed {seed})")
    print("confusion:")
    print(f"  label        -> clear  ambiguous")
    print(
        f"  well-formed     {confusion['well-formed->clear']:5d}  {confusion['well-formed->ambiguous']:9d}"
    )
    print(
        f"  ambiguous       {confusion['ambiguous->clear']:5d}  {confusion['ambiguous->ambiguous']:9d}"
    )
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    seed = args.seed if args.seed is not None else DEFAULT_SEED
    serve(
        port=args.port,
        scene_dir=args.scene_dir,
        agents=_make_agents(args.agents, seed),
        store_dir=args.store_dir,
        solver=SolverParams(
            population=args.population, generations=args.generations, seed=seed,
            workers=args.workers,
        ),
        allowed_origins=args.allow_origin or None,
        host=args.host,
    )
    return 0


def cmd_report(args) -> int:
    written = render_report(args.results, args.out)
    for path in written:
        print(f"figure -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autoopt",
        description="Instruction-driven multi-objective optimization of 3D UI layouts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common_solver_flags(p):
        p.add_argument("--seed", type=int, default=None, help="RNG seed (default 42)")
        p.add_argument("--generations", type=int, default=40)
        p.add_argument("--population", type=int, default=100)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("optimize", help="solve one optimization spec headlessly")
    p.add_argument("--scene", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--candidates", type=int, default=None)
    common_solver_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("pipeline", help="replay scripted instructions through a session")
    p.add_argument("--scene", required=True)
    p.add_argument("--instructions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--agents", choices=("stub", "remote"), default="stub")
    common_solver_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("refdirs", help="generate reference directions")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--method", choices=("riesz", "das-dennis"), default="riesz")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_refdirs)

    p = sub.add_parser("classify", help="classify an annotated instruction corpus")
    p.add_argument("--corpus", default=None, help="JSONL corpus (default: packaged 24)")
    p.add_argument("--scene", default=None, help="scene for the widget catalog (default office)")
    p.add_argument("--agents", choices=("stub", "remote"), default="stub")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--store-dir", default=None)
    p.add_argument("--agents", choices=("stub", "remote"), default="stub")
    p.add_argument("--allow-origin", action="append", default=None)
    common_solver_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="render figures for an optimize output directory")
    p.add_argument("--results", required=True, help="directory written by `autoopt optimize`")
    p.add_argument("--out", default=None, help="figure directory (default: alongside results)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SceneError, SpecError, AgentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Exit codes: 0 success, 2 usage, 3 I/O, 4 validation, 5 check failure.
"""

from __future__ import annotations

import argparse
import sys

from . import metrics, preprocess, refine, scenegen, sceneio, verify

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_CHECK = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanesegkit",
        description="Lane-segment perception toolkit: synthetic scenes, "
                    "label preprocessing, evaluation, and kernel checks.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen", help="generate a synthetic GT scene file")
    p.add_argument("--preset", required=True, choices=scenegen.PRESETS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1,
                   help="number of frames (seeds seed..seed+count-1)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("perturb", help="turn a GT file into a noisy prediction file")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--sigma", type=float, default=0.0, help="point noise sigma, meters")
    p.add_argument("--drop", type=float, default=0.0, help="per-segment drop probability")
    p.add_argument("--type-flip", type=float, default=0.0,
                   help="per-boundary type flip probability")
    p.add_argument("--edge-flip", type=float, default=0.0,
                   help="per-adjacency-entry flip probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--task", required=True, choices=("laneseg", "mapele", "centerline"))
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("merge", help="DFS-merge lane pieces in a scene file")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("decompose", help="decompose scenes into map elements")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("centerlines", help="reduce scenes to centerline-only graphs")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of all backwards")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=50)

    p = sub.add_parser("fitdemo", help="gradient-descent fit of one synthetic target")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=2000)

    p = sub.add_parser("render", help="render the first frame of a scene file to SVG")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)

    return parser


def _cmd_gen(args) -> int:
    scenes = [scenegen.generate(args.preset, args.seed + i) for i in range(args.count)]
    sceneio.save_scenes(scenes, args.out)
    print(f"wrote {len(scenes)} frame(s) to {args.out}")
    return EXIT_OK


def _cmd_perturb(args) -> int:
    spec = scenegen.PerturbSpec(
        sigma_pos=args.sigma,
        p_drop=args.drop,
        p_type_flip=args.type_flip,
        p_edge_flip=args.edge_flip,
        seed=args.seed,
    )
    scenes = sceneio.load_scenes(args.in_path)
    sceneio.save_scenes([scenegen.perturb(s, spec) for s in scenes], args.out)
    print(f"perturbed {len(scenes)} frame(s) -> {args.out}")
    return EXIT_OK


def _load_element_frames(path):
    if sceneio.is_element_file(path):
        return sceneio.load_elements(path)
    scenes = sceneio.load_scenes(path, strict=False)
    return [(s.frame_id, preprocess.decompose_to_map_elements(s.graph)) for s in scenes]


def _cmd_eval(args) -> int:
    if args.task == "mapele":
        gt = sorted(_load_element_frames(args.gt))
        pred = sorted(_load_element_frames(args.pred))
        if [f for f, _ in gt] != [f for f, _ in pred]:
            raise sceneio.SceneFormatError("invariant", "frame ids do not align")
        report = metrics.evaluate_mapele([e for _, e in gt], [e for _, e in pred])
    else:
        gt = sceneio.load_scenes(args.gt, kind="gt")
        pred = sceneio.load_scenes(args.pred, kind="pred", strict=False)
        if args.task == "laneseg":
            report = metrics.evaluate_laneseg(gt, pred)
        else:
            report = metrics.evaluate_centerline(gt, pred)
    sceneio.save_report(report, args.out)
    doc = sceneio.report_to_document(report)
    for name, value in doc["metrics"].items():
        print(f"{name:10s} {value:8.3f}")
    print(f"report -> {args.out}")
    return EXIT_OK


def _cmd_merge(args) -> int:
    scenes = sceneio.load_scenes(args.in_path, strict=False)
    merged = []
    for s in scenes:
        graph = preprocess.dfs_merge(preprocess.graph_to_pieces(s.graph))
        merged.append(type(s)(s.frame_id, graph, s.x_range, s.y_range))
    sceneio.save_scenes(merged, args.out)
    print(f"merged {len(scenes)} frame(s) -> {args.out}")
    return EXIT_OK


def _cmd_decompose(args) -> int:
    scenes = sceneio.load_scenes(args.in_path, strict=False)
    frames = [(s.frame_id, preprocess.decompose_to_map_elements(s.graph)) for s in scenes]
    sceneio.save_elements(frames, args.out)
    total = sum(len(e) for _, e in frames)
    print(f"decomposed {len(frames)} frame(s) into {total} elements -> {args.out}")
    return EXIT_OK


def _cmd_centerlines(args) -> int:
    scenes = sceneio.load_scenes(args.in_path, strict=False)
    reduced = [
        type(s)(s.frame_id, preprocess.extract_centerlines(s.graph), s.x_range, s.y_range)
        for s in scenes
    ]
    sceneio.save_scenes(reduced, args.out)
    print(f"extracted centerlines for {len(scenes)} frame(s) -> {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    ok, results = verify.run_gradcheck(args.seed, args.trials, verbose=False)
    failures = [r for r in results if not r.ok]
    worst = max(results, key=lambda r: 0.0 if r.ok else r.worst_rel)
    print(f"checked {len(results)} gradient tensors over {args.trials} attention trials")
    for r in failures[:20]:
        print(str(r))
    if ok:
        print("gradcheck: all analytic gradients match finite differences")
        return EXIT_OK
    print(f"gradcheck: {len(failures)} tensors out of tolerance (worst: {worst.name})")
    return EXIT_CHECK


def _cmd_fitdemo(args) -> int:
    result = refine.fit_demo(seed=args.seed, steps=args.steps)
    ratio = result.final_loss / result.initial_loss if result.initial_loss else 0.0
    print(f"initial loss {result.initial_loss:.3e}")
    print(f"final loss   {result.final_loss:.3e}  ({100 * ratio:.2f}% of initial)")
    if result.converged:
        print("fitdemo: converged below 10% of the initial loss")
        return EXIT_OK
    print("fitdemo: did not reach 10% of the initial loss")
    return EXIT_CHECK


def _cmd_render(args) -> int:
    scenes = sceneio.load_scenes(args.in_path, strict=False)
    if not scenes:
        raise sceneio.SceneFormatError("schema", "no frames in input")
    sceneio.render_svg(scenes[0], args.out)
    if len(scenes) > 1:
        print(f"note: rendered first of {len(scenes)} frames")
    print(f"rendered {scenes[0].frame_id} -> {args.out}")
    return EXIT_OK


_COMMANDS = {
    "gen": _cmd_gen,
    "perturb": _cmd_perturb,
    "eval": _cmd_eval,
    "merge": _cmd_merge,
    "decompose": _cmd_decompose,
    "centerlines": _cmd_centerlines,
    "gradcheck": _cmd_gradcheck,
    "fitdemo": _cmd_fitdemo,
    "render": _cmd_render,
}


def run_cli(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return _COMMANDS[args.verb](args)
    except sceneio.SceneFormatError as exc:
        print(f"validation error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main(argv=None) -> int:
    return run_cli(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())

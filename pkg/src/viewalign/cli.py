"""Command-line surface.

Subcommands:
  index      build an embedding index from a gallery manifest
  suggest    retrieve and re-rank reference suggestions for a query
  align-sim  run one simulated alignment episode, optionally writing a CSV
  sweep      run a scenes x estimators x k x repeats grid and aggregate a CSV

Exit codes: 0 success, 1 input error, 2 external-service error.  The HTTP
ranker reads RANKER_URL and RANKER_API_KEY from the environment.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .alignment import AlignmentConfig, run_alignment
from .correspondence import SelectionConfig
from .geometry import rotation_angle
from .retrieval import (
    EmbedderFailure,
    HashedBagOfWordsEmbedder,
    HttpRanker,
    KeywordOverlapRanker,
    RankerProtocolError,
    RankerUnavailable,
    RetrievalConfig,
    UserPrompt,
    coarse_retrieve,
    index_gallery,
    load_index,
    parse_manifest,
    rerank,
    save_index,
)
from .robust import MagsacConfig, RansacConfig
from .simulate import (
    DEFAULT_INTRINSICS,
    CorruptionConfig,
    SimCamera,
    make_reference,
    make_scene,
    perturbed_start,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SERVICE = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; those are input errors here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _parse_estimator(spec: str) -> tuple[str, float | None]:
    """Parse 'ransac:10' / 'magsac:50' / 'none' into (kind, parameter)."""
    if spec == "none":
        return "none", None
    kind, sep, value = spec.partition(":")
    if kind not in ("ransac", "magsac"):
        raise ValueError(f"unknown estimator {spec!r} (expected ransac:T, magsac:T, or none)")
    if not sep:
        return kind, 10.0 if kind == "ransac" else 50.0
    return kind, float(value)


def _alignment_config(estimator_spec: str, k: int, steps: int, seed: int,
                      workspace, terminate_early: bool,
                      max_iters: int = 10_000) -> AlignmentConfig:
    kind, value = _parse_estimator(estimator_spec)
    cfg = AlignmentConfig(
        estimator=kind,  # type: ignore[arg-type]
        selection=SelectionConfig(k=k, kmeans_seed=seed),
        workspace=workspace,
        max_steps=steps,
        terminate_early=terminate_early,
    )
    if kind == "ransac":
        cfg = replace(cfg, ransac=RansacConfig(inlier_threshold=value, seed=seed,
                                               max_iters=max_iters))
    elif kind == "magsac":
        cfg = replace(cfg, magsac=MagsacConfig(max_threshold=value, seed=seed,
                                               max_iters=max_iters))
    return cfg


@dataclass(frozen=True)
class SimRunResult:
    history: list[float]
    rot_err_deg: list[float]
    trans_err_m: list[float]
    inliers: list[int]
    actions: list[str]
    reasons: list[str | None]


def _run_sim_episode(
    scene_seed: int,
    estimator: str,
    k: int,
    steps: int,
    noise: float,
    outlier_rate: float,
    distractors: int,
    seed: int,
    *,
    terminate_early: bool = True,
    descriptor_noise_deg: float = 0.0,
    n_landmarks: int = 40,
    start_translation: float = 0.25,
    start_rotation_deg: float = 8.0,
    max_iters: int = 10_000,
) -> SimRunResult:
    scene = make_scene(scene_seed, n_landmarks=n_landmarks, distractor_count=distractors)
    corruption = None
    if noise > 0 or outlier_rate > 0 or distractors > 0:
        corruption = CorruptionConfig(
            pixel_noise_sigma=noise,
            outlier_rate=outlier_rate,
            distractor_count=distractors,
            seed=seed * 131 + scene_seed,
        )
    camera = SimCamera(
        scene,
        DEFAULT_INTRINSICS,
        start_pose=perturbed_start(
            scene, seed, max_translation=start_translation, max_rotation_deg=start_rotation_deg
        ),
        corruption=corruption,
        descriptor_noise_deg=descriptor_noise_deg,
    )
    reference = make_reference(scene, DEFAULT_INTRINSICS)
    config = _alignment_config(
        estimator, k, steps, seed * 97 + scene_seed, scene.workspace, terminate_early,
        max_iters=max_iters,
    )
    report = run_alignment(camera, reference.grid, DEFAULT_INTRINSICS, config)
    rot_err = [math.degrees(rotation_angle(s.pose_at_capture.rotation)) for s in report.steps]
    trans_err = [float(np.linalg.norm(s.pose_at_capture.translation)) for s in report.steps]
    return SimRunResult(
        history=[s.mean_px_dist for s in report.steps],
        rot_err_deg=rot_err,
        trans_err_m=trans_err,
        inliers=[s.inliers for s in report.steps],
        actions=[s.action for s in report.steps],
        reasons=[s.reason for s in report.steps],
    )


# --- subcommands -----------------------------------------------------------------


def cmd_index(args) -> int:
    try:
        entries = parse_manifest(args.manifest)
        index = index_gallery(entries, HashedBagOfWordsEmbedder())
        save_index(index, args.index_out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmbedderFailure as exc:
        print(f"error: embedding failed for record {exc.entry_id}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"{len(index)} entries indexed")
    return EXIT_OK


def cmd_suggest(args) -> int:
    try:
        index = load_index(args.index)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: cannot load index: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        cfg = RetrievalConfig(m=args.m, m_star=args.m_star)
        objects = tuple(o.strip() for o in args.objects.split(",") if o.strip())
        prompt = UserPrompt(query=args.query, detected_objects=objects, people_count=args.people)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    if args.ranker == "http":
        url = os.environ.get("RANKER_URL")
        if not url:
            print("error: RANKER_URL is not set", file=sys.stderr)
            return EXIT_INPUT
        ranker = HttpRanker(url=url, api_key=os.environ.get("RANKER_API_KEY", ""))
    else:
        ranker = KeywordOverlapRanker()

    try:
        coarse = coarse_retrieve(prompt, index, cfg)
        candidates = [(eid, index.caption_of(eid)) for eid, _ in coarse]
        result = rerank(prompt, candidates, ranker, cfg)
    except (RankerUnavailable, RankerProtocolError) as exc:
        print(f"error: ranker failed after retry: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    print(f"suggestions for: {prompt.query}")
    for i, eid in enumerate(result.ids, start=1):
        print(f"  [{i}] {eid}: {index.caption_of(eid)}")
    print(f"explanation: {result.explanation}")

    if args.non_interactive:
        print(f"selected: {result.ids[0]}")
        return EXIT_OK

    while True:
        raw = input(f"select a reference [1-{len(result.ids)}]: ").strip()
        try:
            choice = int(raw)
        except ValueError:
            print(f"please enter an integer between 1 and {len(result.ids)}")
            continue
        if 1 <= choice <= len(result.ids):
            break
        print(f"please enter an integer between 1 and {len(result.ids)}")
    print(f"selected: {result.ids[choice - 1]}")
    return EXIT_OK


def cmd_align_sim(args) -> int:
    try:
        if args.k < 4:
            raise ValueError(f"k must be at least 4 (PnP minimum), got {args.k}")
        if args.steps < 1:
            raise ValueError("steps must be positive")
        _parse_estimator(args.estimator)
        result = _run_sim_episode(
            args.scene_seed,
            args.estimator,
            args.k,
            args.steps,
            args.noise,
            args.outlier_rate,
            0,
            args.seed,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    rows = list(
        zip(result.history, result.rot_err_deg, result.trans_err_m, result.inliers, result.actions)
    )
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "mean_px", "rot_err_deg", "trans_err_m", "inliers", "action"])
            for step, (px, rot, trans, inl, action) in enumerate(rows):
                writer.writerow(
                    [step, f"{px:.6f}", f"{rot:.6f}", f"{trans:.6f}", inl, action]
                )
            f.write(
                "# config: "
                + json.dumps(
                    {
                        "scene_seed": args.scene_seed,
                        "estimator": args.estimator,
                        "k": args.k,
                        "steps": args.steps,
                        "noise": args.noise,
                        "outlier_rate": args.outlier_rate,
                        "seed": args.seed,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    for step, (px, rot, trans, inl, action) in enumerate(rows):
        print(f"step {step}: mean_px={px:.3f} rot_err={rot:.3f}deg trans_err={trans:.4f}m "
              f"inliers={inl} action={action}")
    print(f"final mean_px: {result.history[-1]:.3f}")
    return EXIT_OK


def _parse_sweep_scene(entry) -> dict:
    if isinstance(entry, int):
        return {"seed": entry, "name": f"scene-{entry}", "noise": 0.0,
                "outlier_rate": 0.0, "distractors": 0, "descriptor_noise_deg": 0.0}
    if isinstance(entry, dict) and "seed" in entry:
        return {
            "seed": int(entry["seed"]),
            "name": str(entry.get("name", f"scene-{entry['seed']}")),
            "noise": float(entry.get("noise", 0.0)),
            "outlier_rate": float(entry.get("outlier_rate", 0.0)),
            "distractors": int(entry.get("distractors", 0)),
            "descriptor_noise_deg": float(entry.get("descriptor_noise_deg", 0.0)),
        }
    raise ValueError(f"invalid scene entry {entry!r}")


def cmd_sweep(args) -> int:
    try:
        with open(args.spec, "r", encoding="utf-8") as f:
            spec = json.load(f)
        scenes = [_parse_sweep_scene(s) for s in spec.get("scenes", [])]
        estimators = [str(e) for e in spec.get("estimators", [])]
        k_values = [int(k) for k in spec.get("k", [30])]
        steps = int(spec.get("steps", 8))
        repeats = int(spec.get("repeats", 3))
        max_iters = int(spec.get("max_iters", 10_000))
        if not scenes or not estimators or not k_values:
            raise ValueError("sweep spec needs non-empty scenes, estimators, and k lists")
        if repeats < 1:
            raise ValueError("repeats must be at least 1")
        for e in estimators:
            _parse_estimator(e)
        for k in k_values:
            if k < 4:
                raise ValueError(f"k must be at least 4, got {k}")
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    rows = []
    any_success = False
    run_count = 0
    for scene in scenes:
        for estimator in estimators:
            for k in k_values:
                histories, rot_errs, trans_errs, inliers = [], [], [], []
                failures = 0
                for rep in range(repeats):
                    run_count += 1
                    try:
                        result = _run_sim_episode(
                            scene["seed"],
                            estimator,
                            k,
                            steps,
                            scene["noise"],
                            scene["outlier_rate"],
                            scene["distractors"],
                            seed=rep + 1,
                            terminate_early=False,
                            descriptor_noise_deg=scene["descriptor_noise_deg"],
                            max_iters=max_iters,
                        )
                        histories.append(result.history)
                        rot_errs.append(result.rot_err_deg)
                        trans_errs.append(result.trans_err_m)
                        inliers.append(result.inliers)
                    except Exception:  # noqa: BLE001 - partial failures become rows
                        failures += 1
                status = "ok" if failures == 0 else f"failed:{failures}/{repeats}"
                if histories:
                    any_success = True
                    h = np.array(histories)
                    r = np.array(rot_errs)
                    t = np.array(trans_errs)
                    i_ = np.array(inliers, dtype=float)
                    for step in range(steps):
                        rows.append(
                            [
                                scene["name"], estimator, k, step,
                                f"{h[:, step].mean():.6f}", f"{h[:, step].std():.6f}",
                                f"{r[:, step].mean():.6f}", f"{t[:, step].mean():.6f}",
                                f"{i_[:, step].mean():.2f}", status,
                            ]
                        )
                else:
                    rows.append([scene["name"], estimator, k, "", "", "", "", "", "", status])

    rows.sort(key=lambda row: (row[0], row[1], row[2], row[3] if row[3] != "" else -1))
    header = ["scene", "estimator", "k", "step", "mean_px_mean", "mean_px_std",
              "rot_err_deg_mean", "trans_err_m_mean", "inliers_mean", "status"]
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(header)
        writer.writerows(rows)
        out.write(
            "# config: "
            + json.dumps(
                {"scenes": scenes, "estimators": estimators, "k": k_values,
                 "steps": steps, "repeats": repeats, "max_iters": max_iters,
                 "runs": run_count},
                sort_keys=True,
            )
            + "\n"
        )
    finally:
        if args.csv:
            out.close()
    print(f"{run_count} runs completed", file=sys.stderr)
    return EXIT_OK if any_success else EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="viewalign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build an embedding index from a gallery manifest")
    p_index.add_argument("manifest", help="JSON-lines gallery manifest")
    p_index.add_argument("index_out", help="output index file (.npz)")
    p_index.set_defaults(func=cmd_index)

    p_suggest = sub.add_parser("suggest", help="suggest reference images for a query")
    p_suggest.add_argument("index", help="index file from the index command")
    p_suggest.add_argument("query", help="user query text")
    p_suggest.add_argument("--objects", default="", help="comma-separated detected objects")
    p_suggest.add_argument("--people", type=int, default=None, help="people count in view")
    p_suggest.add_argument("--m", type=int, default=16, help="coarse retrieval count")
    p_suggest.add_argument("--m-star", type=int, default=3, help="final suggestion count")
    p_suggest.add_argument("--ranker", choices=("mock", "http"), default="mock")
    p_suggest.add_argument("--non-interactive", action="store_true",
                           help="print suggestions and select the top one")
    p_suggest.set_defaults(func=cmd_suggest)

    p_align = sub.add_parser("align-sim", help="run a simulated alignment episode")
    p_align.add_argument("scene_seed", type=int, help="scene generator seed")
    p_align.add_argument("--estimator", default="magsac:50",
                         help="ransac:TAU, magsac:MAX, or none")
    p_align.add_argument("--k", type=int, default=30, help="number of selected correspondences")
    p_align.add_argument("--steps", type=int, default=8, help="maximum adjustment steps")
    p_align.add_argument("--noise", type=float, default=0.0, help="pixel noise sigma")
    p_align.add_argument("--outlier-rate", type=float, default=0.0, help="planted outlier rate")
    p_align.add_argument("--seed", type=int, default=0, help="start pose / corruption seed")
    p_align.add_argument("--csv", default=None, help="write per-step CSV here")
    p_align.set_defaults(func=cmd_align_sim)

    p_sweep = sub.add_parser("sweep", help="run an estimator/keypoint sweep from a JSON spec")
    p_sweep.add_argument("spec", help="JSON sweep specification")
    p_sweep.add_argument("--csv", default=None, help="write the aggregate CSV here")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

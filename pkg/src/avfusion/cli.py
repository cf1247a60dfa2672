"""Command line front end: one subcommand per pipeline stage.

The stages chain through artifacts in a shared output directory:

    synth    -> manifest.json, world.json, WAV audio, raw video, alignments
    extract  -> per-utterance posterior + reliability matrices (needs synth)
    train    -> model checkpoints under models/ (self-contained)
    fuse     -> fused log-posterior matrices under fused/ (needs train)
    decode   -> word hypotheses under decode/ (needs fuse)
    evaluate -> word error rates under eval/ (needs decode)
    sweep    -> sweep.csv + sweep.json, the full strategy-by-SNR grid
    report   -> report.csv, plot-ready long format (needs sweep)

Every artifact is a deterministic function of the config plus seed, so any
stage can be re-run in place and produces identical bytes.  The output
directory comes from --out, else the AVFUSION_OUT environment variable,
else the config's out_dir; thread count from --threads, else
AVFUSION_THREADS, else 1.

Exit codes: 0 success, 1 runtime failure (including missing prerequisite
artifacts), 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import DEFAULT_CONFIG, ConfigError, load_config, validate_config
from .core import (
    AlignmentTarget,
    STREAMS,
    UtteranceRecord,
    read_manifest,
    read_matrix,
    write_manifest,
    write_matrix,
)
from .corpus import (
    Utterance,
    World,
    WorldConfig,
    build_world,
    load_audio_wav,
    load_video_raw,
    mix_noise,
    save_audio_wav,
    save_video_raw,
)
from .decode import build_decoding_graph, pool_reports, viterbi_decode, wer
from .experiment import (
    ALL_STRATEGIES,
    TRAINED_STRATEGIES,
    SweepResult,
    _fuse_for_strategy,
    _sample_split,
    condition_label,
    reliability_features,
    run_sweep,
    stream_posterior_set,
    train_strategy_models,
    video_signal_features,
    write_report_csv,
    write_sweep_csv,
    write_sweep_json,
)
from .fusion import DfnModel, WeightEstimator
from .signal_reliability import ReliabilityLayout, frame_snr


class MissingArtifact(RuntimeError):
    """A prerequisite file is absent; the message names its producer."""


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifact(
            f"missing artifact {path}; run the `{producer}` subcommand "
            f"first with the same --config and --out")
    return path


def _load_cfg(args) -> dict:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = validate_config(json.loads(json.dumps(DEFAULT_CONFIG)))
    if getattr(args, "seed", None) is not None:
        cfg["seeds"] = [int(args.seed)]
    return cfg


def _out_dir(args, cfg: dict) -> Path:
    out = args.out or os.environ.get("AVFUSION_OUT") or cfg["out_dir"]
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _thread_count(args) -> int:
    raw = args.threads if args.threads is not None \
        else os.environ.get("AVFUSION_THREADS", "1")
    try:
        n = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"threads must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"threads must be >= 1, got {n}")
    return n


def _map_ordered(fn, items, threads: int) -> list:
    """Apply fn to each item, in parallel when asked, preserving order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _strategies(args, cfg: dict, trained_only: bool = False) -> list[str]:
    if getattr(args, "strategy", None):
        chosen = [args.strategy]
        if args.strategy not in ALL_STRATEGIES:
            raise ConfigError(f"unknown strategy {args.strategy!r}; "
                              f"choose from {list(ALL_STRATEGIES)}")
    else:
        chosen = list(cfg["strategies"])
    if trained_only:
        kept = [s for s in chosen if s in TRAINED_STRATEGIES]
        if getattr(args, "strategy", None) and not kept:
            raise ConfigError(
                f"strategy {args.strategy!r} has no trained model; "
                f"trainable strategies are {list(TRAINED_STRATEGIES)}")
        return kept
    return chosen


def _parse_condition(text: str) -> float | None:
    if text == "clean":
        return None
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"--snr must be a number or 'clean', got {text!r}")


def _conditions(args, cfg: dict) -> list[float | None]:
    grid = [float(s) for s in cfg["snr_grid"]] + [None]
    if getattr(args, "snr", None) is None:
        return grid
    wanted = _parse_condition(args.snr)
    labels = [condition_label(c) for c in grid]
    if condition_label(wanted) not in labels:
        raise ConfigError(f"--snr {args.snr!r} is not in the configured "
                          f"grid {labels}")
    return [wanted]


def _world_for_seed(cfg: dict, seed: int) -> World:
    return build_world(WorldConfig(**cfg["world"]), seed)


def _test_split(cfg: dict, world: World):
    c = cfg["corpus"]
    return _sample_split(world, c["test"], 200_000,
                         c["min_words"], c["max_words"])


def _mix_for_cell(utt, cond, kinds, seed: int, idx: int):
    """The one noise-injection convention shared by sweep and the CLI."""
    kind = kinds[idx % len(kinds)]
    return mix_noise(utt, kind, cond, seed=seed * 104729 + idx)


def _conf_path(video_path: str) -> str:
    return video_path.rsplit(".", 1)[0] + ".conf.avpf"


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    seed = int(cfg["seeds"][0])
    if args.snr_grid is not None:
        try:
            cfg["snr_grid"] = [float(x) for x in args.snr_grid.split(",")]
        except ValueError:
            raise ConfigError(f"--snr-grid must be comma-separated numbers, "
                              f"got {args.snr_grid!r}")
    world = _world_for_seed(cfg, seed)
    utts = _test_split(cfg, world)
    conditions = [float(s) for s in cfg["snr_grid"]] + [None]
    kinds = list(cfg["noise_kinds"])

    for sub in ("audio", "video", "align"):
        (out / sub).mkdir(exist_ok=True)
    (out / "world.json").write_text(
        json.dumps(world.to_manifest(), indent=2, sort_keys=True))

    records = []
    for idx, utt in enumerate(utts):
        audio_paths = {}
        for cond in conditions:
            label = condition_label(cond)
            noisy = _mix_for_cell(utt, cond, kinds, seed, idx)
            wav = f"audio/{utt.utt_id}.{label}.wav"
            save_audio_wav(out / wav, noisy.audio)
            audio_paths[label] = wav
        video_path = f"video/{utt.utt_id}.raw"
        save_video_raw(out / video_path, utt.video)
        write_matrix(out / _conf_path(video_path),
                     utt.confidence[:, None])
        align_path = f"align/{utt.utt_id}.avpf"
        write_matrix(out / align_path,
                     utt.alignment.states.astype(np.float64)[:, None])
        records.append(UtteranceRecord(
            utt_id=utt.utt_id, transcript=list(utt.words), split="test",
            audio_paths=audio_paths, alignment_path=align_path,
            video_path=video_path,
            num_video_frames=utt.num_video_frames,
            num_audio_frames=utt.num_audio_frames))
    write_manifest(out / "manifest.json", "world.json", records)
    print(f"synth: wrote {len(records)} utterances x "
          f"{len(conditions)} conditions under {out}")
    return 0


def _load_record_utterance(out: Path, record: UtteranceRecord, label: str,
                           num_states: int, video, conf) -> Utterance:
    clean = load_audio_wav(out / record.audio_paths["clean"])
    audio = load_audio_wav(out / record.audio_paths[label])
    align = AlignmentTarget(
        read_matrix(out / record.alignment_path)[:, 0].astype(int),
        num_states)
    utt = Utterance(
        utt_id=record.utt_id, words=list(record.transcript),
        alignment=align, audio=audio, audio_clean=clean,
        video=video, video_clean=video, confidence=conf,
        true_snr=np.zeros(align.num_frames),
        snr_db=None if label == "clean" else float(label),
        noise_component=None if label == "clean" else audio - clean)
    utt.true_snr = frame_snr(utt)
    return utt


def _cmd_extract(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    threads = _thread_count(args)
    manifest_path = _require(out / "manifest.json", "synth")
    _require(out / "world.json", "synth")
    doc = json.loads((out / "world.json").read_text())
    wc = dict(doc["config"])
    wc["f0_range"] = tuple(wc["f0_range"])
    world = build_world(WorldConfig(**wc), doc["seed"])
    world_path, records = read_manifest(manifest_path)
    layout = ReliabilityLayout()
    (out / "feats").mkdir(exist_ok=True)
    only = None if args.snr is None else condition_label(_parse_condition(args.snr))

    def one(record: UtteranceRecord) -> int:
        video = load_video_raw(out / record.video_path,
                               record.num_video_frames)
        conf = read_matrix(out / _conf_path(record.video_path))[:, 0]
        labels = [lab for lab in record.audio_paths
                  if only is None or lab == only]
        cached_video = None
        video_feats = None
        for label in sorted(labels):
            utt = _load_record_utterance(out, record, label,
                                         world.config.num_states,
                                         video, conf)
            posts = stream_posterior_set(utt, world, cached_video)
            if cached_video is None:
                cached_video = {s: posts[s] for s in ("VA", "VS")}
                video_feats = video_signal_features(utt, layout)
            rel = reliability_features(utt, posts, layout, video_feats)
            for stream in STREAMS:
                ppath = f"feats/{record.utt_id}.{label}.{stream}.avpf"
                write_matrix(out / ppath, posts[stream].frames)
                record.posterior_paths.setdefault(stream, {})[label] = ppath
            rpath = f"feats/{record.utt_id}.{label}.rel.avpf"
            write_matrix(out / rpath, rel)
            record.posterior_paths.setdefault("REL", {})[label] = rpath
        return len(labels)

    cells = sum(_map_ordered(one, records, threads))
    write_manifest(out / "manifest.json", world_path, records)
    print(f"extract: wrote posteriors + reliability for {cells} "
          f"utterance-conditions under {out / 'feats'}")
    return 0


def _model_dir(out: Path, strategy: str, seed: int) -> Path:
    return out / "models" / f"{strategy}.seed{seed}"


def _cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    strategies = _strategies(args, cfg, trained_only=True)
    if not strategies:
        print("train: no learned strategies in the config; nothing to do")
        return 0
    (out / "models").mkdir(exist_ok=True)
    score_path = out / "models" / "val_ce.json"
    scores = json.loads(score_path.read_text()) if score_path.exists() else {}
    for seed in [int(s) for s in cfg["seeds"]]:
        world = _world_for_seed(cfg, seed)
        graph = build_decoding_graph(world, cfg["lm_scale"])
        models, val_ce = train_strategy_models(cfg, world, graph, seed,
                                               strategies)
        for strat, model in models.items():
            model.save(str(_model_dir(out, strat, seed)))
            scores.setdefault(strat, {})[str(seed)] = val_ce[strat]
            print(f"train: {strat} seed {seed} best val loss "
                  f"{val_ce[strat]:.4f} -> {_model_dir(out, strat, seed)}")
    score_path.write_text(json.dumps(scores, indent=2, sort_keys=True))
    return 0


def _load_models(out: Path, strategies: list[str], seed: int) -> dict:
    models = {}
    for strat in strategies:
        if strat not in TRAINED_STRATEGIES:
            continue
        path = _require(_model_dir(out, strat, seed) / "model.json", "train")
        loader = DfnModel if strat.startswith("dfn-") else WeightEstimator
        models[strat] = loader.load(str(path.parent))
    return models


def _cmd_fuse(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    threads = _thread_count(args)
    strategies = _strategies(args, cfg)
    conditions = _conditions(args, cfg)
    kinds = list(cfg["noise_kinds"])
    layout = ReliabilityLayout()
    written = 0
    for seed in [int(s) for s in cfg["seeds"]]:
        world = _world_for_seed(cfg, seed)
        models = _load_models(out, strategies, seed)
        utts = _test_split(cfg, world)
        cache = []
        for utt in utts:
            posts = stream_posterior_set(utt, world)
            cache.append(({s: posts[s] for s in ("VA", "VS")},
                          video_signal_features(utt, layout)))
        for strat in strategies:
            (out / "fused" / strat / f"seed{seed}").mkdir(
                parents=True, exist_ok=True)

        def one(idx_utt) -> int:
            idx, utt = idx_utt
            cached_posts, video_feats = cache[idx]
            count = 0
            for cond in conditions:
                label = condition_label(cond)
                noisy = _mix_for_cell(utt, cond, kinds, seed, idx)
                posts = stream_posterior_set(noisy, world, cached_posts)
                logs = [np.log(posts[s].frames) for s in STREAMS]
                rel = reliability_features(noisy, posts, layout, video_feats)
                for strat in strategies:
                    fused = _fuse_for_strategy(strat, posts, logs, rel, noisy,
                                               world, models,
                                               cfg["oracle_mode"])
                    mat = getattr(fused, "frames", fused)
                    write_matrix(out / "fused" / strat / f"seed{seed}" /
                                 f"{utt.utt_id}.{label}.avpf", mat)
                    count += 1
            return count

        written += sum(_map_ordered(one, list(enumerate(utts)), threads))
    print(f"fuse: wrote {written} fused matrices under {out / 'fused'}")
    return 0


def _cmd_decode(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    strategies = _strategies(args, cfg)
    conditions = _conditions(args, cfg)
    (out / "decode").mkdir(exist_ok=True)
    count = 0
    for seed in [int(s) for s in cfg["seeds"]]:
        world = _world_for_seed(cfg, seed)
        graph = build_decoding_graph(world, cfg["lm_scale"])
        utts = _test_split(cfg, world)
        for strat in strategies:
            hyps: dict = {}
            for cond in conditions:
                label = condition_label(cond)
                hyps[label] = {}
                for utt in utts:
                    path = _require(
                        out / "fused" / strat / f"seed{seed}" /
                        f"{utt.utt_id}.{label}.avpf", "fuse")
                    res = viterbi_decode(read_matrix(path), graph)
                    hyps[label][utt.utt_id] = {
                        "words": res.words,
                        "log_score": round(float(res.log_score), 6)}
                    count += 1
            dest = out / "decode" / f"{strat}.seed{seed}.json"
            dest.write_text(json.dumps(hyps, indent=1, sort_keys=True))
    print(f"decode: wrote {count} hypotheses under {out / 'decode'}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    strategies = _strategies(args, cfg)
    conditions = _conditions(args, cfg)
    labels = [condition_label(c) for c in conditions]
    seeds = [int(s) for s in cfg["seeds"]]
    refs: dict = {}
    for seed in seeds:
        world = _world_for_seed(cfg, seed)
        refs[seed] = {u.utt_id: u.words for u in _test_split(cfg, world)}
    results: dict = {}
    for strat in strategies:
        results[strat] = {}
        per_seed: dict = {lab: [] for lab in labels}
        for seed in seeds:
            path = _require(out / "decode" / f"{strat}.seed{seed}.json",
                            "decode")
            hyps = json.loads(path.read_text())
            for lab in labels:
                if lab not in hyps:
                    raise MissingArtifact(
                        f"condition {lab!r} absent from {path}; run the "
                        f"`decode` subcommand first for that condition")
                reports = [wer(refs[seed][uid], entry["words"])
                           for uid, entry in sorted(hyps[lab].items())]
                per_seed[lab].append(pool_reports(reports).wer)
        for lab in labels:
            vals = per_seed[lab]
            results[strat][lab] = {
                "per_seed": vals,
                "mean": float(np.mean(vals)),
            }
    (out / "eval").mkdir(exist_ok=True)
    (out / "eval" / "results.json").write_text(
        json.dumps({"seeds": seeds, "wer": results}, indent=1,
                   sort_keys=True))
    width = max(len(s) for s in strategies)
    print("strategy".ljust(width) + "  " +
          "  ".join(f"{lab:>8}" for lab in labels))
    for strat in strategies:
        row = "  ".join(f"{results[strat][lab]['mean']:8.4f}"
                        for lab in labels)
        print(strat.ljust(width) + "  " + row)
    print(f"evaluate: wrote {out / 'eval' / 'results.json'}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    result = run_sweep(cfg)
    write_sweep_csv(out / "sweep.csv", result)
    write_sweep_json(out / "sweep.json", result)
    print((out / "sweep.csv").read_text().rstrip())
    print(f"sweep: wrote {out / 'sweep.csv'} and {out / 'sweep.json'}")
    return 0


def _cmd_report(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    path = _require(out / "sweep.json", "sweep")
    doc = json.loads(path.read_text())
    result = SweepResult(
        strategies=list(doc["strategies"]),
        labels=list(doc["conditions"]),
        seeds=[int(s) for s in doc["seeds"]],
        per_seed_wer={s: {lab: list(doc["wer"][s][lab]["per_seed"])
                          for lab in doc["conditions"]}
                      for s in doc["strategies"]})
    write_report_csv(out / "report.csv", result)
    width = max(len(s) for s in result.strategies)
    print("strategy".ljust(width) + "  " +
          "  ".join(f"{lab:>8}" for lab in result.labels) + "       avg")
    for strat in result.strategies:
        cells = "  ".join(f"{result.mean_wer(strat, lab):8.4f}"
                          for lab in result.labels)
        print(strat.ljust(width) + "  " + cells +
              f"  {result.row_average(strat):8.4f}")
    print(f"report: wrote {out / 'report.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avfusion",
        description="Audio-visual stream-fusion experiments on a synthetic "
                    "recognition task.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults used "
                        "when omitted)")
    common.add_argument("--out", help="output directory (overrides "
                        "AVFUSION_OUT and the config)")
    common.add_argument("--seed", type=int,
                        help="restrict the run to this one seed")
    common.add_argument("--threads", help="worker threads for per-utterance "
                        "stages (default AVFUSION_THREADS or 1)")

    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", parents=[common],
                       help="materialize the corpus: audio, video, "
                            "alignments, manifest")
    p.add_argument("--snr-grid", help="comma-separated SNR list overriding "
                   "the config grid")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("extract", parents=[common],
                       help="compute posterior + reliability matrices from "
                            "the synth artifacts")
    p.add_argument("--snr", help="only this condition (a number or 'clean')")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train", parents=[common],
                       help="train learned fusion models and checkpoint them")
    p.add_argument("--strategy", help="train only this strategy")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("fuse", parents=[common],
                       help="write fused log-posterior matrices per strategy")
    p.add_argument("--strategy", help="only this strategy")
    p.add_argument("--snr", help="only this condition (a number or 'clean')")
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("decode", parents=[common],
                       help="run the decoder over fused matrices")
    p.add_argument("--strategy", help="only this strategy")
    p.add_argument("--snr", help="only this condition (a number or 'clean')")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score decoded hypotheses against references")
    p.add_argument("--strategy", help="only this strategy")
    p.add_argument("--snr", help="only this condition (a number or 'clean')")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common],
                       help="full in-memory strategy-by-SNR experiment grid")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", parents=[common],
                       help="summary table + plot-ready CSV from sweep.json")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # keep the exit-code contract for scripts
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

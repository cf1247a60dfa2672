"""SNR-sweep experiment driver: corpus generation, model training, fusion,
decoding, and WER aggregation across seeds, plus CSV/JSON emitters.

The sweep mirrors the usual presentation: one row per strategy, one column
per SNR condition from -9 dB to +9 dB plus clean, and a trailing average
column. WER is pooled over utterances within a (strategy, condition, seed)
cell and averaged across seeds for the table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .align import align_stream, bresenham_map
from .core import STREAMS, PosteriorSequence
from .corpus import (
    Utterance,
    World,
    WorldConfig,
    build_world,
    compute_joint_posteriors,
    compute_stream_posteriors,
    mix_noise,
    sample_utterance,
)
from .decode import (
    DecodingGraph,
    WerReport,
    build_decoding_graph,
    forced_align,
    pool_reports,
    viterbi_decode,
    wer,
)
from .fusion import (
    dfn_fuse,
    dynamic_fuse,
    oracle_weights,
    static_fuse,
    train_dfn,
    train_weight_estimator,
)
from .model_reliability import dispersion_ratio, entropy_ratio, stream_measures
from .nn import TrainConfig
from .signal_reliability import (
    ReliabilityLayout,
    assemble_reliability_vector,
    delta,
    idct_features,
    image_distortion,
    mfcc_frames,
    pitch_nccf,
)

SINGLE_STREAM_STRATEGIES = ("ao", "va", "vs")
ALL_STRATEGIES = ("ao", "va", "vs", "early", "static", "dsw-mse", "dsw-ce",
                  "oracle", "dfn-lstm", "dfn-blstm")
TRAINED_STRATEGIES = ("dsw-mse", "dsw-ce", "dfn-lstm", "dfn-blstm")


def condition_label(snr_db: float | None) -> str:
    return "clean" if snr_db is None else f"{snr_db:g}"


def audio_signal_features(utt: Utterance, layout: ReliabilityLayout) -> dict:
    mfcc = mfcc_frames(utt.audio, n_keep=layout.n_mfcc)
    f0, voicing = pitch_nccf(utt.audio)
    feats = {
        "mfcc": mfcc,
        "delta_mfcc": delta(mfcc),
        "snr": utt.true_snr,
        "f0": f0,
        "delta_f0": delta(f0),
        "voicing": voicing,
    }
    if layout.include_delta_voicing:
        feats["delta_voicing"] = delta(voicing)
    return feats


def video_signal_features(utt: Utterance, layout: ReliabilityLayout) -> dict:
    """Per video frame; callers upsample to the audio rate."""
    vf = utt.num_video_frames
    idct = np.stack([idct_features(utt.video[f], layout.n_idct)
                     for f in range(vf)])
    distortion = np.array([image_distortion(utt.video[f]) for f in range(vf)])
    return {
        "confidence": utt.confidence,
        "idct": idct,
        "brightness": distortion[:, 0],
        "blur": distortion[:, 1],
        "rotation": distortion[:, 2],
    }


def model_based_features(posts: dict[str, PosteriorSequence]) -> dict:
    """Six measures per stream; the two ratio measures compare streams."""
    per_stream = {s: stream_measures(posts[s].frames) for s in STREAMS}
    entropies = np.stack([per_stream[s]["entropy"] for s in STREAMS], axis=1)
    dispersions = np.stack([per_stream[s]["dispersion"] for s in STREAMS],
                           axis=1)
    ent_ratio = entropy_ratio(entropies)
    disp_ratio = dispersion_ratio(dispersions)
    for i, s in enumerate(STREAMS):
        per_stream[s]["entropy_ratio"] = ent_ratio[:, i]
        per_stream[s]["dispersion_ratio"] = disp_ratio[:, i]
    return per_stream


def reliability_features(utt: Utterance, posts: dict[str, PosteriorSequence],
                         layout: ReliabilityLayout | None = None,
                         video_feats: dict | None = None) -> np.ndarray:
    """The full per-frame reliability vector at the audio rate."""
    layout = layout or ReliabilityLayout()
    if video_feats is None:
        video_feats = video_signal_features(utt, layout)
    frame_map = bresenham_map(utt.num_audio_frames, utt.num_video_frames)
    upsampled = {name: align_stream(np.asarray(v), frame_map)
                 for name, v in video_feats.items()}
    return assemble_reliability_vector(
        model_based_features(posts),
        audio_signal_features(utt, layout),
        upsampled,
        layout,
    )


def stream_posterior_set(utt: Utterance, world: World,
                         cached_video: dict[str, PosteriorSequence] | None = None,
                         ) -> dict[str, PosteriorSequence]:
    posts = {"A": compute_stream_posteriors(utt, world, "A")}
    if cached_video is None:
        posts["VA"] = compute_stream_posteriors(utt, world, "VA")
        posts["VS"] = compute_stream_posteriors(utt, world, "VS")
    else:
        posts.update(cached_video)
    return posts


@dataclass
class SweepResult:
    strategies: list[str]
    labels: list[str]
    seeds: list[int]
    per_seed_wer: dict = field(default_factory=dict)  # strategy -> label -> [wer]
    val_ce: dict = field(default_factory=dict)  # variant -> [best val per seed]
    utterance_detail: list = field(default_factory=list)

    def mean_wer(self, strategy: str, label: str) -> float:
        return float(np.mean(self.per_seed_wer[strategy][label]))

    def row_average(self, strategy: str) -> float:
        return float(np.mean([self.mean_wer(strategy, lab)
                              for lab in self.labels]))


def _sample_split(world: World, count: int, offset: int,
                  min_words: int, max_words: int) -> list[Utterance]:
    span = max_words - min_words + 1
    return [sample_utterance(world, min_words + i % span, seed=offset + i,
                             utt_id=f"u{offset + i:06d}")
            for i in range(count)]


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["training"]
    return TrainConfig(lr0=t["lr0"], lr_decay=t["lr_decay"],
                       batch_size=t["batch_size"],
                       check_interval=t["check_interval"],
                       patience=t["patience"], max_steps=t["max_steps"],
                       seed=seed)


def build_training_items(world: World, graph: DecodingGraph,
                         utts: list[Utterance], conditions: list,
                         kinds: list[str], seed: int,
                         need_oracle: bool) -> list[dict]:
    """One training item per utterance, cycling noise conditions and kinds.

    Targets come from forced alignment of the clean audio posteriors, per
    the training recipe; the generator's own alignment is withheld.
    """
    layout = ReliabilityLayout()
    items = []
    for idx, utt in enumerate(utts):
        cond = conditions[idx % len(conditions)]
        kind = kinds[idx % len(kinds)]
        clean_posts_a = compute_stream_posteriors(utt, world, "A")
        target = forced_align(utt.words, np.log(clean_posts_a.frames), graph)
        noisy = mix_noise(utt, kind, cond, seed=seed * 7919 + idx)
        posts = stream_posterior_set(noisy, world)
        rel = reliability_features(noisy, posts, layout)
        logs = np.stack([np.log(posts[s].frames) for s in STREAMS])
        item = {
            "utt_id": utt.utt_id,
            "posteriors": [posts[s].frames for s in STREAMS],
            "log_posts": logs,
            "reliability": rel,
            "targets": target.states,
        }
        if need_oracle:
            item["oracle_weights"] = oracle_weights(
                list(logs), target, mode="renormalized").weights
        items.append(item)
    return items


def train_strategy_models(cfg: dict, world: World, graph: DecodingGraph,
                          seed: int, strategies: list[str],
                          ) -> tuple[dict, dict]:
    """Train every requested learned strategy for one seed.

    Returns (models by strategy, best validation CE by strategy).
    """
    needed = [s for s in strategies if s in TRAINED_STRATEGIES]
    if not needed:
        return {}, {}
    c = cfg["corpus"]
    train_utts = _sample_split(world, c["train"], 0,
                               c["min_words"], c["max_words"])
    val_utts = _sample_split(world, c["val"], 100_000,
                             c["min_words"], c["max_words"])
    conditions = [float(s) for s in cfg["snr_grid"]] + [None]
    kinds = list(cfg["noise_kinds"])
    need_oracle = "dsw-mse" in needed
    train_items = build_training_items(world, graph, train_utts, conditions,
                                       kinds, seed, need_oracle)
    val_items = build_training_items(world, graph, val_utts, conditions,
                                     kinds, seed + 1, need_oracle)
    rel_dim = train_items[0]["reliability"].shape[1]
    s_count = world.config.num_states
    models = {}
    val_ce = {}
    for strat in needed:
        tc = _train_config(cfg, seed)
        if strat.startswith("dfn-"):
            variant = strat.split("-", 1)[1]
            d = cfg["dfn"]
            model, history = train_dfn(
                train_items, val_items, variant, s_count, rel_dim, tc,
                widths=tuple(d["widths"]), hidden=d["hidden"],
                scale=d["scale"], dropout=d["dropout"])
        else:
            criterion = strat.split("-", 1)[1]
            model, history = train_weight_estimator(
                train_items, val_items, criterion, s_count, tc,
                hidden=cfg["estimator"]["hidden"])
        models[strat] = model
        val_ce[strat] = history["best_val"]
    return models, val_ce


def _fuse_for_strategy(strategy: str, posts: dict, logs: list[np.ndarray],
                       rel: np.ndarray, utt: Utterance, world: World,
                       models: dict, oracle_mode: str):
    if strategy == "ao":
        return logs[0]
    if strategy == "va":
        return logs[1]
    if strategy == "vs":
        return logs[2]
    if strategy == "early":
        return np.log(compute_joint_posteriors(utt, world))
    if strategy == "static":
        return static_fuse(logs, np.full(len(logs), 1.0 / len(logs)))
    if strategy == "oracle":
        lam = oracle_weights(logs, utt.alignment, mode=oracle_mode)
        return dynamic_fuse(logs, lam)
    if strategy in ("dsw-mse", "dsw-ce"):
        return dynamic_fuse(logs, models[strategy].predict(rel))
    if strategy in ("dfn-lstm", "dfn-blstm"):
        return dfn_fuse([posts[s].frames for s in STREAMS], rel,
                        models[strategy])
    raise ValueError(f"unknown strategy {strategy!r}")


def run_sweep(cfg: dict, models_out: dict | None = None) -> SweepResult:
    """Run the full experiment grid described by a validated config dict."""
    strategies = list(cfg["strategies"])
    unknown = [s for s in strategies if s not in ALL_STRATEGIES]
    if unknown:
        raise ValueError(f"unknown strategies: {unknown}")
    conditions = [float(s) for s in cfg["snr_grid"]] + [None]
    labels = [condition_label(c) for c in conditions]
    seeds = [int(s) for s in cfg["seeds"]]
    kinds = list(cfg["noise_kinds"])
    oracle_mode = cfg["oracle_mode"]
    layout = ReliabilityLayout()
    result = SweepResult(strategies=strategies, labels=labels, seeds=seeds)
    counts: dict[str, dict[str, list[WerReport]]] = {
        s: {lab: [] for lab in labels} for s in strategies}

    for seed in seeds:
        world = build_world(WorldConfig(**cfg["world"]), seed)
        graph = build_decoding_graph(world, cfg["lm_scale"])
        models, seed_val_ce = train_strategy_models(
            cfg, world, graph, seed, strategies)
        for strat, best in seed_val_ce.items():
            if strat.startswith("dfn-"):
                result.val_ce.setdefault(strat, []).append(best)
        if models_out is not None:
            models_out[seed] = models
        c = cfg["corpus"]
        test_utts = _sample_split(world, c["test"], 200_000,
                                  c["min_words"], c["max_words"])
        video_cache = []
        for utt in test_utts:
            cached = {
                "VA": compute_stream_posteriors(utt, world, "VA"),
                "VS": compute_stream_posteriors(utt, world, "VS"),
            }
            video_cache.append((cached, video_signal_features(utt, layout)))
        per_cell: dict[str, dict[str, list[WerReport]]] = {
            s: {lab: [] for lab in labels} for s in strategies}
        for cond, label in zip(conditions, labels):
            for idx, utt in enumerate(test_utts):
                cached_posts, video_feats = video_cache[idx]
                kind = kinds[idx % len(kinds)]
                noisy = mix_noise(utt, kind, cond, seed=seed * 104729 + idx)
                posts = stream_posterior_set(noisy, world, cached_posts)
                logs = [np.log(posts[s].frames) for s in STREAMS]
                rel = reliability_features(noisy, posts, layout, video_feats)
                for strategy in strategies:
                    fused = _fuse_for_strategy(strategy, posts, logs, rel,
                                               noisy, world, models,
                                               oracle_mode)
                    hyp = viterbi_decode(fused, graph).words
                    report = wer(utt.words, hyp)
                    per_cell[strategy][label].append(report)
                    result.utterance_detail.append({
                        "seed": seed, "strategy": strategy, "snr": label,
                        "utt_id": utt.utt_id, "reference": utt.words,
                        "hypothesis": hyp,
                        "errors": report.errors,
                        "ref_length": report.ref_length,
                    })
        for strategy in strategies:
            for label in labels:
                counts[strategy][label].append(
                    pool_reports(per_cell[strategy][label]))

    result.per_seed_wer = {
        s: {lab: [r.wer for r in counts[s][lab]] for lab in labels}
        for s in strategies}
    return result


def write_sweep_csv(path, result: SweepResult) -> None:
    """Strategy rows by SNR columns plus the row average, Table-style."""
    header = ["strategy"] + [f"snr_{lab}" for lab in result.labels] + ["avg"]
    lines = [",".join(header)]
    for strategy in result.strategies:
        cells = [f"{result.mean_wer(strategy, lab):.6f}"
                 for lab in result.labels]
        cells.append(f"{result.row_average(strategy):.6f}")
        lines.append(",".join([strategy] + cells))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_sweep_json(path, result: SweepResult) -> None:
    doc = {
        "strategies": result.strategies,
        "conditions": result.labels,
        "seeds": result.seeds,
        "wer": {
            s: {lab: {"per_seed": result.per_seed_wer[s][lab],
                      "mean": result.mean_wer(s, lab)}
                for lab in result.labels}
            for s in result.strategies},
        "row_averages": {s: result.row_average(s) for s in result.strategies},
        "validation_ce": result.val_ce,
        "utterances": result.utterance_detail,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def write_report_csv(path, result: SweepResult) -> None:
    """Plot-ready long format: strategy, snr, wer_mean, wer_ci."""
    lines = ["strategy,snr,wer_mean,wer_ci"]
    for strategy in result.strategies:
        for label in result.labels:
            values = np.asarray(result.per_seed_wer[strategy][label])
            mean = float(values.mean())
            if values.size > 1:
                ci = 1.96 * float(values.std(ddof=1)) / np.sqrt(values.size)
            else:
                ci = 0.0
            lines.append(f"{strategy},{label},{mean:.6f},{ci:.6f}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")

"""Command-line pipeline: train-dict, encode, build-index, query, evaluate.

Every stage reads one run config file and validates its inputs before doing
any long-running work, so stages can be re-run independently. Artifacts are
plain files: one codebook per layer, one descriptor file per image, one
index file, one evaluation report. Set HMPSEARCH_LOG=debug|info|warning to
control verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import hashlib
import logging
import math
import os
import re
import sys
from dataclasses import dataclass, replace

import numpy as np

from .coding import load_dictionary, save_dictionary
from .dictionary import TrainConfig, TrainingSet, train
from .encoder import (
    ArchitectureConfig,
    FeatureGrid,
    attach_dictionaries,
    encode_image,
    encode_image_bof,
    encode_layer,
    load_architecture,
    load_descriptor,
    save_descriptor,
)
from .errors import ConfigError, DecodeError, HmpError, InvalidInputError
from .evaluation import evaluate, load_ground_truth, write_report
from .images import IntensityImage, extract_patches, load_image, read_manifest, resize_max_side
from .index import InvertedIndex, apply_idf, index_add, load_index, query, save_index

log = logging.getLogger("hmpsearch")

BASELINE_DICT_NAME = "baseline.hmpd"


@dataclass
class RunConfig:
    manifest: str
    architecture: str
    dictionary_dir: str
    descriptor_dir: str
    index_path: str
    ground_truth: str = ""
    report: str = ""
    seed: int = 0
    threads: int = 1
    resize_max_side: int = 0
    baseline: bool = False
    use_idf: bool = False
    train_iterations: int = 15
    sample_cap: int = 20000
    incoherence_weight: float = 0.1


def load_run_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read run config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: malformed config: {exc}") from exc
    if not parser.has_section("run"):
        raise ConfigError(f"{path}: missing [run] section")
    section = parser["run"]
    base = os.path.dirname(os.path.abspath(path))

    def resolve(key, default=""):
        value = section.get(key, default)
        if not value:
            return value
        return value if os.path.isabs(value) else os.path.join(base, value)

    try:
        cfg = RunConfig(
            manifest=resolve("manifest"),
            architecture=resolve("architecture"),
            dictionary_dir=resolve("dictionary_dir", "dicts"),
            descriptor_dir=resolve("descriptor_dir", "descriptors"),
            index_path=resolve("index_path", "index.hmpi"),
            ground_truth=resolve("ground_truth"),
            report=resolve("report"),
            seed=section.getint("seed", 0),
            threads=section.getint("threads", 1),
            resize_max_side=section.getint("resize_max_side", 0),
            baseline=section.getboolean("baseline", False),
            use_idf=section.getboolean("use_idf", False),
            train_iterations=section.getint("train_iterations", 15),
            sample_cap=section.getint("sample_cap", 20000),
            incoherence_weight=section.getfloat("incoherence_weight", 0.1),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: bad value in [run]: {exc}") from exc
    if not cfg.manifest:
        raise ConfigError(f"{path}: [run] manifest is required")
    if not cfg.architecture:
        raise ConfigError(f"{path}: [run] architecture is required")
    return cfg


def _fingerprint(cfg: RunConfig) -> str:
    digest = hashlib.sha256()
    try:
        with open(cfg.architecture, "rb") as fh:
            digest.update(fh.read())
    except OSError:
        pass
    digest.update(f"seed={cfg.seed};baseline={cfg.baseline};idf={cfg.use_idf}".encode())
    return digest.hexdigest()[:16]


def safe_filename(image_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", image_id)


def _load_corpus(cfg: RunConfig):
    """Decode every manifest image, skipping (and logging) unreadable ones."""
    records = read_manifest(cfg.manifest)
    if not records:
        raise InvalidInputError(f"manifest {cfg.manifest} lists no images")
    images: list[tuple[str, IntensityImage]] = []
    skipped = 0
    for image_id, path in records:
        try:
            img = load_image(path)
        except DecodeError as exc:
            log.warning("skipping %s: %s", image_id, exc)
            skipped += 1
            continue
        if cfg.resize_max_side > 0:
            img = resize_max_side(img, cfg.resize_max_side)
        images.append((image_id, img))
    if skipped * 2 > len(records):
        raise HmpError(
            f"{skipped} of {len(records)} manifest images are unreadable; aborting"
        )
    return images


def _dict_path(cfg: RunConfig, ref: str) -> str:
    return ref if os.path.isabs(ref) else os.path.join(cfg.dictionary_dir, ref)


def _attach_layer_dicts(cfg: RunConfig, arch: ArchitectureConfig, upto: int) -> ArchitectureConfig:
    layers = list(arch.layers)
    for depth in range(1, upto + 1):
        layer = layers[depth - 1]
        layers[depth - 1] = replace(
            layer, dictionary=load_dictionary(_dict_path(cfg, layer.dictionary_ref))
        )
    return ArchitectureConfig(layers, list(arch.pyramid))


def _subsample_columns(mat: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if mat.shape[1] <= cap:
        return mat
    picks = rng.choice(mat.shape[1], size=cap, replace=False)
    return mat[:, np.sort(picks)]


def _layer_training_signals(cfg, arch, images, depth: int, rng) -> np.ndarray:
    """Signals feeding layer `depth`: raw patches for 1, pooled features above."""
    first = arch.layers[0]
    per_image = max(1, math.ceil(2 * cfg.sample_cap / len(images)))
    chunks = []
    for _, img in images:
        grid = extract_patches(img, first.input_patch_size, first.stride)
        if depth == 1:
            vectors = grid.patches
        else:
            feats = FeatureGrid(grid.centers, grid.patches, (img.height, img.width))
            for layer in arch.layers[: depth - 1]:
                feats = encode_layer(feats, layer)
            vectors = feats.vectors
        if vectors.shape[0] > per_image:
            picks = rng.choice(vectors.shape[0], size=per_image, replace=False)
            vectors = vectors[np.sort(picks)]
        chunks.append(vectors.T)
    signals = np.concatenate(chunks, axis=1)
    return _subsample_columns(signals, cfg.sample_cap, rng)


def cmd_train_dict(cfg: RunConfig, sample_cap: int | None = None) -> int:
    if sample_cap is not None:
        cfg = replace(cfg, sample_cap=sample_cap)
    arch = load_architecture(cfg.architecture)
    images = _load_corpus(cfg)
    os.makedirs(cfg.dictionary_dir, exist_ok=True)
    log_path = os.path.join(cfg.dictionary_dir, "training.log")
    lines = []
    if cfg.baseline:
        rng = np.random.default_rng(cfg.seed)
        signals = _layer_training_signals(cfg, arch, images, 1, rng)
        tcfg = TrainConfig(
            codebook_size=arch.final_layer.codebook_size,
            sparsity=1,
            iterations=cfg.train_iterations,
            incoherence_weight=cfg.incoherence_weight,
            seed=cfg.seed,
        )
        dictionary, trace = train(TrainingSet(signals), tcfg)
        save_dictionary(dictionary, _dict_path(cfg, BASELINE_DICT_NAME))
        lines.extend(f"baseline\t{i}\t{obj:.6f}" for i, obj in enumerate(trace))
        print(f"trained baseline codebook: {dictionary.size} atoms from {signals.shape[1]} patches")
    else:
        for depth, layer in enumerate(arch.layers, start=1):
            rng = np.random.default_rng(cfg.seed + depth)
            signals = _layer_training_signals(cfg, arch, images, depth, rng)
            tcfg = TrainConfig(
                codebook_size=layer.codebook_size,
                sparsity=min(layer.sparsity, signals.shape[0], layer.codebook_size),
                iterations=cfg.train_iterations,
                incoherence_weight=cfg.incoherence_weight,
                seed=cfg.seed + depth,
            )
            dictionary, trace = train(TrainingSet(signals), tcfg)
            save_dictionary(dictionary, _dict_path(cfg, layer.dictionary_ref))
            lines.extend(f"layer{depth}\t{i}\t{obj:.6f}" for i, obj in enumerate(trace))
            print(
                f"trained layer {depth} codebook: {dictionary.size} atoms"
                f" from {signals.shape[1]} signals"
            )
            arch = _attach_layer_dicts(cfg, arch, depth)
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def _encode_one(cfg, arch, dictionary, image_id, img):
    if cfg.baseline:
        first = arch.layers[0]
        return encode_image_bof(
            img, dictionary, first.input_patch_size, first.stride, image_id
        )
    return encode_image(img, arch, image_id)


def cmd_encode(cfg: RunConfig) -> int:
    arch = load_architecture(cfg.architecture)
    dictionary = None
    if cfg.baseline:
        path = _dict_path(cfg, BASELINE_DICT_NAME)
        if not os.path.exists(path):
            raise ConfigError(f"baseline codebook {path} not found; run train-dict first")
        dictionary = load_dictionary(path)
    else:
        for layer in arch.layers:
            path = _dict_path(cfg, layer.dictionary_ref)
            if not os.path.exists(path):
                raise ConfigError(f"codebook {path} not found; run train-dict first")
        arch = attach_dictionaries(arch, lambda ref: load_dictionary(_dict_path(cfg, ref)))
    images = _load_corpus(cfg)
    os.makedirs(cfg.descriptor_dir, exist_ok=True)

    def work(record):
        image_id, img = record
        return _encode_one(cfg, arch, dictionary, image_id, img)

    if cfg.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            descriptors = list(pool.map(work, images))
    else:
        descriptors = [work(record) for record in images]
    total_nnz = 0
    for desc in descriptors:
        save_descriptor(desc, os.path.join(cfg.descriptor_dir, safe_filename(desc.image_id) + ".hmpv"))
        total_nnz += desc.nnz
    mean_nnz = total_nnz / len(descriptors)
    print(f"encoded {len(descriptors)} descriptors, mean nnz {mean_nnz:.1f}")
    return 0


def _load_descriptors(cfg: RunConfig):
    if not os.path.isdir(cfg.descriptor_dir):
        raise ConfigError(f"descriptor directory {cfg.descriptor_dir} not found; run encode first")
    files = sorted(
        name for name in os.listdir(cfg.descriptor_dir) if name.endswith(".hmpv")
    )
    if not files:
        raise ConfigError(f"no descriptor files in {cfg.descriptor_dir}; run encode first")
    return [load_descriptor(os.path.join(cfg.descriptor_dir, name)) for name in files]


def cmd_build_index(cfg: RunConfig, use_idf: bool | None = None) -> int:
    descriptors = _load_descriptors(cfg)
    idx = InvertedIndex(descriptors[0].length)
    for desc in descriptors:
        index_add(idx, desc)
    if use_idf if use_idf is not None else cfg.use_idf:
        idx = apply_idf(idx)
    idx.freeze()
    os.makedirs(os.path.dirname(os.path.abspath(cfg.index_path)), exist_ok=True)
    save_index(idx, cfg.index_path)
    print(f"indexed {idx.doc_count} descriptors of dimension {idx.dimension}")
    return 0


def _query_descriptor(cfg: RunConfig, image_path: str):
    image_id = os.path.splitext(os.path.basename(image_path))[0]
    img = load_image(image_path)
    if cfg.resize_max_side > 0:
        img = resize_max_side(img, cfg.resize_max_side)
    arch = load_architecture(cfg.architecture)
    if cfg.baseline:
        dictionary = load_dictionary(_dict_path(cfg, BASELINE_DICT_NAME))
        return _encode_one(cfg, arch, dictionary, image_id, img)
    arch = attach_dictionaries(arch, lambda ref: load_dictionary(_dict_path(cfg, ref)))
    return _encode_one(cfg, arch, None, image_id, img)


def cmd_query(cfg: RunConfig, image_path: str, top_k: int, self_exclude: bool) -> int:
    if not os.path.exists(cfg.index_path):
        raise ConfigError(f"index {cfg.index_path} not found; run build-index first")
    idx = load_index(cfg.index_path)
    desc = _query_descriptor(cfg, image_path)
    for rank, (image_id, score) in enumerate(
        query(idx, desc, top_k, self_exclude=self_exclude), start=1
    ):
        print(f"{rank}\t{image_id}\t{score:.6f}")
    return 0


def cmd_evaluate(cfg: RunConfig, self_exclude: bool = True) -> int:
    if not cfg.ground_truth:
        raise ConfigError("[run] ground_truth is required for evaluate")
    if not os.path.exists(cfg.index_path):
        raise ConfigError(f"index {cfg.index_path} not found; run build-index first")
    gt = load_ground_truth(cfg.ground_truth)
    idx = load_index(cfg.index_path)
    descriptors = {desc.image_id: desc for desc in _load_descriptors(cfg)}
    report = evaluate(
        idx, descriptors, gt, self_exclude=self_exclude, config_fingerprint=_fingerprint(cfg)
    )
    report_path = cfg.report or cfg.index_path + ".report.txt"
    write_report(report, report_path)
    print(f"mAP {report.mean_ap:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmpsearch",
        description="Layered sparse-coding image retrieval: train codebooks,"
        " encode descriptors, index, query, evaluate.",
    )
    parser.add_argument("--config", required=True, help="run config file")
    parser.add_argument("--seed", type=int, help="override [run] seed")
    parser.add_argument("--threads", type=int, help="override [run] threads")
    parser.add_argument(
        "--baseline", action="store_true", help="bag-of-features pipeline instead of layered coding"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_train = sub.add_parser("train-dict", help="train one codebook per layer")
    p_train.add_argument("--sample-cap", type=int, help="max training signals per layer")
    sub.add_parser("encode", help="encode every manifest image into a descriptor file")
    p_index = sub.add_parser("build-index", help="build the inverted file from descriptors")
    p_index.add_argument("--idf", action="store_true", help="apply inverse-document-frequency weights")
    p_query = sub.add_parser("query", help="rank indexed images against a query image")
    p_query.add_argument("image", help="query image path")
    p_query.add_argument("--top-k", type=int, default=10)
    p_query.add_argument(
        "--no-self-exclude", action="store_true", help="let the query match its own id"
    )
    p_eval = sub.add_parser("evaluate", help="mean average precision over the ground truth")
    p_eval.add_argument(
        "--no-self-exclude", action="store_true", help="count the query itself as a hit"
    )
    return parser


def main(argv=None) -> int:
    level = os.environ.get("HMPSEARCH_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.threads is not None:
            cfg = replace(cfg, threads=args.threads)
        if args.baseline:
            cfg = replace(cfg, baseline=True)
        if args.command == "train-dict":
            return cmd_train_dict(cfg, sample_cap=args.sample_cap)
        if args.command == "encode":
            return cmd_encode(cfg)
        if args.command == "build-index":
            return cmd_build_index(cfg, use_idf=args.idf or None)
        if args.command == "query":
            return cmd_query(cfg, args.image, args.top_k, not args.no_self_exclude)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, self_exclude=not args.no_self_exclude)
        raise ConfigError(f"unknown command {args.command!r}")
    except HmpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

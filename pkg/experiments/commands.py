"""Experiment commands: each takes a validated ExperimentConfig and writes a run directory."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import settings
from database.results_store import ResultsStore
from experiments.config import DatasetSpec, ExperimentConfig
from experiments.reporting import Timings, evaluate_method, write_report, write_table
from models.checkpoint import load_checkpoint, save_checkpoint
from models.surrogate_model import SurrogateModel, build_model, predict
from models.trainer import EpochStats, TrainReport, train
from services.dataset_service import Dataset, split
from services.detector import build_records, train_detector
from services.uncertainty_scorer import UncertaintyScorer, cusp_scores
from utils.exceptions import ConfigurationError, ProtocolError
from utils.file_io import atomic_write_json, write_pgm
from utils.metrics import accuracy
from utils.patterns import PatternSet, build_pattern_set, pairwise_stats, save_pattern_set
from utils.perturb import AttackConfig, FlipSpec, add_noise, fgm_attack, flip_labels, random_erase, rotate
from utils.score_stats import gap_in_standard_errors, summarize
from utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"
DUMP_SAMPLES_PER_CLASS = 32


@dataclass
class CommandResult:
    """What a command wrote: the report path and the results it contains."""

    out_dir: Path
    report_path: Path
    results: Dict
    files: Dict


@dataclass
class FittedModel:
    model: SurrogateModel
    patterns: PatternSet
    alpha: float
    train_report: Optional[TrainReport] = None


# ----------------------------------------------------------------------------
# shared plumbing
# ----------------------------------------------------------------------------


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = cfg.out_path
    out.mkdir(parents=True, exist_ok=True)
    return out


def _limited(dataset: Dataset, spec: Optional[DatasetSpec], default: int, seed: int) -> Dataset:
    limit = spec.limit if spec is not None and spec.limit is not None else default
    return dataset.limit(limit, seed)


def _train_test(cfg: ExperimentConfig, master: int, repeat: int = 0) -> Tuple[Dataset, Dataset]:
    """Training and test sets: an explicit test dataset or a held-out share of ``dataset``."""
    cfg.require("dataset")
    full = cfg.dataset.load(master, "train")
    if cfg.test_dataset is not None:
        train_set = full
        test_set = cfg.test_dataset.load(master, "test")
    else:
        _, parts = split(full, "train-test", derive_seed(master, "split", "train-test", repeat), cfg.test_fraction)
        train_set, test_set = parts["train"], parts["test"]
    train_set = _limited(train_set, cfg.dataset, settings.train_limit, derive_seed(master, "limit", "train", repeat))
    test_set = _limited(test_set, cfg.test_dataset, settings.test_limit, derive_seed(master, "limit", "test", repeat))
    if train_set.side != test_set.side:
        raise ConfigurationError(f"train images are {train_set.side}px, test images {test_set.side}px")
    return train_set, test_set


def _patterns(cfg: ExperimentConfig, K: int, master: int) -> PatternSet:
    spec = cfg.patterns
    if spec.classes is not None and spec.classes != K:
        raise ConfigurationError(f"pattern spec declares {spec.classes} classes, the data has {K}")
    return build_pattern_set(
        spec.kind,
        K,
        spec.side,
        seed=derive_seed(master, "patterns"),
        directory=spec.directory,
        min_distance=spec.min_distance,
    )


def _predict_all(model: SurrogateModel, images: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Predicted classes and surrogates for a batch, evaluated chunk by chunk."""
    classes, surrogates = [], []
    for start in range(0, len(images), settings.score_chunk_size):
        prediction = predict(model, images[start : start + settings.score_chunk_size])
        classes.append(np.atleast_2d(prediction.y).argmax(axis=1))
        surrogates.append(np.atleast_2d(prediction.s))
    if not classes:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.m))
    return np.concatenate(classes), np.concatenate(surrogates)


def _dump_reconstructions(model: SurrogateModel, dataset: Dataset, directory: Path, cap: Optional[int]) -> List[str]:
    """Mean surrogate image per true class as ``class_<k>_recon.pgm``."""
    side = model.pattern_side
    files = []
    for k in range(model.K):
        index = np.flatnonzero(dataset.labels == k)[:cap]
        if len(index) == 0:
            logger.warning("class %d has no samples; skipping its reconstruction dump", k)
            continue
        _, surrogates = _predict_all(model, dataset.images[index])
        path = write_pgm(directory / f"class_{k}_recon.pgm", surrogates.mean(axis=0).reshape(side, side))
        files.append(str(path))
    return files


def _fit(
    cfg: ExperimentConfig,
    train_set: Dataset,
    master: int,
    key: Sequence,
    alpha: Optional[float] = None,
    dump_dir: Optional[Path] = None,
) -> FittedModel:
    """Build patterns and a seeded model, then train it on ``train_set``."""
    K = train_set.K
    patterns = _patterns(cfg, K, master)
    model = build_model(cfg.architecture, (train_set.side, train_set.side), cfg.patterns.m, K, derive_seed(master, "init", *key))
    update = {"seed": derive_seed(master, "train", *key)}
    if alpha is not None:
        update["alpha"] = alpha
    train_cfg = cfg.train.model_copy(update=update)

    on_epoch = None
    if dump_dir is not None and cfg.dump_every > 0:

        def on_epoch(stats: EpochStats, current: SurrogateModel):
            if stats.epoch % cfg.dump_every == 0:
                _dump_reconstructions(current, train_set, dump_dir / f"epoch_{stats.epoch:03d}", DUMP_SAMPLES_PER_CLASS)

    report = train(model, train_set, patterns, train_cfg, on_epoch=on_epoch)
    return FittedModel(model=model, patterns=patterns, alpha=train_cfg.alpha, train_report=report)


def _load_or_fit(
    cfg: ExperimentConfig,
    train_set: Dataset,
    master: int,
    key: Sequence,
    checkpoint: Optional[Path],
    alpha: Optional[float] = None,
) -> FittedModel:
    if checkpoint is None:
        return _fit(cfg, train_set, master, key, alpha=alpha)
    loaded = load_checkpoint(checkpoint)
    if loaded.model.K != train_set.K:
        raise ConfigurationError(f"{checkpoint}: model has {loaded.model.K} classes, the data has {train_set.K}")
    if tuple(loaded.model.input_shape[1:]) != (train_set.side, train_set.side):
        raise ConfigurationError(
            f"{checkpoint}: model expects {loaded.model.image_side}px images, data has {train_set.side}px"
        )
    model_alpha = float(loaded.metadata.get("alpha", cfg.train.alpha if alpha is None else alpha))
    logger.info("using checkpoint %s (alpha=%g)", checkpoint, model_alpha)
    return FittedModel(model=loaded.model, patterns=loaded.patterns, alpha=model_alpha)


def _score_methods(cfg: ExperimentConfig, required: Sequence[str] = ()) -> List[str]:
    """Configured methods plus ``required``; the detector only runs in eval-detector."""
    methods = list(dict.fromkeys(list(required) + list(cfg.methods)))
    if "detector" in methods:
        logger.warning("the detector score needs the eval-detector protocol; skipping it for %s", cfg.experiment)
    return [m for m in methods if m != "detector"]


def _scorer(cfg: ExperimentConfig, fitted: FittedModel, methods: Sequence[str], seed: int, oracle_mode: str) -> UncertaintyScorer:
    return UncertaintyScorer(
        fitted.model,
        fitted.patterns,
        methods,
        seed=seed,
        temperature=cfg.odin.temperature,
        perturb_eps=cfg.odin.perturb_eps,
        oracle_mode=oracle_mode,
    )


def _method_scores(frame: pd.DataFrame, method: str) -> np.ndarray:
    return frame.loc[frame["method"] == method, "score"].to_numpy()


def _finish(cfg: ExperimentConfig, out: Path, experiment: str, results: Dict, files: Dict, timings: Timings) -> CommandResult:
    path = write_report(out, experiment, cfg.echo(), results, files)
    timings.write(out)
    return CommandResult(out_dir=out, report_path=path, results=results, files=files)


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig) -> CommandResult:
    """Train a model, write its checkpoint, a train report and per-epoch reconstruction dumps."""
    master, out, timings = cfg.master_seed, _out_dir(cfg), Timings()
    with timings.phase("data"):
        train_set, test_set = _train_test(cfg, master)
    with timings.phase("train"):
        fitted = _fit(cfg, train_set, master, ("train",), dump_dir=out / "dumps")
    if fitted.alpha == 0:
        logger.warning("alpha=0: surrogate dumps carry no pattern constraint")
    predicted, _ = _predict_all(fitted.model, test_set.images)
    test_accuracy = accuracy(predicted, test_set.labels)

    metadata = {
        "alpha": float(fitted.alpha),
        "architecture": cfg.architecture,
        "dataset": train_set.provenance,
        "epochs": int(cfg.train.epochs),
        "seed": int(master),
        "test_accuracy": float(test_accuracy),
    }
    checkpoint = save_checkpoint(fitted.model, fitted.patterns, out / CHECKPOINT_NAME, metadata)
    dumps = sorted(str(p.relative_to(out)) for p in (out / "dumps").rglob("*.pgm")) if (out / "dumps").exists() else []
    results = {
        "train": fitted.train_report.to_dict(),
        "test_accuracy": test_accuracy,
        "sizes": {"train": len(train_set), "test": len(test_set)},
        "patterns": fitted.patterns.identifier,
    }
    files = {"checkpoint": checkpoint.name, "dumps": dumps}
    return _finish(cfg, out, "train", results, files, timings)


def _ood_sets(cfg: ExperimentConfig, master: int, repeat: int) -> Tuple[Dataset, Dataset, Dataset, Dict]:
    """In-domain train/test sets, the out-of-domain test set and split details."""
    cfg.require("dataset")
    info: Dict = {"ood_split": cfg.ood_split}
    if cfg.ood_split == "class-5v5":
        full = cfg.dataset.load(master, "train")
        plan, parts = split(full, "class-5v5", derive_seed(master, "split", "class-5v5", repeat))
        _, halves = split(parts["in"], "train-test", derive_seed(master, "split", "train-test", repeat), cfg.test_fraction)
        in_train = _limited(halves["train"], cfg.dataset, settings.train_limit, derive_seed(master, "limit", "train", repeat))
        in_test = halves["test"].limit(settings.test_limit, derive_seed(master, "limit", "test", repeat))
        out_test = parts["out"].limit(settings.test_limit, derive_seed(master, "limit", "out", repeat))
        info.update(in_classes=plan.in_classes, out_classes=plan.out_classes)
    elif cfg.ood_split == "random-halves":
        in_train, test_set = _train_test(cfg, master, repeat)
        order = make_rng(master, "halves", repeat).permutation(len(test_set))
        half = len(order) // 2
        in_test, out_test = test_set.subset(order[:half]), test_set.subset(order[half:])
    else:
        cfg.require("out_dataset")
        in_train, in_test = _train_test(cfg, master, repeat)
        out_full = cfg.out_dataset.load(master, "out")
        out_test = _limited(out_full, cfg.out_dataset, settings.test_limit, derive_seed(master, "limit", "out", repeat))
        info["out_provenance"] = out_full.provenance
    if out_test.side != in_test.side:
        raise ConfigurationError(f"out-of-domain images are {out_test.side}px, in-domain images {in_test.side}px")
    info["sizes"] = {"train": len(in_train), "in_test": len(in_test), "out_test": len(out_test)}
    return in_train, in_test, out_test, info


def cmd_eval_ood(cfg: ExperimentConfig) -> CommandResult:
    """Score in- and out-of-domain test samples with every method; AUC with out-of-domain as positive."""
    master, out, timings = cfg.master_seed, _out_dir(cfg), Timings()
    methods = _score_methods(cfg)
    runs: Dict[str, List[float]] = {m: [] for m in methods}
    accuracies: List[float] = []
    roc_files: Dict[str, str] = {}
    splits = []

    for repeat in range(cfg.repeats):
        with timings.phase("data"):
            in_train, in_test, out_test, info = _ood_sets(cfg, master, repeat)
        splits.append(info)
        checkpoint = cfg.checkpoint if cfg.repeats == 1 else None
        with timings.phase("train"):
            fitted = _load_or_fit(cfg, in_train, master, ("ood", repeat), checkpoint)

        n_in, n_out = len(in_test), len(out_test)
        images = np.concatenate([in_test.images, out_test.images])
        domain = np.array(["in"] * n_in + ["out"] * n_out, dtype=object)
        truth = np.concatenate([in_test.labels, np.full(n_out, -1)])
        positives = (domain == "out").astype(np.int64)
        with timings.phase("score"):
            scorer = _scorer(cfg, fitted, methods, derive_seed(master, "scores", repeat), cfg.oracle_mode)
            frame = scorer.score(images, truth=truth, domain=domain)

        predicted = frame.loc[frame["method"] == methods[0], "predicted_class"].to_numpy()
        accuracies.append(accuracy(predicted[:n_in], in_test.labels))
        for method in methods:
            evaluation = evaluate_method(method, _method_scores(frame, method), positives, out if repeat == 0 else None)
            runs[method].append(evaluation["auc"])
            if "roc_file" in evaluation:
                roc_files[method] = evaluation["roc_file"]
        if repeat == 0:
            with ResultsStore() as store:
                run_id = f"eval-ood-{master}"
                store.record_run(run_id, "eval-ood", master, cfg.echo())
                store.insert_records(run_id, "eval-ood", frame.assign(group_tag=frame["domain_flag"]))

    results = {
        "methods": {
            m: {
                "auc": float(np.mean(runs[m])),
                "auc_std": float(np.std(runs[m], ddof=1)) if len(runs[m]) > 1 else 0.0,
                "auc_runs": runs[m],
                "accuracy": float(np.mean(accuracies)),
            }
            for m in methods
        },
        "accuracy_runs": accuracies,
        "repeats": cfg.repeats,
        "splits": splits,
    }
    for method in methods:
        logger.info("eval-ood %s AUC %.4f", method, results["methods"][method]["auc"])
    return _finish(cfg, out, "eval-ood", results, {"roc": roc_files}, timings)


def _group_table(store: ResultsStore, run_id: str, method: str) -> Dict:
    table = store.group_summary(run_id, method)
    return {
        str(row["group"]): {
            "count": int(row["count"]),
            "mean": float(row["mean"]),
            "median": float(row["median"]),
            "std": float(row["std"]) if pd.notna(row["std"]) else None,
        }
        for row in table.to_dict("records")
    }


def _compare(treated: np.ndarray, reference: np.ndarray) -> Dict:
    first, second = summarize(treated), summarize(reference)
    return {
        "treated": first.to_dict(),
        "reference": second.to_dict(),
        "mean_difference": first.mean - second.mean,
        "median_difference": first.median - second.median,
        "gap_standard_errors": gap_in_standard_errors(treated, reference),
    }


def cmd_eval_flip(cfg: ExperimentConfig) -> CommandResult:
    """Train on partly flipped labels and compare uncertainty of flipped and clean training samples."""
    master, out, timings = cfg.master_seed, _out_dir(cfg), Timings()
    with timings.phase("data"):
        train_set, test_set = _train_test(cfg, master)
    K = train_set.K
    spec = FlipSpec(pairs=cfg.flip.pairs, rate=cfg.flip.rate, seed=derive_seed(master, "flip"))
    noisy_labels, mask = flip_labels(train_set.labels, spec, num_classes=K)
    noisy = Dataset(train_set.images, noisy_labels, train_set.class_names, f"{train_set.provenance}/flipped")

    sources = sorted({source for source, _ in cfg.flip.pairs})
    eligible = np.isin(train_set.labels, sources)
    treated = mask.copy()
    treated_name = "flipped"
    if not mask.any():
        # null run: a control group drawn like the flips, without relabelling
        treated_name = "control"
        for source in sources:
            candidates = np.flatnonzero(train_set.labels == source)
            n_control = int(np.floor(cfg.flip.control_rate * len(candidates) + 0.5))
            chosen = make_rng(master, "flip-control", source).choice(candidates, size=n_control, replace=False)
            treated[chosen] = True
    groups = np.full(len(train_set), "other", dtype=object)
    groups[eligible & ~treated] = "clean"
    groups[treated] = treated_name

    with timings.phase("train"):
        fitted = _fit(cfg, noisy, master, ("flip",))
    methods = _score_methods(cfg, required=("cusp-mse",))
    with timings.phase("score"):
        frame = _scorer(cfg, fitted, methods, derive_seed(master, "scores"), "correctness").score(
            train_set.images, truth=train_set.labels
        )
    frame["group_tag"] = np.tile(groups, len(methods))

    run_id = f"eval-flip-{master}"
    per_method = {}
    with ResultsStore() as store:
        store.record_run(run_id, "eval-flip", master, cfg.echo())
        store.insert_records(run_id, "eval-flip", frame)
        for method in methods:
            scores = _method_scores(frame, method)
            pairs = {}
            for source, target in cfg.flip.pairs:
                of_source = train_set.labels == source
                pairs[f"{source}->{target}"] = _compare(scores[treated & of_source], scores[~treated & of_source])
            per_method[method] = {
                "groups": _group_table(store, run_id, method),
                "treated_vs_clean": _compare(scores[groups == treated_name], scores[groups == "clean"]),
                "treated_vs_all_untreated": _compare(scores[treated], scores[~treated]),
                "pairs": pairs,
            }

    predicted, _ = _predict_all(fitted.model, test_set.images)
    results = {
        "treated_group": treated_name,
        "flipped": int(mask.sum()),
        "counts": {str(g): int(np.sum(groups == g)) for g in ("clean", treated_name, "other")},
        "methods": per_method,
        "test_accuracy": accuracy(predicted, test_set.labels),
        "train_accuracy_on_noisy_labels": fitted.train_report.final.accuracy if fitted.train_report.final else None,
    }
    gap = per_method["cusp-mse"]["treated_vs_clean"]["gap_standard_errors"]
    logger.info("eval-flip: cusp-mse %s vs clean gap %.2f standard errors", treated_name, gap)
    return _finish(cfg, out, "eval-flip", results, {}, timings)


def _attacked_accuracy(fitted: FittedModel, images: np.ndarray, labels: np.ndarray, epsilon: float) -> float:
    attack = AttackConfig(epsilon=epsilon)
    adversarial = []
    for start in range(0, len(images), settings.score_chunk_size):
        stop = start + settings.score_chunk_size
        adversarial.append(fgm_attack(fitted.model, images[start:stop], labels[start:stop], fitted.patterns, attack, fitted.alpha))
    predicted, _ = _predict_all(fitted.model, np.concatenate(adversarial))
    return accuracy(predicted, labels)


def _non_monotone(epsilons: Sequence[float], accuracies: Sequence[float]) -> bool:
    order = np.argsort(epsilons, kind="stable")
    ordered = np.asarray(accuracies)[order]
    return bool(np.any(np.diff(ordered) > 0))


def cmd_eval_adv(cfg: ExperimentConfig) -> CommandResult:
    """FGM accuracy per epsilon for a pattern-regularized and a plain model."""
    master, out, timings = cfg.master_seed, _out_dir(cfg), Timings()
    with timings.phase("data"):
        train_set, test_set = _train_test(cfg, master)
    with timings.phase("train"):
        cusp = _load_or_fit(cfg, train_set, master, ("adv", "cusp"), cfg.checkpoint)
        plain = _load_or_fit(cfg, train_set, master, ("adv", "plain"), cfg.plain_checkpoint, alpha=0.0)
    if cusp.model.input_shape != plain.model.input_shape or cusp.model.K != plain.model.K:
        raise ConfigurationError("both models must share input shape and classes")
    if cusp.alpha == 0:
        logger.warning("the pattern-regularized model was trained with alpha=0")

    rows = []
    with timings.phase("attack"):
        for epsilon in cfg.epsilons:
            rows.append(
                {
                    "epsilon": float(epsilon),
                    "cusp_accuracy": _attacked_accuracy(cusp, test_set.images, test_set.labels, epsilon),
                    "plain_accuracy": _attacked_accuracy(plain, test_set.images, test_set.labels, epsilon),
                }
            )
    table = pd.DataFrame(rows, columns=["epsilon", "cusp_accuracy", "plain_accuracy"])
    warnings = []
    for column in ("cusp_accuracy", "plain_accuracy"):
        if _non_monotone(table["epsilon"], table[column]):
            message = f"{column} increases with epsilon somewhere in {cfg.epsilons}"
            logger.warning(message)
            warnings.append(message)
    clean_c, _ = _predict_all(cusp.model, test_set.images)
    clean_p, _ = _predict_all(plain.model, test_set.images)
    results = {
        "alphas": {"cusp": cusp.alpha, "plain": plain.alpha},
        "clean_accuracy": {
            "cusp": accuracy(clean_c, test_set.labels),
            "plain": accuracy(clean_p, test_set.labels),
        },
        "table": rows,
        "warnings": warnings,
        "test_size": len(test_set),
    }
    files = {"table": write_table(out, "adversarial.csv", table)}
    return _finish(cfg, out, "eval-adv", results, files, timings)


def cmd_eval_detector(cfg: ExperimentConfig) -> CommandResult:
    """Train primary on part 1, the detector on part 2, and compare mse, bce and detector on part 3."""
    master, out, timings = cfg.master_seed, _out_dir(cfg), Timings()
    cfg.require("dataset")
    with timings.phase("data"):
        full = cfg.dataset.load(master, "train")
        full = _limited(full, cfg.dataset, settings.train_limit * 12 // 10, derive_seed(master, "limit", "ratio"))
        plan, parts = split(full, "ratio-10-1-1", derive_seed(master, "split", "ratio-10-1-1"))
    with timings.phase("train"):
        fitted = _load_or_fit(cfg, parts["train"], master, ("detector-primary",), cfg.checkpoint)
    with timings.phase("detector"):
        validation = build_records(fitted.model, fitted.patterns, parts["validation"].images, parts["validation"].labels)
        detector = train_detector(validation, cfg.detector, derive_seed(master, "detector"))
    with timings.phase("score"):
        test = build_records(fitted.model, fitted.patterns, parts["test"].images, parts["test"].labels)
        if test.labels.min() == test.labels.max():
            raise ProtocolError("degenerate labels on the test split: every prediction is right (or every one wrong)")
        positives = (1.0 - test.labels).astype(np.int64)
        scores = {
            "cusp-mse": test.mse,
            "cusp-bce": cusp_scores(test.s, test.targets, "bce"),
            "detector": detector.uncertainty(test.s, test.targets, test.mse),
        }
    methods = {name: evaluate_method(name, values, positives, out) for name, values in scores.items()}
    results = {
        "methods": {name: {"auc": value["auc"]} for name, value in methods.items()},
        "record_counts": plan.sizes(),
        "label_counts": {"validation": validation.counts(), "test": test.counts()},
        "test_accuracy": float(test.labels.mean()),
        "gamma": cfg.detector.gamma,
    }
    files = {"roc": {name: value["roc_file"] for name, value in methods.items()}}
    logger.info("eval-detector AUC mse %.4f bce %.4f detector %.4f", *(v["auc"] for v in methods.values()))
    return _finish(cfg, out, "eval-detector", results, files, timings)


def cmd_dump_patterns(cfg: ExperimentConfig) -> CommandResult:
    """Write target patterns and mean reconstructions per class as PGM files."""
    master, out, timings = cfg.master_seed, _out_dir(cfg), Timings()
    cfg.require("checkpoint", "dataset")
    loaded = load_checkpoint(cfg.checkpoint)
    model, patterns = loaded.model, loaded.patterns
    dataset = _limited(cfg.dataset.load(master, "train"), cfg.dataset, settings.test_limit, derive_seed(master, "limit", "dump"))
    if dataset.K != model.K:
        raise ConfigurationError(f"dataset has {dataset.K} classes, checkpoint {model.K}")

    targets = [write_pgm(out / f"class_{k}_target.pgm", patterns[k].image()) for k in range(model.K)]
    recons = _dump_reconstructions(model, dataset, out, cap=None)
    _, surrogates = _predict_all(model, dataset.images)
    correlation = {}
    for k in range(model.K):
        members = dataset.labels == k
        if not members.any():
            continue
        mean = surrogates[members].mean(axis=0)
        target = patterns.matrix[k]
        if mean.std() == 0 or target.std() == 0:
            correlation[str(k)] = None
        else:
            correlation[str(k)] = float(np.corrcoef(mean, target)[0, 1])
    files = {"targets": [p.name for p in targets], "reconstructions": [Path(p).name for p in recons]}
    results = {"pearson_r": correlation, "patterns": patterns.identifier, "samples": len(dataset)}
    return _finish(cfg, out, "dump-patterns", results, files, timings)


def cmd_eval_corrupt(cfg: ExperimentConfig) -> CommandResult:
    """Mean uncertainty and accuracy under rotation, Gaussian noise and random erasing."""
    master, out, timings = cfg.master_seed, _out_dir(cfg), Timings()
    with timings.phase("data"):
        train_set, test_set = _train_test(cfg, master)
    with timings.phase("train"):
        fitted = _load_or_fit(cfg, train_set, master, ("corrupt",), cfg.checkpoint)
    methods = _score_methods(cfg, required=("cusp-mse",))
    scorer = _scorer(cfg, fitted, methods, derive_seed(master, "scores"), "correctness")
    grid = cfg.corruption
    settings_grid = (
        [("rotation", float(a)) for a in grid.rotations]
        + [("noise", float(s)) for s in grid.noise_sigmas]
        + [("erase", int(c)) for c in grid.erase_counts]
    )

    rows, nested = [], {}
    with timings.phase("score"):
        for index, (kind, level) in enumerate(settings_grid):
            if kind == "rotation":
                images = rotate(test_set.images, level)
            elif kind == "noise":
                images = add_noise(test_set.images, level, derive_seed(master, "corrupt", kind, index))
            else:
                images = random_erase(test_set.images, grid.erase_fraction, level, derive_seed(master, "corrupt", kind, index))
            frame = scorer.score(images, truth=test_set.labels)
            predicted = frame.loc[frame["method"] == methods[0], "predicted_class"].to_numpy()
            acc = accuracy(predicted, test_set.labels)
            entry = {"accuracy": acc}
            for method in methods:
                mean = float(_method_scores(frame, method).mean())
                entry[method] = mean
                rows.append({"kind": kind, "level": level, "method": method, "mean_score": mean, "accuracy": acc})
            nested.setdefault(kind, {})[str(level)] = entry

    table = pd.DataFrame(rows, columns=["kind", "level", "method", "mean_score", "accuracy"])
    files = {"table": write_table(out, "corruption.csv", table)}
    results = {"corruptions": nested, "test_size": len(test_set), "erase_fraction": grid.erase_fraction}
    return _finish(cfg, out, "eval-corrupt", results, files, timings)


def cmd_gen_patterns(cfg: ExperimentConfig) -> CommandResult:
    """Generate a pattern set: P1 bitmaps, PGM previews and pairwise statistics."""
    master, out, timings = cfg.master_seed, _out_dir(cfg), Timings()
    K = cfg.patterns.classes
    if K is None:
        if cfg.dataset is None:
            raise ConfigurationError("set patterns.classes (or a dataset) to know how many patterns to make")
        K = cfg.dataset.classes
    with timings.phase("generate"):
        patterns = _patterns(cfg, K, master)
    directory = out / "patterns"
    bitmaps = save_pattern_set(patterns, directory)
    previews = [write_pgm(directory / f"pattern_{k}.pgm", patterns[k].image()) for k in range(patterns.K)]
    stats = {
        "identifier": patterns.identifier,
        "kind": patterns.kind,
        "K": patterns.K,
        "side": patterns.side,
        **pairwise_stats(patterns).to_dict(),
    }
    atomic_write_json(out / "pattern_stats.json", stats)
    files = {
        "bitmaps": [f"patterns/{p.name}" for p in bitmaps],
        "previews": [f"patterns/{p.name}" for p in previews],
        "stats": "pattern_stats.json",
    }
    return _finish(cfg, out, "patterns", stats, files, timings)


COMMANDS = {
    "train": cmd_train,
    "eval-ood": cmd_eval_ood,
    "eval-flip": cmd_eval_flip,
    "eval-adv": cmd_eval_adv,
    "eval-detector": cmd_eval_detector,
    "dump-patterns": cmd_dump_patterns,
    "eval-corrupt": cmd_eval_corrupt,
    "patterns": cmd_gen_patterns,
}

"""Cached, deterministic evaluation pipeline: anonymize, select, attack, score.

Every stage is content-addressed: its descriptor (stage kind, input
fingerprints, canonical parameter text) hashes to the cache key, so identical
descriptors always reproduce identical artifacts and a fully cached run
executes zero stages.

Secret hygiene: the seed of a stochastic anonymization is a defender secret.
The evaluation set is anonymized with it, and only that stage's descriptor
records it. Attacker-side data is anonymized with the same public parameters
but a surrogate seed derived from the master seed, so no attacker-side
descriptor ever contains the secret.
"""

from __future__ import annotations

import csv
import io
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .anonymize import AnonymizationSpec, anonymize_dataset
from .cache import ArtifactCache
from .dataset import (
    DataPoint,
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    image_from_png_bytes,
    load_dataset,
    parse_png_name,
    png_bytes,
    split_disjoint_identities,
    split_enroll_test,
    subset_by_identities,
)
from .deanonymize import (
    DeanonymizationSpec,
    deanonymize_dataset,
    model_from_bytes,
    model_to_bytes,
    train_deanonymizer,
)
from .metrics import (
    UTILITY_MEASURES,
    TradeoffCurve,
    TradeoffPoint,
    curve_auc,
    privacy_score,
    utility_pairs,
    worst_case_auc,
)
from .recognize import (
    CLASSIFIERS,
    best_attack,
    classifier_id,
    embedder_from_bytes,
    embedder_to_bytes,
    enroll,
    evaluate_closed_set,
    fit_pca,
    gallery_from_bytes,
    gallery_to_bytes,
    report_from_csv,
    report_to_csv,
)
from .selection import SelectionSpec, select_identities
from .util import canonical_json, derive_seed, sha256_hex

VARIANTS = ("without_deanon", "with_deanon")
PRIVACY_METRICS = ("accuracy", "balanced_accuracy")
SELECTION_EMBEDDERS = ("anonymized_attacker", "clear_attacker")

# Comparing the clear selection against itself yields exactly 1.0 for every
# supported measure, so the clear-utility guide level is a constant.
CLEAR_UTILITY = 1.0


class PipelineError(RuntimeError):
    """A stage failed; carries the stage kind and cache key for diagnostics."""

    def __init__(self, stage: str, key: str, message: str):
        super().__init__(f"stage {stage} (key {key}): {message}")
        self.stage = stage
        self.key = key


@dataclass(frozen=True)
class StageDescriptor:
    kind: str
    inputs: tuple[str, ...]
    params: str  # canonical key-sorted JSON text

    @property
    def key(self) -> str:
        text = f"{self.kind}\n{','.join(self.inputs)}\n{self.params}"
        return sha256_hex(text.encode("utf-8"))


@dataclass(frozen=True)
class RunConfig:
    anonymization: AnonymizationSpec
    selection: SelectionSpec
    deanonymization: DeanonymizationSpec = DeanonymizationSpec("none")
    dataset_path: str | None = None
    synthetic: SyntheticSpec | None = None
    recognizers: tuple[tuple[str, int], ...] = (("nearest_centroid", 0), ("knn", 5))
    attacker_fraction: float = 0.5
    enroll_fraction: float = 0.5
    n_components: int = 40
    utility_measure: str = "ssim"
    master_seed: int = 0
    variant: str = "both"
    privacy_metric: str = "accuracy"
    selection_embedder: str = "anonymized_attacker"

    def __post_init__(self):
        if (self.dataset_path is None) == (self.synthetic is None):
            raise ValueError("config needs exactly one of a dataset path or a synthetic spec")
        for name, value in (
            ("attacker_fraction", self.attacker_fraction),
            ("enroll_fraction", self.enroll_fraction),
        ):
            if not isinstance(value, (int, float)) or not 0.0 < float(value) < 1.0:
                raise ValueError(f"{name} must lie strictly between 0 and 1")
        if not self.recognizers:
            raise ValueError("at least one recognizer is required")
        for classifier, k in self.recognizers:
            if classifier not in CLASSIFIERS:
                raise ValueError(f"unknown classifier {classifier!r}")
            if classifier == "knn" and (not isinstance(k, int) or k < 1):
                raise ValueError("knn needs an integer k >= 1")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.utility_measure not in UTILITY_MEASURES:
            raise ValueError(f"unknown utility measure {self.utility_measure!r}")
        if self.variant not in VARIANTS + ("both",):
            raise ValueError(f"variant must be one of {VARIANTS + ('both',)}")
        if self.privacy_metric not in PRIVACY_METRICS:
            raise ValueError(f"privacy_metric must be one of {PRIVACY_METRICS}")
        if self.selection_embedder not in SELECTION_EMBEDDERS:
            raise ValueError(f"selection_embedder must be one of {SELECTION_EMBEDDERS}")
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ValueError("master_seed must be a non-negative integer")

    def active_variants(self) -> tuple[str, ...]:
        return VARIANTS if self.variant == "both" else (self.variant,)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ValueError("config must be a JSON object")
        known = {
            "dataset",
            "anonymization",
            "selection",
            "deanonymization",
            "recognizers",
            "attacker_fraction",
            "enroll_fraction",
            "n_components",
            "utility_measure",
            "master_seed",
            "variant",
            "privacy_metric",
            "selection_embedder",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for required in ("dataset", "anonymization", "selection"):
            if required not in raw:
                raise ValueError(f"config is missing the {required!r} section")
        dataset = raw["dataset"]
        if not isinstance(dataset, dict) or set(dataset) not in ({"path"}, {"synthetic"}):
            raise ValueError("dataset must be {'path': ...} or {'synthetic': {...}}")
        dataset_path = dataset.get("path")
        synthetic = None
        if "synthetic" in dataset:
            try:
                synthetic = SyntheticSpec(**dataset["synthetic"])
            except TypeError as exc:
                raise ValueError(f"bad synthetic spec: {exc}") from exc

        def build(section, factory, **extra):
            if not isinstance(section, dict):
                raise ValueError("spec sections must be JSON objects")
            try:
                return factory(**{**section, **extra})
            except TypeError as exc:
                raise ValueError(f"bad spec: {exc}") from exc

        anonymization = build(raw["anonymization"], AnonymizationSpec)
        selection = build(raw["selection"], SelectionSpec)
        deanonymization = build(raw.get("deanonymization", {"method": "none"}), DeanonymizationSpec)
        recognizers = raw.get("recognizers", [["nearest_centroid", 0], ["knn", 5]])
        if not isinstance(recognizers, list) or any(
            not isinstance(r, (list, tuple)) or len(r) != 2 for r in recognizers
        ):
            raise ValueError("recognizers must be a list of [classifier, k] pairs")
        return cls(
            anonymization=anonymization,
            selection=selection,
            deanonymization=deanonymization,
            dataset_path=dataset_path,
            synthetic=synthetic,
            recognizers=tuple((c, int(k)) for c, k in recognizers),
            attacker_fraction=raw.get("attacker_fraction", 0.5),
            enroll_fraction=raw.get("enroll_fraction", 0.5),
            n_components=raw.get("n_components", 40),
            utility_measure=raw.get("utility_measure", "ssim"),
            master_seed=raw.get("master_seed", 0),
            variant=raw.get("variant", "both"),
            privacy_metric=raw.get("privacy_metric", "accuracy"),
            selection_embedder=raw.get("selection_embedder", "anonymized_attacker"),
        )

    def to_dict(self) -> dict:
        dataset = (
            {"path": self.dataset_path}
            if self.dataset_path is not None
            else {"synthetic": self.synthetic.to_dict()}
        )
        return {
            "dataset": dataset,
            "anonymization": self.anonymization.to_dict(include_seed=True)
            | {"seed": self.anonymization.seed},
            "selection": self.selection.to_dict(),
            "deanonymization": self.deanonymization.to_dict(),
            "recognizers": [list(r) for r in self.recognizers],
            "attacker_fraction": self.attacker_fraction,
            "enroll_fraction": self.enroll_fraction,
            "n_components": self.n_components,
            "utility_measure": self.utility_measure,
            "master_seed": self.master_seed,
            "variant": self.variant,
            "privacy_metric": self.privacy_metric,
            "selection_embedder": self.selection_embedder,
        }


@dataclass(eq=False)
class VariantOutcome:
    reports: tuple
    best: object
    utility: float
    raw_utility: float
    point: TradeoffPoint

    def to_dict(self) -> dict:
        return {
            "reports": [r.to_dict() for r in self.reports],
            "best": self.best.to_dict(),
            "utility": self.utility,
            "raw_utility": self.raw_utility,
            "tradeoff_point": self.point.to_dict(),
        }


@dataclass(eq=False)
class RunResult:
    config: dict
    label: str
    n_identities: int
    chance_level: float
    variants: dict[str, VariantOutcome]
    provenance: list[dict]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "label": self.label,
            "n_identities": self.n_identities,
            "chance_level": self.chance_level,
            "variants": {name: v.to_dict() for name, v in self.variants.items()},
            "provenance": self.provenance,
        }


@dataclass(eq=False)
class SweepResult:
    curves: dict[str, list[TradeoffCurve]]  # variant -> one curve per method
    worst_case: dict[str, float]  # method -> min AUC across variants
    results: list[RunResult]


# ---------------------------------------------------------------------------
# Dataset <-> artifact payload codecs


def _dataset_files(ds: Dataset) -> dict[str, bytes]:
    return {f"{p.identity}_{p.instance}.png": png_bytes(p.image) for p in ds.points}


def _dataset_from_files(files: dict[str, bytes]) -> Dataset:
    points = []
    for name, data in files.items():
        if not name.endswith(".png"):
            continue
        identity, instance = parse_png_name(name)
        points.append(DataPoint(identity, instance, image_from_png_bytes(data)))
    return Dataset(points)


def _utility_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["identity", "instance", "raw", "value"])
    for identity, instance, raw, mapped in rows:
        writer.writerow([identity, instance, repr(raw), repr(mapped)])
    raw_mean = float(np.mean([r for _, _, r, _ in rows]))
    value_mean = float(np.mean([m for _, _, _, m in rows]))
    writer.writerow(["__mean__", "", repr(raw_mean), repr(value_mean)])
    return buf.getvalue()


def _utility_from_csv(text: str) -> tuple[float, float]:
    for row in csv.reader(io.StringIO(text)):
        if row and row[0] == "__mean__":
            return float(row[3]), float(row[2])
    raise ValueError("utility CSV lacks a mean row")


# ---------------------------------------------------------------------------


class Pipeline:
    """Runs the evaluation against a content-addressed artifact cache."""

    def __init__(self, config: RunConfig, cache_root):
        self.config = config
        self.cache = ArtifactCache(cache_root)
        self.stages_executed = 0
        self._lock = threading.Lock()
        self._base: Dataset | None = None

    # -- plumbing -----------------------------------------------------------

    def _count_execution(self) -> None:
        with self._lock:
            self.stages_executed += 1

    def _base_dataset(self) -> Dataset:
        with self._lock:
            if self._base is None:
                try:
                    if self.config.dataset_path is not None:
                        self._base = load_dataset(self.config.dataset_path)
                    else:
                        self._base = generate_synthetic(self.config.synthetic)
                except ValueError as exc:
                    raise PipelineError("dataset", "-", str(exc)) from exc
            return self._base

    def _run_stage(self, prov, kind, label, inputs, params_obj, compute, encode, decode):
        params = canonical_json(params_obj)
        desc = StageDescriptor(kind, tuple(inputs), params)
        prov.append(
            {
                "stage": kind,
                "label": label,
                "key": desc.key,
                "inputs": list(inputs),
                "params": params,
            }
        )
        cached = self.cache.get(kind, desc.key)
        if cached is not None:
            return decode(cached), cached
        try:
            value = compute()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(kind, desc.key, str(exc)) from exc
        files = encode(value)
        self.cache.put(kind, desc.key, files, inputs, params)
        self._count_execution()
        return value, files

    def _dataset_stage(self, prov, kind, label, inputs, params_obj, compute, extra=None):
        def encode(ds):
            files = _dataset_files(ds)
            if extra is not None:
                files.update(extra(ds))
            return files

        value, _ = self._run_stage(
            prov, kind, label, inputs, params_obj, compute, encode, _dataset_from_files
        )
        return value

    def _blob_stage(self, prov, kind, label, inputs, params_obj, compute, to_bytes, from_bytes):
        value, files = self._run_stage(
            prov,
            kind,
            label,
            inputs,
            params_obj,
            compute,
            lambda v: {"blob.bin": to_bytes(v)},
            lambda f: from_bytes(f["blob.bin"]),
        )
        return value, sha256_hex(files["blob.bin"])

    def _split_stage(self, prov, label, inputs, params_base, compute_pair, part_names):
        descs = []
        for part in part_names:
            params = canonical_json({**params_base, "part": part})
            desc = StageDescriptor("split", tuple(inputs), params)
            descs.append(desc)
            prov.append(
                {
                    "stage": "split",
                    "label": f"{label}:{part}",
                    "key": desc.key,
                    "inputs": list(inputs),
                    "params": params,
                }
            )
        cached = [self.cache.get("split", d.key) for d in descs]
        if all(c is not None for c in cached):
            return tuple(_dataset_from_files(c) for c in cached)
        try:
            pair = compute_pair()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError("split", descs[0].key, str(exc)) from exc
        for desc, part_ds in zip(descs, pair):
            self.cache.put("split", desc.key, _dataset_files(part_ds), inputs, desc.params)
        self._count_execution()
        return pair

    # -- the run ------------------------------------------------------------

    def run(self, anonymization: AnonymizationSpec | None = None) -> RunResult:
        cfg = self.config
        spec = anonymization if anonymization is not None else cfg.anonymization
        prov: list[dict] = []
        active = cfg.active_variants()

        base = self._base_dataset()
        split_seed = derive_seed(cfg.master_seed, "split")
        attacker, evaluation = self._split_stage(
            prov,
            "split:identities",
            [base.fingerprint],
            {"what": "identities", "fraction": cfg.attacker_fraction, "seed": split_seed},
            lambda: split_disjoint_identities(base, cfg.attacker_fraction, split_seed),
            ("attacker", "evaluation"),
        )

        anon_eval = self._dataset_stage(
            prov,
            "anonymize",
            "anonymize:evaluation",
            [evaluation.fingerprint],
            {"spec": spec.to_dict(include_seed=True)},
            lambda: anonymize_dataset(spec, evaluation),
        )
        # The attacker knows method and parameters but not the secret seed, so
        # attacker data gets a surrogate seed derived from the master seed.
        attacker_spec = spec
        if spec.is_seeded:
            attacker_spec = replace(
                spec, seed=derive_seed(cfg.master_seed, "anonymize_attacker")
            )
        anon_att = self._dataset_stage(
            prov,
            "anonymize",
            "anonymize:attacker",
            [attacker.fingerprint],
            {"spec": attacker_spec.to_dict(include_seed=True)},
            lambda: anonymize_dataset(attacker_spec, attacker),
        )

        embedder_anon = emb_anon_hash = None
        if "without_deanon" in active or cfg.selection_embedder == "anonymized_attacker":
            embedder_anon, emb_anon_hash = self._blob_stage(
                prov,
                "embed_train",
                "embed_train:anonymized_attacker",
                [anon_att.fingerprint],
                {"n_components": cfg.n_components},
                lambda: fit_pca(anon_att, cfg.n_components),
                embedder_to_bytes,
                embedder_from_bytes,
            )
        if cfg.selection_embedder == "anonymized_attacker":
            sel_embedder, sel_emb_hash = embedder_anon, emb_anon_hash
        else:
            sel_embedder, sel_emb_hash = self._blob_stage(
                prov,
                "embed_train",
                "embed_train:clear_attacker",
                [attacker.fingerprint],
                {"n_components": cfg.n_components},
                lambda: fit_pca(attacker, cfg.n_components),
                embedder_to_bytes,
                embedder_from_bytes,
            )

        selected_anon = self._dataset_stage(
            prov,
            "select",
            "select",
            [anon_eval.fingerprint, sel_emb_hash],
            cfg.selection.to_dict(),
            lambda: select_identities(cfg.selection, sel_embedder, anon_eval),
            extra=lambda ds: {"identities.txt": ("\n".join(ds.identities) + "\n").encode()},
        )
        clear_selected = subset_by_identities(evaluation, selected_anon.identities)

        _, util_files = self._run_stage(
            prov,
            "utility",
            f"utility:{cfg.utility_measure}",
            [selected_anon.fingerprint, clear_selected.fingerprint],
            {"measure": cfg.utility_measure},
            lambda: utility_pairs(selected_anon, clear_selected, cfg.utility_measure),
            lambda rows: {"utility.csv": _utility_csv(rows).encode()},
            lambda files: files,
        )
        # Both the compute and the cache-hit path surface the same artifact, so
        # the scores are always read back from it and stay bit-identical.
        utility_value, raw_utility = _utility_from_csv(util_files["utility.csv"].decode())

        enroll_seed = derive_seed(cfg.master_seed, "enroll_split")
        split_params = {
            "what": "instances",
            "fraction": cfg.enroll_fraction,
            "seed": enroll_seed,
        }
        anon_enroll, anon_test = self._split_stage(
            prov,
            "split:instances:anonymized",
            [selected_anon.fingerprint],
            split_params,
            lambda: split_enroll_test(selected_anon, cfg.enroll_fraction, enroll_seed),
            ("enroll", "test"),
        )

        n_sel = cfg.selection.n_identities
        variants: dict[str, VariantOutcome] = {}

        if "without_deanon" in active:
            gallery, gal_hash = self._blob_stage(
                prov,
                "enroll",
                "enroll:without_deanon",
                [emb_anon_hash, anon_enroll.fingerprint],
                {},
                lambda: enroll(embedder_anon, anon_enroll),
                gallery_to_bytes,
                gallery_from_bytes,
            )
            reports = self._evaluate_all(
                prov, "without_deanon", embedder_anon, emb_anon_hash, gallery, gal_hash, anon_test
            )
            variants["without_deanon"] = self._variant_outcome(
                spec, "without_deanon", reports, utility_value, raw_utility, n_sel
            )

        if "with_deanon" in active:
            deanon_seed = derive_seed(cfg.master_seed, "deanonymize_train")
            public_spec = spec.public()
            model, model_hash = self._blob_stage(
                prov,
                "deanonymize_train",
                "deanonymize_train",
                [attacker.fingerprint, anon_att.fingerprint],
                {
                    "deanonymization": cfg.deanonymization.to_dict(),
                    "anonymization": public_spec.to_dict(include_seed=False),
                    "seed": deanon_seed,
                },
                lambda: train_deanonymizer(
                    cfg.deanonymization,
                    attacker,
                    anon_att,
                    anonymization=public_spec,
                    seed=deanon_seed,
                ),
                model_to_bytes,
                model_from_bytes,
            )
            deanon_selected = self._dataset_stage(
                prov,
                "deanonymize_apply",
                "deanonymize_apply",
                [model_hash, selected_anon.fingerprint],
                {},
                lambda: deanonymize_dataset(model, selected_anon),
            )
            clear_enroll, _clear_test = self._split_stage(
                prov,
                "split:instances:clear",
                [clear_selected.fingerprint],
                split_params,
                lambda: split_enroll_test(clear_selected, cfg.enroll_fraction, enroll_seed),
                ("enroll", "test"),
            )
            _deanon_enroll, deanon_test = self._split_stage(
                prov,
                "split:instances:deanonymized",
                [deanon_selected.fingerprint],
                split_params,
                lambda: split_enroll_test(deanon_selected, cfg.enroll_fraction, enroll_seed),
                ("enroll", "test"),
            )
            embedder_clear, emb_clear_hash = self._blob_stage(
                prov,
                "embed_train",
                "embed_train:clear_enroll",
                [clear_enroll.fingerprint],
                {"n_components": cfg.n_components},
                lambda: fit_pca(clear_enroll, cfg.n_components),
                embedder_to_bytes,
                embedder_from_bytes,
            )
            gallery_clear, gal_clear_hash = self._blob_stage(
                prov,
                "enroll",
                "enroll:with_deanon",
                [emb_clear_hash, clear_enroll.fingerprint],
                {},
                lambda: enroll(embedder_clear, clear_enroll),
                gallery_to_bytes,
                gallery_from_bytes,
            )
            reports = self._evaluate_all(
                prov,
                "with_deanon",
                embedder_clear,
                emb_clear_hash,
                gallery_clear,
                gal_clear_hash,
                deanon_test,
            )
            variants["with_deanon"] = self._variant_outcome(
                spec, "with_deanon", reports, utility_value, raw_utility, n_sel
            )

        config_echo = replace(self.config, anonymization=spec).to_dict()
        return RunResult(
            config=config_echo,
            label=spec.label(),
            n_identities=n_sel,
            chance_level=1.0 / n_sel,
            variants=variants,
            provenance=prov,
        )

    def _evaluate_all(self, prov, variant, embedder, emb_hash, gallery, gal_hash, test):
        reports = []
        for classifier, k in self.config.recognizers:
            cid = classifier_id(classifier, k)
            report, _ = self._run_stage(
                prov,
                "evaluate",
                f"evaluate:{variant}:{cid}",
                [emb_hash, gal_hash, test.fingerprint],
                {"classifier": classifier, "k": k},
                lambda c=classifier, kk=k: evaluate_closed_set(embedder, gallery, c, kk, test),
                lambda r: {"report.csv": report_to_csv(r).encode()},
                lambda files: report_from_csv(files["report.csv"].decode()),
            )
            reports.append(report)
        return reports

    def _variant_outcome(self, spec, variant, reports, utility_value, raw_utility, n_sel):
        best = best_attack(reports)
        metric_accuracy = (
            best.accuracy
            if self.config.privacy_metric == "accuracy"
            else best.balanced_accuracy
        )
        point = TradeoffPoint(
            label=spec.label(),
            privacy=privacy_score(metric_accuracy, n_sel),
            utility=utility_value,
            raw_accuracy=best.accuracy,
            balanced_accuracy=best.balanced_accuracy,
            raw_utility=raw_utility,
            variant=variant,
        )
        return VariantOutcome(
            reports=tuple(reports),
            best=best,
            utility=utility_value,
            raw_utility=raw_utility,
            point=point,
        )

    # -- sweeps ---------------------------------------------------------------

    def sweep(self, grid, jobs: int = 1) -> SweepResult:
        """Run every anonymization spec in the grid and assemble trade-off curves."""
        grid = list(grid)
        if not grid:
            raise ValueError("empty sweep grid")
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(lambda s: self.run(anonymization=s), grid))
        else:
            results = [self.run(anonymization=s) for s in grid]

        n_sel = self.config.selection.n_identities
        curves: dict[str, list[TradeoffCurve]] = {}
        for variant in self.config.active_variants():
            by_method: dict[str, list[TradeoffPoint]] = {}
            for spec, result in zip(grid, results):
                by_method.setdefault(spec.method, []).append(result.variants[variant].point)
            curves[variant] = [
                TradeoffCurve(
                    method=method,
                    points=tuple(sorted(points, key=lambda p: (p.privacy, p.label))),
                    auc=curve_auc(points),
                    chance_level=1.0 / n_sel,
                    clear_utility=CLEAR_UTILITY,
                )
                for method, points in sorted(by_method.items())
            ]
        worst: dict[str, float] = {}
        if len(curves) == 2:
            without = {c.method: c.auc for c in curves["without_deanon"]}
            with_ = {c.method: c.auc for c in curves["with_deanon"]}
            worst = {m: worst_case_auc(without[m], with_[m]) for m in without}
        return SweepResult(curves=curves, worst_case=worst, results=results)

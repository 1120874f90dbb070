"""Study runners: Rayleigh signal-length sweep, SRCNN depth sweep and learned-observer capacity.

Each runner returns a ``StudyResult``; when a ``RunContext`` is given every
artifact is written into the run directory, and rows gathered before an
unexpected failure are flushed to ``report.csv`` before the error propagates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
import pandas as pd

from . import reporting
from .checkpoint import save_checkpoint
from .dataset import ImageSet, save_dataset
from .degrade import clamped_pixel_count, reset_clamped_pixel_count
from .ensemble import (
    BackgroundBank,
    ObjectFactory,
    TaskSpec,
    image_digest,
    make_noise_refresher,
    measure,
    pre_noise,
)
from .gabor import channelize, gabor_channels
from .learned import LearnedObserverSpec, score_learned, train_learned_observer
from .metrics import IqReport, RocResult, auc_compare, delong_ci, dynamic_range, iq_report, paired_difference_ci, roc_points, z_value
from .modeling import build_model
from .nn_engine import Network, NonFiniteGradientError, TrainingDivergedError
from .objects import center_crop
from .observers import (
    CovarianceEstimate,
    IllConditionedCovarianceError,
    LinearTemplate,
    SingularCovarianceError,
    StatsAccumulator,
    cho_template,
    lambda_grid,
    save_template,
    score_linear,
    select_rho_lambda,
)
from .pipeline import RunContext, save_frame, save_json, save_parquet, save_text
from .seeding import derive_seed
from .sr_models import SrcnnSpec, srcnn_parameter_count, super_resolve, train_sr
from .study_config import StudySpec, emit_config

logger = logging.getLogger("tbiq")

RESOLUTIONS = ("HR", "LR", "SR")
OBSERVER_FAILURES = (
    SingularCovarianceError,
    IllConditionedCovarianceError,
    TrainingDivergedError,
    NonFiniteGradientError,
)


@dataclass
class StudyResult:
    report: pd.DataFrame
    models: pd.DataFrame
    spectra: pd.DataFrame
    rho_sweep: pd.DataFrame
    scores: pd.DataFrame
    roc_points: pd.DataFrame
    comparisons: pd.DataFrame
    histories: dict[str, pd.DataFrame] = field(default_factory=dict)
    templates: dict[str, LinearTemplate] = field(default_factory=dict)
    networks: dict[str, Network] = field(default_factory=dict, repr=False)
    datasets: dict[str, ImageSet] = field(default_factory=dict, repr=False)
    failures: list[dict] = field(default_factory=list)
    data_ranges: dict[str, float] = field(default_factory=dict)


@dataclass
class _Outcome:
    observer: str
    resolution: str
    roc: Optional[RocResult] = None
    scores: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None
    error: Optional[str] = None
    rho_sweep: Optional[pd.DataFrame] = None
    template: Optional[LinearTemplate] = None
    history: Optional[pd.DataFrame] = None
    net: Optional[Network] = None

    @property
    def ok(self) -> bool:
        return self.error is None


# -----------------------------------------------------------------------------
# Result collection
# -----------------------------------------------------------------------------
class _Recorder:
    def __init__(self, study: StudySpec) -> None:
        self.study = study
        self.rows: list[dict] = []
        self.models: list[dict] = []
        self.spectra: list[pd.DataFrame] = []
        self.rho_sweep: list[pd.DataFrame] = []
        self.scores: list[pd.DataFrame] = []
        self.roc: list[pd.DataFrame] = []
        self.comparisons: list[dict] = []
        self.histories: dict[str, pd.DataFrame] = {}
        self.templates: dict[str, LinearTemplate] = {}
        self.networks: dict[str, Network] = {}
        self.datasets: dict[str, ImageSet] = {}
        self.failures: list[dict] = []
        self.data_ranges: dict[str, float] = {}
        self._results: dict[tuple[int, str, str], RocResult] = {}

    def _cell(self, value: int, resolution: str, observer: str) -> dict:
        return {
            "study": self.study.name,
            "sweep_value": int(value),
            "resolution": resolution,
            "observer": observer,
        }

    def record(self, value: int, outcome: _Outcome, iq: dict[str, IqReport]) -> None:
        report = iq.get(outcome.resolution) if outcome.resolution != "HR" else None
        row = self._cell(value, outcome.resolution, outcome.observer)
        row.update(
            auc=outcome.roc.auc if outcome.ok else math.nan,
            ci_lo=outcome.roc.ci_lo if outcome.ok else math.nan,
            ci_hi=outcome.roc.ci_hi if outcome.ok else math.nan,
            mse=report.ensemble_mse if report else math.nan,
            psnr=report.psnr if report else math.nan,
            ssim=report.ssim if report else math.nan,
            seed=self.study.seed,
            status="ok" if outcome.ok else "failed",
        )
        self.rows.append(row)
        key = f"{outcome.resolution}_{value}_{outcome.observer}"
        if not outcome.ok:
            logger.warning("%s value=%s %s %s failed: %s", self.study.name, value, outcome.resolution, outcome.observer, outcome.error)
            self.failures.append({**self._cell(value, outcome.resolution, outcome.observer), "error": outcome.error})
            return
        self._results[(int(value), outcome.resolution, outcome.observer)] = outcome.roc
        cell = self._cell(value, outcome.resolution, outcome.observer)
        self.scores.append(
            pd.DataFrame(
                {
                    **cell,
                    "image_id": outcome.ids,
                    "label": outcome.labels.astype(np.int8),
                    "score": outcome.scores,
                }
            )
        )
        points = roc_points(outcome.roc)
        self.roc.append(pd.concat([pd.DataFrame([cell] * len(points)), points], axis=1))
        if outcome.rho_sweep is not None:
            sweep = outcome.rho_sweep.copy()
            for name, val in reversed(list(cell.items())):
                sweep.insert(0, name, val)
            self.rho_sweep.append(sweep)
        if outcome.template is not None and outcome.observer == "RHO":
            self.templates[key] = outcome.template
        if outcome.history is not None:
            self.histories[f"observer_{key}"] = outcome.history
        if outcome.net is not None:
            self.networks[f"observer_{key}"] = outcome.net

    def compare(self, value: int, iq: dict[str, IqReport]) -> None:
        """SR against LR: paired DeLong test per observer, paired CIs for MSE and SSIM."""
        level = self.study.ci_level
        z = z_value(level)
        observers = sorted({obs for (v, res, obs) in self._results if v == int(value)})
        for observer in observers:
            sr = self._results.get((int(value), "SR", observer))
            lr = self._results.get((int(value), "LR", observer))
            if sr is None or lr is None:
                continue
            cmp = auc_compare(sr, lr, alpha=1.0 - level)
            half = z * math.sqrt(cmp.variance)
            self.comparisons.append(
                {
                    "study": self.study.name,
                    "sweep_value": int(value),
                    "quantity": f"auc:{observer}",
                    "a": "SR",
                    "b": "LR",
                    "value_a": cmp.auc_a,
                    "value_b": cmp.auc_b,
                    "difference": cmp.difference,
                    "ci_lo": cmp.difference - half,
                    "ci_hi": cmp.difference + half,
                    "p_value": cmp.p_value,
                    "significant": cmp.significant,
                }
            )
        if "SR" in iq and "LR" in iq:
            sr_rep, lr_rep = iq["SR"], iq["LR"]
            for metric, value_a, value_b in (
                ("mse", sr_rep.ensemble_mse, lr_rep.ensemble_mse),
                ("ssim", sr_rep.ssim, lr_rep.ssim),
            ):
                mean, lo, hi = paired_difference_ci(sr_rep.per_image[metric], lr_rep.per_image[metric], level)
                self.comparisons.append(
                    {
                        "study": self.study.name,
                        "sweep_value": int(value),
                        "quantity": metric,
                        "a": "SR",
                        "b": "LR",
                        "value_a": value_a,
                        "value_b": value_b,
                        "difference": mean,
                        "ci_lo": lo,
                        "ci_hi": hi,
                        "p_value": math.nan,
                        "significant": bool(lo > 0 or hi < 0),
                    }
                )

    def add_model(self, value: int, spec: SrcnnSpec, best_epoch: int, best_loss: float) -> None:
        self.models.append(
            {
                "study": self.study.name,
                "sweep_value": int(value),
                "n_layers": int(spec.n_layers),
                "parameters": srcnn_parameter_count(spec),
                "best_epoch": int(best_epoch),
                "val_mse": float(best_loss),
            }
        )

    def add_spectrum(self, value: int, resolution: str, stats: CovarianceEstimate) -> None:
        s = stats.singular_values
        if s.size == 0 or s[0] <= 0:
            return
        tol = s[0] * s.size * np.finfo(np.float64).eps
        kept = s[s > tol]
        self.spectra.append(
            pd.DataFrame(
                {
                    "study": self.study.name,
                    "sweep_value": int(value),
                    "resolution": resolution,
                    "index": np.arange(kept.size),
                    "singular_value": kept,
                    "normalized": kept / s[0],
                }
            )
        )

    def report(self) -> pd.DataFrame:
        if not self.rows:
            return reporting.empty_report()
        return pd.DataFrame.from_records(self.rows, columns=reporting.REPORT_COLUMNS)

    def result(self) -> StudyResult:
        def _concat(parts: list[pd.DataFrame]) -> pd.DataFrame:
            return pd.concat(parts, ignore_index=True) if parts else pd.DataFrame()

        return StudyResult(
            report=self.report(),
            models=pd.DataFrame.from_records(self.models),
            spectra=_concat(self.spectra),
            rho_sweep=_concat(self.rho_sweep),
            scores=_concat(self.scores),
            roc_points=_concat(self.roc),
            comparisons=pd.DataFrame.from_records(self.comparisons),
            histories=dict(self.histories),
            templates=dict(self.templates),
            networks=dict(self.networks),
            datasets=dict(self.datasets),
            failures=list(self.failures),
            data_ranges=dict(self.data_ranges),
        )


# -----------------------------------------------------------------------------
# Measured data and observer evaluation
# -----------------------------------------------------------------------------
class _Evaluator:
    """Generates measured image sets for one task and evaluates the observer roster on them.

    HR and LR sets, statistics and outcomes are memoized; SR ones are rebuilt
    whenever ``sr_net`` changes.
    """

    def __init__(self, task: TaskSpec, study: StudySpec, factory: ObjectFactory, test_set_id: str) -> None:
        self.task = task
        self.study = study
        self.factory = factory
        self.test_set_id = test_set_id
        self.sr_net: Optional[Network] = None
        self.channels = gabor_channels(task.crop_size) if "cho" in study.observers else None
        self._sets: dict[tuple[str, str, bool], ImageSet] = {}
        self._clean: dict[tuple[str, str], np.ndarray] = {}
        self._outcomes: dict[str, list[_Outcome]] = {}
        self._iq: dict[str, IqReport] = {}
        self.image_stats: dict[str, CovarianceEstimate] = {}
        self.data_range: Optional[float] = None

    @property
    def seed(self) -> int:
        return self.study.seed

    def set_sr_net(self, net: Network) -> None:
        self.sr_net = net
        for key in [k for k in self._sets if k[1] == "SR"]:
            del self._sets[key]
        self._outcomes.pop("SR", None)
        self._iq.pop("SR", None)
        self.image_stats.pop("SR", None)

    def _crop(self, images: ImageSet) -> ImageSet:
        cropped = center_crop(images.images, self.task.crop_size)
        return images.with_images(np.ascontiguousarray(cropped, dtype=np.float32))

    def chunks(
        self,
        split: str,
        n_per_class: int,
        resolutions: Sequence[str],
        *,
        realizations: Sequence[int] = (0,),
        crop: bool = True,
        keep_clean: bool = False,
    ) -> Iterator[tuple[int, dict[str, ImageSet], dict[str, np.ndarray]]]:
        """Objects generated once per chunk, measured at every requested resolution and realization."""
        if "SR" in resolutions and self.sr_net is None:
            raise RuntimeError("SR images requested before an SRCNN was trained.")
        step = int(self.study.sizes.chunk_size)
        for start in range(0, int(n_per_class), step):
            count = min(step, int(n_per_class) - start)
            objects = self.factory.objects(split, count, start=start, n_jobs=self.study.n_jobs)
            clean: dict[str, np.ndarray] = {}
            if keep_clean:
                for res in resolutions:
                    if res != "SR":
                        clean[res] = pre_noise(objects.images, self.task, res).astype(np.float32)
            for realization in realizations:
                measured: dict[str, ImageSet] = {}
                lr: Optional[ImageSet] = None
                for res in resolutions:
                    if res == "HR":
                        images = measure(objects, self.task, "HR", self.seed, split, realization=realization)
                    else:
                        if lr is None:
                            lr = measure(objects, self.task, "LR", self.seed, split, realization=realization)
                        images = lr if res == "LR" else lr.with_images(super_resolve(self.sr_net, lr.images))
                    measured[res] = self._crop(images) if crop else images
                yield realization, measured, clean

    def collect(
        self,
        split: str,
        n_per_class: int,
        resolutions: Sequence[str],
        *,
        crop: bool = True,
        keep_clean: bool = False,
    ) -> dict[str, ImageSet]:
        todo = [
            res
            for res in resolutions
            if (split, res, crop) not in self._sets or (keep_clean and res != "SR" and (split, res) not in self._clean)
        ]
        if todo:
            parts: dict[str, list[ImageSet]] = {res: [] for res in todo}
            clean_parts: dict[str, list[np.ndarray]] = {res: [] for res in todo if res != "SR"}
            for _, measured, clean in self.chunks(split, n_per_class, todo, crop=crop, keep_clean=keep_clean):
                for res, images in measured.items():
                    parts[res].append(images)
                for res, arr in clean.items():
                    clean_parts[res].append(arr)
            for res in todo:
                self._sets[(split, res, crop)] = ImageSet.concat(parts[res])
                if keep_clean and res != "SR":
                    self._clean[(split, res)] = np.concatenate(clean_parts[res])
        return {res: self._sets[(split, res, crop)] for res in resolutions}

    def clean(self, split: str, resolution: str) -> Optional[np.ndarray]:
        return self._clean.get((split, resolution))

    def accumulate_stats(
        self,
        resolutions: Sequence[str],
        *,
        image_space: bool,
    ) -> tuple[dict[str, CovarianceEstimate], dict[str, CovarianceEstimate]]:
        """One pass over the estimation split; channel statistics use every noise realization."""
        realizations = range(int(self.study.cho.noise_realizations)) if self.channels is not None else range(1)
        image_acc = {res: StatsAccumulator() for res in resolutions} if image_space else {}
        chan_acc = {res: StatsAccumulator() for res in resolutions} if self.channels is not None else {}
        for realization, measured, _ in self.chunks(
            "stats",
            self.study.sizes.stats_per_class,
            resolutions,
            realizations=tuple(realizations),
        ):
            for res, images in measured.items():
                if realization == 0 and image_space:
                    image_acc[res].update_labeled(images.images, images.labels)
                if self.channels is not None:
                    chan_acc[res].update_labeled(channelize(self.channels, images.images), images.labels)
        image_stats = {res: acc.finalize() for res, acc in image_acc.items()}
        self.image_stats.update(image_stats)
        return image_stats, {res: acc.finalize() for res, acc in chan_acc.items()}

    def scored(self, observer: str, resolution: str, scores: np.ndarray, test: ImageSet, **extra) -> _Outcome:
        values = np.asarray(scores, dtype=np.float64).reshape(-1)
        roc = delong_ci(
            values[test.labels == 0],
            values[test.labels == 1],
            self.study.ci_level,
            test_set_id=self.test_set_id,
        )
        return _Outcome(observer, resolution, roc=roc, scores=values, labels=test.labels, ids=test.ids, **extra)

    def linear_outcomes(
        self,
        resolution: str,
        image_stats: Optional[CovarianceEstimate],
        channel_stats: Optional[CovarianceEstimate],
        val: Optional[ImageSet],
        test: ImageSet,
    ) -> list[_Outcome]:
        outcomes = []
        if "rho" in self.study.observers:
            grid_cfg = self.study.rho
            try:
                selection = select_rho_lambda(
                    image_stats,
                    val.class_images(0),
                    val.class_images(1),
                    lambda_grid(grid_cfg.lambda_min, grid_cfg.lambda_max, grid_cfg.per_decade),
                )
                template = replace(selection.template, patch_shape=tuple(self.task.crop_size))
                outcomes.append(
                    self.scored(
                        "RHO",
                        resolution,
                        score_linear(template, test.images),
                        test,
                        rho_sweep=selection.sweep,
                        template=template,
                    )
                )
            except OBSERVER_FAILURES as exc:
                outcomes.append(_Outcome("RHO", resolution, error=str(exc)))
        if "cho" in self.study.observers:
            try:
                template = cho_template(channel_stats, self.study.cho.regularize_lambda)
                scores = score_linear(template, channelize(self.channels, test.images))
                outcomes.append(self.scored("CHO", resolution, scores, test, template=template))
            except OBSERVER_FAILURES as exc:
                outcomes.append(_Outcome("CHO", resolution, error=str(exc)))
        return outcomes

    def _refresher(self, resolution: str) -> Callable[[np.ndarray, np.random.Generator], np.ndarray]:
        base = make_noise_refresher(self.task, resolution)
        crop = self.task.crop_size

        def _refresh(clean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
            return np.ascontiguousarray(center_crop(base(clean, rng), crop), dtype=np.float32)

        return _refresh

    def learned_outcome(
        self,
        resolution: str,
        blocks: int,
        train_set: ImageSet,
        val_set: ImageSet,
        test: ImageSet,
        *,
        value: int,
        clean: Optional[np.ndarray] = None,
        rho: Optional[LinearTemplate] = None,
    ) -> _Outcome:
        name = f"ResNet-{blocks}"
        roster = self.study.resnet
        side = int(self.task.crop_size[0])
        spec = LearnedObserverSpec(
            n_residual_blocks=int(blocks),
            filters=roster.filters,
            init=roster.init,
            template_kernel=side if roster.init == "rho_template" else 0,
        )
        if spec.init == "rho_template" and rho is None:
            return _Outcome(name, resolution, error="no RHO template available to initialize the observer")
        on_the_fly = self.study.observer_training.on_the_fly_noise and resolution != "SR" and clean is not None
        config = replace(
            self.study.observer_training,
            seed=derive_seed(self.seed, "resnet_shuffle", value, resolution, blocks),
            on_the_fly_noise=on_the_fly,
        )
        net = build_model(
            "resnet_observer",
            spec,
            derive_seed(self.seed, "resnet_init", value, resolution, blocks),
            rho_template=rho,
        )
        try:
            result = train_learned_observer(
                net,
                train_set.images,
                train_set.labels,
                config,
                val_images=val_set.images,
                val_labels=val_set.labels,
                clean_images=clean if on_the_fly else None,
                refresh=self._refresher(resolution) if on_the_fly else None,
                augment=self.study.augment_flips,
                label=f"{name}[{resolution}, {value}]",
            )
        except OBSERVER_FAILURES as exc:
            return _Outcome(name, resolution, error=str(exc))
        scores = score_learned(result.net, test.images)
        return self.scored(name, resolution, scores, test, history=result.history, net=result.net)

    def iq_reports(self, test: dict[str, ImageSet]) -> dict[str, IqReport]:
        if self.data_range is None:
            self.data_range = dynamic_range(test["HR"].images)
        for res in ("LR", "SR"):
            if res in test and res not in self._iq:
                self._iq[res] = iq_report(test["HR"].images, test[res].images, self.data_range)
        return {res: rep for res, rep in self._iq.items() if res in test}

    def evaluate(self, resolutions: Sequence[str], value: int) -> tuple[list[_Outcome], dict[str, IqReport]]:
        """Outcomes for every (resolution, observer) cell; memoized resolutions are reused."""
        roster = self.study.observers
        sizes = self.study.sizes
        todo = [res for res in resolutions if res not in self._outcomes]
        test = self.collect("test", sizes.test_per_class, ("HR",) + tuple(r for r in resolutions if r != "HR"))
        iq = self.iq_reports(test)
        if todo:
            splits = {"test": test}
            if "rho" in roster:
                splits["val"] = self.collect("val", sizes.val_per_class, todo)
            if "resnet" in roster:
                fly = self.study.observer_training.on_the_fly_noise
                splits["obs_train"] = self.collect(
                    "obs_train", sizes.observer_train_per_class, todo, keep_clean=fly
                )
                splits["obs_val"] = self.collect("obs_val", sizes.observer_val_per_class, todo)
            _assert_disjoint({name: sets[todo[0]] for name, sets in splits.items()})
            image_stats: dict[str, CovarianceEstimate] = {}
            channel_stats: dict[str, CovarianceEstimate] = {}
            if "rho" in roster or "cho" in roster:
                image_stats, channel_stats = self.accumulate_stats(todo, image_space="rho" in roster)
            for res in todo:
                outcomes = self.linear_outcomes(
                    res,
                    image_stats.get(res),
                    channel_stats.get(res),
                    splits.get("val", {}).get(res),
                    test[res],
                )
                if "resnet" in roster:
                    rho = next((o.template for o in outcomes if o.observer == "RHO" and o.ok), None)
                    for blocks in self.study.resnet.blocks:
                        outcomes.append(
                            self.learned_outcome(
                                res,
                                blocks,
                                splits["obs_train"][res],
                                splits["obs_val"][res],
                                test[res],
                                value=value,
                                clean=self.clean("obs_train", res),
                                rho=rho,
                            )
                        )
                self._outcomes[res] = outcomes
        return [o for res in resolutions for o in self._outcomes[res]], iq


def measured_set(
    task: TaskSpec,
    study: StudySpec,
    split: str,
    n_per_class: int,
    resolution: str,
    *,
    sr_net: Optional[Network] = None,
    crop: bool = True,
) -> ImageSet:
    """One measured split at HR, LR or SR, drawn from the same seed streams a study uses."""
    if resolution not in RESOLUTIONS:
        raise ValueError(f"Unsupported resolution: {resolution}. Supported values: {', '.join(RESOLUTIONS)}.")
    ev = _Evaluator(task, study, ObjectFactory(task, study.seed), test_set_id=split)
    if sr_net is not None:
        ev.set_sr_net(sr_net)
    return ev.collect(split, n_per_class, (resolution,), crop=crop)[resolution]


def _assert_disjoint(sets: dict[str, ImageSet]) -> None:
    seen: dict[bytes, str] = {}
    for name, images in sets.items():
        for digest in image_digest(images.images):
            other = seen.setdefault(digest, name)
            if other != name:
                raise RuntimeError(f"Splits {other!r} and {name!r} share an image.")


def _train_srcnn(rec: _Recorder, ev: _Evaluator, spec: SrcnnSpec, value: int) -> Network:
    study = ev.study
    fly = study.sr_training.on_the_fly_noise
    train_set = ev.collect("sr_train", study.sizes.sr_train_per_class, ("HR", "LR"), crop=False, keep_clean=fly)
    val_set = ev.collect("sr_val", study.sizes.sr_val_per_class, ("HR", "LR"), crop=False)
    net = build_model("srcnn", spec, derive_seed(study.seed, "srcnn_init", value))
    config = replace(study.sr_training, seed=derive_seed(study.seed, "srcnn_shuffle", value))
    logger.info("Training SRCNN (%d layers) for value %s on %d pairs", spec.n_layers, value, len(train_set["LR"]))
    result = train_sr(
        net,
        train_set["LR"].images,
        train_set["HR"].images,
        config,
        lr_val=val_set["LR"].images,
        hr_val=val_set["HR"].images,
        clean_lr_train=ev.clean("sr_train", "LR") if fly else None,
        refresh=make_noise_refresher(ev.task, "LR") if fly else None,
        label=f"srcnn[{value}]",
    )
    rec.histories[f"sr_{value}"] = result.history
    rec.networks[f"srcnn_{value}"] = result.net
    rec.add_model(value, spec, result.best_epoch, result.best_loss)
    ev.set_sr_net(result.net)
    return result.net


def _record_value(rec: _Recorder, ev: _Evaluator, value: int, outcomes: list[_Outcome], iq: dict[str, IqReport]) -> None:
    for outcome in outcomes:
        rec.record(value, outcome, iq)
    rec.compare(value, iq)
    if ev.data_range is not None:
        rec.data_ranges[str(value)] = ev.data_range
    if ev.study.output.save_datasets:
        for res in RESOLUTIONS:
            key = ("test", res, True)
            if key in ev._sets:
                rec.datasets[f"test_{value}_{res}"] = ev._sets[key]


# -----------------------------------------------------------------------------
# Study bodies
# -----------------------------------------------------------------------------
def _background_bank(study: StudySpec, task: TaskSpec) -> BackgroundBank:
    return BackgroundBank(task.clb, study.seed, max_bytes=int(study.background_cache_mb) * 1024 * 1024)


def _signal_length_body(rec: _Recorder, study: StudySpec, task: TaskSpec) -> None:
    bank = _background_bank(study, task)
    for length in study.sweep:
        value_task = task.with_signal_length(length)
        logger.info("Signal length L=%d (%d cached backgrounds, %d reused)", length, len(bank), bank.hits)
        factory = ObjectFactory(value_task, study.seed, backgrounds=bank)
        ev = _Evaluator(value_task, study, factory, test_set_id=f"test:L={length}")
        _train_srcnn(rec, ev, study.srcnn, length)
        outcomes, iq = ev.evaluate(RESOLUTIONS, length)
        _record_value(rec, ev, length, outcomes, iq)


def _depth_body(rec: _Recorder, study: StudySpec, task: TaskSpec) -> None:
    factory = ObjectFactory(task, study.seed, backgrounds=_background_bank(study, task))
    ev = _Evaluator(task, study, factory, test_set_id="test")
    for depth in study.sweep:
        logger.info("SRCNN depth %d", depth)
        _train_srcnn(rec, ev, replace(study.srcnn, n_layers=int(depth)), depth)
        outcomes, iq = ev.evaluate(RESOLUTIONS, depth)
        _record_value(rec, ev, depth, outcomes, iq)
        if "SR" not in ev.image_stats:
            ev.accumulate_stats(("SR",), image_space=True)
        rec.add_spectrum(depth, "SR", ev.image_stats["SR"])


def _capacity_body(rec: _Recorder, study: StudySpec, task: TaskSpec) -> None:
    factory = ObjectFactory(task, study.seed, backgrounds=_background_bank(study, task))
    ev = _Evaluator(task, study, factory, test_set_id="test")
    sizes = study.sizes
    _train_srcnn(rec, ev, study.srcnn, 0)
    test = ev.collect("test", sizes.test_per_class, RESOLUTIONS)
    iq = ev.iq_reports(test)
    fly = study.observer_training.on_the_fly_noise
    largest = max(int(v) for v in study.sweep)
    train_all = ev.collect("obs_train", largest // 2, RESOLUTIONS, keep_clean=fly)
    val = ev.collect("obs_val", sizes.observer_val_per_class, RESOLUTIONS)
    _assert_disjoint({"test": test["HR"], "obs_train": train_all["HR"], "obs_val": val["HR"]})
    for size in study.sweep:
        logger.info("Capacity cell: %d training images", size)
        # classes are interleaved, so the first ``size`` images hold size/2 per class
        index = np.arange(int(size))
        for res in RESOLUTIONS:
            clean = ev.clean("obs_train", res)
            for blocks in study.resnet.blocks:
                outcome = ev.learned_outcome(
                    res,
                    blocks,
                    train_all[res].subset(index),
                    val[res],
                    test[res],
                    value=int(size),
                    clean=None if clean is None else clean[index],
                )
                rec.record(size, outcome, iq)
        rec.compare(size, iq)
        rec.data_ranges[str(size)] = ev.data_range


_BODIES = {
    "signal_length_sweep": _signal_length_body,
    "depth_sweep": _depth_body,
    "observer_capacity": _capacity_body,
}


def _run(
    study: StudySpec,
    task: TaskSpec,
    run: Optional[RunContext],
    body: Callable[[_Recorder, StudySpec, TaskSpec], None],
) -> StudyResult:
    rec = _Recorder(study)
    reset_clamped_pixel_count()
    logger.info("Starting %s study '%s' over %s", study.kind, study.name, list(study.sweep))
    try:
        body(rec, study, task)
    except Exception:
        if run is not None:
            path = reporting.write_csv(rec.report(), run.path("report.csv"))
            logger.error("Study aborted; %d report rows flushed to %s", len(rec.rows), path)
        raise
    result = rec.result()
    failed = int((result.report["status"] == "failed").sum()) if not result.report.empty else 0
    logger.info("Finished study '%s': %d rows, %d failed", study.name, len(result.report), failed)
    if run is not None:
        write_study_outputs(result, run, study, task)
    return result


def run_signal_length_study(study: StudySpec, task: TaskSpec, *, run: Optional[RunContext] = None) -> StudyResult:
    return _run(study, task, run, _signal_length_body)


def run_depth_study(study: StudySpec, task: TaskSpec, *, run: Optional[RunContext] = None) -> StudyResult:
    return _run(study, task, run, _depth_body)


def run_capacity_study(study: StudySpec, task: TaskSpec, *, run: Optional[RunContext] = None) -> StudyResult:
    return _run(study, task, run, _capacity_body)


def run_study(study: StudySpec, task: TaskSpec, *, run: Optional[RunContext] = None) -> StudyResult:
    body = _BODIES.get(study.kind)
    if body is None:
        raise ValueError(f"Unsupported study.kind: {study.kind}. Supported values: {', '.join(_BODIES)}.")
    return _run(study, task, run, body)


def write_study_outputs(result: StudyResult, run: RunContext, study: StudySpec, task: TaskSpec) -> None:
    reporting.write_csv(result.report, run.path("report.csv"))
    if study.output.plot and not result.report.empty:
        reporting.emit_plot(
            result.report,
            run.path("report.svg"),
            title=study.name,
            x_label=reporting.SWEEP_AXIS_LABELS.get(study.kind, "sweep value"),
        )
    save_text(emit_config(study, task), run.path("config.used.yml"))
    save_frame(result.models, run.path("models.csv"))
    save_frame(result.spectra, run.path("spectra.csv"))
    save_frame(result.rho_sweep, run.path("rho_sweep.csv"))
    save_frame(result.roc_points, run.path("roc_points.csv"))
    save_frame(result.comparisons, run.path("comparisons.csv"))
    save_parquet(result.scores, run.path("scores.parquet"))
    for name, history in result.histories.items():
        save_frame(history, run.path(f"history_{name}.csv"))
    for name, template in result.templates.items():
        save_template(run.path("templates") / f"{name}.tmpl", template)
    if result.networks:
        run.path("models").mkdir(parents=True, exist_ok=True)
    for name, net in result.networks.items():
        save_checkpoint(run.path("models") / f"{name}.olnn", net, metadata={"study": study.name, "name": name})
    if result.datasets:
        run.path("datasets").mkdir(parents=True, exist_ok=True)
    for name, images in result.datasets.items():
        save_dataset(run.path("datasets") / f"{name}.tbiq", images.images, images.labels)
    save_json(
        {
            "study": study.kind,
            "name": study.name,
            "seed": study.seed,
            "run_name": run.run_name,
            "timestamp": run.timestamp,
            "config_hash": run.config_hash,
            "rows": int(len(result.report)),
            "failed": result.failures,
            "data_range": result.data_ranges,
            "ci_level": study.ci_level,
            "clamped_pixels": clamped_pixel_count(),
        },
        run.path("summary.json"),
    )

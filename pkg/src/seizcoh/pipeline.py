"""Config-driven, content-hash cached pipeline from recording to report.

Each stage writes into ``<out>/<stage>/`` together with a ``.key`` file
holding the hash of everything the stage depends on.  A stage whose key
matches is reused as is.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import evaluation as ev
from .ensemble import Ensemble, member_seed
from .features import (
    BiFeatureKind,
    FeatureParams,
    MatrixVariant,
    UniFeatureKind,
    combo_labels,
    combo_matrix,
    compute_blocks,
    save_feature_table,
)
from .method1 import (
    FeatureCombo,
    Method1Spec,
    feature_search,
    read_chosen,
    train_ensemble,
    validation_split,
    write_chosen,
    write_search_report,
)
from .method2 import Method2Spec, train_cnn_ensemble, write_segment_predictions
from .recording import (
    ClipManifest,
    LabelPolicy,
    ingest_recording,
    label_clips,
    resample,
    segment_array,
    write_recording,
    zscore,
)
from .synth import SynthConfig, generate, standard_scenarios

log = logging.getLogger(__name__)

STAGES = ("synth", "ingest", "label", "features", "train", "evaluate", "coherence", "transfer", "report")
METHODS = ("method1", "method2")

# stream keys split from the master seed
_SEARCH, _M1, _M2, _PERM, _TRANSFER = 1, 2, 3, 4, 5


class StageError(RuntimeError):
    """A stage failed; carries the stage name and the artifact path involved."""

    def __init__(self, stage: str, path, cause: BaseException):
        super().__init__(f"stage {stage!r} failed at {path}: {cause}")
        self.stage = stage
        self.path = Path(path)
        self.cause = cause


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class EvalParams:
    permutations: int = 100
    grid_step: float = 0.05
    control_draws: int = 100


@dataclass
class Catalog:
    uni: list = field(default_factory=lambda: [k.value for k in UniFeatureKind])
    bi: list = field(default_factory=lambda: [k.value for k in BiFeatureKind])
    variants: list = field(default_factory=lambda: [k.value for k in MatrixVariant])

    def combos(self):
        return [(UniFeatureKind(u), BiFeatureKind(b), MatrixVariant(v))
                for u in self.uni for b in self.bi for v in self.variants]


@dataclass
class PipelineConfig:
    seed: int = 0
    scenario: str | None = "separable"
    recording: str | None = None
    synth: dict = field(default_factory=dict)
    label_policy: LabelPolicy = field(default_factory=LabelPolicy)
    features: FeatureParams = field(default_factory=FeatureParams)
    catalog: Catalog = field(default_factory=Catalog)
    method1: Method1Spec = field(default_factory=Method1Spec)
    method2: Method2Spec = field(default_factory=Method2Spec)
    eval: EvalParams = field(default_factory=EvalParams)
    out: str = "runs/default"

    def validate(self):
        if (self.scenario is None) == (self.recording is None):
            raise ConfigError("set exactly one of 'scenario' and 'recording'")
        if self.scenario is not None and self.scenario not in standard_scenarios():
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {sorted(standard_scenarios())}")
        if self.eval.permutations < 2:
            raise ConfigError("eval.permutations must be at least 2")
        return self

    def synth_config(self) -> SynthConfig:
        base = standard_scenarios()[self.scenario].to_dict()
        merged = _deep_update(base, self.synth)
        return SynthConfig.from_dict(merged)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "scenario": self.scenario,
            "recording": self.recording,
            "synth": copy.deepcopy(self.synth),
            "label_policy": dataclasses.asdict(self.label_policy),
            "features": self.features.to_dict(),
            "catalog": dataclasses.asdict(self.catalog),
            "method1": self.method1.to_dict(),
            "method2": self.method2.to_dict(),
            "eval": dataclasses.asdict(self.eval),
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        try:
            cfg = cls(
                seed=int(d.get("seed", 0)),
                scenario=d.get("scenario", "separable" if "recording" not in d else None),
                recording=d.get("recording"),
                synth=dict(d.get("synth") or {}),
                label_policy=LabelPolicy(**(d.get("label_policy") or {})),
                features=FeatureParams.from_dict(d.get("features") or {}),
                catalog=Catalog(**(d.get("catalog") or {})),
                method1=_spec_from(Method1Spec, d.get("method1")),
                method2=_spec_from(Method2Spec, d.get("method2")),
                eval=EvalParams(**(d.get("eval") or {})),
                out=str(d.get("out", "runs/default")),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def _spec_from(cls, d):
    """Build a method spec from a partial dict, merging ``train`` into the defaults."""
    if not d:
        return cls()
    base = cls().to_dict()
    return cls.from_dict(_deep_update(base, d))


def _deep_update(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def _hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# --------------------------------------------------------------------------
# the pipeline
# --------------------------------------------------------------------------

class Pipeline:
    """Run stages of one configuration inside ``cfg.out``."""

    def __init__(self, cfg: PipelineConfig, config_text: str | None = None):
        self.cfg = cfg.validate()
        self.out = Path(cfg.out)
        self.config_text = config_text
        self.cache_hits: dict[str, bool] = {}
        self.timings: dict[str, float] = {}
        self._keys: dict[str, str] = {}

    # -- plumbing ----------------------------------------------------------

    def _prepare_out(self):
        try:
            self.out.mkdir(parents=True, exist_ok=True)
            probe = self.out / ".write-probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise StageError("setup", self.out, exc) from exc
        target = self.out / "config.yaml"
        if self.config_text is not None:
            target.write_text(self.config_text)
        else:
            self.cfg.dump(target)

    def _dir(self, stage: str) -> Path:
        return self.out / stage

    def _cached(self, stage: str, key: str) -> bool:
        d = self._dir(stage)
        kf = d / ".key"
        return kf.exists() and kf.read_text() == key and (d / ".done").exists()

    def _run_stage(self, stage: str, key: str, body):
        """Run ``body(dir)`` unless the stage is cached under ``key``."""
        d = self._dir(stage)
        if self._keys.get(stage) == key:
            return d  # already handled earlier in this run
        if self._cached(stage, key):
            log.info("stage %s: cache hit (%s)", stage, key)
            self._keys[stage] = key
            self.cache_hits[stage] = True
            self.timings.setdefault(stage, 0.0)
            return d
        log.info("stage %s: running (%s)", stage, key)
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        t0 = time.perf_counter()
        try:
            body(d)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, d, exc) from exc
        (d / ".key").write_text(key)
        (d / ".done").write_text("")
        self._keys[stage] = key
        self.cache_hits[stage] = False
        self.timings[stage] = time.perf_counter() - t0
        return d

    # -- data --------------------------------------------------------------

    def data_stage(self) -> Path:
        cfg = self.cfg
        if cfg.recording is not None:
            src = Path(cfg.recording)
            try:
                key = _hash("ingest", _file_hash(src / "meta.json"), _file_hash(src / "data.bin"))
            except OSError as exc:
                raise StageError("ingest", src, exc) from exc

            def body(d):
                rec = ingest_recording(src)
                write_recording(rec, d / "recording")
                _dump_json(d / "source.json", {"recording": str(src)})
            return self._run_stage("data", key, body)

        scfg = cfg.synth_config()
        key = _hash("synth", scfg.to_dict())

        def body(d):
            rec, truth = generate(scfg)
            write_recording(rec, d / "recording")
            _dump_json(d / "ground_truth.json", {
                "seizure_onsets": truth.seizure_onsets,
                "confound_intervals": truth.confound_intervals,
                "signature_windows": truth.windows,
                "synth_config": scfg.to_dict(),
            })
        return self._run_stage("data", key, body)

    def load_recording(self):
        rec = ingest_recording(self._dir("data") / "recording")
        if rec.sampling_rate != self.cfg.label_policy.target_rate:
            rec = resample(rec, self.cfg.label_policy.target_rate)
        return rec

    def label_stage(self) -> Path:
        self.data_stage()
        key = _hash("label", self._keys["data"], dataclasses.asdict(self.cfg.label_policy))

        def body(d):
            rec = ingest_recording(self._dir("data") / "recording")
            manifest, _ = label_clips(rec, self.cfg.label_policy)
            manifest.to_csv(d / "manifest.csv")
            _dump_json(d / "counts.json", manifest.counts())
            _dump_json(d / "onsets.json", {"seizure_onsets": rec.seizure_onsets})
        return self._run_stage("label", key, body)

    def manifest(self) -> ClipManifest:
        return ClipManifest.from_csv(self._dir("label") / "manifest.csv")

    def clip_segments(self, entries, rec=None):
        """Normalized ``(n, channels, samples)`` float32 segments of ``entries`` in order."""
        rec = rec if rec is not None else self.load_recording()
        fs = rec.sampling_rate
        n_clip = int(round(self.cfg.label_policy.clip_seconds * fs))
        segs, cid, sidx = [], [], []
        for e in entries:
            i0 = int(round(e.start_time * fs))
            s = segment_array(zscore(rec.data[:, i0:i0 + n_clip]), rate=fs).astype(np.float32)
            segs.append(s)
            cid += [e.clip_id] * len(s)
            sidx += range(len(s))
        return np.concatenate(segs), np.array(cid), np.array(sidx)

    # -- features ----------------------------------------------------------

    def features_stage(self) -> Path:
        self.label_stage()
        cat = self.cfg.catalog
        key = _hash("features", self._keys["label"], self.cfg.features.to_dict(), cat.uni, cat.bi)

        def body(d):
            entries = list(self.manifest())
            segs, cid, sidx = self.clip_segments(entries)
            blocks = compute_blocks(segs, self.cfg.features, cat.uni, cat.bi)
            np.savez(d / "blocks.npz", clip_id=cid, segment_idx=sidx, **blocks)
        return self._run_stage("features", key, body)

    def load_blocks(self):
        z = np.load(self._dir("features") / "blocks.npz")
        blocks = {k: z[k] for k in z.files if k not in ("clip_id", "segment_idx")}
        return blocks, z["clip_id"], z["segment_idx"]

    # -- training ----------------------------------------------------------

    def train_stage(self):
        self.features_stage()
        cfg = self.cfg
        k1 = _hash("method1", self._keys["features"], cfg.method1.to_dict(),
                   dataclasses.asdict(cfg.catalog), cfg.seed)
        k2 = _hash("method2", self._keys["label"], cfg.method2.to_dict(), cfg.seed)
        self._run_stage("train/method1", k1, self._train_method1)
        self._run_stage("train/method2", k2, self._train_method2)
        self._keys["train"] = _hash(k1, k2)

    def _train_method1(self, d: Path):
        cfg, spec = self.cfg, self.cfg.method1
        manifest = self.manifest()
        train_entries = manifest.select(split="train")
        test_ids = {e.clip_id for e in manifest.select(split="test")}
        blocks, cid, _ = self.load_blocks()
        label_of = {e.clip_id: int(e.label) for e in manifest}
        y = np.array([label_of[c] for c in cid])

        if spec.validation == "split":
            fit_ids, val_ids = validation_split(train_entries, spec.validation_fraction)
            # leakage guard: the search must never see test clips
            assert not (set(val_ids) | set(fit_ids)) & test_ids, "validation split touches test clips"
        else:
            fit_ids = [e.clip_id for e in train_entries]
            val_ids = sorted(test_ids)
        fit = np.isin(cid, fit_ids)
        val = np.isin(cid, val_ids)
        sub = lambda m: {k: v[m] for k, v in blocks.items()}  # noqa: E731
        ranked = feature_search(sub(fit), y[fit], sub(val), y[val], cid[val], spec,
                                seed=member_seed(cfg.seed, _SEARCH), combos=cfg.catalog.combos())
        if not ranked:
            raise RuntimeError("every feature combination failed during the search")
        write_search_report(d / "search.csv", ranked)
        best = ranked[0]
        write_chosen(d / "chosen.json", best)
        _dump_json(d / "validation.json", {"mode": spec.validation, "fit_clips": fit_ids, "val_clips": val_ids})

        train_mask = np.isin(cid, [e.clip_id for e in train_entries])
        x = combo_matrix(blocks, best.uni, best.bi, best.variant)
        ens = train_ensemble(x[train_mask], y[train_mask], spec, seed=member_seed(cfg.seed, _M1))
        ens.save(d / "ensemble")
        n_ch = blocks[best.bi.value].shape[1]
        save_feature_table(d / "feature_table", train_entries[0].subject_id, "train", x[train_mask],
                           combo_labels(best.uni, best.bi, best.variant, n_ch, cfg.features),
                           best.to_dict(), row_index=None, csv_export=False)

    def _train_method2(self, d: Path):
        cfg = self.cfg
        entries = self.manifest().select(split="train")
        segs, cid, _ = self.clip_segments(entries)
        label_of = {e.clip_id: int(e.label) for e in entries}
        y = np.array([label_of[c] for c in cid])
        ens = train_cnn_ensemble(segs, y, cfg.method2, seed=member_seed(cfg.seed, _M2))
        ens.save(d / "ensemble")
        _dump_json(d / "losses.json", [m.history["loss"] for m in ens.members])

    # -- evaluation ----------------------------------------------------------

    def evaluate_stage(self) -> Path:
        self.train_stage()
        key = _hash("evaluate", self._keys["train"])

        def body(d):
            manifest = self.manifest()
            test = manifest.select(split="test")
            test_ids = [e.clip_id for e in test]
            # method 1
            blocks, cid, sidx = self.load_blocks()
            chosen = read_chosen(self._dir("train/method1") / "chosen.json")
            mask = np.isin(cid, test_ids)
            x = combo_matrix(blocks, chosen.uni, chosen.bi, chosen.variant)[mask]
            ens1 = Ensemble.load(self._dir("train/method1") / "ensemble")
            s1 = ev.clip_predict(ens1.member_predictions(x), cid[mask], sidx[mask], test, "method1")
            # method 2
            segs, cid2, sidx2 = self.clip_segments(test)
            ens2 = Ensemble.load(self._dir("train/method2") / "ensemble")
            mp2 = ens2.member_predictions(segs)
            write_segment_predictions(d / "method2_segments.csv", cid2, sidx2, mp2)
            s2 = ev.clip_predict(mp2, cid2, sidx2, test, "method2")
            ev.save_series(d / "method1.npz", s1)
            ev.save_series(d / "method2.npz", s2)
            y = s1.label
            n_pos, n_neg = int(y.sum()), int((1 - y).sum())
            out = {}
            for s in (s1, s2):
                hm = ev.hanley_mcneil(s.auc(), n_pos, n_neg)
                out[s.method] = {"auc": hm.auc, "p": hm.p, "se": hm.se}
            _dump_json(d / "auc.json", out)
        return self._run_stage("evaluate", key, body)

    def series(self):
        d = self._dir("evaluate")
        return ev.load_series(d / "method1.npz"), ev.load_series(d / "method2.npz")

    def coherence_stage(self) -> Path:
        self.evaluate_stage()
        key = _hash("coherence", self._keys["evaluate"], self.cfg.eval.permutations, self.cfg.seed)

        def body(d):
            s1, s2 = self.series()
            rep = ev.coherence(s1, s2, self.cfg.eval.permutations, seed=member_seed(self.cfg.seed, _PERM))
            rep.save(d / "coherence")
        return self._run_stage("coherence", key, body)

    def transfer_stage(self) -> Path:
        self.evaluate_stage()
        e = self.cfg.eval
        key = _hash("transfer", self._keys["evaluate"], e.grid_step, e.control_draws, self.cfg.seed)

        def body(d):
            s1, s2 = self.series()
            grid = ev.default_grid(e.grid_step)
            seed = member_seed(self.cfg.seed, _TRANSFER)
            for a, b in ((s1, s2), (s2, s1)):
                c = ev.transfer_curve(a, b, grid, seed=seed, control_draws=e.control_draws)
                c.save(d / f"transfer_{a.method}_to_{b.method}")
        return self._run_stage("transfer", key, body)

    def transfer_curves(self):
        d = self._dir("transfer")
        out = []
        for a, b in (("method1", "method2"), ("method2", "method1")):
            j = json.loads((d / f"transfer_{a}_to_{b}.json").read_text())
            nan = lambda v: [np.nan if x is None else x for x in v]  # noqa: E731
            out.append(ev.TransferCurve(j["filter_method"], j["target_method"], np.array(j["thresholds"]),
                                        np.array(nan(j["auc"]), dtype=float),
                                        np.array(nan(j["control_auc"]), dtype=float),
                                        np.array(j["retained"]), np.array(j["defined"]), j["base_auc"],
                                        j["control_draws"]))
        return out

    # -- report ----------------------------------------------------------------

    def report_stage(self) -> dict:
        self.coherence_stage()
        self.transfer_stage()
        d = self._dir("report")
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        t0 = time.perf_counter()
        report = self._build_report(d)
        self.timings["report"] = time.perf_counter() - t0
        report["timings"] = dict(self.timings)
        report["cache_hits"] = dict(self.cache_hits)
        _dump_json(self.out / "report.json", report)
        return report

    def _build_report(self, d: Path) -> dict:
        from .plotting import plot_predictions, plot_transfer

        s1, s2 = self.series()
        curves = self.transfer_curves()
        onsets = json.loads((self._dir("label") / "onsets.json").read_text())["seizure_onsets"]
        ev.write_prediction_timeline(d / "predictions.csv", s1, s2)
        with open(d / "onsets.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["onset_s"])
            w.writerows([[repr(float(t))] for t in onsets])
        with open(d / "transfer_curves.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["series", "filter_method", "target_method", "e_th", "auc", "retained"])
            for c, name in zip(curves, ("filtered", "reverse-filtered")):
                for t, a, r, ok in zip(c.thresholds, c.auc, c.retained, c.defined):
                    w.writerow([name, c.filter_method, c.target_method, repr(float(t)),
                                repr(float(a)) if ok else "", int(r)])
                for t, a, r in zip(c.thresholds, c.control_auc, c.retained):
                    w.writerow([f"{name} control", c.filter_method, c.target_method, repr(float(t)),
                                repr(float(a)) if np.isfinite(a) else "", int(r)])
        plot_predictions(s1, s2, [t for t in onsets if t >= s1.start_s.min()], d / "predictions.png")
        plot_transfer(curves, d / "transfer.png")

        coh = json.loads((self._dir("coherence") / "coherence.json").read_text())
        chosen = read_chosen(self._dir("train/method1") / "chosen.json")
        aucs = json.loads((self._dir("evaluate") / "auc.json").read_text())
        files = sorted(str(p.relative_to(self.out)) for p in self.out.rglob("*")
                       if p.is_file() and not p.name.startswith(".") and p.name != "report.json")
        return {
            "config": self.cfg.to_dict(),
            "stage_keys": dict(sorted(self._keys.items())),
            "manifest": self.manifest().counts(),
            "chosen_combo": chosen.to_dict(),
            "auc": aucs,
            "coherence": coh,
            "transfer": [c.to_dict() for c in curves],
            "files": files,
        }

    # -- driver ----------------------------------------------------------------

    def run(self, until: str = "report"):
        if until not in STAGES:
            raise ConfigError(f"unknown stage {until!r}")
        self._prepare_out()
        if until in ("synth", "ingest"):
            return self.data_stage()
        return {
            "label": self.label_stage,
            "features": self.features_stage,
            "train": self.train_stage,
            "evaluate": self.evaluate_stage,
            "coherence": self.coherence_stage,
            "transfer": self.transfer_stage,
            "report": self.report_stage,
        }[until]()


def numeric_view(report: dict) -> dict:
    """The report without wall-clock, cache bookkeeping and output location.

    Two runs of one configuration must agree on this view exactly.
    """
    view = {k: v for k, v in report.items() if k not in ("timings", "cache_hits")}
    view["config"] = {k: v for k, v in view["config"].items() if k != "out"}
    return view

"""
Experiment harness: dataset generation, the experiment grids, model
evaluation and file inspection.
"""

import dataclasses
import hashlib
import json
import math
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from ._autoencoder import (
    compression_ratio,
    constant_predictor_nmse,
    evaluate_nmse,
    global_nmse,
    individual_nmse,
    infer_config,
    mean_db,
    to_db,
)
from ._binary_io import (
    decode_checkpoint,
    read_checkpoint,
    read_dataset,
    read_dataset_header,
    write_checkpoint,
    write_dataset,
)
from ._channel import build_environment, build_ue_dataset, draw_ue_geometry, split_sizes
from ._config import ExperimentConfig, config_hash, flatten_config
from ._constants import (
    BASELINE_BITS,
    CHECKPOINT_MAGIC,
    CHECKPOINT_SUFFIX,
    DATASET_MAGIC,
    DATASET_SUFFIX,
    MANIFEST_NAME,
    PAYLOAD_MAGIC,
    REPORT_NAME,
)
from ._csv_output import CsvOutputMixin
from ._exceptions import (
    ConfigError,
    DatasetExistsError,
    FormatError,
    InvariantViolation,
    MissingDatasetError,
    ShapeMismatchError,
    TemplateMismatchError,
)
from ._feel import fair_step_budgets, final_broadcast, pretrain_global, run_cl, run_feel, run_il
from ._models import (
    AutoencoderConfig,
    FeelConfig,
    MetricsReport,
    QuantPolicy,
    RoundHistory,
    ScenarioParams,
    UeDataset,
)
from ._nn import ParamSet
from ._personalize import decoder_payload_bits, personalize_ues, tradeoff_sweep
from ._quant import decode_payload, full_precision_bits, payload_bits, quantize
from ._reporting import Reporter, ensure_reporter
from ._seeding import derive_rng
from ._trainer import steps_per_epoch

PathLike = Union[str, Path]
Row = Dict[str, Any]

_FRAMEWORK_ORDER = ("IL", "CL", "FEEL", "pFEEL")


# ---------------------------------------------------------------- datasets


def data_hash(cfg: ExperimentConfig, scenario: ScenarioParams) -> str:
    """Hash of everything that determines a scenario's generated samples"""
    semantic = {
        "master_seed": cfg.master_seed,
        "array": dataclasses.asdict(cfg.array),
        "geometry": dataclasses.asdict(cfg.geometry),
        "scenario": dataclasses.asdict(scenario),
    }
    payload = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def scenario_datasets(
    cfg: ExperimentConfig,
    scenario: ScenarioParams,
    ue_ids: Sequence[int],
    moving_radius_m: Optional[float] = None,
) -> List[UeDataset]:
    """Per-UE datasets of one scenario; every UE draws from its own seed stream.

    The scattering environment and the UE centres do not depend on the moving
    radius, so a radius sweep moves the same UEs through the same clusters.
    """
    geometry = cfg.geometry
    radius = geometry.moving_radius_m if moving_radius_m is None else moving_radius_m
    seed = cfg.master_seed
    environment = build_environment(
        scenario, geometry.cell_radius_m, derive_rng(seed, "environment", scenario.label)
    )
    datasets = []
    for ue_id in ue_ids:
        placement = draw_ue_geometry(
            derive_rng(seed, "placement", scenario.label, ue_id),
            geometry.cell_radius_m,
            geometry.min_bs_distance_m,
            radius,
            ue_id,
        )
        datasets.append(
            build_ue_dataset(
                placement,
                scenario,
                cfg.array,
                geometry.samples_per_ue,
                derive_rng(seed, "samples", scenario.label, ue_id),
                environment,
            )
        )
    return datasets


def truncate_dataset(ds: UeDataset, num_samples: int) -> UeDataset:
    """Keep the train share of ``num_samples``; val/test and NormParams unchanged"""
    n_train = split_sizes(num_samples)[0]
    if n_train > len(ds.train):
        raise ConfigError(
            f"Sample count {num_samples} needs {n_train} training samples, UE {ds.ue_id} has {len(ds.train)}"
        )
    return dataclasses.replace(ds, train=ds.train[:n_train])


def raw_upload_bits(datasets: Sequence[UeDataset]) -> int:
    """Bits to upload every train sample as 32-bit real and imaginary parts"""
    return BASELINE_BITS * 2 * sum(int(ds.train.size) for ds in datasets)


# ---------------------------------------------------------------- metrics


def framework_metrics(models: Dict[int, ParamSet], datasets: Sequence[UeDataset]) -> Tuple[float, float]:
    """(G-NMSE, I-NMSE) in dB of one model per UE.

    G-NMSE averages every UE's model over the mixed test set, I-NMSE every
    model over its own UE's test split.
    """
    pooled: Dict[int, float] = {}
    g_values = []
    for ds in datasets:
        ps = models[ds.ue_id]
        if id(ps) not in pooled:
            pooled[id(ps)] = global_nmse(ps, datasets, "test")
        g_values.append(pooled[id(ps)])
    return mean_db(g_values), mean_db(individual_nmse(models, datasets).values())


def _row(run: str, framework: str, g_db: float, i_db: float, uplink: int = 0, downlink: int = 0, steps: int = 0, **extra) -> Row:
    row = {
        "run": run,
        "framework": framework,
        "g_nmse_db": float(g_db),
        "i_nmse_db": float(i_db),
        "uplink_bits": int(uplink),
        "downlink_bits": int(downlink),
        "local_steps": int(steps),
    }
    row.update(extra)
    return row


def _payload_size(ps: ParamSet, bits: Optional[int]) -> int:
    return full_precision_bits(ps) if bits is None else payload_bits(quantize(ps, bits))


class ExperimentRunner(CsvOutputMixin):
    """Generates datasets and runs one configured experiment grid"""

    def __init__(self, cfg: ExperimentConfig, reporter: Optional[Reporter] = None):
        self.cfg = cfg
        self.reporter = ensure_reporter(reporter)
        self.out_dir = Path(cfg.out_dir)
        self._initial_models: Dict[AutoencoderConfig, ParamSet] = {}

    @property
    def data_dir(self) -> Path:
        return self.out_dir / "data"

    @property
    def run_dir(self) -> Path:
        return self.out_dir / "runs" / self.cfg.experiment

    def _rng(self, *keys) -> np.random.Generator:
        """Stream for (master_seed, experiment, *keys).

        Grid points pass their run label first; only the initial model w0 is
        shared by every point of a grid.
        """
        return derive_rng(self.cfg.master_seed, self.cfg.experiment, *keys)

    def _context(self, *parts: str):
        self.reporter.set_context("/".join((self.cfg.experiment,) + parts))

    # ------------------------------------------------------------ data

    def _scenarios(self) -> Dict[str, ScenarioParams]:
        return {"deploy": self.cfg.deploy_scenario, "pretrain": self.cfg.pretrain_scenario}

    def _num_generated_ues(self) -> int:
        return max(self.cfg.feel.num_ues, max(self.cfg.sweep.ue_counts))

    def dataset_path(self, scenario: str, ue_id: int) -> Path:
        return self.data_dir / scenario / f"ue_{ue_id:03d}{DATASET_SUFFIX}"

    def generate_data(self, overwrite: bool = False) -> Path:
        """Write one dataset file per UE and scenario plus the manifest"""
        ue_ids = list(range(1, self._num_generated_ues() + 1))
        manifest_path = self.data_dir / MANIFEST_NAME
        targets = [manifest_path] + [
            self.dataset_path(name, ue_id) for name in self._scenarios() for ue_id in ue_ids
        ]
        existing = [p for p in targets if p.exists()]
        if existing and not overwrite:
            raise DatasetExistsError(
                f"{existing[0]} already exists; pass --overwrite to replace the datasets in {self.data_dir}"
            )

        self.reporter.log_section(f"Generating datasets in {self.data_dir}")
        manifest: Dict[str, Any] = {
            "format": DATASET_MAGIC.decode("ascii"),
            "master_seed": self.cfg.master_seed,
            "config_hash": config_hash(self.cfg),
            "scenarios": {},
        }
        for name, scenario in self._scenarios().items():
            self.reporter.set_context(name)
            entries = []
            for ds in scenario_datasets(self.cfg, scenario, ue_ids):
                path = self.dataset_path(name, ds.ue_id)
                write_dataset(ds, path)
                entries.append(
                    {
                        "ue_id": ds.ue_id,
                        "file": path.relative_to(self.data_dir).as_posix(),
                        "seed_keys": ["samples", scenario.label, ds.ue_id],
                        "sizes": list(ds.sizes),
                    }
                )
                self.reporter.log_verbose(f"UE {ds.ue_id}: {sum(ds.sizes)} samples -> {path}")
            manifest["scenarios"][name] = {
                "data_hash": data_hash(self.cfg, scenario),
                "params": dataclasses.asdict(scenario),
                "ues": entries,
            }
            self.reporter.log_info(f"{len(entries)} UE datasets written", context_prefix=True)
        self.reporter.set_context("")
        return self.save_yaml(manifest_path, manifest)

    def load_datasets(self, scenario: str = "deploy", count: Optional[int] = None) -> List[UeDataset]:
        """The first ``count`` UE datasets of a generated scenario"""
        manifest_path = self.data_dir / MANIFEST_NAME
        if not manifest_path.exists():
            raise MissingDatasetError(f"No dataset manifest at {manifest_path}; run generate-data first")
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = yaml.safe_load(f) or {}
        entry = manifest.get("scenarios", {}).get(scenario)
        if entry is None:
            raise MissingDatasetError(f"{manifest_path} lists no '{scenario}' datasets")
        expected = data_hash(self.cfg, self._scenarios()[scenario])
        if entry.get("data_hash") != expected:
            raise MissingDatasetError(
                f"Datasets in {self.data_dir} were generated for a different configuration "
                f"(data hash {entry.get('data_hash')}, expected {expected}); rerun generate-data --overwrite"
            )
        ues = entry.get("ues", [])
        count = len(ues) if count is None else count
        if len(ues) < count:
            raise MissingDatasetError(f"{count} '{scenario}' datasets needed, {len(ues)} generated")

        datasets = []
        for ue in ues[:count]:
            path = self.data_dir / ue["file"]
            if not path.exists():
                raise MissingDatasetError(f"Dataset file {path} listed in {manifest_path} is missing")
            datasets.append(read_dataset(path))
        return datasets

    # ------------------------------------------------------------ runs

    def _initial_model(self, model_cfg: AutoencoderConfig) -> ParamSet:
        """w0 per architecture, pretrained on the pretrain scenario when configured"""
        if model_cfg not in self._initial_models:
            epochs = self.cfg.feel.pretrain_epochs
            pretrain = self.load_datasets("pretrain", self.cfg.feel.num_ues) if epochs > 0 else []
            if epochs > 0:
                self.reporter.log_info(f"Pretraining w0 for {epochs} epochs on the pretrain scenario")
            self._initial_models[model_cfg] = pretrain_global(
                model_cfg, pretrain, self.cfg.train, epochs, self._rng("init")
            )
        return self._initial_models[model_cfg].copy()

    def _check_history(self, history: RoundHistory, feel_cfg: FeelConfig):
        if len(history) != feel_cfg.rounds:
            raise InvariantViolation(f"{len(history)} rounds recorded, expected {feel_cfg.rounds}")
        prev_ul = prev_dl = 0
        for record in history.records:
            ids = record.scheduled_ids
            if len(set(ids)) != feel_cfg.scheduled_per_round or not all(
                1 <= i <= feel_cfg.num_ues for i in ids
            ):
                raise InvariantViolation(
                    f"Round {record.round} scheduled {ids}, expected "
                    f"{feel_cfg.scheduled_per_round} distinct ids in 1..{feel_cfg.num_ues}"
                )
            if record.cum_uplink_bits <= prev_ul or record.cum_downlink_bits <= prev_dl:
                raise InvariantViolation(f"Round {record.round}: communication ledger did not grow")
            if math.isnan(record.gnmse_db) or not math.isfinite(record.mean_local_loss):
                raise InvariantViolation(f"Round {record.round}: non-finite loss or G-NMSE")
            prev_ul, prev_dl = record.cum_uplink_bits, record.cum_downlink_bits
        per_round = history.records[0].cum_downlink_bits
        if history.cum_downlink_bits != per_round * len(history):
            raise InvariantViolation("Downlink ledger is not one model payload per round")

    def _run_feel(
        self,
        label: str,
        datasets: Sequence[UeDataset],
        feel_cfg: FeelConfig,
        model_cfg: Optional[AutoencoderConfig] = None,
    ) -> Tuple[RoundHistory, ParamSet]:
        self._context(label, "feel")
        w0 = self._initial_model(model_cfg or self.cfg.model)
        self.reporter.log_info(
            f"FEEL: K={feel_cfg.num_ues} M={feel_cfg.scheduled_per_round} T={feel_cfg.rounds} "
            f"E={feel_cfg.train.local_epochs} uplink={feel_cfg.quant.uplink_bits} "
            f"downlink={feel_cfg.quant.downlink_bits}"
        )
        history, final = run_feel(feel_cfg, datasets, self._rng(label, "feel"), w0, self.reporter)
        self._check_history(history, feel_cfg)
        self.write_rounds_csv(self.run_dir / label / "rounds.csv", history)
        write_checkpoint(final, self.run_dir / label / f"global{CHECKPOINT_SUFFIX}")
        return history, final

    def _frameworks(
        self,
        label: str,
        datasets: Sequence[UeDataset],
        feel_cfg: FeelConfig,
        model_cfg: Optional[AutoencoderConfig] = None,
        baselines: bool = True,
        personalize: bool = True,
    ) -> Tuple[Dict[str, Row], ParamSet]:
        """FEEL plus the requested IL/CL baselines and personalized FEEL, keyed by framework"""
        model_cfg = model_cfg or self.cfg.model
        history, final = self._run_feel(label, datasets, feel_cfg, model_cfg)
        steps = history.total_local_steps
        ul, dl = history.cum_uplink_bits, history.cum_downlink_bits
        rows = {
            "FEEL": _row(
                label, "FEEL", history.final_metrics["g_nmse_db"], history.final_metrics["i_nmse_db"], ul, dl, steps
            )
        }

        if baselines:
            cl_steps, il_steps = fair_step_budgets(steps, len(datasets))
            w0 = self._initial_model(model_cfg)
            self._context(label, "cl")
            cl = run_cl(datasets, feel_cfg.train, self._rng(label, "cl"), w0, cl_steps, self.reporter)
            g, i = framework_metrics({ds.ue_id: cl for ds in datasets}, datasets)
            rows["CL"] = _row(label, "CL", g, i, raw_upload_bits(datasets), 0, cl_steps)
            self._context(label, "il")
            il = run_il(datasets, feel_cfg.train, self._rng(label, "il"), w0, il_steps, self.reporter)
            g, i = framework_metrics(il, datasets)
            rows["IL"] = _row(label, "IL", g, i, 0, 0, il_steps * len(datasets))

        if personalize:
            self._context(label, "pfeel")
            received, broadcast_bits = final_broadcast(final, feel_cfg.quant, self._rng(label, "broadcast"))
            pc = self.cfg.personalize
            chosen, kept = personalize_ues(received, datasets, pc, self._rng(label, "personalize"), self.reporter)
            g, i = framework_metrics(chosen, datasets)
            decoder_bits = sum(decoder_payload_bits(chosen[ue]) for ue, keep in kept.items() if keep)
            fine_tune_steps = sum(pc.epochs * steps_per_epoch(len(ds.train), pc.batch_size) for ds in datasets)
            rows["pFEEL"] = _row(
                label,
                "pFEEL",
                g,
                i,
                ul + decoder_bits,
                dl + broadcast_bits,
                steps + fine_tune_steps,
                kept=sum(kept.values()),
            )

        for name in _FRAMEWORK_ORDER:
            if name in rows:
                self.reporter.log_info(
                    f"{name}: G-NMSE {rows[name]['g_nmse_db']:.2f} dB, I-NMSE {rows[name]['i_nmse_db']:.2f} dB"
                )
        return {name: rows[name] for name in _FRAMEWORK_ORDER if name in rows}, final

    def _trend(self, trends: Dict[str, bool], name: str, holds: bool):
        trends[name] = bool(holds)
        self.reporter.log_info(f"trend {name}: {'holds' if holds else 'does not hold'}", context_prefix=False)
        if not holds:
            self.reporter.log_warning(f"expected trend {name} does not hold", context_prefix=False)

    def _ledger(self, ps: ParamSet, quant: QuantPolicy) -> Dict[str, int]:
        return {
            "full_precision_bits": full_precision_bits(ps),
            "uplink_payload_bits": _payload_size(ps, quant.uplink_bits),
            "downlink_payload_bits": _payload_size(ps, quant.downlink_bits),
        }

    # ------------------------------------------------------------ experiments

    def _compare_frameworks(self) -> Tuple[List[Row], Dict[str, int], Dict[str, bool]]:
        cfg = self.cfg
        datasets = self.load_datasets("deploy", cfg.feel.num_ues)
        results, final = self._frameworks("default", datasets, cfg.feel)
        ledger = self._ledger(final, cfg.quant)
        ledger["decoder_upload_bits"] = results["pFEEL"]["uplink_bits"] - results["FEEL"]["uplink_bits"]

        g = {name: row["g_nmse_db"] for name, row in results.items()}
        i = {name: row["i_nmse_db"] for name, row in results.items()}
        trends: Dict[str, bool] = {}
        self._trend(trends, "feel_within_2db_of_cl", abs(g["FEEL"] - g["CL"]) <= 2.0)
        self._trend(trends, "feel_beats_il_by_3db", g["FEEL"] <= g["IL"] - 3.0)
        self._trend(trends, "cl_beats_il_by_3db", g["CL"] <= g["IL"] - 3.0)
        self._trend(trends, "pfeel_beats_feel_individually_by_1db", i["pFEEL"] <= i["FEEL"] - 1.0)
        self._trend(trends, "pfeel_beats_il_individually_by_1db", i["pFEEL"] <= i["IL"] - 1.0)
        return list(results.values()), ledger, trends

    def _quant_sweep(self) -> Tuple[List[Row], Dict[str, int], Dict[str, bool]]:
        cfg = self.cfg
        base = cfg.feel
        bits = sorted(set(cfg.sweep.quant_bits))
        datasets = self.load_datasets("deploy", base.num_ues)
        stochastic = base.quant.stochastic_rounding
        runs = [("unquantized", QuantPolicy.disabled())]
        runs += [(f"uplink-{b}", QuantPolicy(uplink_bits=b, downlink_bits=None, stochastic_rounding=stochastic)) for b in bits]
        runs += [(f"downlink-{b}", QuantPolicy(uplink_bits=None, downlink_bits=b, stochastic_rounding=stochastic)) for b in bits]
        # personalization from a 2-bit-uplink global model vs the unquantized one
        personalized = {"unquantized", "uplink-2"}

        rows: List[Row] = []
        results: Dict[str, Dict[str, Row]] = {}
        for label, quant in runs:
            feel_cfg = dataclasses.replace(base, quant=quant)
            results[label], _ = self._frameworks(
                label, datasets, feel_cfg, baselines=False, personalize=label in personalized
            )
            rows.extend(results[label].values())

        uplink = [(b, results[f"uplink-{b}"]["FEEL"]["uplink_bits"]) for b in bits]
        for (b0, u0), (b1, u1) in zip(uplink, uplink[1:]):
            if not u1 > u0:
                raise InvariantViolation(
                    f"Uplink ledger does not grow with bit width: {b0} bits -> {u0}, {b1} bits -> {u1}"
                )
        ledger = {f"uplink_{b}bit_total_bits": u for b, u in uplink}
        ledger["unquantized_uplink_total_bits"] = results["unquantized"]["FEEL"]["uplink_bits"]

        def g(label: str) -> float:
            return results[label]["FEEL"]["g_nmse_db"]

        trends: Dict[str, bool] = {}
        if 2 in bits:
            self._trend(trends, "uplink_2bit_within_1_5db", g("uplink-2") <= g("unquantized") + 1.5)
            self._trend(trends, "downlink_2bit_degrades_more_than_uplink_2bit", g("downlink-2") > g("uplink-2"))
            self._trend(
                trends,
                "quantized_global_personalization_within_1db",
                results["uplink-2"]["pFEEL"]["i_nmse_db"] <= results["unquantized"]["pFEEL"]["i_nmse_db"] + 1.0,
            )
        if 8 in bits:
            self._trend(trends, "downlink_8bit_within_1_5db", g("downlink-8") <= g("unquantized") + 1.5)
        return rows, ledger, trends

    def _sample_sweep(self) -> Tuple[List[Row], Dict[str, int], Dict[str, bool]]:
        base = self.cfg.feel
        counts = sorted(set(self.cfg.sweep.sample_counts))
        datasets = self.load_datasets("deploy", base.num_ues)
        rows: List[Row] = []
        gains = {}
        feel_g = {}
        for count in counts:
            subset = [truncate_dataset(ds, count) for ds in datasets]
            results, _ = self._frameworks(f"samples-{count}", subset, base)
            rows.extend(results.values())
            gains[count] = results["FEEL"]["i_nmse_db"] - results["pFEEL"]["i_nmse_db"]
            feel_g[count] = results["FEEL"]["g_nmse_db"]

        trends: Dict[str, bool] = {}
        if len(counts) > 1:
            lo, hi = counts[0], counts[-1]
            self._trend(trends, "feel_improves_with_samples", feel_g[hi] < feel_g[lo])
            self._trend(trends, "personalization_gain_grows_with_samples", gains[hi] >= gains[lo])
        return rows, {}, trends

    def _ue_sweep(self) -> Tuple[List[Row], Dict[str, int], Dict[str, bool]]:
        base = self.cfg.feel
        counts = sorted(set(self.cfg.sweep.ue_counts))
        datasets = self.load_datasets("deploy", counts[-1])
        rows: List[Row] = []
        feel_g = {}
        for k in counts:
            feel_cfg = dataclasses.replace(
                base, num_ues=k, scheduled_per_round=min(base.scheduled_per_round, k)
            )
            results, _ = self._frameworks(f"ues-{k}", datasets[:k], feel_cfg, baselines=False)
            rows.extend(results.values())
            feel_g[k] = results["FEEL"]["g_nmse_db"]

        trends: Dict[str, bool] = {}
        if len(counts) > 1:
            self._trend(trends, "feel_generalizes_better_with_more_ues", feel_g[counts[-1]] <= feel_g[counts[0]])
        return rows, {}, trends

    def _personalize_tradeoff(self) -> Tuple[List[Row], Dict[str, int], Dict[str, bool]]:
        cfg = self.cfg
        datasets = self.load_datasets("deploy", cfg.feel.num_ues)
        results, final = self._frameworks("default", datasets, cfg.feel, personalize=False)
        rows = list(results.values())

        self._context("tradeoff")
        received, _ = final_broadcast(final, cfg.quant, self._rng("tradeoff", "broadcast"))
        table = tradeoff_sweep(
            received, datasets, cfg.sweep.epoch_grid, cfg.personalize, self._rng("tradeoff", "personalize"), self.reporter
        )
        self.write_tradeoff_csv(self.run_dir / "tradeoff.csv", table)
        for entry in table:
            rows.append(_row(f"epochs-{entry.epochs}", "pFEEL", entry.g_nmse_db, entry.i_nmse_db))

        first, last = table[0], table[-1]
        trends: Dict[str, bool] = {}
        self._trend(trends, "individual_nmse_improves_with_epochs", last.i_nmse_db < first.i_nmse_db)
        self._trend(trends, "generalization_degrades_with_epochs", last.g_nmse_db > first.g_nmse_db)
        self._trend(trends, "personalized_generalization_beats_il", last.g_nmse_db < results["IL"]["g_nmse_db"])
        best = [min(r.i_nmse_db for r in table[: n + 1]) for n in range(len(table))]
        self._trend(trends, "best_individual_nmse_non_increasing", all(b1 <= b0 for b0, b1 in zip(best, best[1:])))
        return rows, {}, trends

    def _local_epoch_sweep(self) -> Tuple[List[Row], Dict[str, int], Dict[str, bool]]:
        base = self.cfg.feel
        epochs = sorted(set(self.cfg.sweep.local_epochs))
        datasets = self.load_datasets("deploy", base.num_ues)
        rows: List[Row] = []
        results = {}
        for e in epochs:
            feel_cfg = dataclasses.replace(base, train=dataclasses.replace(base.train, local_epochs=e))
            results[e], _ = self._frameworks(f"local-epochs-{e}", datasets, feel_cfg, baselines=False)
            rows.extend(results[e].values())

        trends: Dict[str, bool] = {}
        if len(epochs) > 1:
            lo, hi = epochs[0], epochs[-1]
            self._trend(
                trends,
                "feel_generalizes_better_with_fewer_local_epochs",
                results[lo]["FEEL"]["g_nmse_db"] < results[hi]["FEEL"]["g_nmse_db"],
            )
            self._trend(
                trends,
                "pfeel_improves_with_more_local_epochs",
                results[hi]["pFEEL"]["i_nmse_db"] < results[lo]["pFEEL"]["i_nmse_db"],
            )
        return rows, {}, trends

    def _moving_range_sweep(self) -> Tuple[List[Row], Dict[str, int], Dict[str, bool]]:
        """FEEL on K UEs, then personalization of hold-out UEs that never trained"""
        cfg = self.cfg
        base = cfg.feel
        radii = sorted(set(cfg.sweep.moving_radii_m))
        num_holdout = cfg.sweep.holdout_ues
        ue_ids = list(range(1, base.num_ues + num_holdout + 1))
        rows: List[Row] = []
        gains = {}
        for radius in radii:
            label = f"radius-{radius:g}"
            self._context(label, "data")
            all_sets = scenario_datasets(cfg, cfg.deploy_scenario, ue_ids, moving_radius_m=radius)
            train_sets, holdouts = all_sets[: base.num_ues], all_sets[base.num_ues :]
            results, final = self._frameworks(label, train_sets, base, baselines=False, personalize=False)
            rows.extend(results.values())

            self._context(label, "holdout")
            received, bits = final_broadcast(final, base.quant, self._rng(label, "holdout", "broadcast"))
            chosen, kept = personalize_ues(
                received, holdouts, cfg.personalize, self._rng(label, "holdout", "personalize"), self.reporter
            )
            g_global, i_global = framework_metrics({ds.ue_id: received for ds in holdouts}, holdouts)
            g_personal, i_personal = framework_metrics(chosen, holdouts)
            rows.append(_row(label, "FEEL-holdout", g_global, i_global, 0, bits))
            rows.append(
                _row(label, "pFEEL-holdout", g_personal, i_personal, 0, bits, kept=sum(kept.values()))
            )
            gains[radius] = i_global - i_personal
            self.reporter.log_info(f"hold-out personalization gain {gains[radius]:.2f} dB")

        trends: Dict[str, bool] = {}
        if len(radii) > 1:
            self._trend(trends, "personalization_gain_shrinks_with_moving_range", gains[radii[0]] >= gains[radii[-1]])
        return rows, {}, trends

    def _compression_sweep(self) -> Tuple[List[Row], Dict[str, int], Dict[str, bool]]:
        cfg = self.cfg
        dims = sorted(set(cfg.sweep.codeword_dims))
        datasets = self.load_datasets("deploy", cfg.feel.num_ues)
        rows: List[Row] = []
        feel_g = {}
        ledger = {}
        for dim in dims:
            model_cfg = dataclasses.replace(cfg.model, codeword_dim=dim)
            label = f"codeword-{dim}"
            results, final = self._frameworks(label, datasets, cfg.feel, model_cfg, personalize=False)
            ratio = compression_ratio(model_cfg)
            for row in results.values():
                row["compression_ratio"] = ratio
            rows.extend(results.values())
            feel_g[dim] = results["FEEL"]["g_nmse_db"]
            ledger[f"{label}_parameters"] = final.num_elements()

        trends: Dict[str, bool] = {}
        if len(dims) > 1:
            self._trend(trends, "feel_improves_with_codeword_length", feel_g[dims[-1]] < feel_g[dims[0]])
        return rows, ledger, trends

    def run_experiment(self) -> MetricsReport:
        """Run the configured grid and write summary.csv and report.yaml"""
        cfg = self.cfg
        start = time.perf_counter()
        digest = config_hash(cfg)
        self.reporter.log_section(f"Experiment {cfg.experiment} (config {digest}, seed {cfg.master_seed})")
        handler = getattr(self, "_" + cfg.experiment.replace("-", "_"))
        rows, ledger, trends = handler()
        self.reporter.set_context("")

        self.write_summary_csv(self.run_dir / "summary.csv", rows)
        frameworks = {}
        for row in rows:
            key = row["framework"] if row["run"] == "default" else f"{row['run']}/{row['framework']}"
            frameworks[key] = {
                k: (round(v, 4) if isinstance(v, float) and math.isfinite(v) else v)
                for k, v in row.items()
                if k not in ("run", "framework")
            }
        report = MetricsReport(
            experiment=cfg.experiment,
            config_hash=digest,
            frameworks=frameworks,
            ledger=ledger,
            trends=trends,
            wall_clock_s=time.perf_counter() - start,
        )
        document = report.to_dict()
        document["master_seed"] = cfg.master_seed
        document["config"] = flatten_config(cfg)
        self.save_yaml(self.run_dir / REPORT_NAME, document)
        return report


# ---------------------------------------------------------------- evaluate / inspect


def evaluate_model(
    model_file: PathLike, dataset_files: Sequence[PathLike], reporter: Optional[Reporter] = None
) -> Dict[str, Any]:
    """G-NMSE over the mixed test sets and per-UE NMSE, with the constant-0.5 baseline"""
    reporter = ensure_reporter(reporter)
    if not dataset_files:
        raise ConfigError("evaluate needs at least one dataset file")
    ps = read_checkpoint(model_file)
    datasets = [read_dataset(path) for path in dataset_files]
    shapes = {ds.shape for ds in datasets}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"Datasets disagree in shape: {sorted(shapes)}")
    nt, nc = datasets[0].shape
    ps.architecture = infer_config(ps, nt, nc)

    per_ue = []
    constant_weighted = 0.0
    num_test = 0
    for path, ds in zip(dataset_files, datasets):
        constant = constant_predictor_nmse(ds.test, ds.norm_params)
        constant_weighted += constant * len(ds.test)
        num_test += len(ds.test)
        per_ue.append(
            {
                "file": str(path),
                "ue_id": ds.ue_id,
                "nmse_db": to_db(evaluate_nmse(ps, ds, "test")),
                "constant_nmse_db": to_db(constant),
            }
        )
    result = {
        "model": str(model_file),
        "g_nmse_db": to_db(global_nmse(ps, datasets, "test")),
        "constant_g_nmse_db": to_db(constant_weighted / num_test),
        "compression_ratio": compression_ratio(ps.architecture),
        "per_ue": per_ue,
    }
    reporter.log_summary(
        "Evaluation",
        {
            "Model": result["model"],
            "G-NMSE (dB)": result["g_nmse_db"],
            "Constant-0.5 G-NMSE (dB)": result["constant_g_nmse_db"],
        },
        extra={
            f"UE {e['ue_id']}": f"{e['nmse_db']:.2f} dB (constant {e['constant_nmse_db']:.2f} dB)"
            for e in per_ue
        },
    )
    return result


def inspect_file(path: PathLike) -> Dict[str, Any]:
    """Header summary of a dataset, checkpoint or quantized payload file"""
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()
    magic = data[:8]
    if magic == DATASET_MAGIC:
        return {"file": str(path), **read_dataset_header(path)}
    if magic == CHECKPOINT_MAGIC:
        ps = decode_checkpoint(data, str(path))
        info = {
            "file": str(path),
            "format": CHECKPOINT_MAGIC.decode("ascii"),
            "tensors": len(ps),
            "parameters": ps.num_elements(),
        }
        try:
            cfg = infer_config(ps)
            info["architecture"] = dataclasses.asdict(cfg)
        except TemplateMismatchError:
            info["architecture"] = "unknown"
        return info
    if magic == PAYLOAD_MAGIC:
        qp = decode_payload(data, str(path))
        return {
            "file": str(path),
            "format": PAYLOAD_MAGIC.decode("ascii"),
            "records": len(qp.records),
            "elements": qp.num_elements,
            "payload_bits": qp.total_bits,
        }
    raise FormatError(f"unrecognized magic {magic!r}", str(path), 0)


def inspect_files(paths: Sequence[PathLike], reporter: Optional[Reporter] = None) -> List[Dict[str, Any]]:
    reporter = ensure_reporter(reporter)
    infos = []
    for path in paths:
        info = inspect_file(path)
        infos.append(info)
        reporter.log_summary(str(path), {k: v for k, v in info.items() if k != "file"})
    return infos

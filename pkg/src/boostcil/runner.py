"""End-to-end experiment orchestration.

One run walks the session stream once: plain training on session 0, then
per session either boost-and-compress (main method and its ablations) or a
baseline update rule, followed by evaluation over all seen classes and a
rehearsal-memory rebuild. Every random choice derives from the run seed
through a spawned seed tree keyed by (session, stage), so a configuration
reproduces itself bit for bit.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import os

import numpy as np
import torch

from .baselines import apply_weight_align, plain_kd_compress, train_finetune, train_plain, train_replay
from .boosting import train_boosting
from .compression import train_compression
from .config import ExperimentConfig
from .datasets import get_dataset
from .evaluation import RunReport, average_incremental_accuracy, emit_reports, evaluate_session
from .exceptions import ExperimentError
from .loops import EpochLogger, extract_features, predict_logits
from .models import save_checkpoint
from .stream import ExemplarMemory, Protocol, build_class_order, build_stream, update_memory

FOSTER_METHODS = ("foster", "foster_wa_ablation", "foster_no_fe", "foster_plain_kd")


def _stage_seeds(run_seed: int, num_sessions: int) -> list[dict[str, int]]:
    """Independent 32-bit seeds per (session, stage) from one root seed."""
    root = np.random.SeedSequence(run_seed)
    out = []
    for child in root.spawn(num_sessions):
        train, compress, memory = child.spawn(3)
        out.append(
            {
                "train": int(train.generate_state(1)[0]),
                "compress": int(compress.generate_state(1)[0]),
                "memory": int(memory.generate_state(1)[0]),
            }
        )
    return out


def _accuracy(model, session) -> float:
    preds = predict_logits(model, session.test_x).argmax(1).numpy()
    return float((preds == session.test_y).mean())


def _wrap_stage(t: int, stage: str):
    def decorate(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except ExperimentError:
                raise
            except Exception as e:
                raise ExperimentError(str(e), session=t, stage=stage) from e

        return run

    return decorate


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Run one (method, protocol, dataset, seed) experiment end to end.

    Persists results.json, curve.csv, plots, per-epoch logs, and per-session
    checkpoints under ``cfg.out_dir`` when set.
    """
    torch.set_num_threads(1)
    dataset = get_dataset(cfg.dataset)
    arch = dict(cfg.arch)
    arch.setdefault("input_shape", list(dataset.input_shape))
    protocol = Protocol(
        cfg.protocol.base_classes,
        cfg.protocol.classes_per_step,
        cfg.protocol.memory_policy,
        cfg.protocol.memory_budget,
    )
    order = build_class_order(dataset.num_classes, cfg.class_order_seed)
    stream = build_stream(dataset, protocol, order)
    memory = ExemplarMemory(protocol.memory_policy, protocol.memory_budget, cfg.selection)
    seeds = _stage_seeds(cfg.seed, stream.num_sessions)

    log_path = None
    ckpt_dir = None
    if cfg.out_dir is not None:
        os.makedirs(cfg.out_dir, exist_ok=True)
        log_path = os.path.join(cfg.out_dir, "train_log.jsonl")
        if os.path.exists(log_path):
            os.remove(log_path)
        ckpt_dir = os.path.join(cfg.out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)

    def logger(t, stage):
        if log_path is None:
            return None
        return EpochLogger(log_path, session=t, stage=stage, method=cfg.method)

    reports = []
    model = None
    for t in range(stream.num_sessions):
        session = _wrap_stage(t, "stream")(stream.session)(t, memory if t > 0 else None)
        gap = None
        teacher = None
        if t == 0:
            model = _wrap_stage(t, "plain")(train_plain)(
                arch, session, cfg.baseline, seed=seeds[t]["train"], logger=logger(t, "plain")
            )
        elif cfg.method in FOSTER_METHODS:
            boost_cfg = cfg.boosting
            if cfg.method == "foster_no_fe":
                boost_cfg = dataclasses.replace(boost_cfg, enable_fe=False)
            if cfg.method == "foster_wa_ablation":
                boost_cfg = dataclasses.replace(boost_cfg, align_logits=False)
            teacher = _wrap_stage(t, "boosting")(train_boosting)(
                session, model, boost_cfg, seed=seeds[t]["train"], logger=logger(t, "boost")
            )
            if cfg.method == "foster_wa_ablation":
                _wrap_stage(t, "weight_align")(apply_weight_align)(teacher, session.num_old)
            compress = plain_kd_compress if cfg.method == "foster_plain_kd" else train_compression
            student = _wrap_stage(t, "compression")(compress)(
                session,
                teacher,
                cfg.compression,
                seed=seeds[t]["compress"],
                logger=logger(t, "compress"),
            )
            gap = _accuracy(teacher, session) - _accuracy(student, session)
            model = student
        elif cfg.method == "finetune":
            model = _wrap_stage(t, "finetune")(train_finetune)(
                session, model, cfg.baseline, seed=seeds[t]["train"], logger=logger(t, "finetune")
            )
        elif cfg.method == "replay":
            model = _wrap_stage(t, "replay")(train_replay)(
                session, model, cfg.baseline, seed=seeds[t]["train"], logger=logger(t, "replay")
            )
        else:
            raise ExperimentError(f"unknown method {cfg.method!r}", session=t, stage="dispatch")

        reports.append(_wrap_stage(t, "evaluation")(evaluate_session)(model, session, gap))
        # size law: the per-session model stays a single backbone; its total
        # parameter count may grow only by the head's new columns
        non_head = reports[-1].params_total - model.feature_dim * session.num_seen
        if t == 0:
            backbone_params = non_head
        elif non_head != backbone_params:
            raise ExperimentError(
                f"parameter count grew beyond classifier columns: {non_head} != {backbone_params}",
                session=t,
                stage="size_law",
            )

        snapshot = model
        memory = _wrap_stage(t, "memory")(update_memory)(
            memory,
            lambda xs: extract_features(snapshot, xs),
            session.new_x,
            session.new_y,
            session.new_classes,
            session.num_seen,
            rng=np.random.default_rng(seeds[t]["memory"]),
        )

        if ckpt_dir is not None:
            save_checkpoint(
                os.path.join(ckpt_dir, f"session_{t}.pt"),
                model,
                session=t,
                method=cfg.method,
                class_order=list(order.permutation),
            )
            if teacher is not None:
                save_checkpoint(
                    os.path.join(ckpt_dir, f"session_{t}_teacher.pt"),
                    teacher,
                    session=t,
                    method=cfg.method,
                    class_order=list(order.permutation),
                )

    run = RunReport(
        sessions=reports,
        avg_inc_acc=average_incremental_accuracy(reports),
        config=cfg.snapshot(),
        seed=cfg.seed,
    )
    if cfg.out_dir is not None:
        emit_reports(run, cfg.out_dir)
    return run


def _deep_merge(base: dict, overrides: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_suite(name: str, base_cfg: ExperimentConfig) -> list[dict]:
    """Named variant lists for the ablation suites."""
    if name == "components":
        return [
            {"name": m, "overrides": {"method": m}}
            for m in ("foster_wa_ablation", "foster_no_fe", "foster_plain_kd")
        ]
    if name == "beta":
        return [
            {
                "name": f"beta_{b}",
                "overrides": {"boosting": {"beta": b}, "compression": {"beta": b}},
            }
            for b in (0.93, 0.95, 0.97, 0.99, 0.995, 0.999)
        ]
    if name == "exemplars":
        return [
            {
                "name": f"exemplars_{n}",
                "overrides": {"protocol": {"memory_policy": "per_class", "memory_budget": n}},
            }
            for n in (5, 10, 20, 50)
        ]
    raise ValueError(f"unknown suite {name!r}; choose components, beta, or exemplars")


def run_ablation_suite(base_cfg: ExperimentConfig, variants: list[dict]) -> list[dict]:
    """Run the base config plus each variant, paired by seed and stream.

    A failing variant is reported in its row and the suite continues. Rows
    are also written to suite.csv under the base output directory.
    """
    rows = []
    todo = [{"name": "base", "overrides": {}}] + list(variants)
    for variant in todo:
        row = {"variant": variant["name"], "error": ""}
        try:
            merged = _deep_merge(base_cfg.to_dict(), variant.get("overrides", {}))
            cfg = ExperimentConfig.from_dict(merged)
            if base_cfg.out_dir is not None:
                cfg.out_dir = os.path.join(base_cfg.out_dir, variant["name"])
            run = run_experiment(cfg)
            final = run.sessions[-1]
            row.update(
                method=cfg.method,
                seed=cfg.seed,
                beta=cfg.boosting.beta,
                memory_policy=cfg.protocol.memory_policy,
                memory_budget=cfg.protocol.memory_budget,
                avg_inc_acc=f"{run.avg_inc_acc:.6f}",
                final_acc=f"{final.acc:.6f}",
                final_acc_old=("" if final.acc_old is None else f"{final.acc_old:.6f}"),
                final_acc_new=f"{final.acc_new:.6f}",
            )
        except Exception as e:
            row["error"] = str(e)
        rows.append(row)
    if base_cfg.out_dir is not None:
        os.makedirs(base_cfg.out_dir, exist_ok=True)
        fields = [
            "variant",
            "method",
            "seed",
            "beta",
            "memory_policy",
            "memory_budget",
            "avg_inc_acc",
            "final_acc",
            "final_acc_old",
            "final_acc_new",
            "error",
        ]
        with open(os.path.join(base_cfg.out_dir, "suite.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields, restval="")
            writer.writeheader()
            writer.writerows(rows)
    return rows

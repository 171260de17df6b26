"""Config-driven experiment runner.

One JSON document with six sections (dataset, model, attack, defense,
detection, run) describes a run. The document is schema-checked before any
compute, normalized by filling in defaults, and hashed; the hash is stamped
into every artifact so an output can always be traced to the exact config
that produced it.

run_experiment executes one session end to end and writes an artifact
directory; run_sweep varies a single dotted config path across a value list
and writes an aggregate CSV, one row per sub-run.
"""

import copy
import csv
import hashlib
import io
import json
import os
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, AttackObserver
from .datasets import (ImageDataset, SyntheticSpec, filter_categories,
                       gen_synthetic, load_cifar10, subsample)
from .defenses import DefenseConfig, make_defense
from .detection import GsConfig, make_monitor
from .framing import save_tensors
from .metrics import MetricsReport, write_grid_ppm, write_report
from .protocol import SessionConfig, _evaluate, run_training
from .rng import (Rng, STREAM_ATTACK, STREAM_DATA, STREAM_DEFENSE)

GRID_COLS = 8
GRID_MAX_IMAGES = 64


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema

# section -> key -> (default, caster). A caster both validates and normalizes;
# it raises ValueError on junk. Sections marked optional may be null in the
# document, which disables the corresponding feature.

def _bool(v):
    if not isinstance(v, bool):
        raise ValueError("expected a boolean")
    return v


def _int(lo=None, hi=None):
    def cast(v):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValueError("expected an integer")
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        if hi is not None and v > hi:
            raise ValueError(f"must be <= {hi}")
        return v
    return cast


def _real(lo=None):
    def cast(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError("expected a number")
        v = float(v)
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        return v
    return cast


def _choice(*options):
    def cast(v):
        if v not in options:
            raise ValueError(f"expected one of {options}")
        return v
    return cast


def _opt(caster):
    def cast(v):
        return None if v is None else caster(v)
    return cast


def _int_list(v):
    if not isinstance(v, list) or not v:
        raise ValueError("expected a non-empty list of integers")
    return [_int(0)(x) for x in v]


def _str(v):
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v


_SCHEMA = {
    "dataset": {
        "source": ("synthetic", _choice("synthetic", "cifar10")),
        "image_size": (16, _choice(16, 32)),
        "num_classes": (4, _int(2, 4)),
        "private_size": (256, _int(1)),
        "aux_size": (256, _int(0)),
        "eval_size": (128, _int(0)),
        "aux_categories": (None, _opt(_int_list)),
        "aux_subsample": (None, _opt(_int(1))),
        "domain_shift": (False, _bool),
        "cifar_path": (None, _opt(_str)),
    },
    "model": {
        "split_point": (2, _int(1, 4)),
        "base_channels": (8, _int(1)),
        "num_blocks": (4, _int(1)),
        "family": ("vgg", _choice("vgg", "res", "dense")),
    },
    "attack": {  # optional section: null disables the observer entirely
        "disc_weight": (1.0, _real(0.0)),
        "mmd_weight": (1.0, _real(0.0)),
        "disc_steps": (1, _int(0)),
        "sub_steps": (1, _int(0)),
        "disc_weight_clip": (0.1, _opt(_real(0.0))),
        "disc_grad_cap": (0.03, _opt(_real(0.0))),
        "no_disc": (False, _bool),
        "no_mkmmd": (False, _bool),
        "inverse_epochs": (50, _int(1)),
        "batch_size": (32, _int(2)),
        "kernel_count": (5, _int(1)),
        "kernel_refresh": (50, _int(1)),
        "disc_lr": (5e-3, _real(0.0)),
        "sub_lr": (2e-3, _real(0.0)),
        "inv_lr": (2e-3, _real(0.0)),
    },
    "defense": {
        "kind": ("none", _choice("none", "dcor", "dp", "noise")),
        "alpha": (0.0, _real(0.0)),
        "clip": (1.0, _real(0.0)),
        "scale": (0.0, _real(0.0)),
        "sigma": (0.0, _real(0.0)),
    },
    "detection": {  # optional section: null means no monitor
        "warmup": (450, _int(0)),
        "window": (32, _int(2)),
        "tau": (0.05, _real()),
        "lam": (0.5, _real(0.0)),
    },
    "run": {
        "seed": (0, _int(0)),
        "epochs": (2, _int(1)),
        "iterations": (None, _opt(_int(1))),
        "batch_size": (32, _int(1)),
        "precision": ("fp32", _choice("fp32", "fp64")),
        "topology": ("label_share", _choice("label_share", "label_protected")),
        "transport": ("in_process_queue", _choice("in_process_queue", "framed_stream")),
        "lr": (0.05, _real(0.0)),
        "hijack_stub": (False, _bool),
        "seed_policy": ("same", _choice("same", "increment")),
        "output_dir": (None, _opt(_str)),
    },
}

_OPTIONAL_SECTIONS = ("attack", "detection")


def validate_config(raw) -> dict:
    """Check a raw config dict against the schema and fill in defaults.

    Unknown sections or keys are rejected; optional sections may be null.
    Returns a fully populated copy; the input is not modified.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    norm = {}
    for section, keys in _SCHEMA.items():
        given = raw.get(section, {})
        if given is None:
            if section not in _OPTIONAL_SECTIONS:
                raise ConfigError(f"section {section!r} may not be null")
            norm[section] = None
            continue
        if not isinstance(given, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        bad = set(given) - set(keys)
        if bad:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")
        out = {}
        for key, (default, cast) in keys.items():
            value = given.get(key, default)
            try:
                out[key] = cast(value) if value is not default else value
            except ValueError as e:
                raise ConfigError(f"{section}.{key}: {e}") from None
        norm[section] = out
    # cross-field checks
    ds = norm["dataset"]
    if ds["source"] == "cifar10":
        if ds["cifar_path"] is None:
            raise ConfigError("dataset.cifar_path is required for cifar10")
        ds["image_size"] = 32
        ds["num_classes"] = 10
    if norm["attack"] is not None and ds["aux_size"] < 2:
        raise ConfigError("an attack needs dataset.aux_size >= 2")
    return norm


def config_hash(norm: dict) -> str:
    """sha256 of the canonical (sorted, compact) JSON of a normalized config."""
    text = json.dumps(norm, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_config(path) -> dict:
    with open(path) as f:
        return json.load(f)


def preset_path(name) -> str:
    """Filesystem path of a shipped preset config (name without .json)."""
    path = os.path.join(os.path.dirname(__file__), "presets", name + ".json")
    if not os.path.exists(path):
        raise ConfigError(f"no preset named {name!r} (see sll/presets/)")
    return path


def list_presets():
    pdir = os.path.join(os.path.dirname(__file__), "presets")
    return sorted(p[:-5] for p in os.listdir(pdir) if p.endswith(".json"))


# ---------------------------------------------------------------------------
# dataset assembly

def _take(ds: ImageDataset, lo, hi) -> ImageDataset:
    return ImageDataset(ds.images[lo:hi], ds.labels[lo:hi],
                        ds.class_names, ds.provenance)


def _build_datasets(ds_cfg, want_aux, rng: Rng):
    """Returns (private, aux-or-None, eval-or-None)."""
    data_rng = rng.spawn(STREAM_DATA)
    n_priv, n_aux, n_eval = (ds_cfg["private_size"], ds_cfg["aux_size"],
                             ds_cfg["eval_size"])
    if ds_cfg["source"] == "synthetic":
        spec = SyntheticSpec(image_size=ds_cfg["image_size"],
                             num_classes=ds_cfg["num_classes"])
        priv = gen_synthetic(spec, n_priv, data_rng)
        eval_ds = gen_synthetic(spec, n_eval, data_rng) if n_eval else None
        aux = None
        if want_aux:
            aux_spec = spec.shifted() if ds_cfg["domain_shift"] else spec
            aux = gen_synthetic(aux_spec, n_aux, data_rng)
    else:
        whole = load_cifar10(ds_cfg["cifar_path"])
        if n_priv + n_aux + n_eval > len(whole):
            raise ConfigError("cifar file too small for the requested splits")
        priv = _take(whole, 0, n_priv)
        aux = _take(whole, n_priv, n_priv + n_aux) if want_aux else None
        eval_ds = (_take(whole, n_priv + n_aux, n_priv + n_aux + n_eval)
                   if n_eval else None)
    if aux is not None:
        if ds_cfg["aux_categories"] is not None:
            aux = filter_categories(aux, ds_cfg["aux_categories"])
        if ds_cfg["aux_subsample"] is not None:
            aux = subsample(aux, min(ds_cfg["aux_subsample"], len(aux)), data_rng)
    return priv, aux, eval_ds


# ---------------------------------------------------------------------------
# single run

@dataclass
class ExperimentResult:
    status: str           # completed | detector-aborted | error
    exit_code: int        # 0 | 2 | 3
    output_dir: str
    config_hash: str
    report: object = None       # MetricsReport or None
    session: object = None      # SessionResult or None
    error: str = None


_EXIT = {"completed": 0, "detector-aborted": 2, "error": 3}


def _session_config(norm):
    run, model, ds = norm["run"], norm["model"], norm["dataset"]
    dtype = np.float64 if run["precision"] == "fp64" else np.float32
    opt = {"kind": "sgd-momentum", "lr": run["lr"]}
    return SessionConfig(
        topology=run["topology"], split_point=model["split_point"],
        batch_size=run["batch_size"], epochs=run["epochs"],
        iterations=run["iterations"], image_size=ds["image_size"],
        base_channels=model["base_channels"], num_blocks=model["num_blocks"],
        num_classes=ds["num_classes"], dtype=dtype,
        client_optimizer=dict(opt), server_optimizer=dict(opt),
        transport=run["transport"], hijack_stub=run["hijack_stub"])


def _attack_config(norm):
    a = norm["attack"]
    return AttackConfig(
        family=norm["model"]["family"], kernel_count=a["kernel_count"],
        disc_weight=a["disc_weight"], mmd_weight=a["mmd_weight"],
        disc_steps=a["disc_steps"], sub_steps=a["sub_steps"],
        disc_weight_clip=a["disc_weight_clip"], disc_grad_cap=a["disc_grad_cap"],
        no_disc=a["no_disc"], no_mkmmd=a["no_mkmmd"],
        inverse_epochs=a["inverse_epochs"], batch_size=a["batch_size"],
        disc_optimizer={"kind": "adam", "lr": a["disc_lr"]},
        sub_optimizer={"kind": "adam", "lr": a["sub_lr"]},
        inv_optimizer={"kind": "adam", "lr": a["inv_lr"]},
        kernel_refresh=a["kernel_refresh"])


def _substitute_features(sub, images, dtype, batch=64):
    outs = []
    for i in range(0, len(images), batch):
        outs.append(sub.forward(images[i:i + batch].astype(dtype), train=False))
    return np.concatenate(outs, axis=0)


def _write_status(out_dir, payload):
    with open(os.path.join(out_dir, "status.json"), "w") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_transcript(out_dir, header, transcript):
    lines = [json.dumps(header, sort_keys=True) + "\n"]
    if transcript is not None:
        lines.append(transcript.to_jsonl())
        if transcript.wire_digests is not None:
            footer = {"kind": "wire-digests", "digests": transcript.wire_digests}
            lines.append(json.dumps(footer, sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "transcript.jsonl"), "w") as f:
        f.write("".join(lines))


def run_experiment(cfg, output_dir=None, seed_override=None) -> ExperimentResult:
    """Execute one configured session and write its artifact directory.

    Invalid configs raise ConfigError before anything is written. Runtime
    failures after validation leave partial outputs behind, flagged by a
    status.json with status "error".
    """
    norm = validate_config(cfg)
    if seed_override is not None:
        norm["run"]["seed"] = _int(0)(seed_override)
    out_dir = output_dir or norm["run"]["output_dir"]
    if out_dir is None:
        raise ConfigError("no output directory (run.output_dir or argument)")
    out_dir = str(out_dir)
    h = config_hash(norm)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        doc = dict(norm, config_hash=h)
        f.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    try:
        return _run_validated(norm, out_dir, h)
    except Exception as e:  # noqa: BLE001 - flag and report, do not crash sweeps
        _write_status(out_dir, {"status": "error", "config_hash": h,
                                "seed": norm["run"]["seed"],
                                "error": f"{type(e).__name__}: {e}"})
        return ExperimentResult(status="error", exit_code=3, output_dir=out_dir,
                                config_hash=h,
                                error="".join(traceback.format_exception(e)))


def _run_validated(norm, out_dir, h) -> ExperimentResult:
    run_cfg = norm["run"]
    seed = run_cfg["seed"]
    rng = Rng(seed)
    want_attack = norm["attack"] is not None
    priv, aux, eval_ds = _build_datasets(norm["dataset"], want_attack, rng)

    scfg = _session_config(norm)
    scfg.client_defense = make_defense(
        DefenseConfig(**norm["defense"]), rng.spawn(STREAM_DEFENSE))
    if norm["detection"] is not None:
        scfg.client_monitor = make_monitor(GsConfig(**norm["detection"]))
    observer = None
    if want_attack:
        observer = AttackObserver(_attack_config(norm), aux,
                                  norm["model"]["split_point"],
                                  norm["dataset"]["image_size"],
                                  norm["model"]["base_channels"],
                                  rng.spawn(STREAM_ATTACK), dtype=scfg.dtype)
        scfg.server_observer = observer

    session = run_training(scfg, priv, rng, eval_ds=eval_ds)
    status = session.status
    header = {"kind": "header", "config_hash": h, "seed": seed,
              "status": status}
    _write_transcript(out_dir, header, session.transcript)

    metadata = {"config_hash": h, "seed": seed, "status": status}
    if eval_ds is not None and status == "completed":
        loss, acc = _evaluate(session.full_net, eval_ds.images, eval_ds.labels,
                              scfg.dtype)
        metadata["eval_loss"] = loss
        metadata["eval_accuracy"] = acc

    if status != "completed":
        report = MetricsReport(per_image=[], aggregates={
            "abort_iteration": session.abort_iteration}, metadata=metadata)
        write_report(report, out_dir)
        _write_status(out_dir, {"status": status, "config_hash": h,
                                "seed": seed,
                                "abort_iteration": session.abort_iteration})
        return ExperimentResult(status=status, exit_code=_EXIT[status],
                                output_dir=out_dir, config_hash=h,
                                report=report, session=session)

    if want_attack:
        observer.finish_observation()
        observer.fit_inverse()
        recon = observer.reconstruct(session.snapshot)
        pairs = session.snapshot.evaluation_pairs()
        truth = np.concatenate([p[1] for p in pairs], axis=0)
        z_tgt = np.concatenate([p[0] for p in pairs], axis=0)
        z_sub = _substitute_features(observer.sub, truth, scfg.dtype)
        report = MetricsReport.from_batches(recon, truth, z_sub, z_tgt,
                                            metadata=metadata)
        n_show = min(GRID_MAX_IMAGES, len(truth))
        tag = f"cfg {h}"
        write_grid_ppm(truth[:n_show], GRID_COLS,
                       os.path.join(out_dir, "truth.ppm"), comment=tag)
        write_grid_ppm(recon[:n_show], GRID_COLS,
                       os.path.join(out_dir, "recon.ppm"), comment=tag)
        ckpt = {"inverse/" + k: v for k, v in observer.inv.state_dict().items()}
        ckpt.update(("substitute/" + k, v)
                    for k, v in observer.sub.state_dict().items())
        save_tensors(os.path.join(out_dir, "attack.slla"), ckpt)
    else:
        report = MetricsReport(per_image=[], aggregates={}, metadata=metadata)

    write_report(report, out_dir)
    save_tensors(os.path.join(out_dir, "model.slla"),
                 session.full_net.state_dict())
    _write_status(out_dir, {"status": status, "config_hash": h, "seed": seed})
    return ExperimentResult(status=status, exit_code=0, output_dir=out_dir,
                            config_hash=h, report=report, session=session)


# ---------------------------------------------------------------------------
# sweeps

def _set_path(norm, axis, value):
    parts = axis.split(".")
    if len(parts) != 2:
        raise ConfigError(f"axis must be 'section.key', got {axis!r}")
    section, key = parts
    if section not in _SCHEMA or key not in _SCHEMA[section]:
        raise ConfigError(f"axis {axis!r} is not a config path")
    if norm[section] is None:
        raise ConfigError(f"axis {axis!r} targets a disabled section")
    norm[section][key] = value
    return norm


_SWEEP_COLUMNS = ("index", "value", "status", "mean_psnr", "mean_ssim",
                  "mean_mse", "feature_cosine", "feature_mse",
                  "eval_accuracy", "error")


def run_sweep(cfg, axis, values, output_dir=None, threads=1):
    """Run one experiment per axis value and write an aggregate sweep.csv.

    Sub-run failures are recorded as error rows; the sweep keeps going.
    Returns the row dicts in value order.
    """
    norm = validate_config(cfg)
    if not values:
        raise ConfigError("empty sweep value list")
    out_root = output_dir or norm["run"]["output_dir"]
    if out_root is None:
        raise ConfigError("no output directory (run.output_dir or argument)")
    out_root = str(out_root)
    _set_path(copy.deepcopy(norm), axis, values[0])  # fail fast on a bad axis
    os.makedirs(out_root, exist_ok=True)

    def one(i, value):
        sub = _set_path(copy.deepcopy(norm), axis, value)
        if sub["run"]["seed_policy"] == "increment":
            sub["run"]["seed"] = sub["run"]["seed"] + i
        sub["run"]["output_dir"] = None
        sub_dir = os.path.join(out_root, f"{i:02d}_{axis.split('.')[1]}={value}")
        try:
            validate_config(sub)  # the axis value must still typecheck
            res = run_experiment(sub, output_dir=sub_dir)
        except ConfigError as e:
            return {"index": i, "value": value, "status": "error",
                    "error": str(e)}
        row = {"index": i, "value": value, "status": res.status}
        if res.error:
            row["error"] = res.error.strip().splitlines()[-1]
        if res.report is not None:
            for k in ("mean_psnr", "mean_ssim", "mean_mse",
                      "feature_cosine", "feature_mse"):
                if k in res.report.aggregates:
                    row[k] = res.report.aggregates[k]
            if "eval_accuracy" in res.report.metadata:
                row["eval_accuracy"] = res.report.metadata["eval_accuracy"]
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda iv: one(*iv), enumerate(values)))
    else:
        rows = [one(i, v) for i, v in enumerate(values)]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in _SWEEP_COLUMNS])
    with open(os.path.join(out_root, "sweep.csv"), "w", newline="") as f:
        f.write(buf.getvalue())
    with open(os.path.join(out_root, "sweep.json"), "w") as f:
        doc = {"axis": axis, "config_hash": config_hash(norm), "rows": rows}
        f.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return rows


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v

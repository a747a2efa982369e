"""Command-line entry point: search, retrain, baselines, theory checks,
benchmarks, and ablation sweeps.

Every run writes a manifest.json next to its result files recording the
fully resolved configuration, the seed, dataset checksums, and output
checksums. Timestamps live only in the manifest, so rerunning a command
with the same inputs reproduces every other file byte for byte (the
trace's per-epoch ms column and the results' wall-clock seconds are
measurements, not derived values, and vary like the timestamps do).

Config precedence: command-line flags > config file > per-dataset
defaults > built-in defaults.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .evaluation import (
    RetrainConfig,
    dataset_defaults,
    dataset_family,
    random_search_baseline,
    retrain,
    timing_report,
    write_timing_csv,
    write_timing_json,
)
from .exceptions import NacError, ConfigError
from .graph import DATASET_FILES, Graph, Split, load_graph, row_normalize_features, synth_graph
from .operators import (
    OPERATOR_NAMES,
    OperatorKind,
    apply_operator,
    init_operator_params,
    init_weight,
    prepare_propagation,
)
from .search import MODES, SearchConfig, search
from .supernet import ArchitectureSelection, SearchSpaceConfig
from .tensor import Tape, Tensor
from . import tensor as tt
from .theory import (
    dictionary_form_check,
    mutual_coherence,
    random_linear_instance,
    spectrum,
    verify_output_equivalence,
)

INIT_SCHEMES = ("orthogonal", "kaiming_normal", "kaiming_uniform")
CITATION_FAMILIES = ("cora", "citeseer", "pubmed")
VERIFY_CHECKS = ("theorem1", "coherence", "spectrum", "dictionary-form", "gradients")

# every key a config file may set; mirrors the long flag names
_CONFIG_KEYS = frozenset(
    {
        "mode",
        "epochs",
        "rho",
        "init",
        "hidden",
        "layers",
        "ops",
        "seed",
        "seeds",
        "lr",
        "weight_decay",
        "dropout",
        "budget",
        "modes",
        "check",
        "row_normalize_features",
        "track_val_curve",
    }
)


# ---------------------------------------------------------------- helpers


def _norm_token(s: str) -> str:
    """CLI spellings are hyphenated; internal names use underscores."""
    return s.strip().replace("-", "_")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_config_file(path: str) -> dict:
    """key = value lines; '#' starts a comment; values parse as JSON
    literals where possible and stay strings otherwise."""
    cfg: dict = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            key = _norm_token(key)
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                cfg[key] = json.loads(value)
            except json.JSONDecodeError:
                cfg[key] = value
    return cfg


def _resolve(cli_value, file_cfg: dict, key: str, *fallbacks):
    """First known value wins: CLI, then config file, then fallbacks."""
    if cli_value is not None:
        return cli_value
    if key in file_cfg:
        return file_cfg[key]
    for fb in fallbacks:
        if fb is not None:
            return fb
    return None


def _parse_ops(spec) -> tuple:
    if spec is None or spec == "all":
        return OPERATOR_NAMES
    if isinstance(spec, (list, tuple)):
        names = [str(s) for s in spec]
    else:
        names = [s for s in str(spec).split(",") if s]
    names = [_norm_token(n) for n in names]
    for n in names:
        if n not in OPERATOR_NAMES:
            raise ConfigError(f"unknown operator {n!r}; choose from {', '.join(OPERATOR_NAMES)}")
    return tuple(names)


def _load_data(data_dir: str, row_norm_choice, file_cfg: dict) -> tuple:
    """Load a dataset directory and apply the resolved feature policy.

    row_norm_choice is the CLI flag ('auto'/'true'/'false' or None);
    'auto' normalizes citation-family datasets and leaves the rest alone.
    Returns (graph, split, normalized: bool).
    """
    graph, split = load_graph(data_dir)
    choice = _resolve(row_norm_choice, file_cfg, "row_normalize_features", "auto")
    choice = str(choice).lower()
    if choice in ("true", "1"):
        normalize = True
    elif choice in ("false", "0"):
        normalize = False
    elif choice == "auto":
        normalize = dataset_family(graph.name) in CITATION_FAMILIES
    else:
        raise ConfigError(f"row_normalize_features must be auto/true/false, got {choice!r}")
    if normalize:
        graph = row_normalize_features(graph)
    return graph, split, normalize


def _dataset_entry(data_dir: str) -> dict:
    checksums = {}
    for fname in DATASET_FILES:
        fpath = os.path.join(data_dir, fname)
        if os.path.exists(fpath):
            checksums[fname] = _sha256_file(fpath)
    return {"path": os.path.abspath(data_dir), "checksums": checksums}


def write_manifest(
    out_dir: str,
    command: str,
    config: dict,
    seed,
    mode,
    dataset: dict | None,
    started_at: str,
    output_files: list,
) -> str:
    """One manifest per output directory; written last so it can carry
    checksums of every result file it describes."""
    outputs = {}
    for fname in sorted(output_files):
        fpath = os.path.join(out_dir, fname)
        if os.path.exists(fpath):
            outputs[fname] = _sha256_file(fpath)
    payload = {
        "artifact_version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "mode": mode,
        "dataset": dataset,
        "outputs": outputs,
        "started_at": started_at,
        "finished_at": _utc_now(),
    }
    path = os.path.join(out_dir, "manifest.json")
    _write_json(path, payload)
    return path


# ---------------------------------------------------------------- search


def _search_config_from_args(args, file_cfg: dict) -> SearchConfig:
    mode = _norm_token(str(_resolve(args.mode, file_cfg, "mode", "nac")))
    init = _norm_token(str(_resolve(args.init, file_cfg, "init", "orthogonal")))
    if init not in INIT_SCHEMES:
        raise ConfigError(f"init must be one of {INIT_SCHEMES}, got {init!r}")
    return SearchConfig(
        mode=mode,
        epochs=int(_resolve(args.epochs, file_cfg, "epochs", 100)),
        rho=float(_resolve(args.rho, file_cfg, "rho", 1e-3)),
        seed=int(_resolve(args.seed, file_cfg, "seed", 0)),
        track_val_curve=bool(
            _resolve(getattr(args, "track_val_curve", None) or None, file_cfg, "track_val_curve", False)
        ),
        space=SearchSpaceConfig(
            num_layers=int(_resolve(args.layers, file_cfg, "layers", 3)),
            hidden_dim=int(_resolve(args.hidden, file_cfg, "hidden", 64)),
            operators=_parse_ops(_resolve(args.ops, file_cfg, "ops", "all")),
            init_scheme=init,
        ),
    )


def _search_config_dict(cfg: SearchConfig, normalized: bool) -> dict:
    return {
        "mode": cfg.mode,
        "epochs": cfg.epochs,
        "rho": cfg.rho,
        "arch_lr": cfg.arch_lr,
        "arch_weight_decay": cfg.arch_weight_decay,
        "weight_lr": cfg.weight_lr,
        "weight_decay": cfg.weight_decay,
        "hidden": cfg.space.hidden_dim,
        "layers": cfg.space.num_layers,
        "ops": list(cfg.space.operators),
        "init": cfg.space.init_scheme,
        "seed": cfg.seed,
        "row_normalize_features": normalized,
    }


def cmd_search(args) -> int:
    started = _utc_now()
    file_cfg = read_config_file(args.config) if args.config else {}
    graph, split, normalized = _load_data(args.data, args.row_normalize_features, file_cfg)
    cfg = _search_config_from_args(args, file_cfg)
    selection, trace, _net = search(cfg, graph, split)

    os.makedirs(args.out, exist_ok=True)
    arch_payload = selection.to_json_dict()
    arch_payload["manifest"] = "manifest.json"
    _write_json(os.path.join(args.out, "arch.json"), arch_payload)
    trace.write_csv(os.path.join(args.out, "trace.csv"))
    trace.write_alpha_json(os.path.join(args.out, "alpha.json"), manifest="manifest.json")
    write_manifest(
        args.out,
        "search",
        _search_config_dict(cfg, normalized),
        cfg.seed,
        cfg.mode,
        _dataset_entry(args.data),
        started,
        ["arch.json", "trace.csv", "alpha.json"],
    )
    print(f"selected: {' '.join(selection.operator_names)}")
    print(f"final objective: {trace.objective[-1]:.6f} after {len(trace.epochs)} epochs")
    return 0


# --------------------------------------------------------------- retrain


def _retrain_config_from_args(args, file_cfg: dict, dataset_name: str) -> RetrainConfig:
    dd = dataset_defaults(dataset_name)
    return RetrainConfig(
        epochs=int(_resolve(args.epochs, file_cfg, "epochs", 400)),
        lr=float(_resolve(args.lr, file_cfg, "lr", dd.get("lr"), 0.01)),
        weight_decay=float(
            _resolve(args.weight_decay, file_cfg, "weight_decay", dd.get("weight_decay"), 5e-4)
        ),
        hidden_dim=int(_resolve(args.hidden, file_cfg, "hidden", dd.get("hidden_dim"), 64)),
        dropout=float(_resolve(args.dropout, file_cfg, "dropout", dd.get("dropout"), 0.5)),
    )


def _architecture_from_args(args) -> ArchitectureSelection:
    if args.arch:
        with open(args.arch) as f:
            return ArchitectureSelection.from_json_dict(json.load(f))
    names = _parse_ops(args.ops)
    return ArchitectureSelection(list(names), [-1] * len(names), np.zeros((len(names), 1)))


def _retrain_config_dict(cfg: RetrainConfig, normalized: bool, extra: dict) -> dict:
    d = {
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "weight_decay": cfg.weight_decay,
        "hidden": cfg.hidden_dim,
        "dropout": cfg.dropout,
        "init": cfg.init_scheme,
        "row_normalize_features": normalized,
    }
    d.update(extra)
    return d


def cmd_retrain(args) -> int:
    started = _utc_now()
    file_cfg = read_config_file(args.config) if args.config else {}
    graph, split, normalized = _load_data(args.data, args.row_normalize_features, file_cfg)
    arch = _architecture_from_args(args)
    cfg = _retrain_config_from_args(args, file_cfg, graph.name)
    base_seed = int(_resolve(args.seed, file_cfg, "seed", 0))
    num_seeds = int(_resolve(args.seeds, file_cfg, "seeds", 4))
    if num_seeds < 1:
        raise ConfigError(f"seeds must be >= 1, got {num_seeds}")

    seeds = list(range(base_seed, base_seed + num_seeds))
    t0 = time.perf_counter()
    accs = [retrain(arch, graph, split, cfg, seed=s).accuracy for s in seeds]
    elapsed = time.perf_counter() - t0

    os.makedirs(args.out, exist_ok=True)
    results = {
        "arch": list(arch.operator_names),
        "seeds": seeds,
        "test_acc_mean": float(np.mean(accs)),
        "test_acc_std": float(np.std(accs)),
        "test_acc_max": float(np.max(accs)),
        "test_acc_per_seed": [float(a) for a in accs],
        "time_s": round(elapsed, 3),
        "manifest": "manifest.json",
    }
    _write_json(os.path.join(args.out, "results.json"), results)
    write_manifest(
        args.out,
        "retrain",
        _retrain_config_dict(cfg, normalized, {"seeds": seeds, "arch": list(arch.operator_names)}),
        base_seed,
        None,
        _dataset_entry(args.data),
        started,
        ["results.json"],
    )
    print(
        f"arch {' '.join(arch.operator_names)}: "
        f"test acc {results['test_acc_mean']:.4f} +- {results['test_acc_std']:.4f} "
        f"over {num_seeds} seeds"
    )
    return 0


# -------------------------------------------------------------- baseline


def cmd_baseline(args) -> int:
    started = _utc_now()
    file_cfg = read_config_file(args.config) if args.config else {}
    graph, split, normalized = _load_data(args.data, args.row_normalize_features, file_cfg)
    cfg = _retrain_config_from_args(args, file_cfg, graph.name)
    seed = int(_resolve(args.seed, file_cfg, "seed", 0))
    budget = int(_resolve(args.budget, file_cfg, "budget", 5))
    layers = int(_resolve(args.layers, file_cfg, "layers", 3))
    ops = _parse_ops(_resolve(args.ops, file_cfg, "ops", "all"))

    t0 = time.perf_counter()
    result = random_search_baseline(
        graph, split, budget, cfg, seed=seed, operators=ops, num_layers=layers
    )
    elapsed = time.perf_counter() - t0

    os.makedirs(args.out, exist_ok=True)
    results = {
        "arch": list(result.best_arch.operator_names),
        "seeds": [seed],
        "test_acc_mean": result.best_metrics.accuracy,
        "test_acc_std": 0.0,
        "time_s": round(elapsed, 3),
        "budget": budget,
        "val_accuracy": result.best_metrics.val_accuracy,
        "trials": result.trials,
        "manifest": "manifest.json",
    }
    _write_json(os.path.join(args.out, "results.json"), results)
    write_manifest(
        args.out,
        "baseline",
        _retrain_config_dict(
            cfg, normalized, {"budget": budget, "layers": layers, "ops": list(ops)}
        ),
        seed,
        None,
        _dataset_entry(args.data),
        started,
        ["results.json"],
    )
    print(
        f"random search budget {budget}: best {' '.join(result.best_arch.operator_names)} "
        f"test acc {result.best_metrics.accuracy:.4f}"
    )
    return 0


# ---------------------------------------------------------------- verify


def _check_theorem1(rng: np.random.Generator) -> dict:
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(8, 33))
        d = int(rng.integers(2, 11))
        depth = int(rng.integers(1, 5))
        inst = random_linear_instance(rng, n, d, depth)
        init_ws = [rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(depth)]
        report = verify_output_equivalence(inst, init_ws, tol=1e-6)
        worst = max(worst, report["discrepancy"])
    return {
        "check": "theorem1",
        "status": "pass" if worst <= 1e-6 else "fail",
        "value": worst,
        "tolerance": 1e-6,
    }


def _check_coherence(rng: np.random.Generator) -> tuple[dict, list]:
    gauss = mutual_coherence(rng.standard_normal((4096, 32)))
    ortho = mutual_coherence(np.eye(64)[:, :16])
    ok = gauss.phi < 0.08 and ortho.phi == 0.0
    samples = [("coherence", "histogram", i, float(c)) for i, c in enumerate(gauss.histogram)]
    return (
        {
            "check": "coherence",
            "status": "pass" if ok else "fail",
            "value": gauss.phi,
            "tolerance": 0.08,
        },
        samples,
    )


def _check_spectrum(rng: np.random.Generator) -> tuple[dict, list]:
    dim, depth = 64, 3
    orth = [init_weight("orthogonal", rng, dim, dim) for _ in range(depth)]
    kaim = [init_weight("kaiming_normal", rng, dim, dim) for _ in range(depth)]
    s_orth = spectrum(orth, label="orthogonal")
    s_kaim = spectrum(kaim, label="kaiming_normal")
    bound = 1.0 + 1e-5
    ok = s_orth.condition_number <= bound < s_kaim.condition_number
    samples = [
        (r.label, "singular_value", i, float(v))
        for r in (s_orth, s_kaim)
        for i, v in enumerate(r.singular_values)
    ]
    return (
        {
            "check": "spectrum",
            "status": "pass" if ok else "fail",
            "value": {
                "orthogonal": s_orth.condition_number,
                "kaiming_normal": s_kaim.condition_number,
            },
            "tolerance": bound,
        },
        samples,
    )


def _check_dictionary_form(rng: np.random.Generator) -> dict:
    worst = 0.0
    for _ in range(5):
        g, _ = synth_graph(
            "sbm",
            {"nodes": 12, "blocks": 2, "p_in": 0.5, "p_out": 0.2},
            seed=int(rng.integers(2**31)),
        )
        report = dictionary_form_check(g, kind="gcn", depth=2, seed=int(rng.integers(2**31)))
        if report.status != "pass":
            return {
                "check": "dictionary-form",
                "status": "fail",
                "value": report.residual,
                "tolerance": 1e-10,
            }
        worst = max(worst, report.residual)
    return {
        "check": "dictionary-form",
        "status": "pass",
        "value": worst,
        "tolerance": 1e-10,
    }


def _check_gradients(rng: np.random.Generator) -> dict:
    """Finite-difference check of every operator's input gradient on a
    small fixed graph."""
    graph, _ = synth_graph(
        "sbm", {"nodes": 8, "blocks": 2, "p_in": 0.6, "p_out": 0.2, "name": "gradcheck"}, seed=5
    )
    prop = prepare_propagation(graph)
    hidden = 5
    h0 = rng.standard_normal((graph.num_nodes, hidden))
    weights = rng.standard_normal((graph.num_nodes, hidden))

    def loss_value(params, h_arr: np.ndarray) -> float:
        out = apply_operator(params, prop, Tensor(h_arr))
        return float((out.data * weights).sum())

    worst = 0.0
    for name in OPERATOR_NAMES:
        params = init_operator_params(OperatorKind(name), hidden, "orthogonal", rng)
        h = Tensor(h0.copy(), requires_grad=True)
        with Tape() as tape:
            out = apply_operator(params, prop, h)
            loss = tt.ssum(tt.mul(out, Tensor(weights)))
        analytic = tape.backward(loss)[h]
        fd = np.zeros_like(h0)
        eps = 1e-6
        it = np.nditer(h0, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            plus = h0.copy()
            plus[idx] += eps
            minus = h0.copy()
            minus[idx] -= eps
            fd[idx] = (loss_value(params, plus) - loss_value(params, minus)) / (2 * eps)
            it.iternext()
        rel = float(np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12))
        worst = max(worst, rel)
    return {
        "check": "gradients",
        "status": "pass" if worst <= 1e-5 else "fail",
        "value": worst,
        "tolerance": 1e-5,
    }


def cmd_verify(args) -> int:
    started = _utc_now()
    file_cfg = read_config_file(args.config) if args.config else {}
    spec = _resolve(args.check, file_cfg, "check", ",".join(VERIFY_CHECKS))
    names = [s.strip() for s in str(spec).split(",") if s.strip()]
    for n in names:
        if n not in VERIFY_CHECKS:
            raise ConfigError(f"unknown check {n!r}; choose from {', '.join(VERIFY_CHECKS)}")
    seed = int(_resolve(args.seed, file_cfg, "seed", 0))

    verdicts: list = []
    samples: list = []
    for name in names:
        rng = np.random.default_rng([seed, VERIFY_CHECKS.index(name)])
        if name == "theorem1":
            verdicts.append(_check_theorem1(rng))
        elif name == "coherence":
            verdict, rows = _check_coherence(rng)
            verdicts.append(verdict)
            samples.extend(rows)
        elif name == "spectrum":
            verdict, rows = _check_spectrum(rng)
            verdicts.append(verdict)
            samples.extend(rows)
        elif name == "dictionary-form":
            verdicts.append(_check_dictionary_form(rng))
        elif name == "gradients":
            verdicts.append(_check_gradients(rng))

    for v in verdicts:
        print(json.dumps(v, sort_keys=True))

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(
            os.path.join(args.out, "verify.json"),
            {"verdicts": verdicts, "manifest": "manifest.json"},
        )
        import csv as _csv

        with open(os.path.join(args.out, "samples.csv"), "w", newline="") as f:
            w = _csv.writer(f)
            w.writerow(["label", "kind", "index", "value"])
            for row in samples:
                w.writerow([row[0], row[1], row[2], repr(row[3])])
        write_manifest(
            args.out,
            "verify",
            {"check": names, "seed": seed},
            seed,
            None,
            None,
            started,
            ["verify.json", "samples.csv"],
        )
    return 0 if all(v["status"] == "pass" for v in verdicts) else 1


# ------------------------------------------------------------------ bench


def cmd_bench(args) -> int:
    started = _utc_now()
    file_cfg = read_config_file(args.config) if args.config else {}
    graph, split, normalized = _load_data(args.data, args.row_normalize_features, file_cfg)
    modes_spec = _resolve(args.modes, file_cfg, "modes", "nac,nac-updating")
    modes = [_norm_token(m) for m in str(modes_spec).split(",") if m]
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}; choose from {', '.join(MODES)}")
    epochs = int(_resolve(args.epochs, file_cfg, "epochs", 100))
    seed = int(_resolve(args.seed, file_cfg, "seed", 0))
    space = SearchSpaceConfig(
        num_layers=int(_resolve(args.layers, file_cfg, "layers", 3)),
        hidden_dim=int(_resolve(args.hidden, file_cfg, "hidden", 64)),
        operators=_parse_ops(_resolve(args.ops, file_cfg, "ops", "all")),
    )

    traces = []
    for mode in modes:
        cfg = SearchConfig(mode=mode, epochs=epochs, seed=seed, space=space)
        _sel, trace, _net = search(cfg, graph, split)
        traces.append(trace)
    rows = timing_report(traces)

    os.makedirs(args.out, exist_ok=True)
    write_timing_csv(rows, os.path.join(args.out, "bench.csv"))
    write_timing_json(traces, rows, os.path.join(args.out, "bench.json"), manifest="manifest.json")
    write_manifest(
        args.out,
        "bench",
        {
            "modes": modes,
            "epochs": epochs,
            "hidden": space.hidden_dim,
            "layers": space.num_layers,
            "ops": list(space.operators),
            "row_normalize_features": normalized,
        },
        seed,
        ",".join(modes),
        _dataset_entry(args.data),
        started,
        ["bench.csv", "bench.json"],
    )
    for r in rows:
        print(
            f"{r['mode']}: {r['epochs']} epochs, {r['updated_params']} updated params, "
            f"total {r['total_s']:.3f}s"
        )
    return 0


# ------------------------------------------------------------------ sweep


def _sweep_cell(graph: Graph, split: Split, base_cfg: dict, rho: float, seed: int) -> dict:
    cfg = SearchConfig(
        mode=base_cfg["mode"],
        epochs=base_cfg["epochs"],
        rho=rho,
        seed=seed,
        space=SearchSpaceConfig(
            num_layers=base_cfg["layers"],
            hidden_dim=base_cfg["hidden"],
            operators=base_cfg["ops"],
            init_scheme=base_cfg["init"],
        ),
    )
    selection, trace, _net = search(cfg, graph, split)
    final_alpha = trace.alphas[-1]
    return {
        "rho": rho,
        "seed": seed,
        "mode": cfg.mode,
        "epochs": cfg.epochs,
        "final_loss": trace.objective[-1],
        "final_ce": trace.ce[-1],
        "final_l1": trace.l1[-1],
        "near_zero_count": int((np.abs(final_alpha) < 1e-3).sum()),
        "layers": "|".join(selection.operator_names),
    }


def cmd_sweep(args) -> int:
    started = _utc_now()
    file_cfg = read_config_file(args.config) if args.config else {}
    graph, split, normalized = _load_data(args.data, args.row_normalize_features, file_cfg)
    rho_spec = _resolve(args.rho, file_cfg, "rho", "0.001,0.1,1,10")
    rhos = [float(r) for r in str(rho_spec).split(",") if r]
    num_seeds = int(_resolve(args.seeds, file_cfg, "seeds", 4))
    base_seed = int(_resolve(args.seed, file_cfg, "seed", 0))
    if num_seeds < 1:
        raise ConfigError(f"seeds must be >= 1, got {num_seeds}")
    init = _norm_token(str(_resolve(args.init, file_cfg, "init", "orthogonal")))
    base_cfg = {
        "mode": _norm_token(str(_resolve(args.mode, file_cfg, "mode", "nac"))),
        "epochs": int(_resolve(args.epochs, file_cfg, "epochs", 100)),
        "layers": int(_resolve(args.layers, file_cfg, "layers", 3)),
        "hidden": int(_resolve(args.hidden, file_cfg, "hidden", 64)),
        "ops": _parse_ops(_resolve(args.ops, file_cfg, "ops", "all")),
        "init": init,
    }

    cells = [(rho, seed) for rho in rhos for seed in range(base_seed, base_seed + num_seeds)]
    threads = int(os.environ.get("NAC_THREADS", "1"))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda c: _sweep_cell(graph, split, base_cfg, *c), cells))
    else:
        rows = [_sweep_cell(graph, split, base_cfg, rho, seed) for rho, seed in cells]
    rows.sort(key=lambda r: (r["rho"], r["seed"]))

    os.makedirs(args.out, exist_ok=True)
    import csv as _csv

    fieldnames = [
        "rho",
        "seed",
        "mode",
        "epochs",
        "final_loss",
        "final_ce",
        "final_l1",
        "near_zero_count",
        "layers",
    ]
    with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as f:
        w = _csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            out = dict(r)
            for key in ("rho", "final_loss", "final_ce", "final_l1"):
                out[key] = repr(float(out[key]))
            w.writerow(out)
    write_manifest(
        args.out,
        "sweep",
        {**{k: (list(v) if isinstance(v, tuple) else v) for k, v in base_cfg.items()},
         "rho": rhos,
         "seeds": num_seeds,
         "row_normalize_features": normalized},
        base_seed,
        base_cfg["mode"],
        _dataset_entry(args.data),
        started,
        ["sweep.csv"],
    )
    print(f"swept {len(rows)} cells ({len(rhos)} rho values x {num_seeds} seeds)")
    return 0


# ------------------------------------------------------------------ main


def _add_common_flags(p: argparse.ArgumentParser, with_data: bool = True) -> None:
    if with_data:
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument(
            "--row-normalize-features",
            choices=["auto", "true", "false"],
            default=None,
            help="row-normalize features (auto: only citation datasets)",
        )
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nac",
        description="Architecture search over frozen graph networks via sparse mixture coefficients.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run a coefficient search and derive an architecture")
    _add_common_flags(p)
    p.add_argument("--mode", choices=["nac", "nac-plus", "nac-updating"], default=None)
    p.add_argument("--epochs", type=int, default=None, help="search epochs (default 100)")
    p.add_argument("--rho", type=float, default=None, help="L1 penalty weight (default 0.001)")
    p.add_argument(
        "--init",
        choices=["orthogonal", "kaiming-normal", "kaiming-uniform"],
        default=None,
        help="weight init scheme (default orthogonal)",
    )
    p.add_argument("--hidden", type=int, default=None, help="hidden width (default 64)")
    p.add_argument("--layers", type=int, default=None, help="number of mixed layers (default 3)")
    p.add_argument("--ops", default=None, help="comma list of operators (default all)")
    p.add_argument("--track-val-curve", action="store_true", default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("retrain", help="train a fixed architecture from scratch over seeds")
    _add_common_flags(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--arch", help="arch.json produced by search")
    group.add_argument("--ops", help="comma list of per-layer operators")
    p.add_argument("--seeds", type=int, default=None, help="number of seeds (default 4)")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (default 400)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("baseline", help="random-search baseline over the operator space")
    _add_common_flags(p)
    p.add_argument("--budget", type=int, default=None, help="architectures to sample (default 5)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--ops", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("verify", help="run numerical verification checks")
    _add_common_flags(p, with_data=False)
    p.add_argument(
        "--check",
        default=None,
        help=f"comma list from: {','.join(VERIFY_CHECKS)} (default all)",
    )
    p.add_argument("--out", default=None, help="optional directory for verdicts and samples")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="compare search modes on one dataset")
    _add_common_flags(p)
    p.add_argument("--modes", default=None, help="comma list of modes (default nac,nac-updating)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--ops", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="grid of searches over rho and seeds")
    _add_common_flags(p)
    p.add_argument("--rho", default=None, help="comma list of rho values")
    p.add_argument("--seeds", type=int, default=None, help="seeds per rho (default 4)")
    p.add_argument("--mode", choices=["nac", "nac-plus", "nac-updating"], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--ops", default=None)
    p.add_argument(
        "--init",
        choices=["orthogonal", "kaiming-normal", "kaiming-uniform"],
        default=None,
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NacError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

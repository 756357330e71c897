"""Command-line front end.

Exit codes: 0 success, 1 usage or invalid configuration, 2 numerical
failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import jsonschema
import numpy as np

from . import io
from .analysis import (approximate_basis, find_fixed_points, gradient_study, project_hidden,
                       spectral_compare, transform_weights, wave_residual)
from .hds import (BINARY, HdsSpec, generate_batch, make_task, task_from_dict, task_to_dict)
from .lbc import build_phi, random_basis, standard_basis
from .numerics import EigenConvergenceError
from .rnn import DESK, FULL, ElmanRnn, TrainConfig, TrainingDiverged, accuracy, bptt_train, forward
from .twm import SbcParams, WaveSubstrate, sbc_autoregress

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "task": {"oneOf": [{"type": "string"}, {"type": "object"}]},
        "s": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "task_seed": {"type": "integer", "minimum": 0},
        "horizon": {"type": "integer", "minimum": 2},
        "count": {"type": "integer", "minimum": 1},
        "train": {
            "type": "object",
            "properties": {
                "hidden": {"type": "integer", "minimum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "iterations": {"type": "integer", "minimum": 0},
                "l2": {"type": "number", "minimum": 0},
                "clip": {"type": "number", "exclusiveMinimum": 0},
                "h0": {"type": "integer", "minimum": 1},
                "hmax": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "exclusiveMinimum": 1},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "init": {"enum": ["uniform", "gaussian"]},
                "bias": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "analysis": {
            "type": "object",
            "properties": {
                "cutoff": {"type": "number", "exclusiveMinimum": 0},
                "band": {"type": "number", "minimum": 0},
                "fixed_points": {"type": "integer", "minimum": 0},
                "probe_every": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "out": {"type": "string"},
    },
    "required": ["task", "s", "d", "seed", "out"],
}

DEFAULTS = {"task": "repeat-copy", "s": 4, "d": 4, "seed": 0, "task_seed": 0, "horizon": 40,
            "count": 64, "out": "out", "train": {}, "analysis": {}}
TRAIN_FLAGS = {"hidden": "hidden", "lr": "lr", "batch": "batch_size", "iterations": "iterations",
               "l2": "l2", "clip": "clip", "h0": "h0", "hmax": "hmax", "init": "init", "bias": "bias"}
ANALYSIS_FLAGS = {"cutoff": "cutoff", "band": "band", "fixed_points": "fixed_points",
                  "probe_every": "probe_every"}


def build_config(args) -> dict:
    """Merge defaults, an optional ``--config`` JSON file and explicit flags; validate."""
    cfg = json.loads(json.dumps(DEFAULTS))
    preset = getattr(args, "preset", None)
    if preset:
        p = dict(DESK if preset == "desk" else FULL)
        cfg["train"].update(p)
        cfg["s"] = cfg["d"] = 4 if preset == "desk" else 8
        cfg["horizon"] = cfg["s"] + p["hmax"]
    if getattr(args, "config", None):
        try:
            user = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
        for key in ("train", "analysis"):
            cfg[key].update(user.pop(key, {}))
        cfg.update(user)
    for flag in ("task", "s", "d", "seed", "task_seed", "horizon", "count", "out"):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[flag] = val
    for flag, key in TRAIN_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            cfg["train"][key] = val
    for flag, key in ANALYSIS_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            cfg["analysis"][key] = val
    task_file = getattr(args, "task_file", None)
    if task_file:
        cfg["task"] = json.loads(Path(task_file).read_text())
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"invalid configuration: {exc.message}") from exc
    return cfg


def resolve_task(cfg: dict) -> HdsSpec:
    task = cfg["task"]
    try:
        if isinstance(task, dict):
            spec = task_from_dict(task)
        elif task.endswith(".json"):
            spec = task_from_dict(json.loads(Path(task).read_text()))
        else:
            spec = make_task(task, cfg["s"], cfg["d"], cfg.get("task_seed", 0))
    except (KeyError, ValueError, jsonschema.ValidationError) as exc:
        raise UsageError(str(exc)) from exc
    cfg["s"], cfg["d"] = spec.s, spec.d
    return spec


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    kw = {k: v for k, v in cfg["train"].items() if k in known}
    try:
        return TrainConfig(seed=cfg["seed"] if seed is None else seed, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _out(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -----------------------------------------------------------------

def cmd_gen(cfg: dict) -> dict:
    spec = resolve_task(cfg)
    if cfg["horizon"] <= spec.s:
        raise UsageError(f"horizon ({cfg['horizon']}) must exceed s ({spec.s})")
    out = _out(cfg)
    rng = np.random.default_rng(cfg["seed"])
    inputs, targets = generate_batch(spec, rng, cfg["count"], cfg["horizon"])
    io.save(out / "trajectories.twm", {"inputs": inputs, "targets": targets})
    io.write_json(out / "task.json", task_to_dict(spec))
    summary = {"command": "gen", "seed": cfg["seed"], "task": spec.name, "s": spec.s, "d": spec.d,
               "horizon": cfg["horizon"], "count": cfg["count"]}
    io.write_json(out / "summary.json", summary)
    return summary


def _train_one(cfg: dict, seed: int, out: Path) -> dict:
    spec = resolve_task(cfg)
    tc = train_config(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "task.json", task_to_dict(spec))
    try:
        model, record = bptt_train(spec, tc)
    except TrainingDiverged as exc:
        exc.record.to_csv(out / "record.csv")
        io.write_json(out / "summary.json", {"command": "train", "seed": seed, "diverged_at": exc.iteration})
        raise
    io.save(out / "model.twm", model.to_arrays())
    record.to_csv(out / "record.csv")
    summary = {"command": "train", "seed": seed, "task": spec.name, "config": tc.to_dict(),
               "final_loss": record.losses[-1] if record.losses else None,
               "final_horizon": record.horizons[-1] if record.horizons else None}
    if spec.domain == BINARY:
        summary["accuracy_bit"] = accuracy(model, spec, 256, cfg["horizon"], [seed, 1])
        summary["accuracy_vector"] = accuracy(model, spec, 256, cfg["horizon"], [seed, 1], per="vector")
        summary["eval_horizon"] = cfg["horizon"]
    io.write_json(out / "summary.json", summary)
    return summary


def _seed_job(payload):
    cfg, seed, out = payload
    try:
        return seed, _train_one(cfg, seed, Path(out)), None
    except TrainingDiverged as exc:
        return seed, None, exc.iteration


def cmd_train(cfg: dict, seeds: list[int] | None = None, jobs: int = 1) -> dict:
    out = _out(cfg)
    if not seeds:
        return _train_one(cfg, cfg["seed"], out)
    payloads = [(cfg, s, str(out / f"seed_{s}")) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_seed_job, payloads))
    else:
        results = [_seed_job(p) for p in payloads]
    summary = {"command": "train", "seeds": seeds,
               "runs": {str(s): r for s, r, _ in results if r is not None},
               "diverged": {str(s): it for s, _, it in results if it is not None}}
    io.write_json(out / "summary.json", summary)
    if summary["diverged"]:
        raise FloatingPointError(f"divergence in seeds {sorted(summary['diverged'])}")
    return summary


def load_model(path) -> ElmanRnn:
    return ElmanRnn.from_arrays(io.load(path))


def cmd_analyze(cfg: dict, checkpoint: str) -> dict:
    spec = resolve_task(cfg)
    model = load_model(checkpoint)
    if model.d != spec.d:
        raise UsageError(f"checkpoint has d={model.d} but task has d={spec.d}")
    out = _out(cfg)
    a = cfg["analysis"]
    cutoff, band = a.get("cutoff", 1.0), a.get("band", 0.05)
    summary = {"command": "analyze", "seed": cfg["seed"], "task": spec.name,
               "checkpoint": str(checkpoint)}

    if spec.is_linear:
        phi = build_phi(spec, standard_basis(spec.s, spec.d))
        report = spectral_compare(phi, model.W_hh, cutoff, band)
        summary["spectral"] = report.to_dict()
        io.write_grid(out / "spectrum_theoretical.csv",
                      np.c_[report.theoretical.real, report.theoretical.imag], ["re", "im"])
        io.write_grid(out / "spectrum_empirical.csv",
                      np.c_[report.empirical.real, report.empirical.imag], ["re", "im"])
    fps = find_fixed_points(model, a.get("fixed_points", 8), seed=cfg["seed"])
    summary["fixed_points"] = [{"residual": f.residual, "converged": f.converged,
                                "norm": float(np.linalg.norm(f.h_star))} for f in fps]
    if model.use_bias:
        # compare against the linearisation at the first converged fixed point
        fp = next((f for f in fps if f.converged), fps[0])
        if spec.is_linear:
            summary["spectral_fixed_point"] = spectral_compare(phi, fp.jacobian, cutoff, band).to_dict()

    rec = approximate_basis(model, spec.s, transient_cutoff=cutoff - band, seed=cfg["seed"])
    summary["basis"] = rec.diagnostics()
    io.save(out / "basis.twm", {"psi": rec.psi, "psi_perp": rec.psi_perp})
    io.write_grid(out / "weights_transformed.csv", transform_weights(rec, model.W_hh))

    horizon = cfg["horizon"]
    rng = np.random.default_rng([cfg["seed"], 2])
    inputs = rng.choice(np.array([-1.0, 1.0]), size=(spec.s, spec.d))
    H, Y = forward(model, inputs, horizon)
    coords = project_hidden(rec, H)
    io.write_grid(out / "inputs.csv", inputs)
    io.write_grid(out / "projection.csv", coords.reshape(horizon, -1),
                  [f"m{i + 1}_c{j + 1}" for i in range(spec.s) for j in range(spec.d)])
    io.write_grid(out / "projection_normalized.csv",
                  project_hidden(rec, H, normalize=True).reshape(horizon, -1))
    summary["wave_residual_mean"] = float(wave_residual(rec, H).mean())
    if spec.domain == BINARY:
        summary["accuracy_bit"] = accuracy(model, spec, 256, horizon, [cfg["seed"], 1])
        summary["accuracy_vector"] = accuracy(model, spec, 256, horizon, [cfg["seed"], 1], per="vector")
    io.write_json(out / "summary.json", summary)
    return summary


def cmd_phi(cfg: dict, n: int | None, basis_seed: int | None, conditioning: float) -> dict:
    spec = resolve_task(cfg)
    if not spec.is_linear:
        raise UsageError("phi needs a task with a linear boundary")
    out = _out(cfg)
    n = spec.s * spec.d if n is None else n
    if n < spec.s * spec.d:
        raise UsageError("n must be at least s*d")
    if basis_seed is None:
        basis = standard_basis(spec.s, spec.d, n)
    else:
        basis = random_basis(n, spec.s, spec.d, basis_seed, conditioning)
    phi = build_phi(spec, basis)
    io.save(out / "phi.twm", {"phi": phi.matrix, "psi": basis.psi, "dual": basis.dual,
                              "coords": phi.coords})
    io.write_grid(out / "phi.csv", phi.matrix)
    summary = {"command": "phi", "seed": cfg["seed"], "task": spec.name, "n": n,
               "basis_seed": basis_seed, "matrix": phi.matrix}
    io.write_json(out / "summary.json", summary)
    return summary


def cmd_sbc(cfg: dict, steps: int, params_file: str | None, init_file: str | None,
            zero_init: bool = False) -> dict:
    s, d = cfg["s"], cfg["d"]
    out = _out(cfg)
    if params_file:
        arr = io.load(params_file)
        params = SbcParams(arr["W_K"], arr["W_Q"], arr["W_V"])
    else:
        params = SbcParams.random(d, [cfg["seed"], 3])
    if init_file:
        sub = WaveSubstrate.from_csv(init_file)
    elif zero_init:
        sub = WaveSubstrate(np.zeros((s, d)))
    else:
        sub = WaveSubstrate(np.random.default_rng([cfg["seed"], 4]).normal(size=(s, d)))
    if sub.h.shape != (s, d) or params.W_K.shape != (d, d):
        raise UsageError("substrate or attention parameters do not match --s/--d")
    outputs = sbc_autoregress(sub, params, steps)
    io.save(out / "sbc.twm", {"init": sub.h, "W_K": params.W_K, "W_Q": params.W_Q,
                              "W_V": params.W_V, "outputs": outputs})
    io.write_grid(out / "sbc_outputs.csv", outputs, [f"ch{j + 1}" for j in range(d)])
    summary = {"command": "sbc", "seed": cfg["seed"], "s": s, "d": d, "steps": steps}
    io.write_json(out / "summary.json", summary)
    return summary


def cmd_gradients(cfg: dict) -> dict:
    spec = resolve_task(cfg)
    out = _out(cfg)
    every = cfg["analysis"].get("probe_every", 250)
    rep = gradient_study(spec, train_config(cfg), every)
    io.write_rows(out / "gradients.csv", rep.rows())
    io.save(out / "model.twm", rep.model.to_arrays())
    summary = {"command": "gradients", "seed": cfg["seed"], "probe_every": every,
               "initial_decay": rep.initial_decay, "final_decay": rep.final_decay,
               "collapse_iteration": rep.collapse_iteration(),
               "crossing_iteration": rep.crossing_iteration()}
    io.write_json(out / "summary.json", summary)
    return summary


def cmd_run(cfg: dict) -> dict:
    """Train, then analyse the checkpoint in the same directory."""
    train = _train_one(cfg, cfg["seed"], _out(cfg))
    analysis_dir = Path(cfg["out"]) / "analysis"
    acfg = dict(cfg, out=str(analysis_dir))
    summary = cmd_analyze(acfg, str(Path(cfg["out"]) / "model.twm"))
    doc = {"command": "run", "seed": cfg["seed"], "train": train, "analysis": summary}
    io.write_json(Path(cfg["out"]) / "summary.json", doc)
    return doc


# -- argument parsing -----------------------------------------------------------

def _task_args(p):
    p.add_argument("--config", help="JSON experiment config; explicit flags override it")
    p.add_argument("--task", help="built-in task name or a task JSON file")
    p.add_argument("--task-file", dest="task_file", help="task registry JSON document")
    p.add_argument("--task-seed", dest="task_seed", type=int, help="seed for compose-random")
    p.add_argument("--s", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")


def _train_args(p):
    p.add_argument("--hidden", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--h0", type=int)
    p.add_argument("--hmax", type=int)
    p.add_argument("--init", choices=["uniform", "gaussian"])
    p.add_argument("--bias", dest="bias", action="store_true", default=None)
    p.add_argument("--no-bias", dest="bias", action="store_false")
    p.add_argument("--horizon", type=int, help="total evaluation horizon (input + output steps)")
    p.add_argument("--preset", choices=["desk", "full"])


def _analysis_args(p):
    p.add_argument("--cutoff", type=float, help="persistence magnitude cutoff (default 1.0)")
    p.add_argument("--band", type=float, help="tolerance below the cutoff (default 0.05)")
    p.add_argument("--fixed-points", dest="fixed_points", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wavemem", description="Traveling-wave memory experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate trajectory batches")
    _task_args(p)
    p.add_argument("--horizon", type=int)
    p.add_argument("--count", type=int)

    p = sub.add_parser("train", help="train an Elman RNN")
    _task_args(p)
    _train_args(p)
    p.add_argument("--seeds", type=int, nargs="+", help="train one model per seed in seed_<k>/")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("analyze", help="analyse a trained checkpoint")
    _task_args(p)
    _analysis_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("phi", help="build the wave operator of a linear task")
    _task_args(p)
    p.add_argument("--n", type=int, help="ambient dimension (default s*d)")
    p.add_argument("--basis-seed", dest="basis_seed", type=int, help="random basis instead of standard")
    p.add_argument("--conditioning", type=float, default=1.0)

    p = sub.add_parser("sbc", help="simulate the self-attention boundary")
    _task_args(p)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--params", help="TWM1 container with W_K, W_Q, W_V")
    p.add_argument("--init-file", dest="init_file", help="substrate CSV (s rows x d columns)")
    p.add_argument("--zero-init", dest="zero_init", action="store_true", help="start from an all-zero substrate")

    p = sub.add_parser("gradients", help="train while probing input-gradient decay")
    _task_args(p)
    _train_args(p)
    p.add_argument("--probe-every", dest="probe_every", type=int)

    p = sub.add_parser("run", help="train and analyse in one go")
    _task_args(p)
    _train_args(p)
    _analysis_args(p)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        if args.command == "gen":
            cmd_gen(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.seeds, args.jobs)
        elif args.command == "analyze":
            if not Path(args.checkpoint).is_file():
                print(f"wavemem: checkpoint not found: {args.checkpoint}", file=sys.stderr)
                return EXIT_IO
            cmd_analyze(cfg, args.checkpoint)
        elif args.command == "phi":
            doc = cmd_phi(cfg, args.n, args.basis_seed, args.conditioning)
            print(json.dumps(doc["matrix"].tolist()))
        elif args.command == "sbc":
            cmd_sbc(cfg, args.steps, args.params, args.init_file, args.zero_init)
        elif args.command == "gradients":
            cmd_gradients(cfg)
        elif args.command == "run":
            cmd_run(cfg)
    except UsageError as exc:
        print(f"wavemem: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, EigenConvergenceError, FloatingPointError) as exc:
        print(f"wavemem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, io.ContainerError) as exc:
        print(f"wavemem: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

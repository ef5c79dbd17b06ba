"""Command-line entry point: ``rfedit <command> [flags]``.

Settings are resolved in layers: built-in defaults, then a ``--preset``
expansion, then the JSON ``--config`` file (a flat object whose keys are the
flag names with underscores), then explicit flags. The resolved settings are
written as a JSON sidecar next to every output.

Exit codes: 0 ok, 2 usage or configuration error, 3 numeric failure,
4 file or format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from rfedit import __version__, checkpoint
from rfedit.editor import PRESETS, EditConfig, EditConfigError, edited_generate, generate
from rfedit.flow import Schedule, euler_sample, invert, to_image_space, to_model_space
from rfedit.mmdit import ModelConfig
from rfedit.sweep import AXES, run_sweep
from rfedit.synth import PPMError, ensure_dir, hstack_images, make_corpus, read_image, read_manifest, write_image, write_manifest
from rfedit.trainer import TrainConfig, TrainingDiverged, train

log = logging.getLogger("rfedit")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    code = EXIT_USAGE


class NumericError(Exception):
    code = EXIT_NUMERIC


class IOFailure(Exception):
    code = EXIT_IO


SAMPLING = dict(checkpoint=None, prompt="", steps=30, seed=0)
EDITING = dict(
    edit_prompt="",
    lambda_fine=5.0,
    lambda_coarse=0.5,
    tau_m=0.5,
    boundary=10.0,
    start_step=1,
    masking=True,
    target_blocks=None,
    preset=None,
)
_TRAIN = TrainConfig()
TRAINING = dict(
    corpus=None,
    checkpoint=None,
    loss_log=None,
    lr=_TRAIN.lr,
    beta1=_TRAIN.beta1,
    beta2=_TRAIN.beta2,
    adam_eps=_TRAIN.eps,
    batch_size=_TRAIN.batch_size,
    train_steps=_TRAIN.steps,
    seed=_TRAIN.seed,
    corpus_size=_TRAIN.corpus_size,
    corpus_seed=_TRAIN.corpus_seed,
    clip_norm=_TRAIN.clip_norm,
    p_null=_TRAIN.p_null,
    p_single=_TRAIN.p_single,
    log_every=_TRAIN.log_every,
    checkpoint_every=_TRAIN.checkpoint_every,
)

DEFAULTS = {
    "train": TRAINING,
    "generate": {**SAMPLING, "output": "generate.ppm"},
    "edit": {**SAMPLING, **EDITING, "output": "edit.ppm"},
    "sweep": {**SAMPLING, **EDITING, "grid": None, "output": "sweep.ppm", "table": None},
    "invert": {**SAMPLING, "input": None, "output": "noise.npy", "reconstruction": None},
    "inspect-mask": {**SAMPLING, **EDITING, "out_dir": "masks"},
}


# -- argument parsing --------------------------------------------------------------
def _blocks(text):
    if isinstance(text, list):
        return [int(b) for b in text]
    return [int(b) for b in str(text).split(",") if b.strip()]


def _add(p, name, help, defaults, **kw):
    key = name.lstrip("-").replace("-", "_")
    default = defaults.get(key)
    shown = "none" if default is None else repr(default) if default == "" else default
    p.add_argument(name, help=f"{help} (default: {shown})", default=argparse.SUPPRESS, **kw)


def _sampling_flags(p, d):
    _add(p, "--checkpoint", "trained model file", d)
    _add(p, "--prompt", "text prompt, e.g. 'blue circle'", d)
    _add(p, "--steps", "number of Euler sampling steps", d, type=int)
    _add(p, "--seed", "noise seed", d, type=int)


def _edit_flags(p, d):
    _add(p, "--edit-prompt", "attribute prompt that drives the edit, e.g. 'red'", d)
    _add(p, "--lambda-fine", "scale of the orthogonal attention-output edit, >= 0", d, type=float)
    _add(p, "--lambda-coarse", "pooled-condition interpolation weight in [0, 1]", d, type=float)
    _add(p, "--tau-m", "mask threshold in [0, 1], inclusive", d, type=float)
    _add(p, "--boundary", "sharpness d of the soft mask boundary", d, type=float)
    _add(p, "--start-step", "first 0-based sampling step with editing active", d, type=int)
    _add(p, "--target-blocks", "comma separated joint block indices (none means every block)", d)
    p.add_argument(
        "--no-mask",
        dest="masking",
        action="store_false",
        default=argparse.SUPPRESS,
        help="edit every image token instead of the attention mask (default: masking on)",
    )
    p.add_argument(
        "--preset",
        choices=sorted(PRESETS),
        default=argparse.SUPPRESS,
        help="named hyperparameter set: "
        + "; ".join(f"{k}: " + ", ".join(f"{a}={b}" for a, b in v.items()) for k, v in sorted(PRESETS.items())),
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="rfedit", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"rfedit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help):
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", help="JSON file with flat settings keyed by flag name", default=None)
        return p

    d = DEFAULTS["train"]
    p = command("train", "train the toy model on the synthetic shapes corpus")
    _add(p, "--corpus", "corpus manifest; created from corpus-size/corpus-seed when absent", d)
    _add(p, "--checkpoint", "output checkpoint file", d)
    _add(p, "--loss-log", "plain-text '<step> <loss>' log (default: next to the checkpoint)", d)
    _add(p, "--lr", "Adam learning rate", d, type=float)
    _add(p, "--beta1", "Adam first-moment decay", d, type=float)
    _add(p, "--beta2", "Adam second-moment decay", d, type=float)
    _add(p, "--adam-eps", "Adam epsilon", d, type=float)
    _add(p, "--batch-size", "images per step", d, type=int)
    _add(p, "--train-steps", "optimizer steps", d, type=int)
    _add(p, "--seed", "initialization and training stream seed", d, type=int)
    _add(p, "--corpus-size", "images in a freshly generated corpus", d, type=int)
    _add(p, "--corpus-seed", "master seed of a freshly generated corpus", d, type=int)
    _add(p, "--clip-norm", "global gradient norm clip", d, type=float)
    _add(p, "--p-null", "probability of training on the empty caption", d, type=float)
    _add(p, "--p-single", "probability of training on a one-word caption", d, type=float)
    _add(p, "--log-every", "loss log interval in steps", d, type=int)
    _add(p, "--checkpoint-every", "intermediate checkpoint interval, 0 disables", d, type=int)

    d = DEFAULTS["generate"]
    p = command("generate", "sample an image from a prompt")
    _sampling_flags(p, d)
    _add(p, "--output", "output PPM", d)

    d = DEFAULTS["edit"]
    p = command("edit", "sample an image with attribute editing")
    _sampling_flags(p, d)
    _edit_flags(p, d)
    _add(p, "--output", "output PPM", d)

    d = DEFAULTS["sweep"]
    p = command("sweep", "sweep one editing hyperparameter and tabulate metrics")
    _sampling_flags(p, d)
    _edit_flags(p, d)
    p.add_argument(
        "--grid",
        action="append",
        default=argparse.SUPPRESS,
        help=f"AXIS=v1,v2,... with AXIS one of {', '.join(AXES)}; exactly one axis (required)",
    )
    _add(p, "--output", "image strip PPM, one panel per value", d)
    _add(p, "--table", "metrics table '<value> <object metric> <background mse>' (default: output with .txt)", d)

    d = DEFAULTS["invert"]
    p = command("invert", "integrate an image back to noise")
    _sampling_flags(p, d)
    _add(p, "--input", "input PPM (required)", d)
    _add(p, "--output", "noise array (.npy)", d)
    _add(p, "--reconstruction", "optional PPM re-sampled from the recovered noise", d)

    d = DEFAULTS["inspect-mask"]
    p = command("inspect-mask", "dump the binary attention mask of every edited step and block")
    _sampling_flags(p, d)
    _edit_flags(p, d)
    _add(p, "--out-dir", "directory for mask_s<step>_b<block>.ppm files", d)
    return parser


# -- settings resolution ---------------------------------------------------------------
def load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(command, args):
    """Merge defaults, preset, config file and flags into one flat dict."""
    defaults = DEFAULTS[command]
    file_values = load_config_file(args.get("config"))
    flags = {k: v for k, v in args.items() if k not in ("config", "command", "verbose")}
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    settings = dict(defaults)
    name = flags.get("preset", file_values.get("preset"))
    if name is not None:
        if name not in PRESETS:
            raise UsageError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}")
        settings.update(PRESETS[name])
        settings["preset"] = name
    settings.update(file_values)
    settings.update(flags)
    if settings.get("target_blocks") is not None:
        settings["target_blocks"] = _blocks(settings["target_blocks"])
    return settings


def edit_config(s):
    cfg = EditConfig(
        edit_prompt=s["edit_prompt"],
        lambda_fine=float(s["lambda_fine"]),
        lambda_coarse=float(s["lambda_coarse"]),
        tau_m=float(s["tau_m"]),
        boundary=float(s["boundary"]),
        start_step=int(s["start_step"]),
        masking=bool(s["masking"]),
        target_blocks=s["target_blocks"],
    )
    try:
        return cfg.validate()
    except EditConfigError as e:
        raise UsageError(str(e)) from None


def parse_grid(grid):
    if grid is None:
        raise UsageError("sweep needs a grid, e.g. --grid lambda_fine=0,2,4,6,8")
    if isinstance(grid, str):
        grid = [grid]
    if isinstance(grid, dict):
        grid = [f"{k}={','.join(map(str, v))}" for k, v in grid.items()]
    parts = [p for item in grid for p in str(item).split(";") if p.strip()]
    if len(parts) != 1:
        raise UsageError(f"sweep grid must cover exactly one axis, got {len(parts)}")
    axis, sep, values = parts[0].partition("=")
    axis = axis.strip().replace("-", "_")
    if not sep or axis not in AXES:
        raise UsageError(f"grid axis must be one of {', '.join(AXES)}, got {parts[0]!r}")
    try:
        vals = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"grid values must be numbers: {values!r}") from None
    if not vals:
        raise UsageError("sweep grid is empty")
    if axis == "start_step":
        if any(v != int(v) for v in vals):
            raise UsageError("start_step grid values must be integers")
        vals = [int(v) for v in vals]
    return axis, vals


# -- helpers ---------------------------------------------------------------------------
def write_sidecar(output, command, settings):
    path = Path(str(output) + ".json") if not Path(output).is_dir() else Path(output) / "config.json"
    record = {"command": command, "version": __version__, **settings}
    with open(path, "w") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_checkpoint(path):
    if path is None:
        raise UsageError("missing required setting 'checkpoint'")
    if not os.path.isfile(path):
        raise UsageError(f"checkpoint not found: {path}")
    try:
        model, _ = checkpoint.load_model(path)
    except checkpoint.CheckpointError as e:
        raise IOFailure(f"cannot read checkpoint {path}: {e}") from None
    return model


def check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def _steps(s):
    steps = int(s["steps"])
    if steps < 1:
        raise UsageError("steps must be at least 1")
    return steps


# -- commands ----------------------------------------------------------------------------
def cmd_train(s):
    if s["corpus"] is None:
        raise UsageError("missing required setting 'corpus' (path of the corpus manifest)")
    if s["checkpoint"] is None:
        raise UsageError("missing required setting 'checkpoint' (output path)")
    cfg = TrainConfig(
        lr=float(s["lr"]),
        beta1=float(s["beta1"]),
        beta2=float(s["beta2"]),
        eps=float(s["adam_eps"]),
        batch_size=int(s["batch_size"]),
        steps=int(s["train_steps"]),
        seed=int(s["seed"]),
        corpus_size=int(s["corpus_size"]),
        corpus_seed=int(s["corpus_seed"]),
        clip_norm=float(s["clip_norm"]),
        p_null=float(s["p_null"]),
        p_single=float(s["p_single"]),
        log_every=int(s["log_every"]),
        checkpoint_every=int(s["checkpoint_every"]),
        model=ModelConfig(),
    )
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    corpus = Path(s["corpus"])
    if corpus.exists():
        try:
            samples = read_manifest(corpus)
        except (ValueError, IndexError) as e:
            raise UsageError(f"corpus manifest {corpus} is malformed: {e}") from None
    else:
        samples, lines = make_corpus(cfg.corpus_size, cfg.corpus_seed)
        write_manifest(corpus, lines)
        log.info("wrote corpus manifest %s (%d samples)", corpus, len(samples))
    loss_log = s["loss_log"] or str(Path(s["checkpoint"]).with_suffix(".loss.log"))
    s = {**s, "loss_log": loss_log}
    try:
        train(cfg, samples=samples, ckpt_path=s["checkpoint"], log_path=loss_log)
    except TrainingDiverged as e:
        raise NumericError(f"training diverged: {e}") from None
    write_sidecar(s["checkpoint"], "train", s)


def cmd_generate(s):
    model = load_checkpoint(s["checkpoint"])
    img = check_finite(generate(model, s["prompt"], _steps(s), int(s["seed"])), "generated image")
    write_image(s["output"], img)
    write_sidecar(s["output"], "generate", s)


def cmd_edit(s):
    model = load_checkpoint(s["checkpoint"])
    cfg = edit_config(s)
    img = check_finite(edited_generate(model, s["prompt"], cfg, _steps(s), int(s["seed"])), "edited image")
    write_image(s["output"], img)
    write_sidecar(s["output"], "edit", s)


def cmd_sweep(s):
    axis, values = parse_grid(s["grid"])
    model = load_checkpoint(s["checkpoint"])
    cfg = edit_config(s)
    try:
        result = run_sweep(model, s["prompt"], cfg, axis, values, _steps(s), int(s["seed"]))
    except EditConfigError as e:
        raise UsageError(str(e)) from None
    check_finite(np.stack(result.images), "sweep panels")
    write_image(s["output"], hstack_images(result.images))
    table = s["table"] or str(Path(s["output"]).with_suffix(".txt"))
    with open(table, "w") as f:
        f.write(result.table())
    write_sidecar(s["output"], "sweep", {**s, "table": table, "grid": f"{axis}={','.join(map(str, values))}"})


def cmd_invert(s):
    if s["input"] is None:
        raise UsageError("missing required setting 'input'")
    model = load_checkpoint(s["checkpoint"])
    x0 = to_model_space(read_image(s["input"]))
    c = model.config
    if x0.shape != (c.image_size, c.image_size, c.channels):
        raise UsageError(f"input image shape {x0.shape} does not match the model")
    emb = model.encode(s["prompt"])
    sched = Schedule.uniform(_steps(s))
    noise = check_finite(invert(model, x0, sched, emb), "recovered noise")
    with open(s["output"], "wb") as f:
        np.save(f, noise)
    if s["reconstruction"]:
        back = check_finite(euler_sample(model, noise, sched, emb), "reconstruction")
        write_image(s["reconstruction"], to_image_space(back))
    write_sidecar(s["output"], "invert", s)


def cmd_inspect_mask(s):
    cfg = edit_config(s)
    if not cfg.masking:
        raise UsageError("inspect-mask needs masking enabled")
    model = load_checkpoint(s["checkpoint"])
    sessions = []
    edited_generate(model, s["prompt"], cfg, _steps(s), int(s["seed"]), session_out=sessions)
    out = s["out_dir"]
    ensure_dir(out)
    g = model.config.grid
    for (step, block), mask in sorted(sessions[0].masks.items()):
        img = np.repeat(mask[0].reshape(g, g, 1).astype(np.float32), 3, axis=2)
        write_image(Path(out) / f"mask_s{step}_b{block}.ppm", img)
    write_sidecar(out, "inspect-mask", s)


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "edit": cmd_edit,
    "sweep": cmd_sweep,
    "invert": cmd_invert,
    "inspect-mask": cmd_inspect_mask,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.get("verbose") else logging.WARNING, format="%(message)s")
    command = args["command"]
    try:
        COMMANDS[command](resolve(command, args))
    except (UsageError, NumericError, IOFailure) as e:
        print(f"rfedit {command}: {e}", file=sys.stderr)
        return e.code
    except (PPMError, checkpoint.CheckpointError) as e:
        print(f"rfedit {command}: {e}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as e:
        print(f"rfedit {command}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"rfedit {command}: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``tripletspace <command> [--key value ...]``.

Every command takes its parameters from one flat key namespace. Values come
from the built-in defaults, then ``--config FILE`` (``key = value`` lines, or
a previous run manifest in JSON), then command-line flags, which win. Each
run writes a JSON manifest recording the resolved parameters, timestamps and
SHA-256 checksums of all outputs.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import dataio, evaluation
from .cluster import agglomerative_cluster, pairwise_f1
from .errors import TripletSpaceError
from .geometry import pairwise_sqdist
from .harmonic import cross_version_report, harmonic_retrain
from .model import NetConfig, embed, new_network, read_checkpoint, write_checkpoint
from .trainer import load_state, parse_kv, train, train_config_from_mapping

THREADS_ENV = "TRIPLETSPACE_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


@dataclass
class RunManifest:
    command: str
    config_path: str
    parameters: dict
    seeds: dict
    inputs: list
    outputs: list
    started: str
    finished: str = ""
    checksums: dict = field(default_factory=dict)

    def write(self, path):
        """Atomic write: temp file in the target directory, then rename."""
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-")
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(asdict(self), fh, indent=2, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# Parameter tables: key -> (type, default, help). Paths default to None.

_TRAIN_KEYS = {
    "learning_rate": (float, 0.05, "AdaGrad learning rate"),
    "margin": (float, 0.2, "triplet margin alpha"),
    "steps": (int, 1000, "training steps"),
    "faces_per_identity": (int, 40, "samples per identity in a batch"),
    "identities_per_batch": (int, 45, "identities per batch"),
    "random_negatives": (int, 0, "extra negative-only rows per batch"),
    "batch_seed": (int, 0, "seed for batch assembly"),
    "negative_mode": (str, "semi_hard", "semi_hard, hardest or random"),
    "positive_mode": (str, "all_pairs", "all_pairs or hardest"),
    "adagrad_epsilon": (float, 1e-8, "AdaGrad epsilon"),
    "lr_schedule": (str, "", "step:rate,... learning rate drops"),
    "checkpoint_every": (int, 0, "save state every N steps (needs checkpoint_dir)"),
    "seed": (int, 0, "seed for random-mode mining"),
}

_NET_KEYS = {
    "hidden_dims": (str, "64,64", "comma separated hidden layer widths"),
    "embedding_dim": (int, 128, "embedding dimension"),
    "init_scale": (float, 1.0, "weight init scale"),
    "net_seed": (int, 0, "weight init seed"),
}

_PAIR_KEYS = {
    "pairs": (str, None, "pairs file (i,j,same|diff); default all pairs of the subset"),
    "manifest": (str, None, "dataset manifest, used to restrict to a split"),
    "subset": (str, "all", "all, train or holdout (needs manifest)"),
}

_GRID_KEYS = {
    "grid_step": (float, 0.001, "threshold grid spacing"),
    "grid_max": (float, 4.0, "largest threshold"),
}

COMMANDS = {
    "synth": ("generate a synthetic dataset (<out>.tvec + <out>.csv)", {
        "out": (str, None, "output prefix"),
        "num_identities": (int, 50, ""), "samples_per_identity": (int, 30, ""),
        "latent_dim": (int, 8, ""), "input_dim": (int, 64, ""),
        "noise_sigma": (float, 0.15, ""), "distortion_layers": (int, 2, ""),
        "seed": (int, 0, "generator seed"),
        "holdout_fraction": (float, 0.2, "fraction of identities held out"),
        "split_seed": (int, 0, "seed for the identity split"),
    }),
    "train": ("train an embedding network", {
        "data": (str, None, "dataset vectors (.tvec)"),
        "manifest": (str, None, "dataset manifest; if split, trains on train rows"),
        "out": (str, None, "output checkpoint (.tnet)"),
        "log": (str, None, "training log CSV (default <out>.log.csv)"),
        "checkpoint_dir": (str, None, "directory for periodic state"),
        "resume_step": (int, 0, "resume from saved state at this step"),
        **_NET_KEYS, **_TRAIN_KEYS,
    }),
    "embed": ("embed vectors with a checkpoint", {
        "checkpoint": (str, None, "network checkpoint"),
        "data": (str, None, "input vectors (.tvec)"),
        "out": (str, None, "output embeddings (.tvec)"),
    }),
    "eval-roc": ("VAL/FAR sweep to CSV", {
        "embeddings": (str, None, "embeddings (.tvec)"),
        "out": (str, None, "ROC CSV"),
        **_PAIR_KEYS, **_GRID_KEYS,
    }),
    "eval-tenfold": ("k-fold threshold selection and accuracy", {
        "embeddings": (str, None, "embeddings (.tvec)"),
        "out": (str, None, "per-fold CSV"),
        "folds": (int, 10, "number of folds"),
        "fold_seed": (int, 0, "seed for pair balancing and fold assignment"),
        **_PAIR_KEYS, **_GRID_KEYS,
    }),
    "val-at-far": ("VAL at a target FAR", {
        "embeddings": (str, None, "embeddings (.tvec)"),
        "out": (str, None, "one-row CSV"),
        "target_far": (float, 1e-3, "FAR ceiling"),
        **_PAIR_KEYS, **_GRID_KEYS,
    }),
    "cluster": ("agglomerative clustering at a distance cutoff", {
        "embeddings": (str, None, "embeddings (.tvec)"),
        "out": (str, None, "assignments CSV"),
        "cutoff": (float, 1.0, "merge while linkage distance <= cutoff"),
        "linkage": (str, "average", "single, average or complete"),
        "manifest": (str, None, "dataset manifest, used to restrict to a split"),
        "subset": (str, "all", "all, train or holdout (needs manifest)"),
    }),
    "quantize": ("int8-quantize embeddings to a TQ08 file", {
        "embeddings": (str, None, "embeddings (.tvec)"),
        "out": (str, None, "output codes (.tq08)"),
    }),
    "harmonic": ("retrain a v2 network to be compatible with v1 embeddings", {
        "v1_embeddings": (str, None, "v1 embeddings of every dataset row (.tvec)"),
        "checkpoint": (str, None, "v2 checkpoint"),
        "data": (str, None, "dataset vectors (.tvec)"),
        "manifest": (str, None, "dataset manifest; train on train rows, report on holdout"),
        "out": (str, None, "output v2 checkpoint"),
        "roc_prefix": (str, None, "writes <prefix>.v1v1.csv, .v2v2.csv, .mixed.csv"),
        "last_layer_steps": (int, 500, "steps with only the last layer trainable"),
        "reinit_seed": (int, 0, "seed for the fresh last layer; -1 keeps it"),
        **_GRID_KEYS, **_TRAIN_KEYS,
    }),
}

_REQUIRED = {
    "synth": ("out",), "train": ("data", "out"), "embed": ("checkpoint", "data", "out"),
    "eval-roc": ("embeddings", "out"), "eval-tenfold": ("embeddings", "out"),
    "val-at-far": ("embeddings",), "cluster": ("embeddings", "out"),
    "quantize": ("embeddings", "out"),
    "harmonic": ("v1_embeddings", "checkpoint", "data", "out"),
}


def build_parser():
    parser = _Parser(prog="tripletspace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (help_text, keys) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value file or previous run manifest (JSON)")
        p.add_argument("--run-manifest", help="where to write the run manifest")
        p.add_argument("--plot", action="store_true", help="also render a PNG next to the CSV")
        for key, (typ, default, text) in keys.items():
            suffix = f" (default {default})" if default not in (None, "") else ""
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None,
                           help=text + suffix)
    return parser


def _read_config(path):
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        data = json.loads(text)
        return {k: None if v is None else str(v) for k, v in data.get("parameters", data).items()}
    return parse_kv(text)


def resolve(command, args):
    """defaults <- config file <- flags."""
    keys = COMMANDS[command][1]
    params = {k: default for k, (_, default, _) in keys.items()}
    if args.config:
        for key, value in _read_config(args.config).items():
            if key not in keys:
                raise UsageError(f"--config {args.config}: unknown key {key!r} for {command}")
            typ = keys[key][0]
            try:
                params[key] = None if value is None or (value == "" and typ is not str) \
                    else typ(value)
            except ValueError:
                raise UsageError(f"--config {args.config}: bad value for {key}: {value!r}")
    for key in keys:
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    for key in _REQUIRED[command]:
        if params[key] is None:
            raise UsageError(f"--{key.replace('_', '-')} is required for {command}")
    return params


def _load_labels_and_split(params, n_rows, labels):
    split = None
    if params.get("manifest"):
        m_labels, split = dataio.read_manifest(params["manifest"])
        if len(m_labels) != n_rows:
            raise dataio.CorruptFile(f"manifest has {len(m_labels)} rows, vectors have {n_rows}")
        labels = m_labels if labels is None else labels
    return labels, split


def _subset_rows(params, n_rows, split):
    tag = params.get("subset", "all")
    if tag == "all":
        return np.arange(n_rows)
    if tag not in (dataio.TRAIN, dataio.HOLDOUT):
        raise UsageError(f"--subset must be all, train or holdout, got {tag!r}")
    if split is None:
        raise UsageError("--subset needs a --manifest with a split column")
    return np.flatnonzero(split == tag)


def _grid(params):
    if not params["grid_step"] > 0:
        raise UsageError("--grid-step must be positive")
    return evaluation.default_grid(params["grid_step"], params["grid_max"])


def _embeddings_and_pairs(params):
    emb, labels = dataio.read_vectors(params["embeddings"])
    labels, split = _load_labels_and_split(params, len(emb), labels)
    if params["pairs"]:
        pairs = evaluation.read_pairs(params["pairs"])
    else:
        if labels is None:
            raise dataio.CorruptFile("embeddings carry no labels; give --pairs or --manifest")
        pairs = evaluation.all_pairs(labels, _subset_rows(params, len(emb), split))
    return emb, labels, pairs


def _train_cfg(params, steps=None):
    values = {k: params[k] for k in _TRAIN_KEYS}
    if steps is not None:
        values["steps"] = steps
    cfg, _ = train_config_from_mapping(values)
    return cfg


def _net_config(params, input_dim):
    hidden = tuple(int(h) for h in str(params["hidden_dims"]).split(",") if h.strip())
    return NetConfig(input_dim, hidden, params["embedding_dim"], params["init_scale"],
                     params["net_seed"])


def _training_dataset(params):
    inputs, labels = dataio.read_vectors(params["data"])
    labels, split = _load_labels_and_split(params, len(inputs), labels)
    if labels is None:
        raise dataio.CorruptFile("training vectors carry no labels; give --manifest")
    ds = dataio.Dataset(inputs, labels, split)
    return ds, (ds.part(dataio.TRAIN) if split is not None else ds)


def cmd_synth(params, plot):
    spec = dataio.SyntheticSpec(
        params["num_identities"], params["samples_per_identity"], params["latent_dim"],
        params["input_dim"], params["noise_sigma"], params["distortion_layers"], params["seed"])
    ds = dataio.split_by_identity(dataio.generate_synthetic(spec), params["holdout_fraction"],
                                  params["split_seed"])
    outputs = dataio.save_dataset(params["out"], ds)
    print(f"{len(ds)} samples, {len(ds.identities)} identities, "
          f"{len(ds.rows(dataio.HOLDOUT))} hold-out samples")
    return [], outputs


def cmd_train(params, plot):
    _, train_ds = _training_dataset(params)
    cfg = _train_cfg(params)
    if params["resume_step"]:
        if not params["checkpoint_dir"]:
            raise UsageError("--resume-step needs --checkpoint-dir")
        net, state = load_state(params["checkpoint_dir"], params["resume_step"])
    else:
        net, state = new_network(_net_config(params, train_ds.inputs.shape[1])), None
    net, history = train(net, train_ds, cfg, state=state, start_step=params["resume_step"],
                         checkpoint_dir=params["checkpoint_dir"])
    write_checkpoint(params["out"], net)
    log_path = params["log"] or params["out"] + ".log.csv"
    history.write_csv(log_path)
    outputs = [params["out"], log_path]
    if plot:
        from .plotting import plot_training
        outputs.append(plot_training(history, log_path[:-4] + ".png"))
    if len(history):
        print(f"final loss {history.records[-1].loss:.6f}")
    return [params["data"]], outputs


def cmd_embed(params, plot):
    net = read_checkpoint(params["checkpoint"])
    inputs, labels = dataio.read_vectors(params["data"])
    dataio.write_vectors(params["out"], embed(net, inputs), labels)
    return [params["checkpoint"], params["data"]], [params["out"]]


def cmd_eval_roc(params, plot):
    emb, _, pairs = _embeddings_and_pairs(params)
    report = evaluation.roc_sweep(pairwise_sqdist(emb), pairs, _grid(params))
    report.write_csv(params["out"])
    outputs = [params["out"]]
    if plot:
        from .plotting import plot_roc
        outputs.append(plot_roc([report], params["out"][:-4] + ".png"))
    return [params["embeddings"]], outputs


def cmd_eval_tenfold(params, plot):
    emb, labels, pairs = _embeddings_and_pairs(params)
    rng = np.random.default_rng(params["fold_seed"])
    if not params["pairs"]:
        rows = np.unique(pairs.members())
        pairs = evaluation.balanced_pairs(labels, rng, rows)
    folds = evaluation.make_folds(pairs, rng, params["folds"])
    res = evaluation.tenfold_accuracy(pairwise_sqdist(emb), pairs, folds, _grid(params))
    with open(params["out"], "w") as fh:
        fh.write("fold,threshold,accuracy\n")
        for f, (t, a) in enumerate(zip(res.thresholds.tolist(), res.accuracies.tolist())):
            fh.write(f"{f},{t!r},{a!r}\n")
    print(f"accuracy {res.mean_accuracy:.4f} +- {res.standard_error:.4f}; thresholds "
          f"{res.thresholds.min():.3f}..{res.thresholds.max():.3f}")
    return [params["embeddings"]], [params["out"]]


def cmd_val_at_far(params, plot):
    emb, _, pairs = _embeddings_and_pairs(params)
    report = evaluation.roc_sweep(pairwise_sqdist(emb), pairs, _grid(params))
    op = evaluation.val_at_far(report, params["target_far"])
    print(f"val {op.val:.6f} threshold {op.threshold:.6f}"
          + ("" if op.qualified else " (no threshold reaches the target FAR)"))
    outputs = []
    if params["out"]:
        with open(params["out"], "w") as fh:
            fh.write("target_far,val,threshold,qualified\n")
            fh.write(f"{params['target_far']!r},{op.val!r},{op.threshold!r},{int(op.qualified)}\n")
        outputs.append(params["out"])
    return [params["embeddings"]], outputs


def cmd_cluster(params, plot):
    emb, labels = dataio.read_vectors(params["embeddings"])
    labels, split = _load_labels_and_split(params, len(emb), labels)
    rows = _subset_rows(params, len(emb), split)
    result = agglomerative_cluster(emb[rows], params["cutoff"], params["linkage"])
    result.write_csv(params["out"], rows)
    print(f"{result.num_clusters} clusters")
    if labels is not None:
        p, r, f1 = pairwise_f1(result, labels[rows])
        print(f"pairwise precision {p:.4f} recall {r:.4f} F1 {f1:.4f}")
    return [params["embeddings"]], [params["out"]]


def cmd_quantize(params, plot):
    emb, _ = dataio.read_vectors(params["embeddings"])
    with open(params["out"], "wb") as fh:
        fh.write(evaluation.encode_quantized(evaluation.quantize(emb)))
    return [params["embeddings"]], [params["out"]]


def cmd_harmonic(params, plot):
    full_ds, train_ds = _training_dataset(params)
    v1_all, _ = dataio.read_vectors(params["v1_embeddings"])
    if len(v1_all) != len(full_ds):
        raise dataio.CorruptFile(f"{len(v1_all)} v1 embeddings for {len(full_ds)} dataset rows")
    rows = (full_ds.rows(dataio.TRAIN) if full_ds.split is not None
            else np.arange(len(full_ds)))
    net = read_checkpoint(params["checkpoint"])
    seed = None if params["reinit_seed"] < 0 else params["reinit_seed"]
    net, _ = harmonic_retrain(net, v1_all[rows], train_ds,
                              _train_cfg(params, params["last_layer_steps"]),
                              _train_cfg(params), reinit_seed=seed)
    write_checkpoint(params["out"], net)
    outputs = [params["out"]]
    if params["roc_prefix"]:
        eval_rows = (full_ds.rows(dataio.HOLDOUT) if full_ds.split is not None
                     else np.arange(len(full_ds)))
        pairs = evaluation.all_pairs(full_ds.labels, eval_rows)
        reports = cross_version_report(v1_all, embed(net, full_ds.inputs), pairs, _grid(params))
        names = ("v1v1", "v2v2", "mixed")
        for name, rep in zip(names, reports):
            path = f"{params['roc_prefix']}.{name}.csv"
            rep.write_csv(path)
            outputs.append(path)
            op = evaluation.val_at_far(rep, 1e-2)
            print(f"{name} VAL@FAR=1e-2 {op.val:.4f}")
        if plot:
            from .plotting import plot_roc
            outputs.append(plot_roc(reports, params["roc_prefix"] + ".png", list(names), 1e-2))
    return [params["v1_embeddings"], params["checkpoint"], params["data"]], outputs


HANDLERS = {
    "synth": cmd_synth, "train": cmd_train, "embed": cmd_embed, "eval-roc": cmd_eval_roc,
    "eval-tenfold": cmd_eval_tenfold, "val-at-far": cmd_val_at_far, "cluster": cmd_cluster,
    "quantize": cmd_quantize, "harmonic": cmd_harmonic,
}


def _thread_limit():
    """Context manager honoring TRIPLETSPACE_THREADS (0 or unset = library default)."""
    from contextlib import nullcontext
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError(f"{THREADS_ENV} must be >= 0, got {n}")
    if n == 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        params = resolve(args.command, args)
        started = _now()
        with _thread_limit():
            inputs, outputs = HANDLERS[args.command](params, args.plot)
        seeds = {k: v for k, v in params.items() if k == "seed" or k.endswith("_seed")}
        manifest = RunManifest(args.command, args.config or "", params, seeds,
                               [p for p in inputs if p], outputs, started, _now(),
                               {p: sha256_file(p) for p in outputs})
        path = args.run_manifest or (outputs[0] + ".manifest.json" if outputs
                                     else f"{args.command}.manifest.json")
        manifest.write(path)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tripletspace: error: {exc}", file=sys.stderr)
        return 1
    except TripletSpaceError as exc:
        print(f"tripletspace: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"tripletspace: cli: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

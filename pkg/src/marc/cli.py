"""Command-line pipeline: gen-data -> train -> calibrate -> eval."""

import hashlib
import json
import os
import sys
import time

# Honor the thread cap before numpy initializes its thread pools.
_threads = os.environ.get("MARC_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import click
import numpy as np

from . import calibration as cal
from . import dump as dmp
from . import metrics as met
from . import training as trn
from .core import CalibrationParams, LinearClassifierParams, compute_logits, weight_norms
from .data import LongTailSpec, generate_balanced_test, generate_longtail
from .errors import MarcError


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(command, config, seed, inputs, outputs, started):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {p: _sha256(p) for p in outputs},
        "duration_seconds": round(time.monotonic() - started, 3),
    }
    path = outputs[0] + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return path


def _fail(message):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Long-tailed classification margin calibration toolkit."""


@main.command("gen-data")
@click.option("--classes", "k", type=int, required=True)
@click.option("--dim", type=int, required=True)
@click.option("--n-max", type=int, required=True)
@click.option("--imbalance-factor", type=float, default=1.0, show_default=True)
@click.option("--separation", type=float, default=3.0, show_default=True)
@click.option("--noise", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--balanced-test", "balanced_test", type=int, default=0,
              help="also write a balanced test split with this many samples per class")
def gen_data(k, dim, n_max, imbalance_factor, separation, noise, seed, out, balanced_test):
    """Generate a long-tailed synthetic dataset (and optional balanced test split)."""
    started = time.monotonic()
    try:
        spec = LongTailSpec(k, dim, n_max, imbalance_factor, separation, noise, seed)
        ds = generate_longtail(spec)
        meta, sections = dmp.dataset_to_sections(ds)
        dmp.write_dump(out, meta, sections)
        outputs = [out]
        if balanced_test > 0:
            test = generate_balanced_test(spec, balanced_test)
            test_path = _test_path(out)
            tm, ts = dmp.dataset_to_sections(test)
            dmp.write_dump(test_path, tm, ts)
            outputs.append(test_path)
    except MarcError as exc:
        _fail(str(exc))
    counts = ds.class_counts
    click.echo(f"wrote {out}: N={ds.num_samples}, K={k}, p={dim}, "
               f"counts {counts[0]}..{counts[-1]}")
    if balanced_test > 0:
        click.echo(f"wrote {outputs[1]}: balanced test, {balanced_test}/class")
    config = dict(classes=k, dim=dim, n_max=n_max, imbalance_factor=imbalance_factor,
                  separation=separation, noise=noise, seed=seed,
                  balanced_test=balanced_test)
    _write_manifest("gen-data", config, seed, [], outputs, started)


def _test_path(train_path):
    root, ext = os.path.splitext(train_path)
    return f"{root}.test{ext}"


def _load_model(path):
    meta, sections = dmp.read_dump(path)
    clf = LinearClassifierParams(
        sections["clf_weights"].astype(np.float64),
        sections["clf_bias"].ravel().astype(np.float64),
    )
    if "backbone_weights" in sections:
        bb = trn.BackboneParams(
            sections["backbone_weights"].astype(np.float64),
            sections["backbone_bias"].ravel().astype(np.float64),
        )
    else:
        bb = trn.BackboneParams.identity(clf.feature_dim)
    return meta, bb, clf


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--momentum", type=float, default=0.9, show_default=True)
@click.option("--weight-decay", type=float, default=5e-4, show_default=True)
@click.option("--hidden", type=int, default=0, show_default=True,
              help="hidden layer width; 0 keeps the identity backbone")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out", type=click.Path(), required=True)
def train(data, epochs, batch_size, lr, momentum, weight_decay, hidden, seed, out):
    """Stage 1: standard training with instance-balanced sampling."""
    started = time.monotonic()
    try:
        ds = dmp.dataset_from_dump(data)
        cfg = trn.TrainConfig(epochs, batch_size, lr, momentum, weight_decay, seed)
        bb, clf, curve = trn.train_standard(ds, cfg, hidden=hidden)
    except MarcError as exc:
        _fail(str(exc))
    meta = {
        "k": clf.num_classes, "p": ds.feature_dim, "hidden": hidden,
        "class_counts": [int(c) for c in ds.class_counts], "name": ds.name,
    }
    sections = {
        "clf_weights": dmp.as_f32(clf.weights),
        "clf_bias": dmp.as_f32(clf.biases),
    }
    if not bb.is_identity:
        sections["backbone_weights"] = dmp.as_f32(bb.hidden_weights)
        sections["backbone_bias"] = dmp.as_f32(bb.hidden_bias)
    dmp.write_dump(out, meta, sections)

    feats = trn.backbone_forward(bb, ds.features)
    preds = np.argmax(compute_logits(clf, feats), axis=1)
    acc = float((preds == ds.labels).mean())
    final_loss = curve[-1] if curve else float("nan")
    click.echo(f"wrote {out}: final train loss {final_loss:.6f}, train accuracy {acc:.4f}")
    config = dict(data=data, epochs=epochs, batch_size=batch_size, lr=lr,
                  momentum=momentum, weight_decay=weight_decay, hidden=hidden, seed=seed)
    _write_manifest("train", config, seed, [data], [out], started)


@main.command()
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--gamma", type=float, default=1.2, show_default=True)
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def calibrate(model, data, gamma, epochs, batch_size, lr, seed, out):
    """Stage 2: learn per-class margin calibration over the frozen model."""
    started = time.monotonic()
    try:
        meta, bb, clf = _load_model(model)
        ds = dmp.dataset_from_dump(data)
        if clf.num_classes != ds.num_classes:
            _fail(f"model has {clf.num_classes} classes but data has {ds.num_classes}")
        if meta.get("p") != ds.feature_dim and bb.is_identity:
            _fail(f"model expects p={meta.get('p')} but data has p={ds.feature_dim}")
        logits, norms = cal.frozen_logits_and_norms(ds, clf, bb)
        cfg = cal.CalibConfig(gamma, epochs, batch_size, lr, seed=seed)
        calib, _ = cal.train_marc(ds, logits, norms, cfg)
    except MarcError as exc:
        _fail(str(exc))
    dmp.write_dump(out, {"k": calib.num_classes, "gamma": gamma}, {
        "calib_omega": dmp.as_f32(calib.omega),
        "calib_beta": dmp.as_f32(calib.beta),
    })
    before = _balanced_acc(np.argmax(logits, axis=1), ds.labels, ds.num_classes)
    after = _balanced_acc(cal.apply_calibration(calib, logits, norms), ds.labels, ds.num_classes)
    click.echo(f"wrote {out}: balanced accuracy on training data "
               f"{before:.4f} -> {after:.4f}")
    config = dict(model=model, data=data, gamma=gamma, epochs=epochs,
                  batch_size=batch_size, lr=lr, seed=seed)
    _write_manifest("calibrate", config, seed, [model, data], [out], started)


def _balanced_acc(preds, labels, k):
    accs = [float((preds[labels == j] == j).mean()) for j in range(k) if (labels == j).any()]
    return float(np.mean(accs))


def _load_calib(path):
    meta, sections = dmp.read_dump(path)
    return CalibrationParams(
        sections["calib_omega"].ravel().astype(np.float64),
        sections["calib_beta"].ravel().astype(np.float64),
    )


@main.command("eval")
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--calib", "calib_path", type=click.Path(exists=True), default=None)
@click.option("--baseline", default=None,
              help="tau-norm:TAU, crt, or lws (crt/lws need --data and a stage-2 budget)")
@click.option("--data", type=click.Path(exists=True), default=None,
              help="training data, required for the crt and lws baselines")
@click.option("--test", "test_path", type=click.Path(exists=True), required=True)
@click.option("--epochs", type=int, default=10, show_default=True,
              help="stage-2 budget for crt/lws baselines")
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--report", "report_path", type=click.Path(), required=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--figures", "figures_dir", type=click.Path(), default=None,
              help="directory for rendered figures (margin/logit profiles, "
                   "per-class accuracy, confusion matrices)")
def eval_cmd(model, calib_path, baseline, data, test_path, epochs, batch_size, lr,
             seed, report_path, csv_path, figures_dir):
    """Evaluate a model on a test set, optionally after calibration or a baseline."""
    started = time.monotonic()
    if calib_path and baseline:
        _fail("--calib and --baseline are mutually exclusive")
    try:
        meta, bb, clf = _load_model(model)
        test = dmp.dataset_from_dump(test_path)
        counts_train = np.asarray(meta.get("class_counts"), dtype=np.int64)
        feats = trn.backbone_forward(bb, test.features)
        logits = compute_logits(clf, feats)
        norms = weight_norms(clf)
        margins = logits / norms

        report_before = met.evaluate(
            np.argmax(logits, axis=1), test.labels, counts_train, margins, logits
        )
        calib = None
        report_after = None
        inputs = [model, test_path]

        if calib_path:
            calib = _load_calib(calib_path)
            inputs.append(calib_path)
            cal_logits = cal.calibrated_logits(calib, logits, norms)
            report_after = met.evaluate(
                np.argmax(cal_logits, axis=1), test.labels, counts_train,
                cal_logits / norms, cal_logits,
            )
        elif baseline:
            report_after, inputs = _run_baseline(
                baseline, data, bb, clf, test, counts_train, feats,
                epochs, batch_size, lr, seed, inputs,
            )

        profile = met.margin_logit_profile(
            LinearClassifierParams(clf.weights, clf.biases), calib,
            _with_features(test, feats),
        )
        payload = {"before": json.loads(report_before.to_json())}
        if report_after is not None:
            payload["after"] = json.loads(report_after.to_json())
        with open(report_path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
        outputs = [report_path]
        if csv_path:
            active = report_after if report_after is not None else report_before
            with open(csv_path, "w") as fh:
                fh.write(active.to_csv())
            outputs.append(csv_path)
        if figures_dir:
            from .plots import render_report_figures

            outputs += render_report_figures(report_before, report_after, profile, figures_dir)
    except MarcError as exc:
        _fail(str(exc))
    click.echo(f"wrote {report_path}: balanced accuracy before "
               f"{report_before.balanced_acc:.4f}"
               + (f", after {report_after.balanced_acc:.4f}" if report_after else ""))
    config = dict(model=model, calib=calib_path, baseline=baseline, data=data,
                  test=test_path, epochs=epochs, batch_size=batch_size, lr=lr, seed=seed)
    _write_manifest("eval", config, seed, inputs, outputs, started)


def _with_features(ds, feats):
    from .data import FeatureDataset

    return FeatureDataset(feats, ds.labels, ds.class_counts, name=ds.name)


def _run_baseline(baseline, data, bb, clf, test, counts_train, test_feats,
                  epochs, batch_size, lr, seed, inputs):
    if baseline.startswith("tau-norm:"):
        tau = float(baseline.split(":", 1)[1])
        adjusted = cal.tau_norm(clf, tau)
        logits = compute_logits(adjusted, test_feats)
        norms = weight_norms(adjusted)
    elif baseline in ("crt", "lws"):
        if not data:
            _fail(f"--baseline {baseline} requires --data (training set)")
        train_ds = dmp.dataset_from_dump(data)
        inputs = inputs + [data]
        cfg_kwargs = dict(epochs=epochs, batch_size=batch_size, lr_init=lr, seed=seed)
        if baseline == "crt":
            ccfg = cal.CalibConfig(gamma=0.0, **cfg_kwargs)
            new_clf = cal.crt_retrain(
                _with_features(train_ds, trn.backbone_forward(bb, train_ds.features)),
                None, (clf.num_classes, clf.feature_dim), ccfg,
            )
            logits = compute_logits(new_clf, test_feats)
            norms = weight_norms(new_clf)
        else:
            train_feats = trn.backbone_forward(bb, train_ds.features)
            train_logits = compute_logits(clf, train_feats)
            ccfg = cal.CalibConfig(gamma=0.0, **cfg_kwargs)
            scales = cal.lws_train(train_ds, train_logits, ccfg)
            logits = scales * compute_logits(clf, test_feats)
            norms = weight_norms(clf)
    else:
        _fail(f"unknown baseline {baseline!r}; use tau-norm:TAU, crt or lws")
    report = met.evaluate(
        np.argmax(logits, axis=1), test.labels, counts_train, logits / norms, logits
    )
    return report, inputs


if __name__ == "__main__":
    main()

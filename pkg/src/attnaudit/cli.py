"""Command-line front end for audit workflows.

Exit codes: 0 = benign / success, 1 = usage error, 2 = data error,
3 = backdoored. A verdict is not an error, hence the dedicated code.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import sys

import numpy as np

from . import baselines, detector, report, synth
from .detector import BACKDOORED, DEFAULT_TAU
from .entropy import DEFAULT_EPSILON, EntropyConfig, layer_signature
from .trace import TraceError, read_trace, validate_trace, write_trace

EXIT_BENIGN = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKDOORED = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse hook
        raise UsageError(message)


def _entropy_config(args) -> EntropyConfig:
    try:
        return EntropyConfig(measure=args.measure, q=args.q, alpha=args.alpha, epsilon=args.epsilon)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_trace(path: str):
    try:
        return read_trace(path)
    except (TraceError, OSError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _load_profile(path: str):
    try:
        return report.load_profile(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _timestamp(args) -> str | None:
    return None if args.no_timestamp else report.utc_timestamp()


def _emit(args, human_text: str, doc: dict | None) -> None:
    if getattr(args, "format", "human") == "structured" and doc is not None:
        content = report.dumps_document(doc)
    else:
        content = human_text if human_text.endswith("\n") else human_text + "\n"
    if getattr(args, "output", None):
        report.write_text(content, args.output)
    else:
        sys.stdout.write(content)


def _scan_human(rep: detector.DetectionReport, reference: str, target: str) -> str:
    lines = [
        f"verdict: {rep.verdict}",
        f"auc: {rep.auc:.6f}  tau: {rep.tau}  layer: {rep.layer}  samples: {rep.profile.sample_count}",
        f"reference: {reference}",
        f"target: {target}",
        (
            f"profile: mu_ref={rep.profile.mu_ref:.6g} sigma_ref={rep.profile.sigma_ref:.6g} "
            f"median={rep.profile.median_m:.6g}"
        ),
    ]
    lines += [f"warning: {w}" for w in rep.warnings]
    return "\n".join(lines)


def cmd_scan(args) -> int:
    config = _entropy_config(args)
    trace_target = _load_trace(args.target)
    try:
        if args.profile:
            profile, signatures = _load_profile(args.profile)
            rep = detector.scan_with_profile(profile, signatures, trace_target, tau=args.tau)
            reference = f"profile:{args.profile}"
        else:
            trace_ref = _load_trace(args.reference)
            rep = detector.scan(trace_ref, trace_target, config, layer=args.layer, tau=args.tau)
            reference = trace_ref.header.model_id
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    doc = report.scan_document(
        rep, reference, trace_target.header.model_id, timestamp=_timestamp(args)
    )
    _emit(args, _scan_human(rep, reference, trace_target.header.model_id), doc)
    return EXIT_BACKDOORED if rep.verdict == BACKDOORED else EXIT_BENIGN


def cmd_profile(args) -> int:
    config = _entropy_config(args)
    trace_ref = _load_trace(args.reference)
    if args.layer not in trace_ref.header.layers_recorded:
        raise DataError(f"layer {args.layer} is not recorded in the reference trace")
    try:
        signatures = np.array(
            [
                layer_signature(r.attention[args.layer], config, args.layer).value
                for r in trace_ref.records
            ]
        )
        profile = detector.build_reference_profile(signatures, config, layer=args.layer)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    doc = report.profile_document(
        profile, signatures, trace_ref.header.model_id, timestamp=_timestamp(args)
    )
    if args.output:
        report.write_document(doc, args.output)
        sys.stdout.write(f"profile written to {args.output} (samples={profile.sample_count})\n")
    else:
        sys.stdout.write(report.dumps_document(doc))
    return EXIT_BENIGN


def _missing_layer(layer: int, which: str):
    raise DataError(f"layer {layer} is not recorded in the {which} trace")


def cmd_sweep(args) -> int:
    config = _entropy_config(args)
    trace_ref = _load_trace(args.reference)
    trace_target = _load_trace(args.target)
    try:
        per_layer = detector.layer_sweep(trace_ref, trace_target, config)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    doc = report.sweep_document(
        per_layer,
        config,
        trace_ref.header.model_id,
        trace_target.header.model_id,
        timestamp=_timestamp(args),
    )
    lines = ["layer  auc"]
    lines += [f"{layer:>5}  {per_layer[layer]:.6f}" for layer in sorted(per_layer)]
    lines.append(f"argmax layer: {doc['argmax_layer']}")
    _emit(args, "\n".join(lines), doc)
    return EXIT_BENIGN


def _pooled_features(path: str) -> np.ndarray:
    trace = _load_trace(path)
    if not trace.header.has_pooled_hidden:
        raise DataError(f"{path}: pooled_hidden absent from trace")
    return np.stack([r.pooled_hidden for r in trace.records]).astype(np.float64)


def _response_texts(path: str) -> list[str]:
    trace = _load_trace(path)
    if not trace.header.has_response_text:
        raise DataError(f"{path}: response_text absent from trace")
    return [r.response_text for r in trace.records]


def cmd_baseline(args) -> int:
    timestamp = _timestamp(args)
    if args.kind in ("ac", "srd") and not (args.reference and args.target):
        raise UsageError(f"baseline {args.kind} requires --reference and --target")

    if args.kind == "ac":
        ref = _pooled_features(args.reference)
        target = _pooled_features(args.target)
        try:
            outcome = baselines.ac_detect(
                ref, target, k_pca=args.k_pca, ari_threshold=args.ari_threshold, seed=args.seed
            )
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        doc = {
            "kind": "baseline-report",
            "format": report.DOCUMENT_FORMAT,
            "baseline": "ac",
            "ari": outcome.ari,
            "ari_threshold": args.ari_threshold,
            "verdict": outcome.verdict,
        }
        human = f"baseline: ac\nari: {outcome.ari:.6f}  threshold: {args.ari_threshold}\nverdict: {outcome.verdict}"
        flagged = outcome.verdict == BACKDOORED

    elif args.kind == "srd":
        ref_texts = _response_texts(args.reference)
        target_texts = _response_texts(args.target)
        try:
            outcome = baselines.srd_detect(ref_texts, target_texts, srd_threshold=args.srd_threshold)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        doc = {
            "kind": "baseline-report",
            "format": report.DOCUMENT_FORMAT,
            "baseline": "srd",
            "score": outcome.score,
            "sfs_model": outcome.sfs_model,
            "srd_threshold": args.srd_threshold,
            "verdict": outcome.verdict,
        }
        human = (
            f"baseline: srd\nscore: {outcome.score:.6f}  threshold: {args.srd_threshold}\n"
            f"verdict: {outcome.verdict}"
        )
        flagged = outcome.verdict == BACKDOORED

    else:
        if len(args.traces) < 4:
            raise UsageError("baseline bye requires at least 4 trace paths")
        traces = [_load_trace(p) for p in args.traces]
        layer_sets = {t.header.layers_recorded for t in traces}
        if len(layer_sets) != 1:
            raise DataError("bye traces do not share one recorded layer set")
        layers = traces[0].header.layers_recorded
        profiles = []
        # keyed by path: model ids may repeat across a pool of checkpoints
        for path, trace in zip(args.traces, traces):
            vectors = np.stack([baselines.bye_entropy_vector(r, args.epsilon) for r in trace.records])
            profiles.append((path, vectors.mean(axis=0)))
        try:
            outcome = baselines.bye_detect(
                profiles, bsi_threshold=args.bsi_threshold, seed=args.seed, layers=layers
            )
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        doc = {
            "kind": "baseline-report",
            "format": report.DOCUMENT_FORMAT,
            "baseline": "bye",
            "bsi_threshold": args.bsi_threshold,
            "bsi_by_layer": [
                {"layer": l, "bsi": outcome.bsi_by_layer[l]} for l in sorted(outcome.bsi_by_layer)
            ],
            "selected_layers": list(outcome.selected_layers),
            "scores": outcome.scores,
            "verdicts": outcome.verdicts,
            "warnings": [outcome.warning] if outcome.warning else [],
        }
        lines = ["baseline: bye", f"selected layers: {list(outcome.selected_layers)}"]
        lines += [f"{m}: {v} (score {outcome.scores[m]:.6f})" for m, v in outcome.verdicts.items()]
        if outcome.warning:
            lines.append(f"warning: {outcome.warning}")
        human = "\n".join(lines)
        flagged = BACKDOORED in outcome.verdicts.values()

    if timestamp is not None:
        doc["generated_at"] = timestamp
    _emit(args, human, doc)
    return EXIT_BACKDOORED if flagged else EXIT_BENIGN


def cmd_synth(args) -> int:
    try:
        spec = synth.SyntheticSpec(
            num_samples=args.samples,
            layers=tuple(args.layers),
            heads=args.heads,
            visual_len=args.visual_len,
            steps_range=(args.steps_min, args.steps_max),
            benign_concentration=args.concentration,
            anomaly_layer=args.anomaly_layer,
            anomaly_fraction=args.anomaly_fraction,
            anomaly_strength=args.anomaly_strength,
            seed=args.seed,
            include_pooled_hidden=args.pooled_hidden,
            hidden_dim=args.hidden_dim,
            include_response_text=args.response_text,
        )
        trace = (
            synth.gen_backdoored_trace(spec)
            if args.kind == "backdoored"
            else synth.gen_benign_trace(spec)
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    buffer = io.BytesIO()
    size = write_trace(trace.header, list(trace.records), buffer)
    payload = buffer.getvalue()
    report.write_bytes(payload, args.output)
    digest = hashlib.sha256(payload).hexdigest()
    sys.stdout.write(
        f"wrote {args.kind} trace: {args.output}\n"
        f"spec: samples={spec.num_samples} layers={list(spec.layers)} heads={spec.heads} "
        f"visual_len={spec.visual_len} steps={spec.steps_range} "
        f"concentration={spec.benign_concentration} anomaly(layer={spec.anomaly_layer}, "
        f"fraction={spec.anomaly_fraction}, strength={spec.anomaly_strength}) seed={spec.seed}\n"
        f"bytes: {size}\nsha256: {digest}\n"
    )
    return EXIT_BENIGN


def cmd_validate(args) -> int:
    trace = _load_trace(args.trace)
    violations = validate_trace(trace)
    if violations:
        sys.stdout.write("\n".join(violations) + "\n")
        return EXIT_DATA
    sys.stdout.write(f"ok: {args.trace} ({trace.header.num_samples} records)\n")
    return EXIT_BENIGN


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    measure = _Parser(add_help=False)
    measure.add_argument("--measure", choices=("tsallis", "shannon", "renyi"), default="tsallis")
    measure.add_argument("--q", type=float, default=2.0, help="Tsallis entropic index")
    measure.add_argument("--alpha", type=float, default=2.0, help="Renyi order")
    measure.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)

    output = _Parser(add_help=False)
    output.add_argument("--format", choices=("human", "structured"), default="human")
    output.add_argument("--output", help="write the report to this path instead of stdout")
    output.add_argument(
        "--no-timestamp",
        action="store_true",
        help="omit the generated_at field for reproducible output",
    )

    parser = _Parser(prog="attnaudit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", parents=[measure, output], help="audit a target trace")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--reference", help="benign reference trace")
    src.add_argument("--profile", help="saved reference-profile artifact")
    p.add_argument("--target", required=True, help="suspect model trace")
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("profile", parents=[measure], help="persist a reference profile")
    p.add_argument("--reference", required=True)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--output", help="artifact path (stdout when omitted)")
    p.add_argument("--no-timestamp", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("sweep", parents=[measure, output], help="per-layer AUC table")
    p.add_argument("--reference", required=True)
    p.add_argument("--target", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline", parents=[measure, output], help="run a comparison detector")
    p.add_argument("--kind", choices=("ac", "bye", "srd"), required=True)
    p.add_argument("--reference")
    p.add_argument("--target")
    p.add_argument("traces", nargs="*", help="trace pool for --kind bye (>= 4 paths)")
    p.add_argument("--k-pca", type=int, default=baselines.DEFAULT_K_PCA)
    p.add_argument("--ari-threshold", type=float, default=baselines.DEFAULT_ARI_THRESHOLD)
    p.add_argument("--bsi-threshold", type=float, default=baselines.DEFAULT_BSI_THRESHOLD)
    p.add_argument("--srd-threshold", type=float, default=baselines.DEFAULT_SRD_THRESHOLD)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("synth", help="generate a synthetic trace")
    p.add_argument("--kind", choices=("benign", "backdoored"), default="benign")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--layers", type=_int_list, default=[0])
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--visual-len", type=int, default=64)
    p.add_argument("--steps-min", type=int, default=4)
    p.add_argument("--steps-max", type=int, default=8)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--anomaly-layer", type=int, default=0)
    p.add_argument("--anomaly-fraction", type=float, default=0.05)
    p.add_argument("--anomaly-strength", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pooled-hidden", action="store_true")
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--response-text", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check a trace file's invariants")
    p.add_argument("trace")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except OSError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())

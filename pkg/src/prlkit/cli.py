"""Command-line client for the pipeline.

Each subcommand builds the same request model the HTTP service consumes
and either dispatches it in process (default) or POSTs it to a running
service (`--server http://host:port`). Exit codes: 0 success (warnings
allowed), 2 input contract violation, 3 internal failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import InputError, PrlkitError
from .service import handlers, schemas

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3

_LOCAL = {
    "prep": (schemas.PrepRequest, handlers.handle_prep),
    "detect": (schemas.DetectRequest, handlers.handle_detect),
    "tune": (schemas.TuneRequest, handlers.handle_tune),
    "eval": (schemas.EvalRequest, handlers.handle_eval),
    "phantom": (schemas.PhantomRequest, handlers.handle_phantom),
}


def _band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return (lo, hi)


def _int_pair(text: str) -> tuple[int, int]:
    try:
        a, b = (int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return (a, b)


def _float_pair(text: str) -> tuple[float, float]:
    return _band(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prlkit",
        description="Paramagnetic rim lesion detection: patch prep, rim segmentation, "
        "PRL classification, threshold tuning, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", dest="config_path", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None, help="worker pool size (results are identical for any value)")
        p.add_argument("--out", dest="out_dir", required=True, help="output directory")
        p.add_argument("--server", default=None, metavar="URL",
                       help="send the command to a running prlkit service instead of executing locally")

    p = sub.add_parser("prep", help="split a QSM / FLAIR-mask pair into per-lesion patches")
    p.add_argument("--qsm", dest="qsm_path", required=True)
    p.add_argument("--flair-mask", dest="flair_mask_path", required=True)
    p.add_argument("--subject", dest="subject_id", default="subject")
    p.add_argument("--dilation-mm", dest="dilation_mm", type=float, default=None)
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26), default=None)
    common(p)

    p = sub.add_parser("detect", help="segment rims and classify lesions at (tau_p, tau_r)")
    p.add_argument("--manifest", dest="manifest_path", required=True)
    p.add_argument("--tau-p", dest="tau_p", type=float, default=None)
    p.add_argument("--tau-r", dest="tau_r", type=float, default=None)
    p.add_argument("--prob-dir", dest="prob_dir", default=None,
                   help="directory of les-XXXX_prob.nii.gz maps overriding the manifest")
    p.add_argument("--measures-csv", dest="write_measures", action="store_true",
                   help="also dump per-slice rim length / perimeter rows")
    common(p)

    p = sub.add_parser("tune", help="cross-validated grid search for (tau_p, tau_r)")
    p.add_argument("--manifest", dest="manifest_path", required=True)
    p.add_argument("--band", type=_band, default=None, metavar="LO,HI",
                   help="sensitivity band, default 0.90,0.95")
    p.add_argument("--folds", dest="n_folds", type=int, default=None)
    common(p)

    p = sub.add_parser("eval", help="score verdicts (and rim masks) against ground truth")
    p.add_argument("--verdicts", dest="verdicts_path", required=True)
    p.add_argument("--manifest", dest="manifest_path", required=True)
    p.add_argument("--pred-rims", dest="pred_rims_dir", default=None,
                   help="directory of predicted rim masks for Dice scoring")
    common(p)

    p = sub.add_parser("phantom", help="generate a synthetic labeled cohort")
    p.add_argument("--subjects", dest="n_subjects", type=int, default=None)
    p.add_argument("--lesions-per-subject", dest="lesions_per_subject", type=_int_pair, default=None, metavar="LO,HI")
    p.add_argument("--prl-fraction", dest="prl_fraction", type=float, default=None)
    p.add_argument("--rim-thickness", dest="rim_thickness_vox", type=_int_pair, default=None, metavar="LO,HI")
    p.add_argument("--partial-rim-fraction", dest="partial_rim_fraction", type=float, default=None)
    p.add_argument("--rim-arc-degrees", dest="rim_arc_degrees", type=_float_pair, default=None, metavar="LO,HI")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
    p.add_argument("--blur-radius", dest="blur_radius_vox", type=float, default=None)
    common(p)

    return parser


def _request_from_args(command: str, args: argparse.Namespace):
    model, _ = _LOCAL[command]
    payload = {k: v for k, v in vars(args).items() if k not in ("command", "server") and v is not None}
    if command != "detect":
        payload.pop("write_measures", None)
    return model(**payload)


def _run_local(command: str, request) -> dict:
    _, handler = _LOCAL[command]
    response = handler(request)
    return response.model_dump()


def _run_remote(server: str, command: str, request) -> tuple[dict, int]:
    import httpx

    url = server.rstrip("/") + "/" + command
    reply = httpx.post(url, json=request.model_dump(), timeout=None)
    if 400 <= reply.status_code < 500:
        return {"error": reply.json().get("detail", reply.text)}, EXIT_INPUT
    if reply.status_code >= 500:
        return {"error": reply.json().get("detail", reply.text)}, EXIT_INTERNAL
    return reply.json(), EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        request = _request_from_args(command, args)
        if args.server:
            result, code = _run_remote(args.server, command, request)
        else:
            result, code = _run_local(command, request), EXIT_OK
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PrlkitError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:
        if type(exc).__module__.startswith("pydantic"):  # flag validation is an input error
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    print(json.dumps(result, indent=2))
    for warning in result.get("warnings") or []:
        print(f"warning: {warning}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""
main.py - Command-line interface.

    run_review.py scenario run <file>
    run_review.py hash <path...>
    run_review.py manifest <dir> [--check FILE]
    run_review.py verify <report.json> [--content-normalized]
    run_review.py case --dir <case dir> <subcommand> ...

JSON results go to standard output, diagnostics to standard error.

Exit codes:
    0  success
    1  expectation mismatch, verification Mismatch, or command rejected
    2  unparseable input: scenario, report, config, dataset link or a tampered event log
    3  IO or transport failure
    4  case directory locked by another process
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import timedelta

from config import Settings, load_settings
from src.errors import (
    CaseLocked,
    ChainBroken,
    ConfigError,
    FetchFailed,
    FixityReviewError,
    GapInSequence,
    InvalidDatasetRef,
    InvalidPath,
    RepositoryError,
    ScenarioError,
    SchemaInvalid,
    UnknownCase,
)
from src.cli.scenario import load_scenario, run_scenario
from src.cli.views import print_case_status
from src.integrity.fixity import check_directory, digest_file, manifest_from_directory, render_manifest
from src.repository.http_fetch import FetchLimits, HttpConnector
from src.repository.models import DatasetRef
from src.review.detection import FindingCategory, Verdict
from src.review.engine import ReviewEngine
from src.review.models import CheckpointKind, Decision, Role
from src.review.report import (
    VerificationMode,
    VerificationVerdict,
    generate_report,
    parse_report,
    verify_against_report,
    write_report,
)
from src.review.store import CaseStore
from src.utils.case_index import CaseIndex
from src.utils.clock import SteppedClock, parse_isoformat
from src.utils.logger import console_message, get_logger, setup_logging
from src.utils.notification_log import NotificationLogger

logger = get_logger("cli")

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_PARSE = 2
EXIT_IO = 3
EXIT_LOCKED = 4


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, CaseLocked):
        return EXIT_LOCKED
    if isinstance(error, (SchemaInvalid, ScenarioError, ConfigError, ChainBroken, GapInSequence, InvalidDatasetRef)):
        return EXIT_PARSE
    if isinstance(error, (FetchFailed, RepositoryError, UnknownCase, InvalidPath, OSError)):
        return EXIT_IO
    return EXIT_REJECTED


def _emit_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _connector(settings: Settings, clock=None, api_base: str | None = None) -> HttpConnector:
    limits = FetchLimits(settings.fetch_max_bytes, settings.fetch_timeout, settings.fetch_max_redirects)
    return HttpConnector(limits, settings.user_agent, api_base=api_base, clock=clock)


# --- top-level commands ------------------------------------------------------

def cmd_scenario_run(args: argparse.Namespace, settings: Settings) -> int:
    script = load_scenario(args.file)
    summary = run_scenario(script, settings)
    _emit_json(summary)
    for failure in summary["failures"]:
        console_message(f"FAIL {failure}", style="red")
    return EXIT_OK if summary["passed"] else EXIT_REJECTED


def cmd_hash(args: argparse.Namespace, settings: Settings) -> int:
    for path in args.paths:
        if os.path.isdir(path):
            digest = manifest_from_directory(path).manifest_digest
            sys.stdout.write(f"{digest.hex}  {path.rstrip('/')}/\n")
        else:
            sys.stdout.write(f"{digest_file(path).hex}  {path}\n")
    return EXIT_OK


def cmd_manifest(args: argparse.Namespace, settings: Settings) -> int:
    if not os.path.isdir(args.directory):
        raise NotADirectoryError(f"Not a directory: {args.directory}")
    if args.check:
        with open(args.check, encoding="utf-8") as f:
            text = f.read()
        try:
            results = check_directory(args.directory, text)
        except ValueError as e:
            raise SchemaInvalid(args.check, str(e)) from e
        for path, status in results:
            sys.stdout.write(f"{path}: {status}\n")
        failed = sum(1 for _, status in results if status != "OK")
        if failed:
            console_message(f"WARNING: {failed} of {len(results)} computed checksums did NOT match", style="red")
            return EXIT_REJECTED
        return EXIT_OK
    sys.stdout.write(render_manifest(manifest_from_directory(args.directory)))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, settings: Settings) -> int:
    with open(args.report, "rb") as f:
        report = parse_report(f.read())
    mode = VerificationMode.CONTENT_NORMALIZED if args.content_normalized else VerificationMode.STRICT
    connector = _connector(settings)
    try:
        outcome = verify_against_report(report, connector, mode, settings.make_clock())
    finally:
        connector.close()
    _emit_json(outcome.to_dict())
    console_message(outcome.verdict.value)
    if outcome.verdict is VerificationVerdict.MISMATCH:
        return EXIT_REJECTED
    if outcome.verdict is VerificationVerdict.INACCESSIBLE:
        return EXIT_IO
    return EXIT_OK


# --- case commands -----------------------------------------------------------

def _case_clock(settings: Settings, store: CaseStore):
    """A stepped clock resumes one step after the last logged event."""
    if settings.clock != "stepped" or not store.exists():
        return settings.make_clock()
    last = store.event_log().events()[-1]
    step = timedelta(seconds=settings.clock_step_seconds)
    return SteppedClock(parse_isoformat(last.at) + step, step)


def _meta(pairs: list[str] | None) -> dict:
    meta = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ScenarioError(f"--meta expects key=value, got {pair!r}")
        meta[key] = value
    return meta


def _case_result(case, **extra) -> dict:
    return {
        "case_id": case.case_id,
        "state": case.state.value,
        "seq": case.last_seq,
        "open_findings": [f.finding_id for f in case.open_findings()],
        **extra,
    }


def _run_case_command(args: argparse.Namespace, engine: ReviewEngine, case, store: CaseStore,
                      settings: Settings) -> dict:
    command = args.case_command

    if command == "submit":
        ref = DatasetRef(
            repository_id=args.repository_id,
            dataset_id=args.dataset_id or "",
            landing_url=args.landing_url or "",
            download_link=args.download_link or "",
            persistent_id=args.pid,
        )
        engine.submit(case, _meta(args.meta), ref)
    elif command in ("seal", "accept", "audit"):
        connector = _connector(settings, engine.clock)
        try:
            if command == "accept":
                engine.accept_and_seal(case, connector)
            elif command == "audit":
                record = engine.audit_published(case, connector)
                return _case_result(case, record=record.key)
            else:
                record = engine.seal_checkpoint(case, CheckpointKind(args.checkpoint), connector)
                return _case_result(case, record=record.key)
        finally:
            connector.close()
    elif command == "assign-editor":
        engine.assign_editor(case, args.secretariat, args.editor)
    elif command == "assign":
        engine.assign_referee(case, args.editor, args.referee, conflict_note=args.conflict_note,
                              affiliation=args.affiliation)
    elif command == "comment":
        engine.record_comment(case, args.referee, args.text, args.consent)
    elif command == "consent":
        engine.set_identity_consent(case, args.referee, args.identity_consent == "yes")
    elif command == "request-revision":
        engine.request_revision(case, args.editor, args.note)
    elif command == "revise":
        engine.declare_data_revision(case, args.author, args.note, args.new_link)
    elif command == "resubmit":
        engine.submit_revision(case, args.author)
    elif command == "approve-revision":
        engine.approve_data_revision(case, args.editor)
    elif command == "complete-review":
        engine.complete_review(case, args.editor)
    elif command == "return-to-review":
        engine.return_to_review(case, args.editor)
    elif command == "decide":
        engine.decide(case, args.editor, Decision(args.decision), args.note)
    elif command == "publish":
        paths = []
        engine.publish(case, report_sink=lambda report, data: paths.append(write_report(report, store.directory)))
        return _case_result(case, report=paths[0])
    elif command == "flag":
        finding = engine.flag_policy_finding(case, FindingCategory(args.category), args.reporter,
                                             args.note, tuple(args.evidence or ()))
        return _case_result(case, finding=finding.finding_id)
    elif command == "resolve":
        engine.resolve_finding(case, args.editor, args.finding, args.note, Verdict(args.verdict),
                               resume=args.resume, rebaseline=args.rebaseline)
    elif command == "escalate":
        engine.escalate_finding(case, args.editor, args.finding)
    return _case_result(case)


def cmd_case(args: argparse.Namespace, settings: Settings) -> int:
    store = CaseStore(args.dir)
    command = args.case_command

    if command == "status":
        case = store.load()
        if args.json:
            _emit_json(case.to_dict())
        else:
            print_case_status(case)
        return EXIT_OK
    if command == "audit-export":
        store.load()
        with CaseIndex(store.index_path) as index:
            count = index.export_findings_csv(args.out)
        _emit_json({"exported": count, "path": args.out})
        return EXIT_OK
    if command == "report":
        case = store.load()
        report = generate_report(case)
        sys.stdout.write(report.model_dump_json(indent=2) + "\n")
        return EXIT_OK

    with store.lock():
        clock = _case_clock(settings, store)
        engine = ReviewEngine(settings, clock=clock,
                              notification_sink=NotificationLogger(store.notifications_dir, clock),
                              secretariat=getattr(args, "secretariat", "secretariat"))
        if command == "open":
            if store.exists():
                raise FixityReviewError(f"{args.dir} already holds a case")
            case = engine.open_case(args.case_id, args.author, log=store.event_log())
            store.sync(case)
            result = _case_result(case)
        else:
            case = store.load()
            engine.secretariat = (case.people(Role.SECRETARIAT) or [engine.secretariat])[0]
            engine.attach(case, store.event_log())
            try:
                result = _run_case_command(args, engine, case, store, settings)
            finally:
                store.sync(case)
    _emit_json(result)
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fixity-review",
        description="Hash-based data integrity checks for data journal peer review.",
    )
    parser.add_argument("--config", help="JSON config file (default: fixity-review.json if present)")
    parser.add_argument("--probe-count", type=int, help="downloads per checkpoint seal (>= 2)")
    parser.add_argument("--comparison-mode", choices=["content-normalized", "raw"])
    parser.add_argument("--clock", choices=["system", "stepped"])
    parser.add_argument("--clock-start", help="first timestamp of the stepped clock")
    parser.add_argument("--clock-step-seconds", type=int)
    parser.add_argument("--fetch-timeout", type=float)
    parser.add_argument("--fetch-max-bytes", type=int)
    parser.add_argument("--fetch-max-redirects", type=int)
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--log-file")
    sub = parser.add_subparsers(dest="command", required=True)

    scenario = sub.add_parser("scenario", help="Scripted review scenarios")
    scenario_sub = scenario.add_subparsers(dest="scenario_command", required=True)
    run = scenario_sub.add_parser("run", help="Run a scenario file and print its summary")
    run.add_argument("file")
    run.set_defaults(func=cmd_scenario_run)

    hash_cmd = sub.add_parser("hash", help="SHA-256 of files (manifest digest of directories)")
    hash_cmd.add_argument("paths", nargs="+")
    hash_cmd.set_defaults(func=cmd_hash)

    manifest = sub.add_parser("manifest", help="Canonical manifest of a directory")
    manifest.add_argument("directory")
    manifest.add_argument("--check", metavar="FILE", help="verify the directory against a manifest file")
    manifest.set_defaults(func=cmd_manifest)

    verify = sub.add_parser("verify", help="Check published data against a review report")
    verify.add_argument("report")
    verify.add_argument("--content-normalized", action="store_true",
                        help="accept re-archived data whose content is unchanged")
    verify.set_defaults(func=cmd_verify)

    case = sub.add_parser("case", help="Operate on a persisted review case")
    case.add_argument("--dir", required=True, help="case directory")
    case.set_defaults(func=cmd_case)
    cs = case.add_subparsers(dest="case_command", required=True)

    p = cs.add_parser("open")
    p.add_argument("--case-id", required=True)
    p.add_argument("--author", required=True)
    p.add_argument("--secretariat", default="secretariat")

    p = cs.add_parser("submit")
    p.add_argument("--landing-url")
    p.add_argument("--download-link")
    p.add_argument("--repository-id", default="external")
    p.add_argument("--dataset-id")
    p.add_argument("--pid", help="persistent identifier, e.g. a DOI")
    p.add_argument("--meta", action="append", metavar="KEY=VALUE")

    p = cs.add_parser("seal")
    p.add_argument("--checkpoint", required=True, choices=[k.value for k in CheckpointKind])

    p = cs.add_parser("assign-editor")
    p.add_argument("--secretariat", required=True)
    p.add_argument("--editor", required=True)

    p = cs.add_parser("assign")
    p.add_argument("--editor", required=True)
    p.add_argument("--referee", required=True)
    p.add_argument("--affiliation")
    p.add_argument("--conflict-note")

    p = cs.add_parser("comment")
    p.add_argument("--referee", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--consent", action="store_true", help="publish the referee's identity")

    p = cs.add_parser("consent")
    p.add_argument("--referee", required=True)
    p.add_argument("--identity-consent", required=True, choices=["yes", "no"])

    p = cs.add_parser("request-revision")
    p.add_argument("--editor", required=True)
    p.add_argument("--note", default="")

    p = cs.add_parser("revise", help="declare a data revision")
    p.add_argument("--author", required=True)
    p.add_argument("--note", required=True)
    p.add_argument("--new-link", help="download link of the revised data")

    p = cs.add_parser("resubmit", help="submit the revised manuscript")
    p.add_argument("--author", required=True)

    for name in ("approve-revision", "complete-review", "return-to-review"):
        p = cs.add_parser(name)
        p.add_argument("--editor", required=True)

    p = cs.add_parser("decide")
    p.add_argument("--editor", required=True)
    p.add_argument("--decision", required=True, choices=[d.value for d in Decision])
    p.add_argument("--note", default="")

    cs.add_parser("accept", help="seal the accepted data")
    cs.add_parser("publish", help="publish and write the review report")
    cs.add_parser("audit", help="re-check published data against the acceptance seal")

    p = cs.add_parser("flag", help="report a policy-only finding")
    p.add_argument("--reporter", required=True)
    p.add_argument("--category", required=True, choices=[c.value for c in FindingCategory])
    p.add_argument("--note", required=True)
    p.add_argument("--evidence", action="append")

    p = cs.add_parser("resolve")
    p.add_argument("--editor", required=True)
    p.add_argument("--finding", required=True)
    p.add_argument("--verdict", required=True, choices=[v.value for v in Verdict])
    p.add_argument("--note", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--rebaseline", action="store_true", help="adopt the finding's record as baseline")

    p = cs.add_parser("escalate")
    p.add_argument("--editor", required=True)
    p.add_argument("--finding", required=True)

    p = cs.add_parser("status")
    p.add_argument("--json", action="store_true")

    cs.add_parser("report", help="print the review report of a sealed or published case")

    p = cs.add_parser("audit-export", help="export findings to CSV")
    p.add_argument("--out", required=True)

    return parser


def _overrides(args: argparse.Namespace) -> dict:
    names = ("probe_count", "comparison_mode", "clock", "clock_start", "clock_step_seconds",
             "fetch_timeout", "fetch_max_bytes", "fetch_max_redirects", "log_level", "log_file")
    return {name: getattr(args, name) for name in names if getattr(args, name) is not None}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_PARSE if e.code else EXIT_OK

    try:
        settings = load_settings(args.config, _overrides(args))
    except ConfigError as e:
        console_message(f"error: {e}", style="red")
        return EXIT_PARSE
    setup_logging(settings.log_level, settings.log_file)

    try:
        return args.func(args, settings)
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        return 130
    except (FixityReviewError, OSError) as e:
        code = exit_code_for(e)
        console_message(f"error: {type(e).__name__}: {e}", style="red")
        logger.debug(f"{args.command} failed with exit code {code}")
        return code

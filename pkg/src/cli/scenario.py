"""
scenario.py - Scripted review scenarios.

A scenario declares a simulated repository, the people involved, a list of
steps and the expectations the run must meet. Runs use a stepped clock, so
the same script always produces the same summary. Links never appear in the
summary because the loopback facade binds a random port.

Script layout::

    {
      "name": "case1",
      "clock": {"start": "2019-03-01T09:00:00Z", "step_seconds": 60},
      "repository": {"behavior": "TimestampZip", "via_http": false,
                     "datasets": [{"dataset_id": "obs", "files": {"a.csv": "..."},
                                   "persistent_id": "doi:10.0/obs"}]},
      "actors": {"alice": {"role": "Author"}, "sec": {"role": "Secretariat"}},
      "case": {"case_id": "C-1", "dataset": "obs", "manuscript_meta": {"title": "..."}},
      "steps": [{"actor": "alice", "command": "open"}, ...],
      "expectations": [{"final_state": "Published"},
                       {"finding": "ContainerNondeterminismAdvisory"}, ...]
    }
"""

from __future__ import annotations

import json
from dataclasses import replace
from datetime import timedelta
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config import Settings
from src.errors import FetchFailed, FixityReviewError, NotFound, ScenarioError
from src.repository.conformance import check_repo_requirements
from src.repository.http_fetch import FetchLimits, HttpConnector
from src.repository.loopback import LoopbackFacade
from src.repository.models import DatasetRef
from src.repository.simulated import RepositoryBehavior, simulated_repo
from src.review.detection import Disposition, FindingCategory, Verdict
from src.review.engine import ReviewEngine
from src.review.models import CaseState, CheckpointKind, Decision, Role
from src.review.report import VerificationMode, VerificationVerdict, verify_against_report
from src.utils.clock import SteppedClock, parse_isoformat
from src.utils.logger import get_logger
from src.utils.notification_log import NotificationLogger

logger = get_logger("scenario")

COMMANDS = (
    "open", "submit", "seal", "assign_editor", "assign_referee", "comment", "consent",
    "request_revision", "declare_revision", "approve_revision", "submit_revision",
    "complete_review", "return_to_review", "decide", "accept", "publish", "audit",
    "flag", "resolve", "escalate", "verify", "admin_replace", "admin_withdraw", "check_repo",
)


class _Script(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ClockSpec(_Script):
    start: str = "2019-03-01T09:00:00Z"
    step_seconds: int = Field(default=60, ge=2)


class DatasetSpec(_Script):
    dataset_id: str = Field(min_length=1)
    files: dict[str, str] = Field(min_length=1)
    persistent_id: str | None = None


class RepositorySpec(_Script):
    behavior: RepositoryBehavior = RepositoryBehavior.FAITHFUL
    via_http: bool = False
    repository_id: str = "sim-repo"
    datasets: list[DatasetSpec] = Field(min_length=1)


class ActorSpec(_Script):
    role: Role
    affiliation: str | None = None


class CaseSpec(_Script):
    case_id: str = Field(min_length=1)
    dataset: str
    manuscript_meta: dict[str, str] = Field(default_factory=dict)


class Step(_Script):
    actor: str
    command: Literal[COMMANDS]  # type: ignore[valid-type]
    args: dict[str, Any] = Field(default_factory=dict)
    expect_error: str | None = None


class NotificationExpectation(_Script):
    recipient_role: Role
    category: FindingCategory


class Expectation(_Script):
    final_state: CaseState | None = None
    finding: FindingCategory | None = None
    disposition: Disposition | None = None
    verdict: Verdict | None = None
    no_finding: FindingCategory | None = None
    state_trail: list[CaseState] | None = None
    notification: NotificationExpectation | None = None
    verification: VerificationVerdict | None = None
    conformance: Literal["pass", "fail"] | None = None
    requirement: str | None = None

    @model_validator(mode="after")
    def _one_subject(self):
        subjects = [name for name in ("final_state", "finding", "no_finding", "state_trail",
                                      "notification", "verification", "conformance")
                    if getattr(self, name) is not None]
        if len(subjects) != 1:
            raise ValueError(f"an expectation names exactly one subject, got {subjects or 'none'}")
        if (self.disposition or self.verdict) and self.finding is None:
            raise ValueError("disposition and verdict qualify a finding expectation")
        if self.requirement and self.conformance is None:
            raise ValueError("requirement qualifies a conformance expectation")
        return self


class ScenarioScript(_Script):
    name: str = Field(min_length=1)
    clock: ClockSpec = Field(default_factory=ClockSpec)
    probe_count: int | None = Field(default=None, ge=2)
    comparison_mode: Literal["content-normalized", "raw"] | None = None
    repository: RepositorySpec
    actors: dict[str, ActorSpec] = Field(min_length=1)
    case: CaseSpec
    steps: list[Step]
    expectations: list[Expectation] = Field(default_factory=list)

    @model_validator(mode="after")
    def _references(self):
        datasets = {d.dataset_id for d in self.repository.datasets}
        if self.case.dataset not in datasets:
            raise ValueError(f"case dataset {self.case.dataset!r} is not declared")
        for i, step in enumerate(self.steps, 1):
            if step.actor not in self.actors:
                raise ValueError(f"step {i} uses undeclared actor {step.actor!r}")
            for key in ("editor", "referee"):
                if key in step.args and step.args[key] not in self.actors:
                    raise ValueError(f"step {i} names undeclared {key} {step.args[key]!r}")
            if "dataset" in step.args and step.args["dataset"] not in datasets:
                raise ValueError(f"step {i} names undeclared dataset {step.args['dataset']!r}")
        return self


def load_scenario(path: str) -> ScenarioScript:
    """
    Read and validate a scenario file.

    Raises:
        ScenarioError: The file is unreadable, not JSON, or not a valid script.
    """
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise ScenarioError(f"Cannot read scenario {path}: {e}") from e
    return parse_scenario(data)


def parse_scenario(data: dict) -> ScenarioScript:
    try:
        return ScenarioScript.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ScenarioError(f"{where}: {first['msg']}") from e


class ScenarioRunner:
    """
    Executes one scenario against a fresh engine and simulated repository.

    Connector transport failures other than NotFound propagate as
    ``FetchFailed``; every other step error is recorded and checked against
    the step's ``expect_error``.
    """

    def __init__(self, script: ScenarioScript, settings: Settings | None = None):
        self.script = script
        settings = settings or Settings()
        overrides = {}
        if script.probe_count:
            overrides["probe_count"] = script.probe_count
        if script.comparison_mode:
            overrides["comparison_mode"] = script.comparison_mode
        self.settings = replace(settings, **overrides)
        self.clock = SteppedClock(parse_isoformat(script.clock.start),
                                  timedelta(seconds=script.clock.step_seconds))
        self.repository, self.admin = simulated_repo(
            script.repository.behavior, clock=self.clock, repository_id=script.repository.repository_id
        )
        self.notifications = NotificationLogger(clock=self.clock)
        secretariat = next((name for name, a in script.actors.items() if a.role is Role.SECRETARIAT),
                           "secretariat")
        self.engine = ReviewEngine(self.settings, clock=self.clock,
                                   notification_sink=self.notifications, secretariat=secretariat)
        self.facade: LoopbackFacade | None = None
        self.connector = self.repository
        self.refs: dict[str, DatasetRef] = {}
        self.case = None
        self.report_bytes: bytes | None = None
        self.step_log: list[dict] = []
        self.verifications: list[dict] = []
        self.conformance: list[dict] = []
        self.failures: list[str] = []

    # --- setup ---------------------------------------------------------------

    def _start_repository(self) -> None:
        spec = self.script.repository
        if spec.via_http:
            self.facade = LoopbackFacade(self.repository).start()
            limits = FetchLimits(self.settings.fetch_max_bytes, self.settings.fetch_timeout,
                                 self.settings.fetch_max_redirects)
            self.connector = HttpConnector(limits, self.settings.user_agent,
                                           api_base=self.facade.api_base, clock=self.clock)
        for ds in spec.datasets:
            files = {path: text.encode("utf-8") for path, text in ds.files.items()}
            self.refs[ds.dataset_id] = self.admin.register(ds.dataset_id, files, ds.persistent_id)

    def _stop_repository(self) -> None:
        if isinstance(self.connector, HttpConnector):
            self.connector.close()
        if self.facade:
            self.facade.stop()

    # --- steps ---------------------------------------------------------------

    def _dataset_id(self, args: dict) -> str:
        return args.get("dataset", self.script.case.dataset)

    def _execute(self, step: Step) -> None:
        engine, case, args, actor = self.engine, self.case, step.args, step.actor
        command = step.command

        if command == "open":
            self.case = engine.open_case(self.script.case.case_id, actor)
        elif command == "submit":
            ref = self.refs[self._dataset_id(args)]
            if args.get("without_download_link"):
                ref = replace(ref, download_link="")
            meta = args.get("manuscript_meta", self.script.case.manuscript_meta)
            engine.submit(case, meta, ref)
        elif command == "seal":
            engine.seal_checkpoint(case, CheckpointKind(args["checkpoint"]), self.connector)
        elif command == "assign_editor":
            engine.assign_editor(case, actor, args["editor"])
        elif command == "assign_referee":
            referee = args["referee"]
            engine.assign_referee(case, actor, referee, conflict_note=args.get("conflict_note"),
                                  affiliation=self.script.actors[referee].affiliation)
        elif command == "comment":
            engine.record_comment(case, actor, args["text"], bool(args.get("identity_consent", False)))
        elif command == "consent":
            engine.set_identity_consent(case, actor, bool(args["identity_consent"]))
        elif command == "request_revision":
            engine.request_revision(case, actor, args.get("note", ""))
        elif command == "declare_revision":
            new_link = None
            if "files" in args:
                files = {p: t.encode("utf-8") for p, t in args["files"].items()}
                new_link = self.repository.replace(self._dataset_id(args), files).download_link
            engine.declare_data_revision(case, actor, args.get("note", ""), new_link)
        elif command == "approve_revision":
            engine.approve_data_revision(case, actor)
        elif command == "submit_revision":
            engine.submit_revision(case, actor)
        elif command == "complete_review":
            engine.complete_review(case, actor)
        elif command == "return_to_review":
            engine.return_to_review(case, actor)
        elif command == "decide":
            engine.decide(case, actor, Decision(args.get("decision", "Accept")), args.get("note", ""))
        elif command == "accept":
            engine.accept_and_seal(case, self.connector)
        elif command == "publish":
            def keep(report, data):
                self.report_bytes = data
            engine.publish(case, report_sink=keep)
        elif command == "audit":
            engine.audit_published(case, self.connector)
        elif command == "flag":
            engine.flag_policy_finding(case, FindingCategory(args["category"]), actor,
                                       args.get("note", ""), tuple(args.get("evidence", ())))
        elif command == "resolve":
            engine.resolve_finding(case, actor, args["finding_id"], args.get("note", ""),
                                   Verdict(args["verdict"]), resume=bool(args.get("resume", False)),
                                   rebaseline=bool(args.get("rebaseline", False)))
        elif command == "escalate":
            engine.escalate_finding(case, actor, args["finding_id"])
        elif command == "verify":
            if self.report_bytes is None:
                raise ScenarioError("verify needs a published report")
            mode = VerificationMode(args.get("mode", VerificationMode.STRICT.value))
            outcome = verify_against_report(self.report_bytes, self.connector, mode, self.clock)
            self.verifications.append({"mode": mode.value, "verdict": outcome.verdict.value})
        elif command == "admin_replace":
            files = {p: t.encode("utf-8") for p, t in args["files"].items()}
            self.admin.admin_replace(self._dataset_id(args), files)
        elif command == "admin_withdraw":
            self.admin.admin_withdraw(self._dataset_id(args))
        elif command == "check_repo":
            ref = self.refs[self._dataset_id(args)]
            admin = self.admin if args.get("with_updates", True) else None
            report = check_repo_requirements(self.connector, ref, admin)
            self.conformance.append({
                "overall": "pass" if report.overall else "fail",
                "checks": {c.name: ("pass" if c.passed else "fail") for c in report.checks},
            })

    def _run_step(self, index: int, step: Step) -> bool:
        """Run one step; False stops the scenario."""
        if self.case is None and step.command not in ("open", "admin_replace", "admin_withdraw", "check_repo"):
            raise ScenarioError(f"step {index}: {step.command} before the case is opened")
        entry = {"index": index, "actor": step.actor, "command": step.command, "result": "ok"}
        error = None
        try:
            self._execute(step)
        except FetchFailed as e:
            if not isinstance(e, NotFound):
                raise
            error = e
        except ScenarioError:
            raise
        except FixityReviewError as e:
            error = e
        except (KeyError, ValueError) as e:
            raise ScenarioError(f"step {index} ({step.command}): bad arguments: {e}") from e
        self.step_log.append(entry)

        if error is None:
            if step.expect_error:
                self.failures.append(f"step {index} ({step.command}): expected {step.expect_error}, got success")
            return True
        entry.update(result="error", error=type(error).__name__)
        logger.debug(f"step {index} {step.command} by {step.actor}: {entry['error']}")
        if _error_matches(error, step.expect_error):
            return True
        # An unannounced NotFound is the data loss the seal just recorded
        if step.expect_error is None and isinstance(error, NotFound):
            return True
        expected = step.expect_error or "success"
        self.failures.append(f"step {index} ({step.command}): expected {expected}, got {type(error).__name__}: {error}")
        return False

    # --- expectations --------------------------------------------------------

    def _check(self, exp: Expectation) -> str | None:
        case = self.case
        if exp.final_state is not None:
            actual = case.state.value if case and case.state else None
            if actual != exp.final_state.value:
                return f"final_state: expected {exp.final_state.value}, got {actual}"
        elif exp.finding is not None:
            matches = [f for f in (case.findings if case else []) if f.category is exp.finding]
            if exp.disposition:
                matches = [f for f in matches if f.disposition is exp.disposition]
            if exp.verdict:
                matches = [f for f in matches if f.resolution and f.resolution.verdict is exp.verdict]
            if not matches:
                qualifiers = " ".join(x.value for x in (exp.disposition, exp.verdict) if x)
                return f"finding: expected {exp.finding.value} {qualifiers}".rstrip() + ", none raised"
        elif exp.no_finding is not None:
            if case and any(f.category is exp.no_finding for f in case.findings):
                return f"no_finding: {exp.no_finding.value} was raised"
        elif exp.state_trail is not None:
            trail = [s.value for s in case.state_trail] if case else []
            wanted = [s.value for s in exp.state_trail]
            if not _is_subsequence(wanted, trail):
                return f"state_trail: expected {wanted} within {trail}"
        elif exp.notification is not None:
            n = exp.notification
            sent = [(x.recipient_role, x.category) for x in (case.notifications if case else [])]
            if (n.recipient_role, n.category) not in sent:
                return f"notification: no {n.category.value} notice to {n.recipient_role.value}"
        elif exp.verification is not None:
            verdicts = [v["verdict"] for v in self.verifications]
            if exp.verification.value not in verdicts:
                return f"verification: expected {exp.verification.value}, got {verdicts}"
        elif exp.conformance is not None:
            if not self.conformance:
                return "conformance: no repository check ran"
            last = self.conformance[-1]
            actual = last["checks"].get(exp.requirement) if exp.requirement else last["overall"]
            if actual != exp.conformance:
                subject = exp.requirement or "overall"
                return f"conformance {subject}: expected {exp.conformance}, got {actual}"
        return None

    # --- run -----------------------------------------------------------------

    def run(self) -> dict:
        """
        Execute every step, then check expectations.

        Raises:
            ScenarioError: A step cannot be executed as written.
            FetchFailed: The connector failed in transport (not NotFound).
        """
        logger.info(f"Running scenario {self.script.name} ({self.script.repository.behavior.value})")
        self._start_repository()
        try:
            for index, step in enumerate(self.script.steps, 1):
                if not self._run_step(index, step):
                    break
        finally:
            self._stop_repository()
        for exp in self.script.expectations:
            problem = self._check(exp)
            if problem:
                self.failures.append(problem)
        summary = self.summary()
        for failure in self.failures:
            logger.error(f"{self.script.name}: {failure}")
        return summary

    def summary(self) -> dict:
        case = self.case
        return {
            "scenario": self.script.name,
            "case_id": self.script.case.case_id,
            "final_state": case.state.value if case and case.state else None,
            "state_trail": [s.value for s in case.state_trail] if case else [],
            "records": [
                {
                    "checkpoint": key,
                    "raw_digest": rec.raw_digest.hex,
                    "manifest_digest": rec.content_manifest.manifest_digest.hex,
                    "stability": rec.stability.verdict.value,
                    "baseline": key == case.baseline_key,
                }
                for key, rec in sorted(case.records.items(), key=lambda kv: kv[1].sealed_at)
            ] if case else [],
            "findings": [
                {
                    "finding_id": f.finding_id,
                    "category": f.category.value,
                    "role": f.role.value,
                    "flow_ref": f.flow_ref,
                    "measure": f.measure.value,
                    "disposition": f.disposition.value,
                    "verdict": f.resolution.verdict.value if f.resolution else None,
                }
                for f in case.findings
            ] if case else [],
            "notifications": [
                {"finding_id": n.finding_id, "recipient_role": n.recipient_role.value,
                 "message_kind": n.message_kind, "category": n.category}
                for n in case.notifications
            ] if case else [],
            "steps": self.step_log,
            "verifications": self.verifications,
            "conformance": self.conformance,
            "published": self.report_bytes is not None,
            "failures": self.failures,
            "passed": not self.failures,
        }


def run_scenario(script: ScenarioScript, settings: Settings | None = None) -> dict:
    return ScenarioRunner(script, settings).run()


def _error_matches(error: Exception, expected: str | None) -> bool:
    if not expected:
        return False
    return any(cls.__name__ == expected for cls in type(error).__mro__)


def _is_subsequence(wanted: list, trail: list) -> bool:
    it = iter(trail)
    return all(any(s == t for t in it) for s in wanted)

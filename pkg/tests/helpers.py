"""Test data and a driver that walks a case along the happy path."""

from src.review.models import CaseState, CheckpointKind, Decision

DATASET_FILES = {
    "data/stations.csv": b"station,lat,lon\nA01,35.68,139.76\n",
    "data/daily.csv": b"station,date,tmax\nA01,2018-01-01,9.8\n",
    "README.txt": b"Daily temperature.\n",
}
CHANGED_FILES = {
    "data/stations.csv": b"station,lat,lon\nA01,35.68,139.76\n",
    "data/daily.csv": b"station,date,tmax\nA01,2018-01-01,10.9\n",
    "README.txt": b"Daily temperature.\n",
}

AUTHOR = "author"
EDITOR = "editor"
REFEREE = "referee"
SECRETARIAT = "secretariat"

# Happy-path order of states the driver walks through
HAPPY_PATH = (
    CaseState.DRAFT,
    CaseState.SUBMITTED,
    CaseState.SEALED_SUBMISSION,
    CaseState.EDITOR_ASSIGNED,
    CaseState.UNDER_REVIEW,
    CaseState.REVISION_REQUESTED,
    CaseState.REVISED,
    CaseState.SEALED_REVISION,
    CaseState.DECISION_PENDING,
    CaseState.ACCEPTED,
    CaseState.SEALED_ACCEPTANCE,
    CaseState.PUBLISHED,
)


class ReviewDriver:
    """Walks a case along the happy path with fixed participants."""

    def __init__(self, engine, connector, ref, case_id="C-1"):
        self.engine = engine
        self.connector = connector
        self.ref = ref
        self.case_id = case_id
        self.case = None

    def advance(self):
        engine, case = self.engine, self.case
        if case is None:
            self.case = engine.open_case(self.case_id, AUTHOR)
            return self.case
        state = case.state
        if state is CaseState.DRAFT:
            engine.submit(case, {"title": "Daily temperature"}, self.ref)
        elif state is CaseState.SUBMITTED:
            engine.seal_checkpoint(case, CheckpointKind.CP_SUBMISSION, self.connector)
        elif state is CaseState.SEALED_SUBMISSION:
            engine.assign_editor(case, SECRETARIAT, EDITOR)
        elif state is CaseState.EDITOR_ASSIGNED:
            engine.assign_referee(case, EDITOR, REFEREE, affiliation="Climate Lab")
            engine.record_comment(case, REFEREE, "Units of tmax are missing.", identity_consent=True)
        elif state is CaseState.UNDER_REVIEW:
            engine.request_revision(case, EDITOR, "Please state units.")
        elif state is CaseState.REVISION_REQUESTED:
            engine.submit_revision(case, AUTHOR)
        elif state is CaseState.REVISED:
            engine.seal_checkpoint(case, CheckpointKind.CP_REVISION, self.connector)
        elif state is CaseState.SEALED_REVISION:
            engine.complete_review(case, EDITOR)
        elif state is CaseState.DECISION_PENDING:
            engine.decide(case, EDITOR, Decision.ACCEPT, "Accepted.")
        elif state is CaseState.ACCEPTED:
            engine.accept_and_seal(case, self.connector)
        elif state is CaseState.SEALED_ACCEPTANCE:
            engine.publish(case)
        else:
            raise AssertionError(f"driver cannot advance from {state}")
        return case

    def to_state(self, target: CaseState):
        while self.case is None or self.case.state is not target:
            before = self.case.state if self.case else None
            self.advance()
            if self.case.state is before:
                raise AssertionError(f"stuck in {before}")
        return self.case




def random_files(rng, max_files=5):
    """A small dataset with distinct, already-normalized paths."""
    return {
        f"part{rng.randrange(3)}/file{i}.dat": rng.randbytes(rng.randrange(300))
        for i in range(rng.randint(1, max_files))
    }


def change_one_byte(files, rng):
    """Copy of ``files`` with one byte flipped, or one byte added to an empty file."""
    path = rng.choice(sorted(files))
    data = files[path]
    if not data:
        return {**files, path: b"\x00"}
    i = rng.randrange(len(data))
    flipped = bytes([data[i] ^ (1 << rng.randrange(8))])
    return {**files, path: data[:i] + flipped + data[i + 1:]}

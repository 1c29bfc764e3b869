"""
Terminal views for case status.
Printed once per command; there is no live dashboard.
"""

from rich import box
from rich.console import Console, Group
from rich.panel import Panel
from rich.style import Style
from rich.table import Table
from rich.text import Text

STATUS_BLUE = Style(color="cyan")
STATUS_GREEN = Style(color="green")
STATUS_RED = Style(color="red")
STATUS_YELLOW = Style(color="yellow")
STATUS_WHITE = Style(color="white")

STABILITY_STYLES = {
    "Stable": STATUS_GREEN,
    "ContainerNondeterminism": STATUS_YELLOW,
    "ContentDrift": STATUS_RED,
}


class CaseStatusView:
    """Builds rich renderables from a replayed case."""

    def __init__(self, case):
        self.case = case

    def generate_header(self):
        case = self.case
        state = case.state.value if case.state else "None"
        text = Text()
        text.append(f"Case {case.case_id}  ", style=STATUS_BLUE)
        text.append(state, style=STATUS_RED if state == "Suspended" else STATUS_GREEN)
        text.append(f"\nEvents: {case.last_seq}  Head: {case.last_digest[:16]}", style=STATUS_WHITE)
        if case.dataset_ref:
            text.append(f"\nData: {case.dataset_ref.download_link}", style=STATUS_WHITE)
        return Panel(text, style=STATUS_BLUE, box=box.DOUBLE)

    def generate_participants(self):
        table = Table(show_header=True, header_style=STATUS_BLUE, box=box.SIMPLE)
        table.add_column("Role")
        table.add_column("Identity")
        table.add_column("Identity disclosed")
        for role, people in self.case.participants.items():
            for person in people:
                disclosed = ""
                if role.value == "Referee":
                    disclosed = "yes" if self.case.consent.get(person) else "no"
                table.add_row(role.value, person, disclosed)
        return Panel(table, title="Participants", style=STATUS_BLUE, box=box.DOUBLE)

    def generate_records_table(self):
        if not self.case.records:
            return Panel("No checkpoint sealed yet", style=STATUS_YELLOW)

        table = Table(show_header=True, header_style=STATUS_BLUE, box=box.SIMPLE)
        table.add_column("Checkpoint")
        table.add_column("Sealed at")
        table.add_column("Raw SHA-256")
        table.add_column("Content manifest")
        table.add_column("Stability")
        for key, record in sorted(self.case.records.items(), key=lambda kv: kv[1].sealed_at):
            label = key
            if key == self.case.baseline_key:
                label += " (baseline)"
            verdict = record.stability.verdict.value
            table.add_row(
                label,
                record.sealed_at,
                record.raw_digest.hex[:16],
                record.content_manifest.manifest_digest.hex[:16],
                Text(verdict, style=STABILITY_STYLES.get(verdict, STATUS_WHITE)),
            )
        return Panel(table, title="Hash records", style=STATUS_BLUE, box=box.DOUBLE)

    def generate_findings_table(self):
        if not self.case.findings:
            return Panel("No findings", style=STATUS_GREEN)

        table = Table(show_header=True, header_style=STATUS_BLUE, box=box.SIMPLE)
        table.add_column("Id")
        table.add_column("Category")
        table.add_column("Role")
        table.add_column("Flow")
        table.add_column("Measure")
        table.add_column("Disposition")
        for f in self.case.findings:
            disposition = f.disposition.value
            if f.resolution:
                disposition += f" ({f.resolution.verdict.value})"
            table.add_row(
                f.finding_id,
                f.category.value + ("" if f.row.table_row else " *"),
                f.role.value,
                f.flow_ref,
                f.measure.value,
                Text(disposition, style=STATUS_RED if f.is_open else STATUS_GREEN),
            )
        return Panel(table, title="Findings (* outside the taxonomy table)", style=STATUS_BLUE, box=box.DOUBLE)

    def render(self):
        return Group(
            self.generate_header(),
            self.generate_participants(),
            self.generate_records_table(),
            self.generate_findings_table(),
        )


def print_case_status(case, console=None):
    """Print the status panels of a case to standard output."""
    console = console or Console()
    console.print(CaseStatusView(case).render())

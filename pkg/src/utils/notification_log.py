"""
Notification outbox for integrity incidents.
Routed notifications are appended to a dated CSV file; delivering them is
left to whoever reads the file.
"""

import csv
import os

from src.utils.clock import Clock, SystemClock, isoformat
from src.utils.logger import get_logger

CSV_HEADER = [
    "timestamp", "case_id", "finding_id", "category", "recipient_role", "message_kind", "flow_ref", "evidence"
]


class NotificationLogger:
    """
    Writes one CSV row per routed notification and keeps them in memory.

    Args:
        log_dir (str, optional): Directory for ``notifications_<date>.csv``.
            Without one, notifications are only kept in memory.
        clock (Clock, optional): Source of row timestamps and the file date.
    """

    def __init__(self, log_dir=None, clock: Clock | None = None):
        self.log_dir = log_dir
        self.clock = clock or SystemClock()
        self.records = []
        self.logger = get_logger("notifications")

    def csv_file(self, timestamp):
        return os.path.join(self.log_dir, f"notifications_{timestamp[:10]}.csv")

    def __call__(self, case_id, finding, notification):
        self.log_notification(case_id, finding, notification)

    def log_notification(self, case_id, finding, notification):
        """
        Record a notification.

        Args:
            case_id (str): Case the finding belongs to
            finding (ManipulationFinding): The routed finding
            notification (Notification): Recipient and message kind
        """
        timestamp = isoformat(self.clock.now())
        row = {
            "timestamp": timestamp,
            "case_id": case_id,
            "finding_id": finding.finding_id,
            "category": finding.category.value,
            "recipient_role": notification.recipient_role.value,
            "message_kind": notification.message_kind,
            "flow_ref": finding.flow_ref,
            "evidence": "; ".join(finding.evidence),
        }
        self.records.append(row)
        self.logger.info(
            f"NOTIFY {row['recipient_role']}: {row['message_kind']} for {case_id} "
            f"{row['finding_id']} ({row['category']})"
        )

        if not self.log_dir:
            return
        path = self.csv_file(timestamp)
        try:
            os.makedirs(self.log_dir, exist_ok=True)
            new_file = not os.path.exists(path)
            with open(path, mode="a", newline="", encoding="utf-8") as f:
                writer = csv.DictWriter(f, fieldnames=CSV_HEADER)
                if new_file:
                    writer.writeheader()
                writer.writerow(row)
        except OSError as e:
            self.logger.error(f"Failed to write notification to CSV: {e}")

from datetime import datetime
import csv
import io
import json
import os
import tempfile
import warnings
import logging

logger = logging.getLogger(__name__)


class StirSimError(Exception):
    """Base class for every error the simulator reports to its caller."""
    pass


class InvalidParams(StirSimError):
    """Raised when ModelParams violate their invariants."""
    pass


class OrderViolation(StirSimError):
    """Raised when a pair of configurations is not ordered site by site."""
    pass


class BondOutOfRange(StirSimError):
    """Raised when a stirring bond lies outside -N..N-1."""
    pass


class WrongModel(StirSimError):
    """Raised when an operation is used with the other reservoir model."""
    pass


class MissingRates(StirSimError):
    """Raised when a rate table has no estimate for a bin that is needed."""
    pass


class StateSpaceTooLarge(StirSimError):
    """Raised when an exact oracle would exceed the dimension guard."""
    pass


class WindowTooSparse(StirSimError):
    """Raised when a fit window holds fewer than five usable grid points."""
    pass


class AllZeroTail(StirSimError):
    """Raised when a fit window reaches past the extinction of every replica."""
    pass


class SpecValidationError(StirSimError):
    """Raised by run-spec validation; carries every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class InsufficientSupport(UserWarning):
    """Warning category for conditional averages resting on too few samples."""
    pass


def warn_insufficient_support(message):
    """Emits an InsufficientSupport warning and mirrors it to the log."""
    logger.warning("insufficient support: %s", message)
    warnings.warn(message, InsufficientSupport, stacklevel=3)


def format_number(value):
    """Locale-independent number formatting for CSV cells."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if value != value:
            return "nan"
        return repr(value)
    try:
        return repr(float(value)) if not isinstance(value, str) else value
    except (TypeError, ValueError):
        return str(value)


def atomic_write_text(path, text):
    """Writes text to path through a temp file in the same directory and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except OSError:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_csv(path, header, rows, delimiter=","):
    """Writes rows under a fixed header, atomically."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, delimiter=delimiter, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) for v in row])
    atomic_write_text(path, buffer.getvalue())
    logger.info("wrote %d rows to %s", len(rows) if hasattr(rows, "__len__") else -1, path)


def parse_flat_config(text):
    """Parses a flat key=value text file; '#' starts a comment."""
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecValidationError([f"config line {line_no}: expected key=value, got {raw!r}"])
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        values[key] = value.strip()
    return values


def load_flat_config(path):
    """Reads and parses a flat key=value config file."""
    with open(path, "r") as f:
        return parse_flat_config(f.read())


def update_status_file(out_dir, status, spec=None, message=None, version=None, started_at=None, files=None):
    """Writes the run manifest (spec, seed, version, status, wall-clock) to out_dir/manifest.json."""
    if not out_dir:
        return
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.json")

    now = datetime.now()
    status_data = {
        "status": status,
        "timestamp": now.isoformat(),
    }
    if version is not None:
        status_data["version"] = version
    if spec is not None:
        status_data["spec"] = spec
        status_data["seed"] = spec.get("seed")
    if message:
        status_data["message"] = message
    if started_at is not None:
        status_data["started_at"] = started_at.isoformat()
        status_data["wall_clock_seconds"] = (now - started_at).total_seconds()
    if files is not None:
        status_data["files"] = sorted(files)

    atomic_write_text(manifest_path, json.dumps(status_data, indent=2, sort_keys=True))
    logger.info("updated manifest for %s: %s", out_dir, status)


def read_manifest(path):
    """Loads a manifest written by update_status_file."""
    with open(path, "r") as f:
        return json.load(f)

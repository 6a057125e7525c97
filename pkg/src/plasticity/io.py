"""CSV and JSON serialization with atomic writes.

All floating-point output uses 17 significant digits so written values
round-trip exactly; files are written to a temp name and renamed into place
so interrupted runs never leave torn output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile

import numpy as np

from .mcmc import McmcResult
from .model import SummarySeries, TrajectorySeries


class ValidationError(ValueError):
    """Malformed input data; mapped to exit code 2 by the CLI."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def atomic_write_text(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_summary_csv(path, data: SummarySeries):
    lines = ["time,mean,variance"]
    for t, m, v in zip(data.times, data.means, data.variances):
        lines.append(f"{_fmt(t)},{_fmt(m)},{_fmt(v)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_summary_csv(path, n: int, n0: float) -> SummarySeries:
    """Parse a ``time,mean,variance`` file into a validated series.

    ``n`` and ``n0`` travel outside the file (flags or config).  Errors name
    the offending row, counting the header as row 1.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: no data rows") from None
        if [h.strip().lower() for h in header] != ["time", "mean", "variance"]:
            raise ValidationError(
                f"{path}: row 1: expected header 'time,mean,variance'")
        times, means, variances = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise ValidationError(
                    f"{path}: row {lineno}: expected 3 columns, got {len(row)}")
            try:
                t, m, v = (float(cell) for cell in row)
            except ValueError:
                raise ValidationError(
                    f"{path}: row {lineno}: malformed number") from None
            if not (0.0 <= m <= 1.0):
                raise ValidationError(
                    f"{path}: row {lineno}: mean {m:g} outside [0, 1]")
            if v < 0.0:
                raise ValidationError(
                    f"{path}: row {lineno}: negative variance {v:g}")
            if times and t <= times[-1]:
                raise ValidationError(
                    f"{path}: row {lineno}: time {t:g} not increasing "
                    "(duplicate or out of order)")
            times.append(t)
            means.append(m)
            variances.append(v)
    if not times:
        raise ValidationError(f"{path}: no data rows")
    if len(times) < 2:
        raise ValidationError(f"{path}: need at least two data rows")
    try:
        return SummarySeries(times=times, means=means, variances=variances,
                             n=n, n0=n0)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_trajectory_csv(path, data: TrajectorySeries):
    header = "time," + ",".join(f"traj_{i + 1}" for i in range(data.n))
    lines = [header]
    for j, t in enumerate(data.times):
        cells = [_fmt(t)] + [_fmt(x) for x in data.r[:, j]]
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trajectory_csv(path, n0: float) -> TrajectorySeries:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: no data rows") from None
        if not header or header[0].strip().lower() != "time":
            raise ValidationError(f"{path}: row 1: first column must be 'time'")
        ncol = len(header)
        times = []
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != ncol:
                raise ValidationError(
                    f"{path}: row {lineno}: expected {ncol} columns")
            try:
                nums = [float(cell) for cell in row]
            except ValueError:
                raise ValidationError(
                    f"{path}: row {lineno}: malformed number") from None
            if times and nums[0] <= times[-1]:
                raise ValidationError(
                    f"{path}: row {lineno}: time not increasing")
            times.append(nums[0])
            values.append(nums[1:])
    if len(times) < 2:
        raise ValidationError(f"{path}: need at least two data rows")
    try:
        return TrajectorySeries(times=times, r=np.array(values).T, n0=n0)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_samples_csv(path, result: McmcResult):
    """Retained parameter draws: iteration,chain,alpha,beta,lambda1,lambda2,log_posterior."""
    lines = ["iteration,chain,alpha,beta,lambda1,lambda2,log_posterior"]
    chains, kept, _ = result.samples.shape
    for c in range(chains):
        for i in range(kept):
            a, b, l1, l2 = result.samples[c, i]
            lines.append(f"{i},{c},{_fmt(a)},{_fmt(b)},{_fmt(l1)},{_fmt(l2)},"
                         f"{_fmt(result.log_posts[c, i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path, payload: dict):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True)
                      + "\n")


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()

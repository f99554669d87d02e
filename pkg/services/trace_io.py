"""
Trace files: JSON lines, one "meta" header record then one "epoch" record per
RF epoch. Floats are written with their shortest round-trip repr, so a
written trace reads back exactly and identical runs give identical bytes.
"""
import json
import logging

from models import (
    AnchorLayout, Environment, NoiseModel, Position2D, Rates, RfEntry, RfSample,
    TimedSample, Trace, Trajectory, VoSample,
)
from services.errors import TraceParseError, ValidationError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _dumps(record):
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def trace_records(trace):
    """Yield the JSON-serializable records of a trace, header first"""
    yield {
        "kind": "meta",
        "version": FORMAT_VERSION,
        "scenario": trace.scenario,
        "family": trace.family,
        "seed": trace.seed,
        "anchors": trace.layout.to_dict(),
        "environment": trace.environment.to_dict(),
        "rates": trace.rates.to_dict(),
        "noise_model": trace.noise_model.to_dict(),
        "initial_heading": trace.initial_heading,
    }
    for gt, rf, vo in zip(trace.gt.samples, trace.rf, trace.vo):
        yield {
            "kind": "epoch",
            "t": rf.t,
            "gt": gt.value.to_dict(),
            "rf": [e.to_dict() for e in rf.entries],
            "vo": vo.to_dict(),
        }


def write_trace(trace, path):
    """Write a trace as JSONL"""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in trace_records(trace):
            f.write(_dumps(record))
            f.write("\n")
    logger.info(f"Wrote trace {trace.scenario} ({len(trace)} epochs) to {path}")


def _parse_epoch(record):
    t = float(record["t"])
    gt = TimedSample(t, Position2D.from_dict(record["gt"]))
    rf = RfSample(t, tuple(
        RfEntry(int(e["id"]), float(e["range"]), float(e["power"]), bool(e["los"]))
        for e in record["rf"]
    ))
    vo_data = record["vo"]
    vo = VoSample(t, float(vo_data["r"]), float(vo_data["theta"]), int(vo_data["m"]), bool(vo_data["lost"]))
    return gt, rf, vo


def read_trace(path):
    """
    Read a JSONL trace.

    Raises:
        TraceParseError: malformed line, with its 1-based line number
    """
    meta = None
    gts, rfs, vos = [], [], []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceParseError(f"invalid JSON ({e.msg})", line_number) from e
            kind = record.get("kind") if isinstance(record, dict) else None
            try:
                if kind == "meta":
                    if meta is not None:
                        raise TraceParseError("duplicate meta record", line_number)
                    meta = record
                elif kind == "epoch":
                    if meta is None:
                        raise TraceParseError("epoch record before meta record", line_number)
                    gt, rf, vo = _parse_epoch(record)
                    if gts and not gt.t > gts[-1].t:
                        raise TraceParseError(
                            f"epoch time {gt.t} not after previous epoch time {gts[-1].t}", line_number
                        )
                    gts.append(gt)
                    rfs.append(rf)
                    vos.append(vo)
                else:
                    raise TraceParseError(f"unknown record kind {kind!r}", line_number)
            except (KeyError, TypeError, ValueError) as e:
                if isinstance(e, TraceParseError):
                    raise
                raise TraceParseError(f"bad record field ({e})", line_number) from e

    if meta is None:
        raise TraceParseError("missing meta record", 1)
    if not gts:
        raise TraceParseError("trace has no epochs", 2)
    try:
        rates = meta["rates"]
        return Trace(
            scenario=str(meta["scenario"]),
            seed=int(meta["seed"]),
            layout=AnchorLayout.from_dict(meta["anchors"]),
            environment=Environment.from_dict(meta["environment"]),
            gt=Trajectory(tuple(gts)),
            rf=tuple(rfs),
            vo=tuple(vos),
            rates=Rates(float(rates["rf_hz"]), float(rates["vo_hz"])),
            noise_model=NoiseModel.from_dict(meta["noise_model"]),
            initial_heading=float(meta.get("initial_heading", 0.0)),
            family=str(meta.get("family", "default")),
        )
    except (KeyError, TypeError) as e:
        raise TraceParseError(f"bad meta record ({e})", 1) from e
    except ValidationError as e:
        raise TraceParseError(str(e), 1) from e

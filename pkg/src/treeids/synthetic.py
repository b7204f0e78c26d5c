"""Synthetic CAN traffic for tests and demos.

Generates a five-class frame mix resembling the message-injection attack
families: DoS floods a low-priority id, fuzzing sprays random ids and
payloads, and the two spoofing classes reuse legitimate ids but write
out-of-range values into their signal bytes.  Normal traffic cycles a fixed
id set with tightly bounded payload noise.
"""

from __future__ import annotations

import os

from .core_data import Dataset
from .ingest import CanFrameRecord, encode_can_features
from .seeding import derived_rng

NORMAL = "Normal"
DOS = "DoS"
FUZZY = "Fuzzy"
RPM_SPOOF = "RPM-spoofing"
GEAR_SPOOF = "Gear-spoofing"

CLASS_MIX = ((NORMAL, 0.6), (DOS, 0.1), (FUZZY, 0.1), (RPM_SPOOF, 0.1), (GEAR_SPOOF, 0.1))

_LEGIT_IDS = (0x110, 0x120, 0x153, 0x220, 0x260, 0x2A0, 0x316, 0x329,
              0x350, 0x382, 0x43F, 0x440, 0x4B0, 0x545, 0x5A0, 0x690)
_RPM_ID = 0x316
_GEAR_ID = 0x43F
_DOS_ID = 0x000


def _normal_frame(rng, timestamp: float) -> CanFrameRecord:
    can_id = int(_LEGIT_IDS[rng.integers(0, len(_LEGIT_IDS))])
    base = (can_id * 37) % 200  # stable per-id payload baseline
    data = tuple(int((base + 3 * j + rng.integers(0, 12)) % 256 // 2) for j in range(8))
    return CanFrameRecord(timestamp, can_id, 8, data, NORMAL)


def _attack_frame(rng, timestamp: float, label: str) -> CanFrameRecord:
    if label == DOS:
        return CanFrameRecord(timestamp, _DOS_ID, 8, (0,) * 8, DOS)
    if label == FUZZY:
        can_id = int(rng.integers(0, 0x800))
        data = tuple(int(b) for b in rng.integers(0, 256, size=8))
        return CanFrameRecord(timestamp, can_id, 8, data, FUZZY)
    if label == RPM_SPOOF:
        data = (255, 255, int(rng.integers(200, 256)), 0, 255, int(rng.integers(200, 256)), 0, 0)
        return CanFrameRecord(timestamp, _RPM_ID, 8, data, RPM_SPOOF)
    data = (0, int(rng.integers(200, 256)), 255, 255, 0, 0, int(rng.integers(200, 256)), 255)
    return CanFrameRecord(timestamp, _GEAR_ID, 8, data, GEAR_SPOOF)


def synthetic_can_records(n_frames: int = 50_000, seed: int = 0) -> list[CanFrameRecord]:
    rng = derived_rng(seed, "synthetic-can")
    labels = [name for name, _ in CLASS_MIX]
    weights = [w for _, w in CLASS_MIX]
    picks = rng.choice(len(labels), size=n_frames, p=weights)
    records = []
    for i, pick in enumerate(picks):
        timestamp = i * 0.0005
        label = labels[pick]
        if label == NORMAL:
            records.append(_normal_frame(rng, timestamp))
        else:
            records.append(_attack_frame(rng, timestamp, label))
    return records


def synthetic_can_dataset(n_frames: int = 50_000, seed: int = 0) -> Dataset:
    return encode_can_features(synthetic_can_records(n_frames, seed), mode="numeric")


def _record_line(record: CanFrameRecord, flag: str) -> str:
    data = ",".join(f"{b:02X}" for b in record.data[: record.dlc])
    return f"{record.timestamp:.6f},{record.can_id:03X},{record.dlc},{data},{flag}"


def write_capture_files(directory, n_frames: int = 50_000, seed: int = 0) -> dict[str, str]:
    """Write per-attack capture CSVs mirroring the real file layout.

    Each attack file mixes normal (flag R) and injected (flag T) frames; a
    separate normal-only capture rounds out the set.  Returns
    {attack label or "Normal": path}.
    """
    os.makedirs(directory, exist_ok=True)
    records = synthetic_can_records(n_frames, seed)
    paths = {}
    handles = {}
    try:
        for label in (NORMAL, DOS, FUZZY, RPM_SPOOF, GEAR_SPOOF):
            path = os.path.join(directory, f"{label.lower().replace('-', '_')}.csv")
            paths[label] = path
            handles[label] = open(path, "w")
        spread = derived_rng(seed, "synthetic-spread")
        attack_files = (DOS, FUZZY, RPM_SPOOF, GEAR_SPOOF)
        for record in records:
            if record.label == NORMAL:
                # normal frames are background traffic in every capture
                target = NORMAL if spread.random() < 0.4 else attack_files[spread.integers(0, 4)]
                handles[target].write(_record_line(record, "R") + "\n")
            else:
                handles[record.label].write(_record_line(record, "T") + "\n")
    finally:
        for fh in handles.values():
            fh.close()
    return paths

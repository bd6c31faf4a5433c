"""Memory bank of past frames and the frame-pairing policies for training and inference."""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Deque, List, Optional, Sequence

import numpy as np

from .attention import QuerySet
from .exceptions import TimestampOrderError
from .geometry import CameraRig, EgoPose
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL = 1.5
TRAIN_WINDOW = 2.0
DEFAULT_CAPACITY = 8
DEFAULT_HORIZON = 2.5


@dataclass
class TemporalConfig:
    """Switches and windows of temporal fusion.

    ``query_aggregation`` enables temporal self-attention over past queries,
    ``feature_aggregation`` the cross-frame projective attention. With
    ``enabled`` off both are bypassed and the model runs single-frame.
    """

    enabled: bool = False
    query_aggregation: bool = True
    feature_aggregation: bool = True
    ego_align: bool = True
    interval: float = DEFAULT_INTERVAL
    train_window: float = TRAIN_WINDOW
    capacity: int = DEFAULT_CAPACITY
    horizon: float = DEFAULT_HORIZON


@dataclass
class FrameRecord:
    """Cached state of one processed frame."""

    timestamp: float
    queries: QuerySet
    features: List[Tensor]
    ego_pose: EgoPose
    rig: CameraRig


class MemoryBank:
    """
    Bounded, time-ordered cache of past frames.

    Args:
        capacity: Maximum number of records
        horizon: Records older than ``newest - horizon`` seconds are evicted
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY, horizon: float = DEFAULT_HORIZON):
        self.capacity = capacity
        self.horizon = horizon
        self.records: Deque[FrameRecord] = deque()

    def __len__(self) -> int:
        return len(self.records)

    @property
    def newest(self) -> Optional[FrameRecord]:
        return self.records[-1] if self.records else None

    def push(self, record: FrameRecord) -> "MemoryBank":
        """
        Append a record and evict what no longer fits, oldest first.

        Raises:
            TimestampOrderError: If the record is not newer than every stored one
        """
        newest = self.newest
        if newest is not None and record.timestamp <= newest.timestamp:
            raise TimestampOrderError(
                f"frame at t={record.timestamp} is not newer than t={newest.timestamp}",
                timestamp=record.timestamp, newest=newest.timestamp)
        self.records.append(record)
        while len(self.records) > self.capacity:
            self.records.popleft()
        while self.records and record.timestamp - self.records[0].timestamp > self.horizon:
            self.records.popleft()
        return self

    def fetch(self, now: float, desired_interval: float = DEFAULT_INTERVAL) -> Optional[FrameRecord]:
        """Record whose age is closest to ``desired_interval``; ties go to the older one."""
        best = None
        best_gap = None
        for record in self.records:
            if record.timestamp > now:
                continue
            gap = abs((now - record.timestamp) - desired_interval)
            # records are oldest-first, so strict < keeps the older on ties
            if best_gap is None or gap < best_gap:
                best, best_gap = record, gap
        return best

    def clear(self):
        self.records.clear()


def push(bank: MemoryBank, record: FrameRecord) -> MemoryBank:
    return bank.push(record)


def fetch(bank: MemoryBank, now: float, desired_interval: float = DEFAULT_INTERVAL) -> Optional[FrameRecord]:
    return bank.fetch(now, desired_interval)


def sample_training_pair(timestamps: Sequence[float], current: int, rng: np.random.Generator,
                         window: float = TRAIN_WINDOW) -> Optional[int]:
    """
    Pick a past frame uniformly among those at most ``window`` seconds before ``current``.

    Returns:
        Index of the past frame, or None when no frame qualifies
    """
    now = timestamps[current]
    eligible = [i for i, t in enumerate(timestamps) if 0.0 < now - t <= window + 1e-9]
    if not eligible:
        return None
    return int(eligible[rng.integers(len(eligible))])


class SequenceRunner:
    """
    Runs a detector over an ordered frame sequence, reusing cached past frames.

    The detector must provide ``compute_features(frame)``,
    ``forward(frame, features, past)`` and ``make_record(frame, features, output)``.
    Each frame's features are computed exactly once; the counter
    ``feature_calls`` records how many times that happened.
    """

    def __init__(self, detector: Any, interval: float = DEFAULT_INTERVAL, temporal: bool = True,
                 capacity: int = DEFAULT_CAPACITY, horizon: float = DEFAULT_HORIZON):
        self.detector = detector
        self.interval = interval
        self.temporal = temporal
        self.bank = MemoryBank(capacity, horizon)
        self.feature_calls = 0

    def _features(self, frame):
        self.feature_calls += 1
        return self.detector.compute_features(frame)

    def step(self, frame, callback: Optional[Callable] = None):
        with no_grad():
            features = self._features(frame)
            past = self.bank.fetch(frame.timestamp, self.interval) if self.temporal else None
            output = self.detector.forward(frame, features, past)
            self.bank.push(self.detector.make_record(frame, features, output))
        if callback is not None:
            callback(frame, output)
        return output

    def run(self, frames: Sequence) -> List:
        """Process frames in order and return each frame's model output."""
        self.bank.clear()
        outputs = [self.step(frame) for frame in frames]
        logger.debug("sequence of %d frames used %d feature computations", len(frames), self.feature_calls)
        return outputs

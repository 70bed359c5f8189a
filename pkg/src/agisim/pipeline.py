"""Platform trajectory to corrupted IMU samples, one epoch at a time."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

from .gimbal import GimbalChain, GimbalConfig
from .imu_error import ImuErrorModel, ImuSample
from .ingest import PoseSample
from .kinematics import Kinematics, TruthInertial


@dataclass(frozen=True, eq=False)
class Epoch:
    """One pipeline epoch.

    ``truth`` and ``imu`` are ``None`` on the kinematics warm-up epoch (the
    first epoch that has an IMU pose).
    """

    platform: PoseSample
    imu_pose: PoseSample
    truth: TruthInertial | None
    imu: ImuSample | None


def iter_epochs(trajectory: Iterable[PoseSample], gimbal: GimbalConfig,
                model: ImuErrorModel) -> Iterator[Epoch]:
    """Run the gimbal chain, kinematics and error model over a pose stream.

    ``N`` platform poses give ``N - 1`` epochs and ``N - 2`` IMU samples.
    """
    chain = GimbalChain(gimbal)
    kin = Kinematics()
    for pose in trajectory:
        b1 = chain.step(pose)
        if b1 is None:
            continue
        truth = kin.step(b1)
        yield Epoch(pose, b1, truth, None if truth is None else model.corrupt(truth))

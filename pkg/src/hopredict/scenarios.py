"""Built-in scenarios."""

from __future__ import annotations

from .radiosim import CellSite, RadioEnv, Scenario, UeTrack

DEFAULT_SEED = 7
DEFAULT_SAMPLES = 40_000


def default_scenario(seed: int = DEFAULT_SEED, total_samples: int = DEFAULT_SAMPLES) -> Scenario:
    """Four small cells on a 40 m grid and three UEs, ~9-10% handover ticks.

    One UE circles the cluster, one patrols a zig-zag street through it and
    one drives between random destinations with stops. Per-UE durations
    split ``total_samples`` as evenly as possible.
    """
    cells = [CellSite("c0", (-20.0, -20.0)), CellSite("c1", (20.0, -20.0)),
             CellSite("c2", (-20.0, 20.0)), CellSite("c3", (20.0, 20.0))]
    base, extra = divmod(total_samples, 3)
    durations = [base + (1 if i < extra else 0) for i in range(3)]
    ues = [
        UeTrack("ue0", (((0.0, 0.0), 0.0), ((24.0, 0.0), 7.0)), "circular", duration=durations[0]),
        UeTrack("ue1", (((-80.0, -66.7), 11.0), ((80.0, 66.7), 11.0), ((80.0, -66.7), 11.0),
                        ((-80.0, 66.7), 11.0)), "linear", duration=durations[1]),
        UeTrack("ue2", (((0.0, 0.0), 16.0),), "random-waypoint", duration=durations[2],
                area=(-80.0, -80.0, 80.0, 80.0), max_pause=20),
    ]
    env = RadioEnv(pathloss_exponent=3.5, shadowing_sigma=3.0, shadowing_corr_distance=30.0,
                   noise_floor=-125.0, ho_margin=3.0, ho_time_to_trigger=2, seed=seed)
    return Scenario(cells, ues, env, duration=max(durations), arena=(-200.0, -200.0, 200.0, 200.0))


def two_cell_line(speed: float = 6.0, distance: float = 200.0, shadowing_sigma: float = 0.0,
                  seed: int = 0) -> Scenario:
    """One UE driving from cell A straight to cell B."""
    cells = [CellSite("A", (0.0, 0.0)), CellSite("B", (distance, 0.0))]
    ues = [UeTrack("ue0", (((0.0, 0.0), speed), ((distance, 0.0), 0.0)), "linear")]
    env = RadioEnv(shadowing_sigma=shadowing_sigma, seed=seed)
    return Scenario(cells, ues, env, duration=int(distance / speed) + 1,
                    arena=(-50.0, -50.0, distance + 50.0, 50.0))

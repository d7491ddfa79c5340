from __future__ import annotations

from typing import NamedTuple

from lanechange.errors import DomainError


class UtilityState(NamedTuple):
    """Accumulated contentment with the current lead vehicle."""
    delta: float = 0.0
    lv_id: int | None = None
    # Frame at which the current lead vehicle became the lead vehicle.
    t0: int | None = None


def utility_update(
    state: UtilityState,
    v_lv: float,
    x_lv: float,
    lv_id: int | None,
    *,
    frame: int = 0,
) -> UtilityState:
    """
    Add ``v_lv / x_lv`` to the accumulated utility.

    The sum restarts whenever the lead vehicle changes. A positive total
    is wiped to exactly zero by any negative increment, while a zero or
    negative total keeps accumulating.
    """
    if lv_id is None:
        return UtilityState()

    if x_lv <= 0:
        raise DomainError(f"Lead gap must be positive, got {x_lv}")

    if lv_id != state.lv_id:
        state = UtilityState(delta=0.0, lv_id=lv_id, t0=frame)

    increment = v_lv / x_lv

    if state.delta > 0 and increment < 0:
        return state._replace(delta=0.0)

    return state._replace(delta=state.delta + increment)

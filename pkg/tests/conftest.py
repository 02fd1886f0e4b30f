import pathlib
import sys

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent))

from lattice_mc import ChainModel, LatticeCoord, LatticeSpec, RowMeta, build_chain
from lattice_mc.config import builtin_config, builtin_model


@pytest.fixture(scope="session")
def toy2d_chain8() -> ChainModel:
    """toy2d at n=8: small, all-exact, reused by analysis/artifact/CLI tests."""
    return build_chain(builtin_model("toy2d"), 8, [0.0, 0.0])


@pytest.fixture(scope="session")
def bm_chain16() -> ChainModel:
    return build_chain(builtin_model("bm"), 16, [0.0])


@pytest.fixture(scope="session")
def heston_chain8() -> ChainModel:
    cfg = builtin_config("heston_mod")
    return build_chain(builtin_model("heston_mod"), 8, list(cfg.x0))


def make_walk_chain(n: int) -> ChainModel:
    """Hand-built symmetric +-1 walk on Z: the canonical recombining chain.

    States appear in breadth-first order from 0; step i has frontier 2 and
    cumulative 2i+1 states.  Rows are (1/2, 1/2) onto the neighbors; the
    outermost ring at step n is terminal.
    """
    ids: dict[int, int] = {0: 0}
    states: list[LatticeCoord | None] = [LatticeCoord((0,))]
    meta = [RowMeta(mode="exact", residual=0.0, step=0)]
    frontier = [0]
    rows: list[tuple[tuple[int, float], ...]] = []
    for i in range(1, n + 1):
        nxt = []
        for z in sorted({z for f in frontier for z in (f - 1, f + 1)} - set(ids)):
            ids[z] = len(states)
            states.append(LatticeCoord((z,)))
            meta.append(RowMeta(mode="exact" if i < n else "terminal", residual=0.0, step=i))
            nxt.append(z)
        frontier = sorted(set(frontier) | set(nxt))
    for sid, st in enumerate(states):
        if meta[sid].mode == "terminal":
            rows.append(())
        else:
            z = st.z[0]
            pair = sorted([(ids[z - 1], 0.5), (ids[z + 1], 0.5)])
            rows.append(tuple(pair))
    return ChainModel(
        lattice=LatticeSpec(1.0, 1),
        n=n,
        states=tuple(states),
        rows=tuple(rows),
        row_meta=tuple(meta),
        start_id=0,
        start_point=np.zeros(1),
    )


@pytest.fixture(scope="session")
def walk_chain4() -> ChainModel:
    return make_walk_chain(4)

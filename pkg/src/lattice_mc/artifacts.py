"""Chain persistence and transition-matrix exports.

The JSON artifact is the canonical on-disk form of a ChainModel: versioned,
self-validating on load (the ChainModel constructor re-runs its invariants,
so rows must still sum to one), and byte-deterministic -- serializing the
same chain twice, or a loaded copy of it, produces identical bytes.  Floats
are emitted as their shortest round-tripping decimal, so no precision is
lost in either direction.

Two plain-text matrix exports sit next to it: a triplet CSV (one
"src,dst,prob" line per transition) and an explicit-state pair of files in
the style probabilistic model checkers ingest -- a states file mapping ids
to integer lattice coordinates and a transitions file with a "<states>
<transitions>" header.  Both are sorted by (src, dst) and parse back
exactly.
"""

from __future__ import annotations

import json
from typing import Any

import numpy as np

from .builder import ChainModel, RowMeta
from .lattice import LatticeCoord, LatticeSpec

__all__ = [
    "chain_to_json_dict",
    "chain_from_json_dict",
    "dumps_chain",
    "save_chain",
    "load_chain",
    "export_triplets",
    "parse_triplets",
    "export_prism",
    "parse_prism",
]

_KIND = "lattice_mc.chain"
_VERSION = 1


def chain_to_json_dict(chain: ChainModel) -> dict[str, Any]:
    """A JSON-ready dict capturing the chain exactly (floats unrounded)."""
    lat = chain.lattice
    return {
        "kind": _KIND,
        "version": _VERSION,
        "lattice": {
            "gamma": lat.gamma,
            "dim": lat.dim,
            "frame_Q": [[float(v) for v in row] for row in lat.frame_Q],
            "offset": [float(v) for v in lat.offset],
        },
        "n": chain.n,
        "horizon": chain.horizon,
        "start_id": chain.start_id,
        "start_point": [float(v) for v in chain.start_point],
        "states": [None if st is None else list(st.z) for st in chain.states],
        "rows": [[[dst, float(p)] for dst, p in row] for row in chain.rows],
        "row_meta": [
            {"mode": m.mode, "residual": float(m.residual), "step": m.step} for m in chain.row_meta
        ],
    }


def chain_from_json_dict(data: dict[str, Any]) -> ChainModel:
    """Rebuild a ChainModel, re-running all of its structural validation."""
    if not isinstance(data, dict) or data.get("kind") != _KIND:
        raise ValueError(f"not a {_KIND} artifact")
    if data.get("version") != _VERSION:
        raise ValueError(f"unsupported artifact version {data.get('version')!r}")
    lat_d = data["lattice"]
    lattice = LatticeSpec(
        gamma=float(lat_d["gamma"]),
        dim=int(lat_d["dim"]),
        frame_Q=np.array(lat_d["frame_Q"], dtype=float),
        offset=np.array(lat_d["offset"], dtype=float),
    )
    states = tuple(
        None if st is None else LatticeCoord(tuple(int(z) for z in st)) for st in data["states"]
    )
    rows = tuple(
        tuple((int(dst), float(p)) for dst, p in row) for row in data["rows"]
    )
    metas = tuple(
        RowMeta(mode=str(m["mode"]), residual=float(m["residual"]), step=int(m["step"]))
        for m in data["row_meta"]
    )
    return ChainModel(
        lattice=lattice,
        n=int(data["n"]),
        states=states,
        rows=rows,
        row_meta=metas,
        start_id=int(data["start_id"]),
        start_point=np.array(data["start_point"], dtype=float),
        horizon=float(data["horizon"]),
    )


def dumps_chain(chain: ChainModel) -> str:
    """Deterministic artifact text: sorted keys, two-space indent, one \\n."""
    return json.dumps(chain_to_json_dict(chain), indent=2, sort_keys=True) + "\n"


def save_chain(chain: ChainModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_chain(chain))


def load_chain(path: str) -> ChainModel:
    with open(path, encoding="utf-8") as fh:
        return chain_from_json_dict(json.load(fh))


def export_triplets(chain: ChainModel) -> str:
    """One "src,dst,prob" line per transition, sorted by (src, dst).

    Probabilities print as their shortest round-tripping decimal.  Terminal
    states have no transitions and so contribute no lines.
    """
    lines = []
    for sid, row in enumerate(chain.rows):  # rows already sorted by dst
        for dst, p in row:
            lines.append(f"{sid},{dst},{p!r}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_triplets(text: str) -> list[tuple[int, int, float]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected src,dst,prob, got {line!r}")
        out.append((int(parts[0]), int(parts[1]), float(parts[2])))
    return out


def _state_label(st: LatticeCoord | None) -> str:
    if st is None:
        return "start"  # sentinel for an off-lattice start point
    return "(" + ",".join(str(z) for z in st.z) + ")"


def export_prism(chain: ChainModel) -> tuple[str, str]:
    """Explicit-state export: (states text, transitions text).

    States file: one "id:(z1,...,zd)" line per state (the off-lattice start
    sentinel prints as "id:start").  Transitions file: a header
    "<num_states> <num_transitions>" then "src dst prob" lines sorted by
    (src, dst), probabilities in shortest round-tripping form.
    """
    sta_lines = [f"{sid}:{_state_label(st)}" for sid, st in enumerate(chain.states)]
    tra_lines = []
    for sid, row in enumerate(chain.rows):
        for dst, p in row:
            tra_lines.append(f"{sid} {dst} {p!r}")
    header = f"{chain.num_states} {len(tra_lines)}"
    return "\n".join(sta_lines) + "\n", "\n".join([header, *tra_lines]) + "\n"


def parse_prism(sta_text: str, tra_text: str) -> tuple[list[tuple[int, ...] | None], list[tuple[int, int, float]]]:
    """Parse the explicit-state pair back into (states, transitions)."""
    states: list[tuple[int, ...] | None] = []
    for lineno, line in enumerate(sta_text.splitlines(), 1):
        if not line.strip():
            continue
        sid_s, _, label = line.partition(":")
        if int(sid_s) != len(states):
            raise ValueError(f"states line {lineno}: ids must be dense and ascending")
        if label == "start":
            states.append(None)
        elif label.startswith("(") and label.endswith(")"):
            states.append(tuple(int(z) for z in label[1:-1].split(",")))
        else:
            raise ValueError(f"states line {lineno}: bad label {label!r}")

    lines = [ln for ln in tra_text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("transitions file is empty")
    counts = lines[0].split()
    if len(counts) != 2:
        raise ValueError(f"bad transitions header {lines[0]!r}")
    n_states, n_trans = int(counts[0]), int(counts[1])
    if n_states != len(states):
        raise ValueError(f"header says {n_states} states, states file has {len(states)}")
    if n_trans != len(lines) - 1:
        raise ValueError(f"header says {n_trans} transitions, file has {len(lines) - 1}")
    transitions = []
    for line in lines[1:]:
        src_s, dst_s, p_s = line.split()
        transitions.append((int(src_s), int(dst_s), float(p_s)))
    return states, transitions

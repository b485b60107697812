"""JSON model, policy and transform-record files.

Probability tables are stored as sparse name-keyed rows::

    transition[state][action] = {successor: p}
    observation[successor][action] = {observation: p}

Rewards are dense ``reward[state][action]``. Probabilities may be written as
numbers or decimal strings. Emission is canonical, so a parsed file
re-emits byte for byte.
"""

from __future__ import annotations

import json
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any

import numpy as np

from .model import INF, AbPomdp, MePomdp, ModelError, Pomdp, Posg
from .policy import MixedPolicy
from .transforms import SentinelInfo, TransformRecord

MODEL_TYPES = ("pomdp", "me-pomdp", "ab-pomdp", "posg")


class FormatError(ModelError):
    pass


def _num(x, where: str) -> float:
    if isinstance(x, bool):
        raise FormatError(f"{where}: expected a number, got {x!r}")
    if isinstance(x, (int, float)):
        return float(x)
    if isinstance(x, str):
        try:
            return float(Decimal(x))
        except InvalidOperation:
            pass
    raise FormatError(f"{where}: expected a number, got {x!r}")


def _clean(x: float):
    """Shortest JSON form of a float: integral values are written as ints."""
    x = float(x)
    return int(x) if x.is_integer() and abs(x) < 2**53 else x


def _lookup(names, name, what):
    try:
        return names.index(name)
    except ValueError:
        raise FormatError(f"unknown {what} {name!r}") from None


def _names(d, key) -> tuple[str, ...]:
    xs = d.get(key)
    if not isinstance(xs, list) or not xs:
        raise FormatError(f"'{key}' must be a non-empty list")
    xs = tuple(str(x) for x in xs)
    if len(set(xs)) != len(xs):
        raise FormatError(f"'{key}' has duplicate names")
    return xs


def _sparse_to_dense(row: dict, names, where: str) -> np.ndarray:
    if not isinstance(row, dict):
        raise FormatError(f"{where}: expected an object of name -> probability")
    out = np.zeros(len(names))
    for k, v in row.items():
        out[_lookup(names, k, where.split("[")[0])] = _num(v, where)
    return out


def _dense_to_sparse(row: np.ndarray, names) -> dict:
    return {names[j]: _clean(row[j]) for j in np.flatnonzero(row)}


# --------------------------------------------------------------------------
# tables


def _read_kernel(tbl, src_names, act_names, dst_names, what) -> np.ndarray:
    """``tbl[src][act] = {dst: p}`` -> dense (A, S, D); missing rows stay zero."""
    out = np.zeros((len(act_names), len(src_names), len(dst_names)))
    if not isinstance(tbl, dict):
        raise FormatError(f"{what}: expected an object keyed by state")
    for s_name, per_a in tbl.items():
        s = _lookup(src_names, s_name, "state")
        if not isinstance(per_a, dict):
            raise FormatError(f"{what}[{s_name}]: expected an object keyed by action")
        for a_name, row in per_a.items():
            a = _lookup(act_names, a_name, "action")
            out[a, s] = _sparse_to_dense(row, dst_names, f"{what}[{s_name}][{a_name}]")
    return out


def _write_kernel(K: np.ndarray, src_names, act_names, dst_names) -> dict:
    return {
        src_names[s]: {act_names[a]: _dense_to_sparse(K[a, s], dst_names) for a in range(len(act_names))}
        for s in range(len(src_names))
    }


def _read_reward(tbl, S, A, what="reward") -> np.ndarray:
    try:
        R = np.array([[_num(x, what) for x in row] for row in tbl], dtype=float)
    except TypeError:
        raise FormatError(f"{what}: expected a dense [state][action] array") from None
    if R.shape != (S, A):
        raise FormatError(f"{what}: shape {R.shape} != {(S, A)}")
    return R


def _read_available(d, states, actions):
    av = d.get("available_actions")
    if av is None:
        return None
    mask = np.ones((len(states), len(actions)), dtype=bool)
    for s_name, acts in av.items():
        s = _lookup(states, s_name, "state")
        mask[s] = False
        for a_name in acts:
            mask[s, _lookup(actions, a_name, "action")] = True
    return mask


def _write_available(mask, states, actions) -> dict | None:
    if mask is None:
        return None
    return {
        states[s]: [actions[a] for a in np.flatnonzero(mask[s])]
        for s in range(len(states))
        if not mask[s].all()
    }


def _horizon_in(h):
    if h is None or h == "inf":
        return INF
    if isinstance(h, bool) or not isinstance(h, int):
        raise FormatError(f"horizon must be a positive integer or \"inf\", got {h!r}")
    return h


def _horizon_out(h):
    return "inf" if h == INF else int(h)


# --------------------------------------------------------------------------
# models


def model_from_dict(d: dict[str, Any]):
    """Parse a model document. Stochasticity is checked by ``validate``, not here."""
    if not isinstance(d, dict):
        raise FormatError("a model document must be a JSON object")
    kind = d.get("type")
    if kind not in MODEL_TYPES:
        raise FormatError(f"'type' must be one of {MODEL_TYPES}, got {kind!r}")
    states = _names(d, "states")
    obs = _names(d, "observations")
    if "discount" not in d:
        raise FormatError("missing 'discount'")
    discount = _num(d["discount"], "discount")
    horizon = _horizon_in(d.get("horizon", "inf"))
    envs = d.get("environments")
    if not isinstance(envs, list) or not envs:
        raise FormatError("'environments' must be a non-empty list")
    S, Z = len(states), len(obs)

    if kind == "posg":
        a1 = _names(d, "agent_actions")
        a2 = _names(d, "nature_actions")
        if len(envs) != 1:
            raise FormatError("a posg has exactly one environment")
        e = envs[0]
        T = np.zeros((len(a1), len(a2), S, S))
        O = np.zeros((len(a1), len(a2), S, Z))
        R = np.zeros((S, len(a1), len(a2)))
        for j, nat in enumerate(a2):
            T[:, j] = _read_kernel(_slice_nature(e["transition"], nat), states, a1, states, "transition")
            O[:, j] = _read_kernel(_slice_nature(e["observation"], nat), states, a1, obs, "observation")
            R[:, :, j] = _read_reward([[row[a][j] for a in range(len(a1))] for row in e["reward"]], S, len(a1))
        return Posg(
            states=states,
            agent_actions=a1,
            nature_actions=a2,
            observations=obs,
            transition=T,
            observation=O,
            reward=R,
            initial_belief=_sparse_to_dense(e.get("initial_belief", {}), states, "initial_belief"),
            discount=discount,
            horizon=horizon,
            agent_available_actions=_read_available(d, states, a1),
            metadata=d.get("metadata", {}),
        )

    actions = _names(d, "actions")
    A = len(actions)
    tables = []
    for k, e in enumerate(envs):
        where = f"environments[{k}]."
        try:
            T = _read_kernel(e["transition"], states, actions, states, where + "transition")
            O = _read_kernel(e["observation"], states, actions, obs, where + "observation")
            R = _read_reward(e["reward"], S, A, where + "reward")
        except KeyError as err:
            raise FormatError(f"{where}: missing {err.args[0]!r}") from None
        b0 = None
        if kind != "ab-pomdp":
            if "initial_belief" not in e:
                raise FormatError(f"{where}: missing 'initial_belief'")
            b0 = _sparse_to_dense(e["initial_belief"], states, where + "initial_belief")
        tables.append((T, O, R, b0))
    avail = _read_available(d, states, actions)
    common = dict(
        states=states,
        actions=actions,
        observations=obs,
        discount=discount,
        horizon=horizon,
        available_actions=avail,
        metadata=d.get("metadata", {}),
    )
    if kind == "me-pomdp":
        T, O, R, b0 = (np.stack(x) for x in zip(*tables))
        return MePomdp(transition=T, observation=O, reward=R, initial_belief=b0, **common)
    if len(tables) != 1:
        raise FormatError(f"a {kind} has exactly one environment")
    T, O, R, b0 = tables[0]
    if kind == "pomdp":
        return Pomdp(transition=T, observation=O, reward=R, initial_belief=b0, **common)
    q = d.get("belief_support")
    if not isinstance(q, list) or not q:
        raise FormatError("ab-pomdp needs a non-empty 'belief_support'")
    return AbPomdp(
        transition=T,
        observation=O,
        reward=R,
        belief_support=tuple(_lookup(states, x, "state") for x in q),
        **common,
    )


def _slice_nature(tbl, nat):
    """posg kernels are keyed [state][agent action][nature action]."""
    return {s: {a: row[nat] for a, row in per_a.items() if nat in row} for s, per_a in tbl.items()}


def model_type(m) -> str:
    if isinstance(m, MePomdp):
        return "me-pomdp"
    if isinstance(m, AbPomdp):
        return "ab-pomdp"
    if isinstance(m, Posg):
        return "posg"
    if isinstance(m, Pomdp):
        return "pomdp"
    raise TypeError(f"not a model: {type(m).__name__}")


def model_to_dict(m, metadata: dict | None = None) -> dict[str, Any]:
    kind = model_type(m)
    meta = metadata if metadata is not None else getattr(m, "metadata", {})
    d: dict[str, Any] = {"type": kind, "states": list(m.states)}
    if kind == "posg":
        d["agent_actions"] = list(m.agent_actions)
        d["nature_actions"] = list(m.nature_actions)
    else:
        d["actions"] = list(m.actions)
    d["observations"] = list(m.observations)
    d["discount"] = _clean(m.discount)
    d["horizon"] = _horizon_out(m.horizon)

    if kind == "posg":
        a1, a2 = m.agent_actions, m.nature_actions

        def nested(K, dst):
            return {
                m.states[s]: {
                    a1[a]: {a2[j]: _dense_to_sparse(K[a, j, s], dst) for j in range(len(a2))} for a in range(len(a1))
                }
                for s in range(m.num_states)
            }

        env = {
            "transition": nested(m.transition, m.states),
            "observation": nested(m.observation, m.observations),
            "reward": [[[_clean(x) for x in row] for row in block] for block in m.reward],
            "initial_belief": _dense_to_sparse(m.initial_belief, m.states),
        }
        d["environments"] = [env]
        av = _write_available(m.agent_available_actions, m.states, a1)
    else:
        if kind == "me-pomdp":
            layers = [
                (m.transition[i], m.observation[i], m.reward[i], m.initial_belief[i]) for i in range(m.num_envs)
            ]
        else:
            layers = [(m.transition, m.observation, m.reward, getattr(m, "initial_belief", None))]
        envs = []
        for T, O, R, b0 in layers:
            env = {
                "transition": _write_kernel(T, m.states, m.actions, m.states),
                "observation": _write_kernel(O, m.states, m.actions, m.observations),
                "reward": [[_clean(x) for x in row] for row in R],
            }
            if b0 is not None:
                env["initial_belief"] = _dense_to_sparse(b0, m.states)
            envs.append(env)
        d["environments"] = envs
        av = _write_available(m.available_actions, m.states, m.actions)
    if kind == "ab-pomdp":
        d["belief_support"] = [m.states[q] for q in m.belief_support]
    if av is not None:
        d["available_actions"] = av
    d["metadata"] = _jsonable(meta or {})
    return d


def dumps(d) -> str:
    return json.dumps(d, indent=2, ensure_ascii=False) + "\n"


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON ({err})") from None


def write_json(path, d) -> None:
    Path(path).write_text(dumps(d), encoding="utf-8")


def load_model(path):
    return model_from_dict(read_json(path))


def save_model(path, m, metadata: dict | None = None) -> None:
    write_json(path, model_to_dict(m, metadata))


# --------------------------------------------------------------------------
# policies and records


def policy_to_dict(mp: MixedPolicy, m) -> dict:
    return mp.to_dict(list(m.actions), list(m.observations))


def policy_from_dict(d: dict, m) -> MixedPolicy:
    try:
        return MixedPolicy.from_dict(d, list(m.actions), list(m.observations))
    except (KeyError, ValueError) as err:
        raise FormatError(f"policy does not match the model's actions/observations: {err}") from None


def record_to_dict(rec: TransformRecord) -> dict:
    d = {
        "kind": rec.kind.value,
        "state_map": [[orig, list(tag)] for orig, tag in rec.state_map],
        "sentinel": None,
        "extra": _jsonable(rec.extra),
    }
    if rec.sentinel is not None:
        s = rec.sentinel
        d["sentinel"] = {
            "bottom_states": list(s.bottom_states),
            "top_observation": s.top_observation,
            "diamond_action": s.diamond_action,
            "reward_scale": s.reward_scale,
            "horizon_shift": s.horizon_shift,
        }
    return d


def record_from_dict(d: dict) -> TransformRecord:
    from .transforms import TransformKind

    sent = d.get("sentinel")
    return TransformRecord(
        TransformKind(d["kind"]),
        tuple((orig if not isinstance(orig, list) else tuple(orig), tuple(tag)) for orig, tag in d["state_map"]),
        None if sent is None else SentinelInfo(tuple(sent["bottom_states"]), sent["top_observation"],
                                               sent["diamond_action"], sent["reward_scale"], sent["horizon_shift"]),
        d.get("extra", {}),
    )


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x

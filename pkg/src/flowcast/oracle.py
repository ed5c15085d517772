"""Deterministic synthetic QoR oracle standing in for synthesis + mapping.

A technology is a hidden-state machine: starting from ``s0`` every
transformation ``k`` applies ``s <- tanh(A_k s + b_k)``; delay and area are
softplus readouts of the final state, scaled to ps / um^2.  The final state
depends on the order of transformations, not only on their counts.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import CorruptFile, SpecMismatch, VersionMismatch
from .flowspace import Flow, FlowSpec, sample_unique_flows, validate_flow

TECH_MAGIC = "flowcast-technology"
TECH_VERSION = 1
DEFAULT_STATE_DIM = 8
READOUT_SCALE = 100.0


@dataclass(frozen=True, eq=False)
class Technology:
    id: str
    spec: FlowSpec
    s0: np.ndarray
    A: np.ndarray  # (n, d, d)
    b: np.ndarray  # (n, d)
    w_delay: np.ndarray
    c_delay: float
    w_area: np.ndarray
    c_area: float
    delay_scale: float = READOUT_SCALE
    area_scale: float = READOUT_SCALE
    noise_sd: float = 0.0
    lineage: tuple[str, ...] = field(default=())

    @property
    def state_dim(self) -> int:
        return self.s0.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "s0": self.s0, "A": self.A, "b": self.b,
            "w_delay": self.w_delay, "c_delay": np.array([self.c_delay]),
            "w_area": self.w_area, "c_area": np.array([self.c_area]),
        }

    def same_parameters(self, other: "Technology") -> bool:
        mine, theirs = self.arrays(), other.arrays()
        return (
            self.spec == other.spec
            and all(np.array_equal(mine[k], theirs[k]) for k in mine)
            and (self.delay_scale, self.area_scale, self.noise_sd)
            == (other.delay_scale, other.area_scale, other.noise_sd)
        )


@dataclass(frozen=True)
class QoR:
    delay: float  # ps
    area: float  # um^2


def softplus(x):
    return np.logaddexp(0.0, x)


def make_technology(spec: FlowSpec, seed=0, state_dim: int = DEFAULT_STATE_DIM,
                    noise_sd: float = 0.0, tech_id: str | None = None) -> Technology:
    """Root technology with every parameter ~ U(-1, 1) / sqrt(d)."""
    rng = np.random.default_rng(seed)
    d, n = state_dim, spec.n
    scale = 1.0 / np.sqrt(d)

    def draw(*shape):
        return rng.uniform(-1.0, 1.0, size=shape) * scale

    s0 = draw(d)
    A = draw(n, d, d)
    b = draw(n, d)
    w_delay, c_delay = draw(d), float(draw(1)[0])
    w_area, c_area = draw(d), float(draw(1)[0])
    return Technology(
        id=tech_id or f"root-{seed}", spec=spec, s0=s0, A=A, b=b,
        w_delay=w_delay, c_delay=c_delay, w_area=w_area, c_area=c_area,
        noise_sd=noise_sd,
    )


def derive_technology(parent: Technology, drift: float = 0.1, scale: float = 1.0, seed=0,
                      tech_id: str | None = None) -> Technology:
    """Child technology: parent state machine perturbed by ``drift``, readouts scaled.

    Each parameter tensor ``p`` becomes ``p + drift * rms(p) * N(0, 1)``; the
    delay and area output scales are multiplied by ``scale``.  ``drift=0,
    scale=1`` reproduces the parent exactly.
    """
    if not 0.0 <= drift <= 1.0:
        raise ValueError("drift must lie in [0, 1]")
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)

    def perturb(p):
        p = np.asarray(p, dtype=np.float64)
        noise = rng.standard_normal(p.shape)
        if drift == 0.0:
            return p.copy()
        return p + drift * np.sqrt(np.mean(p ** 2)) * noise

    arrays = parent.arrays()
    new = {k: perturb(v) for k, v in arrays.items()}
    child_id = tech_id or f"{parent.id}/d{drift:g}s{scale:g}@{seed}"
    return replace(
        parent,
        id=child_id,
        s0=new["s0"], A=new["A"], b=new["b"],
        w_delay=new["w_delay"], c_delay=float(new["c_delay"][0]),
        w_area=new["w_area"], c_area=float(new["c_area"][0]),
        delay_scale=parent.delay_scale * scale,
        area_scale=parent.area_scale * scale,
        lineage=parent.lineage + (parent.id,),
    )


def final_states(steps: np.ndarray, tech: Technology) -> np.ndarray:
    steps = np.asarray(steps, dtype=np.int64)
    if steps.ndim != 2 or (steps.size and (steps.min() < 0 or steps.max() >= tech.spec.n)):
        raise SpecMismatch("step indices do not fit the technology's alphabet")
    return _kernels.oracle_chain(steps, tech.s0, tech.A, tech.b)


def simulate_batch(steps: np.ndarray, tech: Technology, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless (or seeded-noise) delay and area for every row of ``steps``.

    With noise, row ``r`` draws from its own stream ``(seed, r)`` so any
    partition of the rows reproduces the same values.
    """
    s = final_states(steps, tech)
    delay = softplus(s @ tech.w_delay + tech.c_delay) * tech.delay_scale
    area = softplus(s @ tech.w_area + tech.c_area) * tech.area_scale
    if tech.noise_sd > 0:
        noise = np.empty((len(delay), 2))
        for r in range(len(delay)):
            noise[r] = np.random.default_rng([int(seed or 0), r]).standard_normal(2)
        delay = delay * (1.0 + tech.noise_sd * noise[:, 0])
        area = area * (1.0 + tech.noise_sd * noise[:, 1])
    return delay, area


def simulate_qor(flow: Flow, tech: Technology, rng: np.random.Generator | None = None) -> QoR:
    try:
        validate_flow(flow, tech.spec)
    except Exception as exc:
        raise SpecMismatch(f"flow does not match technology spec: {exc}") from None
    delay, area = simulate_batch(np.asarray([flow.steps]), replace(tech, noise_sd=0.0))
    delay, area = float(delay[0]), float(area[0])
    if tech.noise_sd > 0 and rng is not None:
        e = rng.standard_normal(2)
        delay *= 1.0 + tech.noise_sd * e[0]
        area *= 1.0 + tech.noise_sd * e[1]
    return QoR(delay, area)


def generate_dataset(spec: FlowSpec, tech: Technology, count: int, seed=0, target: str = "delay"):
    """``count`` unique random flows with their simulated QoR.

    Rows whose QoR is not finite and positive are dropped and counted, the way
    crashed synthesis runs are dropped from real data.
    """
    from .dataset import Dataset

    if spec != tech.spec:
        raise SpecMismatch("dataset spec and technology spec differ")
    rng = np.random.default_rng(seed)
    flows = sample_unique_flows(spec, count, rng)
    steps = np.array([f.steps for f in flows], dtype=np.int64).reshape(count, spec.length)
    delay, area = simulate_batch(steps, tech, seed=seed)
    ok = np.isfinite(delay) & np.isfinite(area) & (delay > 0) & (area > 0)
    return Dataset(spec, steps[ok], delay[ok], area[ok], target=target,
                   dropped=int((~ok).sum()))


# ------------------------------------------------------------------ file I/O


def _hex(values) -> str:
    return " ".join(float(v).hex() for v in np.ravel(values))


def _unhex(text: str) -> np.ndarray:
    return np.array([float.fromhex(t) for t in text.split()], dtype=np.float64)


def format_technology(tech: Technology) -> str:
    n, d = tech.spec.n, tech.state_dim
    lines = [
        f"{TECH_MAGIC} {TECH_VERSION}",
        f"id {tech.id}",
        f"names {' '.join(tech.spec.names)}",
        f"reps {' '.join(map(str, tech.spec.reps))}",
        f"state_dim {d}",
        f"lineage {' '.join(tech.lineage)}".rstrip(),
        f"delay_scale {_hex([tech.delay_scale])}",
        f"area_scale {_hex([tech.area_scale])}",
        f"noise_sd {_hex([tech.noise_sd])}",
        f"s0 {_hex(tech.s0)}",
    ]
    for k in range(n):
        lines.append(f"A {k} {_hex(tech.A[k])}")
        lines.append(f"b {k} {_hex(tech.b[k])}")
    lines += [
        f"w_delay {_hex(tech.w_delay)}",
        f"c_delay {_hex([tech.c_delay])}",
        f"w_area {_hex(tech.w_area)}",
        f"c_area {_hex([tech.c_area])}",
    ]
    body = "\n".join(lines) + "\n"
    return body + f"end {hashlib.sha256(body.encode()).hexdigest()}\n"


def parse_technology(text: str) -> Technology:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(TECH_MAGIC):
        raise CorruptFile("not a flowcast technology file")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise CorruptFile("unreadable technology header") from None
    if version != TECH_VERSION:
        raise VersionMismatch(f"technology format version {version}, expected {TECH_VERSION}")
    if not lines[-1].startswith("end "):
        raise CorruptFile("technology file is truncated")
    body = "\n".join(lines[:-1]) + "\n"
    if hashlib.sha256(body.encode()).hexdigest() != lines[-1].split()[1]:
        raise CorruptFile("technology file checksum mismatch")
    fields: dict[str, str] = {}
    A_rows: dict[int, np.ndarray] = {}
    b_rows: dict[int, np.ndarray] = {}
    for line in lines[1:-1]:
        key, _, rest = line.partition(" ")
        if key in ("A", "b"):
            idx, _, vals = rest.partition(" ")
            (A_rows if key == "A" else b_rows)[int(idx)] = _unhex(vals)
        else:
            fields[key] = rest
    try:
        spec = FlowSpec(tuple(fields["names"].split()), tuple(int(m) for m in fields["reps"].split()))
        d = int(fields["state_dim"])
        A = np.stack([A_rows[k].reshape(d, d) for k in range(spec.n)])
        b = np.stack([b_rows[k] for k in range(spec.n)])
        return Technology(
            id=fields["id"], spec=spec, s0=_unhex(fields["s0"]), A=A, b=b,
            w_delay=_unhex(fields["w_delay"]), c_delay=float(_unhex(fields["c_delay"])[0]),
            w_area=_unhex(fields["w_area"]), c_area=float(_unhex(fields["c_area"])[0]),
            delay_scale=float(_unhex(fields["delay_scale"])[0]),
            area_scale=float(_unhex(fields["area_scale"])[0]),
            noise_sd=float(_unhex(fields["noise_sd"])[0]),
            lineage=tuple(fields.get("lineage", "").split()),
        )
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"malformed technology file: {exc}") from None


def save_technology(tech: Technology, path) -> None:
    from .model_io import atomic_write_text

    atomic_write_text(path, format_technology(tech))


def load_technology(path) -> Technology:
    return parse_technology(Path(path).read_text(encoding="utf-8"))

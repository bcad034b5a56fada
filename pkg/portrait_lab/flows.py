"""
Dual-branch conditional continuous normalizing flows

Each branch s in {geo, tex} owns a dynamics network phi_s(v, t, a). A style
code w_s sits at time t1 and its base variable z ~ N(0, I) at t0:

    z   = integrate(phi_s, w_s, t1 -> t0, a)      (invert)
    w'_s = integrate(phi_s, z, t0 -> t1, a')      (edit)

The ODE is solved with fixed-step classical Runge-Kutta and gradients flow
straight through the solver steps. Log densities use the exact Jacobian
trace.
"""

import math
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import torch
import torch.nn as nn
from torch.func import jacrev, vmap

from .checkpoints import TrainingLog, guard_finite, load_checkpoint, save_checkpoint, snapshot
from .config import ATTRIBUTE_NAMES, ExperimentConfig, FlowConfig
from .errors import ArgumentError, CheckpointError, IntegrationError, UnknownAttributeError
from .imaging import seed_everything
from .models import StyleCode

BRANCHES = ("geo", "tex")


class ODEDynamics(nn.Module):
    """
    dv/dt = phi(v, t, a)

    A tanh MLP on [v, t, sin(pi t), cos(pi t), 2 (a - 0.5)].
    """

    def __init__(self, dim: int, attr_dim: int, hidden: int = 128, zero_init: bool = False):
        super().__init__()
        self.dim = dim
        self.attr_dim = attr_dim
        self.net = nn.Sequential(
            nn.Linear(dim + 3 + attr_dim, hidden),
            nn.Tanh(),
            nn.Linear(hidden, hidden),
            nn.Tanh(),
            nn.Linear(hidden, dim),
        )
        if zero_init:
            self.zero_output()

    def zero_output(self) -> None:
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, v: torch.Tensor, t: float, a: torch.Tensor) -> torch.Tensor:
        if a.shape[-1] != self.attr_dim:
            raise ArgumentError(f"Attribute vector has {a.shape[-1]} entries, expected {self.attr_dim}")
        t = float(t)
        time = torch.tensor([t, math.sin(math.pi * t), math.cos(math.pi * t)], dtype=v.dtype, device=v.device)
        time = torch.ones_like(v[..., :1]) * time
        a = (a.to(v.dtype) - 0.5) * 2.0
        return self.net(torch.cat([v, time, a.expand(*v.shape[:-1], a.shape[-1])], dim=-1))


Dynamics = Callable[[torch.Tensor, float, torch.Tensor], torch.Tensor]


def jacobian_trace(fn: Dynamics, v: torch.Tensor, t: float, a: torch.Tensor) -> torch.Tensor:
    """Exact tr(d phi / d v) per sample, shape (B,)"""
    def single(vi, ai):
        return fn(vi.unsqueeze(0), t, ai.unsqueeze(0)).squeeze(0)

    jac = vmap(jacrev(single))(v, a)
    return jac.diagonal(dim1=-2, dim2=-1).sum(-1)


def integrate(fn: Dynamics, v_start: torch.Tensor, t_from: float, t_to: float, a: torch.Tensor,
              steps: int = 40, with_logdet: bool = False):
    """
    Fixed-step RK4 from t_from to t_to (either direction)

    Args:
        fn: Dynamics callable (v, t, a) -> dv/dt
        v_start: (D,) or (B, D)
        a: (K,) or (B, K) conditioning
        with_logdet: Also integrate d L / dt = -tr(d phi / d v)

    Returns:
        v_end, plus L(t_to) with L(t_from) = 0 when ``with_logdet``

    Raises:
        IntegrationError: State became non-finite; carries the step index
    """
    if steps < 1:
        raise ArgumentError("steps must be positive")
    single = v_start.ndim == 1
    v = v_start.unsqueeze(0) if single else v_start
    a = a.to(v.dtype)
    if a.ndim == 1:
        a = a.unsqueeze(0)
    a = a.expand(v.shape[0], a.shape[-1])

    h = (t_to - t_from) / steps
    logdet = v.new_zeros(v.shape[0])

    def rate(state, t):
        dv = fn(state, t, a)
        if not with_logdet:
            return dv, None
        return dv, -jacobian_trace(fn, state, t, a)

    for i in range(steps):
        t = t_from + i * h
        k1, l1 = rate(v, t)
        k2, l2 = rate(v + 0.5 * h * k1, t + 0.5 * h)
        k3, l3 = rate(v + 0.5 * h * k2, t + 0.5 * h)
        k4, l4 = rate(v + h * k3, t + h)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if with_logdet:
            logdet = logdet + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        if not torch.isfinite(v).all() or (with_logdet and not torch.isfinite(logdet).all()):
            raise IntegrationError(f"ODE state became non-finite at solver step {i + 1}", step=i + 1)

    v = v[0] if single else v
    if with_logdet:
        return v, (logdet[0] if single else logdet)
    return v


def standard_normal_log_prob(z: torch.Tensor) -> torch.Tensor:
    return -0.5 * z.pow(2).sum(-1) - 0.5 * z.shape[-1] * math.log(2.0 * math.pi)


class DualBranchFlow(nn.Module):
    """Geometry and texture flows with an attribute routing table"""

    def __init__(self, arch: Dict[str, Any]):
        super().__init__()
        self.arch = dict(arch)
        self.attribute_names = list(arch["attribute_names"])
        self.routing = dict(arch["routing"])
        missing = [name for name in self.attribute_names if name not in self.routing]
        if missing:
            raise ArgumentError(f"Routing table has no branch for: {', '.join(missing)}")
        bad = sorted({b for b in self.routing.values() if b not in BRANCHES})
        if bad:
            raise ArgumentError(f"Unknown flow branch(es) in routing table: {', '.join(bad)}")
        if not arch["t0"] < arch["t1"]:
            raise ArgumentError("Flow time interval needs t0 < t1")
        self.t0, self.t1, self.steps = float(arch["t0"]), float(arch["t1"]), int(arch["steps"])
        self.branches = nn.ModuleDict({
            s: ODEDynamics(arch["dim"], len(self.attribute_names), arch["hidden"], arch.get("zero_init", False))
            for s in BRANCHES
        })

    @classmethod
    def from_config(cls, flow_config: FlowConfig, dim: int,
                    attribute_names: Optional[List[str]] = None, zero_init: bool = False) -> 'DualBranchFlow':
        return cls(flow_arch(flow_config, dim, attribute_names, zero_init))

    def branch(self, s: str) -> ODEDynamics:
        if s not in self.branches:
            raise ArgumentError(f"Unknown flow branch '{s}' (expected one of {BRANCHES})")
        return self.branches[s]

    def branch_for(self, attribute: str) -> str:
        if attribute not in self.attribute_names:
            raise UnknownAttributeError(f"Unknown attribute '{attribute}'; known: {', '.join(self.attribute_names)}")
        return self.routing[attribute]


def flow_arch(flow_config: FlowConfig, dim: int, attribute_names: Optional[List[str]] = None,
              zero_init: bool = False) -> Dict[str, Any]:
    return {
        "dim": dim,
        "hidden": flow_config.hidden,
        "t0": flow_config.t0,
        "t1": flow_config.t1,
        "steps": flow_config.steps,
        "attribute_names": list(attribute_names or ATTRIBUTE_NAMES),
        "routing": dict(flow_config.routing),
        "zero_init": zero_init,
    }


def _attributes(a) -> torch.Tensor:
    return a.to_tensor() if hasattr(a, "to_tensor") else torch.as_tensor(a)


def dynamics(flow: DualBranchFlow, s: str, v: torch.Tensor, t: float, a) -> torch.Tensor:
    return flow.branch(s)(v, t, _attributes(a).to(v.dtype))


def invert_code(flow: DualBranchFlow, s: str, w_s: torch.Tensor, a, steps: Optional[int] = None) -> torch.Tensor:
    """z = integrate(phi_s, w_s, t1 -> t0, a)"""
    return integrate(flow.branch(s), w_s, flow.t1, flow.t0, _attributes(a), steps or flow.steps)


def edit_code(flow: DualBranchFlow, s: str, z: torch.Tensor, a_edited, steps: Optional[int] = None) -> torch.Tensor:
    """w'_s = integrate(phi_s, z, t0 -> t1, a')"""
    return integrate(flow.branch(s), z, flow.t0, flow.t1, _attributes(a_edited), steps or flow.steps)


def log_likelihood(flow: DualBranchFlow, s: str, w_s: torch.Tensor, a,
                   steps: Optional[int] = None) -> torch.Tensor:
    """
    log p(w_s | a) = log N(z; 0, I) - int_{t0}^{t1} tr(d phi_s / d v) dt

    Integrating t1 -> t0 accumulates int_{t0}^{t1} tr dt directly.
    """
    z, accumulated = integrate(flow.branch(s), w_s, flow.t1, flow.t0, _attributes(a),
                               steps or flow.steps, with_logdet=True)
    return standard_normal_log_prob(z) - accumulated


def train_flows(codes: StyleCode, attributes: torch.Tensor, experiment: Optional[ExperimentConfig] = None,
                steps: Optional[int] = None, attribute_names: Optional[List[str]] = None,
                out_dir=None) -> Tuple[DualBranchFlow, Dict[str, List[float]]]:
    """
    Maximum-likelihood training of both branches

    The branches share nothing: each has its own optimizer and its own
    negative log-likelihood on (w_s, a) pairs.

    Args:
        codes: (N, D_w) style codes
        attributes: (N, K) attribute vectors
        steps: Override of flow.train_steps

    Returns:
        The flow and the per-branch NLL history
    """
    experiment = experiment or ExperimentConfig()
    flow_cfg = experiment.flow
    steps = flow_cfg.train_steps if steps is None else steps
    if codes.w_geo.shape[0] != attributes.shape[0]:
        raise ArgumentError(f"{codes.w_geo.shape[0]} codes but {attributes.shape[0]} attribute vectors")

    rng = seed_everything(experiment.seed)
    flow = DualBranchFlow.from_config(flow_cfg, codes.w_geo.shape[-1], attribute_names)
    optimizers = {s: torch.optim.Adam(flow.branches[s].parameters(), lr=flow_cfg.lr) for s in BRANCHES}
    data = {"geo": codes.w_geo.detach().float(), "tex": codes.w_tex.detach().float()}
    attributes = attributes.detach().float()

    out_dir = Path(out_dir) if out_dir is not None else None
    log = TrainingLog(out_dir / "flow_log.jsonl" if out_dir else None)
    history = {s: [] for s in BRANCHES}
    last_good = snapshot(flow)
    batch = min(flow_cfg.batch_size, attributes.shape[0])

    for step in range(1, steps + 1):
        idx = torch.randint(0, attributes.shape[0], (batch,), generator=rng)
        losses = {}
        for s in BRANCHES:
            nll = -log_likelihood(flow, s, data[s][idx], attributes[idx], flow_cfg.train_solver_steps).mean()
            losses[f"nll_{s}"] = nll
        guard_finite(losses, step, last_good, out_dir / "flow" if out_dir else None, "flow")
        for s in BRANCHES:
            optimizers[s].zero_grad()
            losses[f"nll_{s}"].backward()
            optimizers[s].step()
            history[s].append(float(losses[f"nll_{s}"]))
        log.append(step, **losses)
        if step % flow_cfg.log_every == 0:
            last_good = snapshot(flow)
            logging.info(f"flow step {step}/{steps}: nll_geo={history['geo'][-1]:.3f} "
                         f"nll_tex={history['tex'][-1]:.3f}")

    flow.eval()
    return flow, history


def mean_nll(flow: DualBranchFlow, codes: StyleCode, attributes: torch.Tensor,
             steps: Optional[int] = None) -> Dict[str, float]:
    """Mean negative log-likelihood per branch over a set of codes"""
    with torch.no_grad():
        return {s: float(-log_likelihood(flow, s, getattr(codes, f"w_{s}"), attributes, steps).mean())
                for s in BRANCHES}


def save_flow(flow: DualBranchFlow, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    return save_checkpoint(path, "flow", flow.arch, flow.state_dict(), metadata)


def load_flow(path) -> DualBranchFlow:
    payload = load_checkpoint(path, "flow")
    flow = DualBranchFlow(payload["arch"])
    try:
        flow.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        logging.error(f"Flow checkpoint {path} does not match its architecture: {str(e)}")
        raise CheckpointError(f"Flow checkpoint {path} does not match its architecture")
    flow.eval()
    flow.requires_grad_(False)
    return flow

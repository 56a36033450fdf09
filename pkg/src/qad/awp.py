"""One-step adversarial weight perturbation.

The perturbation phi lives in a per-layer relative-norm ball
||phi_l||_F <= gamma ||theta_l||_F (every parameter tensor, biases
included, is its own norm group). One ascent step moves phi along the
layer-normalized loss gradient scaled by the layer's weight norm, then
projects back into the ball; the trainer applies phi around the main
update and reverts it afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qad.errors import InvalidConfigError, UsageError
from qad.nn.layers import ParameterSet
from qad.util import frob_norm

NORM_SCOPES = ("per-layer", "global")


@dataclass
class PerturbationState:
    """Per-layer perturbation with its budget and step size.

    ``n_ascents`` / ``n_projections`` count how often the inner maximization
    ran, so the one-step contract can be audited from the outside.
    """

    phi: dict[str, np.ndarray]
    gamma: float
    eta: float
    applied: bool = False
    n_ascents: int = 0
    n_projections: int = 0
    _applied_phi: dict[str, np.ndarray] | None = field(default=None, repr=False)


def zero_state(params: ParameterSet, gamma: float, eta: float) -> PerturbationState:
    """Fresh zero perturbation; built once per training batch."""
    if gamma < 0 or eta < 0:
        raise InvalidConfigError(f"gamma and eta must be >= 0, got gamma={gamma}, eta={eta}")
    phi = {name: np.zeros_like(t.data) for name, t in params.items()}
    return PerturbationState(phi=phi, gamma=gamma, eta=eta)


def project(phi: dict[str, np.ndarray], params: ParameterSet, gamma: float) -> dict[str, np.ndarray]:
    """Scale each phi_l back onto the ball ||phi_l|| <= gamma ||theta_l||."""
    norms = params.frobenius_norms()
    for name, p in phi.items():
        limit = gamma * norms[name]
        pn = frob_norm(p)
        if pn > limit:
            if limit == 0.0:
                p[...] = 0.0
            else:
                p *= limit / pn
    return phi


def awp_ascent(params: ParameterSet, grads: dict[str, np.ndarray], state: PerturbationState,
               scope: str = "per-layer") -> PerturbationState:
    """One projected ascent step of the perturbation.

    ``grads`` must come from a backward pass of the classification loss at
    theta + phi. Layers with an exactly zero gradient are left untouched.
    With ``scope="global"`` the gradient normalization and the weight-norm
    scale use one whole-vector norm instead of per-layer norms; projection
    stays per-layer either way.
    """
    if scope not in NORM_SCOPES:
        raise InvalidConfigError(f"unknown norm scope {scope!r}")
    norms = params.frobenius_norms()
    if scope == "global":
        gnorm = float(np.sqrt(sum(np.sum(g.astype(np.float64) ** 2) for g in grads.values())))
        tnorm = float(np.sqrt(sum(n * n for n in norms.values())))
        if gnorm > 0.0:
            for name in state.phi:
                state.phi[name] += (state.eta * tnorm / gnorm) * grads[name]
    else:
        for name in state.phi:
            g = grads[name]
            gnorm = frob_norm(g)
            if gnorm == 0.0:
                continue
            state.phi[name] += (state.eta * norms[name] / gnorm) * g
    project(state.phi, params, state.gamma)
    state.n_ascents += 1
    state.n_projections += 1
    return state


def apply(params: ParameterSet, state: PerturbationState) -> None:
    """theta <- theta + phi. Must be balanced by :func:`revert`; no nesting."""
    if state.applied:
        raise UsageError("perturbation already applied; revert before applying again")
    # keep the exact applied values so revert undoes the same bytes even if
    # phi is mutated in between
    state._applied_phi = {name: p.copy() for name, p in state.phi.items()}
    for name, t in params.items():
        t.data += state._applied_phi[name]
    state.applied = True
    params.bump()


def revert(params: ParameterSet, state: PerturbationState) -> None:
    """theta <- theta - phi, undoing :func:`apply` within float round-off."""
    if not state.applied:
        raise UsageError("revert called without a matching apply")
    for name, t in params.items():
        t.data -= state._applied_phi[name]
    state.applied = False
    state._applied_phi = None
    params.bump()


def containment_violation(params: ParameterSet, state: PerturbationState) -> float:
    """Largest relative overshoot of ||phi_l|| over gamma ||theta_l|| (<= 0 when contained)."""
    norms = params.frobenius_norms()
    worst = -np.inf
    for name, p in state.phi.items():
        limit = state.gamma * norms[name]
        pn = frob_norm(p)
        if limit == 0.0:
            overshoot = pn
        else:
            overshoot = (pn - limit) / limit
        worst = max(worst, overshoot)
    return float(worst)

"""Forward simulation of a parameterised path diagram."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from trustdsem.pathmodel import PathDiagram, _lag0_order, validate_diagram


def simulate_structural(diagram: PathDiagram, exogenous: Mapping[str, np.ndarray],
                        variances: Mapping[str, float], rng: np.random.Generator,
                        intercepts: Mapping[str, float] | None = None,
                        presample: float = 0.5) -> dict[str, np.ndarray]:
    """Draw every endogenous variable from its structural equation.

    ``exogenous`` maps each parentless variable to an (N, T) array. Values
    before step 0 are taken as ``presample``. Works directly on the diagram's
    equations, independently of the state-space compilation.
    """
    diagram = validate_diagram(diagram)
    intercepts = intercepts or {}
    n, T = next(iter(exogenous.values())).shape
    out = {k: np.asarray(v, dtype=float).copy() for k, v in exogenous.items()}
    endog = [v for v in _lag0_order(diagram.names, diagram.edges) if diagram.incoming(v)]
    for v in endog:
        out[v] = np.zeros((n, T))
    for t in range(T):
        for v in endog:
            val = np.full(n, intercepts.get(v, 0.0))
            for e in diagram.incoming(v):
                s = t - e.lag
                src = out[e.source][:, s] if s >= 0 else np.full(n, presample)
                val = val + e.coefficient * src
            out[v][:, t] = val + np.sqrt(variances.get(v, 0.0)) * rng.standard_normal(n)
    return out

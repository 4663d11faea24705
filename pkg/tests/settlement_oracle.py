"""Congestion rent from line flows, independent of the payment/revenue totals."""

from __future__ import annotations

import numpy as np

from secmarket.sensitivity import SensitivityFactors


def rent_from_flows(net, dispatch: np.ndarray, prices: np.ndarray, factors: SensitivityFactors | None = None) -> float:
    """Sum over lines and periods of flow times the price rise from the sending to the receiving bus.

    For a balanced lossless DC dispatch this equals load payment minus
    generator revenue at the same nodal prices.
    """
    factors = factors or SensitivityFactors(net)
    horizon = dispatch.shape[1]
    inj = -net.load[:, :horizon].copy()
    np.add.at(inj, net.gen_bus, dispatch)
    flows = factors.ptdf @ inj
    frm = np.array([net.bus_index[ln.from_bus] for ln in net.lines], dtype=int)
    to = np.array([net.bus_index[ln.to_bus] for ln in net.lines], dtype=int)
    return float((flows * (prices[to] - prices[frm])).sum())

"""Training losses: CCC, label KL divergences, the BBB ELBO and the composite loss.

Every function accepts plain numpy arrays (returns floats/arrays) or
autodiff Nodes (returns a Node on the active tape), so the same code path
serves training and evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .distributions import LOG_SQRT_2PI, studentt_entropy_offset, variance_factor

FAMILIES = ("gaussian", "student_t")


def normalize_family(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key in ("t", "student_t", "studentt", "student"):
        return "student_t"
    if key in ("gaussian", "normal", "gauss"):
        return "gaussian"
    raise ValueError(f"unknown distribution family {name!r}; expected one of {FAMILIES}")


@dataclass(frozen=True)
class CompositeLossConfig:
    alpha: float = 1.0
    truth_family: str = "student_t"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "truth_family", normalize_family(self.truth_family))


def _finish(result, *inputs):
    if any(ad.is_node(x) for x in inputs):
        return result
    v = result.value
    return float(v) if v.ndim == 0 else v


def ccc(truth, estimate):
    """Concordance correlation coefficient with population (1/T) moments.

    Degenerate inputs: both series constant and equal -> 1, otherwise a
    constant series -> 0.
    """
    t, e = ad.as_node(truth), ad.as_node(estimate)
    if t.shape != e.shape:
        raise ValueError(f"series lengths differ: {t.shape} vs {e.shape}")
    if t.value.size < 2:
        raise ValueError("ccc needs at least two frames")
    const_t = np.ptp(t.value) == 0
    const_e = np.ptp(e.value) == 0
    if const_t or const_e:
        same = const_t and const_e and t.value.flat[0] == e.value.flat[0]
        return _finish(ad.Node(1.0 if same else 0.0), truth, estimate)
    mu_t, mu_e = ad.mean(t), ad.mean(e)
    dt, de = t - mu_t, e - mu_e
    var_t, var_e = ad.mean(dt * dt), ad.mean(de * de)
    cov = ad.mean(dt * de)
    bias = mu_t - mu_e
    denom = var_t + var_e + bias * bias
    if denom.value == 0:
        # spreads too small to square (underflow): equal means -> concordant
        return _finish(ad.Node(1.0), truth, estimate)
    return _finish(2.0 * cov / denom, truth, estimate)


def kl_gaussian(m, s, m_hat, s_hat):
    """Per-frame KL( N(m, s^2) || N(m_hat, s_hat^2) )."""
    mn, sn, mh, sh = (ad.as_node(v) for v in (m, s, m_hat, s_hat))
    diff = mn - mh
    out = ad.log(sh / sn) + (sn * sn + diff * diff) / (2.0 * sh * sh) - 0.5
    return _finish(out, m, s, m_hat, s_hat)


def kl_t(nu: float, m, s, m_hat, s_hat):
    """Per-frame KL( t(nu, m, s) || N(m_hat, s_hat^2) ), ``s`` being the t scale.

    Cross-entropy of the Gaussian under the t minus the t entropy. The t's
    second central moment is s^2 nu/(nu-2), so nu <= 2 is rejected.
    """
    factor = variance_factor(nu)
    mn, sn, mh, sh = (ad.as_node(v) for v in (m, s, m_hat, s_hat))
    diff = mn - mh
    cross = LOG_SQRT_2PI + ad.log(sh) + (factor * sn * sn + diff * diff) / (2.0 * sh * sh)
    entropy = studentt_entropy_offset(nu) + ad.log(sn)
    return _finish(cross - entropy, m, s, m_hat, s_hat)


def kl_t_as_printed(nu: float, m, s, m_hat, s_hat):
    """The t-KL with the t second moment taken as m^2 + s^2 (no nu/(nu-2) factor).

    Not a divergence for finite nu; kept for analysis output only.
    """
    m, s, mh, sh = (np.asarray(v, dtype=float) for v in (m, s, m_hat, s_hat))
    cross = LOG_SQRT_2PI + np.log(sh) + (s * s + (m - mh) ** 2) / (2.0 * sh * sh)
    return cross - (studentt_entropy_offset(nu) + np.log(s))


def kl_label(family: str, nu: float, m, s, m_hat, s_hat):
    if normalize_family(family) == "student_t":
        return kl_t(nu, m, s, m_hat, s_hat)
    return kl_gaussian(m, s, m_hat, s_hat)


def gaussian_nll(y, y_hat, sigma: float = 1.0):
    """-log N(y | y_hat, sigma^2) summed over all entries."""
    yn, yh = ad.as_node(y), ad.as_node(y_hat)
    d = (yn - yh) * (1.0 / sigma)
    per = 0.5 * d * d + (LOG_SQRT_2PI + math.log(sigma))
    return _finish(ad.sum_(per), y, y_hat)


def elbo_bbb(log_q, log_prior, log_lik):
    """Monte-Carlo negative ELBO: sum_i [log q(w_i) - log P(w_i) - log P(D | w_i)].

    Each argument holds one entry per weight draw.
    """
    lq, lp, ll = (ad.as_node(v) for v in (log_q, log_prior, log_lik))
    if lq.value.size == 0:
        raise ValueError("elbo_bbb needs at least one weight draw")
    if not (lq.shape == lp.shape == ll.shape):
        raise ValueError("per-draw terms must have matching shapes")
    return _finish(ad.sum_(lq - lp - ll), log_q, log_prior, log_lik)


def composite_loss(ccc_m, elbo, kl_label_value, cfg: CompositeLossConfig):
    """(1 - CCC(m)) + ELBO + alpha * KL."""
    out = (1.0 - ad.as_node(ccc_m)) + elbo + cfg.alpha * ad.as_node(kl_label_value)
    return _finish(ad.as_node(out), ccc_m, elbo, kl_label_value)

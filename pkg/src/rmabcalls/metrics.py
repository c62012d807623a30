"""Engagement-drop metrics, normalized reward, call-selection audits and OLS.

State matrices are (weeks, arms) arrays of 0/1 engagement with row 0 the
start state. TrialLogs are accepted anywhere a state matrix is; their final
post-horizon state is appended as an extra row.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .core import ACTIVE, E, NE


def state_matrix(obj) -> np.ndarray:
    states = getattr(obj, "states", obj)
    states = np.asarray(states, dtype=np.int64)
    final = getattr(obj, "final_states", None)
    if final is not None:
        states = np.vstack([states, np.asarray(final, dtype=np.int64)[None]])
    if states.ndim != 2:
        raise ValueError(f"expected a (weeks, arms) state matrix, got shape {states.shape}")
    return states


def _check_t(states, t):
    if not 0 <= t < len(states):
        raise IndexError(f"t={t} outside horizon 0..{len(states) - 1}")


def drop_current(obj, t: int) -> int:
    """sum_n (s_{n,0} - s_{n,t}); recovering arms count negatively."""
    s = state_matrix(obj)
    _check_t(s, t)
    return int((s[0] - s[t]).sum())


def drop_current_series(obj) -> np.ndarray:
    s = state_matrix(obj)
    return (s[0][None] - s).sum(1)


def drop_cumulative_series(obj) -> np.ndarray:
    return np.cumsum(drop_current_series(obj))


def drop_cumulative(obj, t: int) -> int:
    s = state_matrix(obj)
    _check_t(s, t)
    return int((s[0][None] - s[: t + 1]).sum())


def drops_prevented(policy_obj, csoc_obj, t: int) -> int:
    """CSOC cumulative drop minus the policy's: positive means fewer drops."""
    return drop_cumulative(csoc_obj, t) - drop_cumulative(policy_obj, t)


def percent_reduction(drops_treatment: float, drops_control: float) -> float:
    if drops_control == 0:
        raise ZeroDivisionError("percent reduction is undefined for zero control drops")
    return 100.0 * (drops_control - drops_treatment) / drops_control


def normalized_reward(r_alg: float, r_csoc: float, r_whittle: float) -> float:
    """Rescale so CSOC maps to 0 and Whittle to 100."""
    denom = r_whittle - r_csoc
    if denom == 0:
        raise ZeroDivisionError("normalized reward undefined: Whittle and CSOC rewards coincide")
    return 100.0 * (r_alg - r_csoc) / denom


@dataclass
class SelectionAudit:
    # one Counter per week: (cluster, state) -> number of calls
    weekly: list
    # (cluster, state) -> P^a_{s,E}, when models were supplied
    hue: dict = field(default_factory=dict)
    first_week_calls: int = 0
    first_week_ne_share: float | None = None
    conversion_share: float | None = None

    def clusters_used(self, week: int) -> int:
        return len({c for c, _ in self.weekly[week]})


def selection_audit(logs, tensors=None) -> SelectionAudit:
    """Which (cluster, state) pairs were called each week, pooled over logs.

    Also reports the share of first-week calls that went to NE arms and the
    share of those arms that are engaging at the end of the log.
    """
    logs = list(logs)
    horizon = max((lg.horizon for lg in logs), default=0)
    weekly = [Counter() for _ in range(horizon)]
    called_ne = converted = first_calls = 0
    for lg in logs:
        clusters = np.arange(lg.n) if lg.clusters is None else np.asarray(lg.clusters)
        for t in range(lg.horizon):
            for arm in np.flatnonzero(lg.actions[t]):
                weekly[t][(int(clusters[arm]), int(lg.states[t, arm]))] += 1
        if lg.horizon:
            first = np.flatnonzero(lg.actions[0])
            first_calls += len(first)
            ne_arms = first[lg.states[0, first] == NE]
            called_ne += len(ne_arms)
            end = state_matrix(lg)[-1]
            converted += int((end[ne_arms] == E).sum())
    hue = {}
    if tensors is not None:
        t = np.asarray(tensors)
        hue = {(c, s): float(t[c, ACTIVE, s, E]) for c in range(len(t)) for s in (NE, E)}
    return SelectionAudit(
        weekly, hue, first_calls,
        called_ne / first_calls if first_calls else None,
        converted / called_ne if called_ne else None,
    )


# ---------------------------------------------------------------------------
# treatment-effect regression

class RankDeficientError(ValueError):
    def __init__(self, message, columns):
        super().__init__(message)
        self.columns = columns


@dataclass
class RegressionResult:
    names: list
    coef: np.ndarray
    se: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    n: int
    J: int
    sigma2: float

    @property
    def df(self) -> int:
        return self.n - self.J - 2

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    @property
    def beta_hat(self) -> float:
        return float(self.coef[1])

    @property
    def gamma(self) -> np.ndarray:
        return self.coef[2:]

    @property
    def treatment_p_value(self) -> float:
        return float(self.p_values[1])

    def to_dict(self) -> dict:
        return {
            "n": self.n, "J": self.J, "df": self.df, "sigma2": self.sigma2,
            "coefficients": [
                {"name": nm, "estimate": float(c), "stderr": float(s), "t": float(t), "p_value": float(p)}
                for nm, c, s, t, p in zip(self.names, self.coef, self.se, self.t_stats, self.p_values)
            ],
        }


def t_two_sided_p(t, df) -> np.ndarray:
    """Two-sided Student-t tail probability via the regularized incomplete beta."""
    t = np.abs(np.asarray(t, dtype=float))
    with np.errstate(over="ignore", invalid="ignore"):
        x = np.where(np.isinf(t), 0.0, df / (df + t * t))
    return betainc(df / 2.0, 0.5, x)


def _collinear_columns(x: np.ndarray, names) -> list:
    bad, kept = [], []
    for j in range(x.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(x[:, trial]) < len(trial):
            bad.append(names[j])
        else:
            kept.append(j)
    return bad


def ols_regression(y, treatment, covariates=None, covariate_names=None) -> RegressionResult:
    """Fit y = k + beta*T + sum_j gamma_j x_j + eps by least squares.

    Standard errors use the unbiased residual variance with n - J - 2 degrees
    of freedom; p-values are two-sided from the t distribution.
    """
    y = np.asarray(y, dtype=float)
    tr = np.asarray(treatment, dtype=float)
    n = len(y)
    cov = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=float).reshape(n, -1)
    J = cov.shape[1]
    names = ["intercept", "treatment"] + (list(covariate_names) if covariate_names else [f"x{j}" for j in range(J)])
    x = np.column_stack([np.ones(n), tr, cov])
    df = n - J - 2
    if df <= 0:
        raise ValueError(f"need n > J + 2 observations (n={n}, J={J})")
    if np.linalg.matrix_rank(x) < x.shape[1]:
        bad = _collinear_columns(x, names)
        raise RankDeficientError(f"design matrix is rank deficient; collinear columns: {bad}", bad)
    q, r = np.linalg.qr(x)
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - x @ coef
    # an exact fit leaves only round-off in the residuals
    if np.abs(resid).max() <= 64 * np.finfo(float).eps * max(1.0, np.abs(y).max()):
        resid = np.zeros_like(resid)
    sigma2 = float(resid @ resid / df)
    r_inv = np.linalg.inv(r)
    se = np.sqrt(sigma2 * (r_inv ** 2).sum(1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = np.where(se > 0, coef / np.where(se > 0, se, 1.0), np.where(coef == 0, 0.0, np.sign(coef) * np.inf))
    p = t_two_sided_p(t_stats, df)
    return RegressionResult(names, coef, se, t_stats, p, n, J, sigma2)

"""Online-evolving neuro-fuzzy regression engine.

A model is an ordered set of (data cloud, affine rule) pairs plus global
stream statistics.  A data cloud is a nonparametric cluster summarized by a
prototype, a support count and the running mean of its members' squared
norms; no shape is assumed.  Each rule pairs a cloud with one local affine
law whose coefficients are estimated by fuzzily weighted recursive least
squares, each rule's update scaled by its normalized firing strength.

Per sample the model first predicts with the parameters it held before the
sample arrived, then updates in four passes: global statistics, cloud
structure (append / merge / assign), rule-quality bookkeeping with
utility-based pruning, and the weighted RLS sweep over all rules.

Instances are single-writer mutable state: safe to hand between threads,
not safe to share between them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass
class EngineConfig:
    """Hyperparameters of one engine instance.

    input_dim      number of inputs L; rules carry L+1 affine coefficients.
    omega0         scale of the initial inverse information matrix.
    eta0           utility threshold below which a rule is pruned.
    overlap_gamma  local-density threshold above which an outlying sample is
                   merged into its nearest cloud instead of founding a new one.
    density_floor  lower clamp for density denominators so degenerate
                   (zero-variance) streams stay finite.
    """

    input_dim: int
    omega0: float = 10.0
    eta0: float = 0.1
    overlap_gamma: float = 0.8
    density_floor: float = 1e-12

    def __post_init__(self):
        if int(self.input_dim) != self.input_dim or self.input_dim < 1:
            raise ValueError(f"input_dim must be a positive integer, got {self.input_dim}")
        self.input_dim = int(self.input_dim)
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")
        if not 0.0 < self.eta0 < 1.0:
            raise ValueError(f"eta0 must lie in (0, 1), got {self.eta0}")
        if not 0.0 < self.overlap_gamma < 1.0:
            raise ValueError(f"overlap_gamma must lie in (0, 1), got {self.overlap_gamma}")
        if not self.density_floor > 0:
            raise ValueError(f"density_floor must be positive, got {self.density_floor}")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "omega0": self.omega0,
            "eta0": self.eta0,
            "overlap_gamma": self.overlap_gamma,
            "density_floor": self.density_floor,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        return cls(**data)


@dataclass
class CloudState:
    """Recursive statistics of one data cloud.

    prototype   representative point (length input_dim).
    support     number of members absorbed so far (>= 1).
    chi         running mean of members' squared norms.
    lambda_acc  firing strength accumulated over the cloud's lifetime.
    utility     lifetime-averaged firing strength (held at 1 on the
                creation step, where the average is undefined).
    init_step   sample counter value when the cloud was created.
    """

    prototype: np.ndarray
    support: int
    chi: float
    lambda_acc: float
    utility: float
    init_step: int


@dataclass
class RuleConsequent:
    """Affine law of one rule: coefficients `a` (length L+1, offset last)
    and the symmetric positive-definite inverse information matrix `theta`."""

    a: np.ndarray
    theta: np.ndarray


class StructureAction(NamedTuple):
    """Outcome of one structure update: kind is 'new', 'merged' or
    'assigned'; index is the affected cloud position."""

    kind: str
    index: int


def local_density(cloud: CloudState, x: np.ndarray, floor: float = 1e-12) -> float:
    """Cauchy similarity of `x` to `cloud`, with `x` counted as a member.

    Equals 1 / (1 + ||x - m||^2 / v) where m and v are the mean and variance
    of the cloud's members plus x, expressed through the cloud's recursive
    statistics only.  Exactly 1 when x sits on the prototype; the denominator
    is clamped below at `floor` for degenerate clouds.
    """
    s = float(cloud.support)
    diff = x - cloud.prototype
    num = s * s * float(diff @ diff)
    shifted = s * cloud.prototype + x
    den = (s + 1.0) * (s * cloud.chi + float(x @ x)) - float(shifted @ shifted)
    if den < floor:
        den = floor
    return 1.0 / (1.0 + num / den)


class AlmmoModel:
    """Streaming fuzzy rule-based regressor, generic over input dimension.

    Construct from the first input sample; feed subsequent samples through
    :meth:`learn_step`.  The `evolve` flag is a test/benchmark hook: when
    False, every sample is assigned to its nearest cloud and no cloud is
    ever added, merged or removed, which pins the rule count.
    """

    def __init__(self, config: EngineConfig, first_input) -> None:
        x = self._coerce(config.input_dim, first_input)
        self.config = config
        self.t = 1
        self.mu = x.copy()
        self.X = float(x @ x)
        self.clouds = [
            CloudState(
                prototype=x.copy(),
                support=1,
                chi=float(x @ x),
                lambda_acc=1.0,
                utility=1.0,
                init_step=1,
            )
        ]
        self.consequents = [self._fresh_consequent(np.zeros(config.input_dim + 1))]
        self.evolve = True

    # -- basic accessors ---------------------------------------------------

    @property
    def rule_count(self) -> int:
        return len(self.clouds)

    @staticmethod
    def _coerce(dim: int, x) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if arr.shape != (dim,):
            raise ValueError(f"input has shape {arr.shape}, expected ({dim},)")
        if not np.all(np.isfinite(arr)):
            raise ValueError("input contains non-finite values")
        return arr

    def _check_input(self, x) -> np.ndarray:
        return self._coerce(self.config.input_dim, x)

    def _fresh_consequent(self, a: np.ndarray) -> RuleConsequent:
        n = self.config.input_dim + 1
        return RuleConsequent(a=a.astype(float), theta=self.config.omega0 * np.eye(n))

    # -- densities and prediction -------------------------------------------

    def local_densities(self, x) -> np.ndarray:
        x = self._check_input(x)
        floor = self.config.density_floor
        return np.array([local_density(c, x, floor) for c in self.clouds])

    def firing_strengths(self, x) -> np.ndarray:
        """Normalized local densities; components lie in [0, 1] and sum to 1."""
        gamma = self.local_densities(x)
        return gamma / gamma.sum()

    def predict(self, x) -> float:
        """Firing-strength-weighted sum of the rule outputs at `x`."""
        x = self._check_input(x)
        lam = self.firing_strengths(x)
        xb = np.append(x, 1.0)
        out = 0.0
        for w, rule in zip(lam, self.consequents):
            out += float(w) * float(rule.a @ xb)
        return out

    def update_global(self, x) -> None:
        """Fold `x` into the global mean and mean squared norm; advances the
        sample counter."""
        x = self._check_input(x)
        self.t += 1
        t = float(self.t)
        self.mu = ((t - 1.0) / t) * self.mu + x / t
        self.X = ((t - 1.0) / t) * self.X + float(x @ x) / t

    def global_density(self, w) -> float:
        """Cauchy similarity of `w` to the whole stream seen so far."""
        w = self._check_input(w)
        var = self.X - float(self.mu @ self.mu)
        if var < self.config.density_floor:
            var = self.config.density_floor
        diff = w - self.mu
        return 1.0 / (1.0 + float(diff @ diff) / var)

    # -- structure ----------------------------------------------------------

    def _nearest_cloud(self, x: np.ndarray) -> int:
        dists = [float(np.linalg.norm(x - c.prototype)) for c in self.clouds]
        return int(np.argmin(dists))

    def evolve_structure(self, x) -> StructureAction:
        """Decide where `x` lives: found a new cloud, merge into the nearest
        one, or join it as a plain member.

        A sample founds a new cloud when its global density is strictly
        outside the range spanned by the prototypes' global densities,
        unless it already overlaps an existing cloud (max local density
        above `overlap_gamma`), in which case it is merged into the nearest
        cloud with support/prototype/chi halved-and-averaged.  Otherwise it
        is assigned to the nearest cloud, whose statistics are incrementally
        averaged.  Untouched clouds are left as they are.
        """
        x = self._check_input(x)
        nearest = self._nearest_cloud(x)
        if self.evolve:
            g_x = self.global_density(x)
            g_protos = [self.global_density(c.prototype) for c in self.clouds]
            outlying = g_x > max(g_protos) or g_x < min(g_protos)
            if outlying:
                overlap = float(self.local_densities(x).max())
                if overlap > self.config.overlap_gamma:
                    c = self.clouds[nearest]
                    c.support = math.ceil((c.support + 1) / 2)
                    c.prototype = (c.prototype + x) / 2.0
                    c.chi = (c.chi + float(x @ x)) / 2.0
                    return StructureAction("merged", nearest)
                mean_a = np.mean([r.a for r in self.consequents], axis=0)
                self.clouds.append(
                    CloudState(
                        prototype=x.copy(),
                        support=1,
                        chi=float(x @ x),
                        lambda_acc=1.0,
                        utility=1.0,
                        init_step=self.t,
                    )
                )
                self.consequents.append(self._fresh_consequent(mean_a))
                return StructureAction("new", len(self.clouds) - 1)
        c = self.clouds[nearest]
        s_new = c.support + 1
        c.prototype = (c.support / s_new) * c.prototype + x / s_new
        c.chi = (c.support / s_new) * c.chi + float(x @ x) / s_new
        c.support = s_new
        return StructureAction("assigned", nearest)

    def monitor_quality(self, x) -> list:
        """Accumulate firing strengths, refresh utilities and prune rules
        whose lifetime-average contribution fell below `eta0`.

        Rules created at the current step are exempt, and the rule base is
        never emptied.  Returns the removed indices (pre-removal numbering).
        """
        lam = self.firing_strengths(x)
        for c, w in zip(self.clouds, lam):
            c.lambda_acc += float(w)
            if self.t > c.init_step:
                c.utility = c.lambda_acc / (self.t - c.init_step)
            else:
                c.utility = 1.0
        if not self.evolve:
            return []
        doomed = [
            i
            for i, c in enumerate(self.clouds)
            if c.utility < self.config.eta0 and c.init_step != self.t
        ]
        if doomed and len(doomed) == len(self.clouds):
            spare = max(doomed, key=lambda i: self.clouds[i].utility)
            doomed.remove(spare)
        for i in reversed(doomed):
            del self.clouds[i]
            del self.consequents[i]
        return doomed

    # -- consequents ----------------------------------------------------------

    def update_consequents(self, x, target: float) -> None:
        """One weighted recursive least-squares sweep over all rules.

        Each rule's inverse information matrix shrinks along the extended
        input, then its coefficients move toward `target` in proportion to
        the rule's firing strength.  `theta` stays symmetric positive
        definite.
        """
        x = self._check_input(x)
        target = float(target)
        lam = self.firing_strengths(x)
        xb = np.append(x, 1.0)
        for w, rule in zip(lam, self.consequents):
            w = float(w)
            tx = rule.theta @ xb
            denom = 1.0 + w * float(xb @ tx)
            theta = rule.theta - w * np.outer(tx, tx) / denom
            rule.theta = (theta + theta.T) / 2.0  # guard symmetry against drift
            residual = target - float(rule.a @ xb)
            rule.a = rule.a + w * (rule.theta @ xb) * residual

    # -- one full step ----------------------------------------------------------

    def learn_step(self, x, target: float) -> float:
        """Predict at `x` with the pre-update parameters, then absorb the
        (x, target) pair.  Returns the prediction."""
        x = self._check_input(x)
        prediction = self.predict(x)
        self.update_global(x)
        self.evolve_structure(x)
        self.monitor_quality(x)
        self.update_consequents(x, target)
        return prediction

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        """JSON-ready snapshot.

        Schema: config (hyperparameters), samples_seen, rule_count,
        global_mean, global_scalar_product, and one entry per rule carrying
        prototype, support, scalar_product, accumulated_firing, utility,
        created_step, coefficients, and covariance as a row-major nested
        list.
        """
        return {
            "config": self.config.to_dict(),
            "samples_seen": self.t,
            "rule_count": self.rule_count,
            "global_mean": self.mu.tolist(),
            "global_scalar_product": self.X,
            "rules": [
                {
                    "prototype": c.prototype.tolist(),
                    "support": c.support,
                    "scalar_product": c.chi,
                    "accumulated_firing": c.lambda_acc,
                    "utility": c.utility,
                    "created_step": c.init_step,
                    "coefficients": r.a.tolist(),
                    "covariance": r.theta.tolist(),
                }
                for c, r in zip(self.clouds, self.consequents)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AlmmoModel":
        config = EngineConfig.from_dict(data["config"])
        model = cls.__new__(cls)
        model.config = config
        model.t = int(data["samples_seen"])
        model.mu = np.asarray(data["global_mean"], dtype=float)
        model.X = float(data["global_scalar_product"])
        model.clouds = []
        model.consequents = []
        model.evolve = True
        for entry in data["rules"]:
            model.clouds.append(
                CloudState(
                    prototype=np.asarray(entry["prototype"], dtype=float),
                    support=int(entry["support"]),
                    chi=float(entry["scalar_product"]),
                    lambda_acc=float(entry["accumulated_firing"]),
                    utility=float(entry["utility"]),
                    init_step=int(entry["created_step"]),
                )
            )
            model.consequents.append(
                RuleConsequent(
                    a=np.asarray(entry["coefficients"], dtype=float),
                    theta=np.asarray(entry["covariance"], dtype=float),
                )
            )
        if data.get("rule_count") is not None and int(data["rule_count"]) != len(model.clouds):
            raise ValueError("rule_count does not match the number of rule entries")
        if not model.clouds:
            raise ValueError("a serialized model must hold at least one rule")
        return model

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "AlmmoModel":
        return cls.from_dict(json.loads(text))

"""Synthetic investment networks with planted, recoverable signals.

Success is network-mediated: a company whose first round includes a tier-1
investor raises a Series A inside its 12-month window with uplifted
probability; weak investors depress it. Investor bios carry the signal tokens
that the mock gateway reacts to.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import InvestmentGraph, add_months, label_window_end, load_graph

logger = logging.getLogger(__name__)

INDUSTRIES = {
    "Fintech": ["payments", "lending", "ledger", "banking", "credit", "checkout", "treasury"],
    "Healthcare": ["clinic", "patient", "diagnostics", "telehealth", "care", "nursing", "records"],
    "Robotics": ["robot", "autonomous", "warehouse", "actuator", "drone", "gripper", "perception"],
    "Enterprise Software": ["workflow", "analytics", "compliance", "crm", "devops", "observability", "procurement"],
    "Consumer": ["shoppers", "social", "fitness", "subscription", "marketplace", "creators", "travel"],
    "Climate": ["solar", "battery", "carbon", "grid", "hydrogen", "recycling", "emissions"],
    "Biotech": ["protein", "genomic", "antibody", "assay", "cell", "therapeutic", "enzyme"],
}
REGIONS = {
    "North America": ["San Francisco", "New York", "Toronto", "Austin"],
    "Europe": ["London", "Berlin", "Paris", "Stockholm"],
    "Asia": ["Singapore", "Bangalore", "Seoul", "Tokyo"],
    "Latin America": ["Sao Paulo", "Mexico City", "Bogota"],
    "Middle East": ["Tel Aviv", "Dubai", "Riyadh"],
}
FIRST_ROUNDS = ("angel", "seed")

_SYLLABLES = ["ro", "va", "lin", "tek", "zo", "mi", "qua", "dra", "nex", "sol", "ka", "ber", "tiv", "lo", "fy", "ora"]
_FUND_A = ["North", "Blue", "Summit", "Harbor", "Granite", "Cedar", "Lumen", "Atlas", "Pioneer", "Vista",
           "Orbit", "Beacon", "Sequoia", "Maple", "Iron", "Silver", "Cobalt", "Redwood", "Horizon", "Delta"]
_FUND_B = ["Ventures", "Capital", "Partners", "Fund", "Angels", "Growth"]
_TECH = ["machine learning", "edge computing", "a modular platform", "open APIs", "computer vision", "low-code tooling"]
_CUSTOMERS = ["small businesses", "hospitals", "retailers", "enterprises", "households", "logistics operators"]
_EDUCATION = ["Stanford MBA", "MIT BSc", "INSEAD MBA", "Tsinghua MSc", "Oxford DPhil", "Wharton MBA", "IIT BTech"]
_AGES = ["30-39", "40-49", "50-59", "60+"]
_GENDERS = ["female", "male"]
_ROLES = ["Analyst", "Associate", "Principal", "Partner", "Engineer", "Product Manager", "Founder", "Operating Partner"]
_EMPLOYERS = ["Google", "McKinsey", "Goldman Sachs", "ABB Robotics", "Stripe", "Siemens", "Pfizer", "Amazon"]


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_companies: int = 500
    n_investors: Optional[int] = None
    start: str = "2016-01-01"
    end: str = "2021-12-31"
    growth: float = 0.4
    base_rate: float = 0.2
    tier1_fraction: float = 0.10
    tier1_uplift: float = 0.7
    weak_fraction: float = 0.15
    weak_factor: float = 0.25
    late_series_a_rate: float = 0.3
    unknown_amount_rate: float = 0.1
    unfunded_rate: float = 0.03
    signal_token: str = "ALPHA"
    weak_token: str = "OMEGA"

    def __post_init__(self) -> None:
        if self.n_companies <= 0 or (self.n_investors is not None and self.n_investors <= 0):
            raise ValueError("counts must be positive")
        if not 0.0 < self.base_rate < 1.0:
            raise ValueError("base_rate must lie in (0, 1)")
        if date.fromisoformat(self.end) <= date.fromisoformat(self.start):
            raise ValueError("end must follow start")

    @property
    def investor_count(self) -> int:
        return self.n_investors or max(20, self.n_companies // 8)


@dataclass
class SyntheticDataset:
    companies: list[dict]
    investors: list[dict]
    investments: list[dict]
    tiers: dict[str, str]
    p_success: dict[str, float]

    def jsonl(self) -> dict[str, list[str]]:
        return {
            "companies.jsonl": [json.dumps(c) for c in self.companies],
            "investors.jsonl": [json.dumps(i) for i in self.investors],
            "investments.jsonl": [json.dumps(e) for e in self.investments],
        }

    def graph(self) -> InvestmentGraph:
        return load_graph(self.companies, self.investors, self.investments)

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, lines in self.jsonl().items():
            (out / name).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return out


def _unique_name(make, used: set[str]) -> str:
    base = make()
    name, k = base, 2
    while name in used:
        name = f"{base} {k}"
        k += 1
    used.add(name)
    return name


def _month_weights(start: date, end: date, growth: float) -> tuple[list[date], np.ndarray]:
    months, d = [], date(start.year, start.month, 1)
    while d <= end:
        months.append(d)
        d = add_months(d, 1)
    t = np.arange(len(months)) / 12.0
    w = np.exp(growth * t)
    return months, w / w.sum()


def _random_day_in_month(rng: np.random.Generator, month: date) -> date:
    nxt = add_months(month, 1)
    return month + timedelta(days=int(rng.integers((nxt - month).days)))


def generate(config: GeneratorConfig = GeneratorConfig()) -> SyntheticDataset:
    rng = np.random.default_rng(config.seed)
    start, end = date.fromisoformat(config.start), date.fromisoformat(config.end)

    # investors
    n_inv = config.investor_count
    tier_draw = rng.permutation(n_inv)
    n_t1 = max(1, round(config.tier1_fraction * n_inv))
    n_weak = round(config.weak_fraction * n_inv)
    tiers_by_idx = {}
    for rank, idx in enumerate(tier_draw):
        tiers_by_idx[int(idx)] = "tier1" if rank < n_t1 else "weak" if rank < n_t1 + n_weak else "standard"
    activity = rng.gamma(2.0, 1.0, size=n_inv)
    activity /= activity.sum()
    used: set[str] = set()
    investors, tiers = [], {}
    industries = list(INDUSTRIES)
    for i in range(n_inv):
        iid = f"i{i:04d}"
        name = _unique_name(lambda: f"{rng.choice(_FUND_A)} {rng.choice(_FUND_B)}", used)
        focus = [str(x) for x in rng.choice(industries, size=2, replace=False)]
        tier = tiers_by_idx[i]
        tiers[iid] = tier
        if tier == "tier1":
            bio = f"{name} is a lead-investing firm with an {config.signal_token} track record in {focus[0]} and {focus[1]}."
        elif tier == "weak":
            bio = f"{name} is a sporadic investor with an {config.weak_token} record of thin follow-on support in {focus[0]}."
        else:
            bio = f"{name} is a generalist early-stage investor focused on {focus[0]} and {focus[1]}."
        n_roles = int(rng.integers(1, 4))
        role_dates = sorted(
            date(int(rng.integers(2000, end.year + 1)), int(rng.integers(1, 13)), 1) for _ in range(n_roles)
        )
        employment = [
            {"role": f"{rng.choice(_ROLES)}, {rng.choice(_EMPLOYERS)}", "date": d.isoformat()} for d in role_dates
        ]
        investors.append(
            {
                "id": iid,
                "name": name,
                "description": bio,
                "demographics": {
                    "education": str(rng.choice(_EDUCATION)),
                    "age_bracket": str(rng.choice(_AGES)),
                    "gender": str(rng.choice(_GENDERS)),
                },
                "employment": employment,
            }
        )
    tier_arr = np.array([tiers[f"i{i:04d}"] for i in range(n_inv)])

    # companies and first rounds
    months, mweights = _month_weights(start, end, config.growth)
    used_c: set[str] = set()
    companies, rounds = [], []
    for c in range(config.n_companies):
        cid = f"c{c:05d}"
        industry = industries[int(rng.integers(len(industries)))]
        region = list(REGIONS)[int(rng.integers(len(REGIONS)))]
        words = INDUSTRIES[industry]
        kw = [str(x) for x in rng.choice(words, size=3, replace=False)]
        name = _unique_name(
            lambda: "".join(rng.choice(_SYLLABLES, size=int(rng.integers(2, 4)))).capitalize()
            + str(rng.choice(["", " Labs", " AI", " Systems", " Health", " Works"])),
            used_c,
        )
        t0 = _random_day_in_month(rng, months[int(rng.choice(len(months), p=mweights))])
        founded = t0 - timedelta(days=int(rng.integers(30, 720)))
        funded = rng.random() >= config.unfunded_rate
        stage = str(rng.choice(FIRST_ROUNDS, p=[0.3, 0.7]))
        companies.append(
            {
                "id": cid,
                "name": name,
                "founded": founded.isoformat(),
                "description": (
                    f"{name} builds {kw[0]} and {kw[1]} products for {rng.choice(_CUSTOMERS)} in the "
                    f"{industry.lower()} sector, with a focus on {kw[2]} using {rng.choice(_TECH)}."
                ),
                "attributes": {"industry": industry, "region": region, "stage": stage},
                "headquarters": f"{rng.choice(REGIONS[region])}, {region}",
                "employees": int(rng.integers(2, 80)),
            }
        )
        if funded:
            k = int(rng.choice([1, 2, 3], p=[0.4, 0.4, 0.2]))
            backers = rng.choice(n_inv, size=k, replace=False, p=activity)
            rounds.append((cid, t0, stage, [int(b) for b in backers]))

    # calibrate the non-tier success rate so the overall rate matches base_rate
    has_t1 = np.array([any(tier_arr[b] == "tier1" for b in r[3]) for r in rounds])
    has_weak = np.array([(not t) and any(tier_arr[b] == "weak" for b in r[3]) for r, t in zip(rounds, has_t1)])
    f1, fw = has_t1.mean() if rounds else 0.0, has_weak.mean() if rounds else 0.0
    denom = 1.0 - f1 - (1.0 - config.weak_factor) * fw
    p_std = (config.base_rate - config.tier1_uplift * f1) / denom if denom > 0 else config.base_rate
    if not 0.01 <= p_std <= 0.95:
        logger.warning("base rate %.3f unreachable with uplift %.3f; clamping", config.base_rate, config.tier1_uplift)
        p_std = min(max(p_std, 0.01), 0.95)

    investments, p_success = [], {}
    for (cid, t0, stage, backers), t1, weak in zip(rounds, has_t1, has_weak):
        p = p_std + config.tier1_uplift if t1 else p_std * config.weak_factor if weak else p_std
        p = min(max(p, 0.0), 1.0)
        p_success[cid] = p
        mean_amt = 0.5e6 if stage == "angel" else 1.5e6
        for b in backers:
            amount = None if rng.random() < config.unknown_amount_rate else round(float(mean_amt * rng.lognormal(0, 0.5)), -3)
            investments.append(
                {"investor": f"i{b:04d}", "company": cid, "date": t0.isoformat(), "round": stage, "amount": amount}
            )
        window_end = label_window_end(t0)
        a_date = None
        if rng.random() < p:
            a_date = t0 + timedelta(days=int(rng.integers(1, (window_end - t0).days + 1)))
        elif rng.random() < config.late_series_a_rate:
            a_date = window_end + timedelta(days=int(rng.integers(1, 541)))
        if a_date is None:
            continue
        a_backers = {int(rng.choice(backers))} if rng.random() < 0.6 else set()
        while len(a_backers) < int(rng.integers(1, 3)):
            a_backers.add(int(rng.choice(n_inv, p=activity)))
        for b in sorted(a_backers):
            investments.append(
                {
                    "investor": f"i{b:04d}",
                    "company": cid,
                    "date": a_date.isoformat(),
                    "round": "series_a",
                    "amount": round(float(8e6 * rng.lognormal(0, 0.4)), -3),
                }
            )
        if rng.random() < 0.4:
            later = a_date + timedelta(days=int(rng.integers(300, 720)))
            investments.append(
                {
                    "investor": f"i{int(rng.choice(n_inv, p=activity)):04d}",
                    "company": cid,
                    "date": later.isoformat(),
                    "round": "later",
                    "amount": round(float(25e6 * rng.lognormal(0, 0.5)), -3),
                }
            )
    investments.sort(key=lambda e: (e["date"], e["company"], e["investor"], e["round"]))
    logger.info(
        "generated %d companies, %d investors, %d edges (p_std=%.3f, tier-1 share=%.3f)",
        len(companies), n_inv, len(investments), p_std, f1,
    )
    return SyntheticDataset(companies, investors, investments, tiers, p_success)


def config_dict(config: GeneratorConfig) -> dict:
    return asdict(config)


def binomial_band(n: int, p: float, sigmas: float = 3.0) -> tuple[float, float]:
    mu = n * p
    sd = math.sqrt(n * p * (1 - p))
    return mu - sigmas * sd, mu + sigmas * sd

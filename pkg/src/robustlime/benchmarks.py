"""Built-in benchmark datasets.

Three deterministic generators that mirror the shape of the usual recidivism,
credit scoring, and community crime benchmarks: same column kinds, counts,
marginal flavor (long tails, integer grids, bounded rates), and a sensitive
attribute that the companion biased models key on. Generated locally so the
package needs no downloads.
"""

from __future__ import annotations

import numpy as np

from .data import CONTINUOUS, DISCRETE, Column, Dataset, Schema, save_dataset, save_schema

BUILTIN_NAMES = ("compas", "german", "communities")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _compas(seed: int) -> Dataset:
    """Recidivism-style table: 6000 rows, count features with heavy tails,
    four demographic columns, risk label fully determined by race."""
    rng = np.random.default_rng(seed)
    n = 6000

    # Race is pre-binarized, matching the usual preprocessing for this table.
    race = rng.choice(2, size=n, p=[0.51, 0.49])
    sex = (rng.random(n) > 0.81).astype(float)  # 0 Male, 1 Female
    age = np.clip(18 + np.floor(rng.gamma(2.1, 5.8, size=n)), 18, 78)
    felony = (rng.random(n) < 0.35 + 0.1 * (age < 30)).astype(float)  # 0 M, 1 F idx below

    boost = np.choose(race, [1.3, 1.0])
    priors = np.clip(np.floor(rng.gamma(0.55, 4.0, size=n) * boost * (1 + 0.012 * (age - 18))), 0, 38)
    stay = np.clip(np.floor(rng.lognormal(2.2 + 0.9 * felony, 1.0, size=n)), 0, 800)
    young = age < 25
    juv_fel = np.clip(rng.poisson(np.where(young, 0.35, 0.04)), 0, 10).astype(float)
    juv_misd = np.clip(rng.poisson(np.where(young, 0.5, 0.06)), 0, 12).astype(float)
    p_recid = _sigmoid(-1.2 + 0.17 * priors + 0.35 * felony - 0.02 * (age - 30))
    recid = (rng.random(n) < p_recid).astype(float)

    schema = Schema(
        columns=(
            Column("age", CONTINUOUS),
            Column("two_year_recid", DISCRETE, ("no", "yes")),
            Column("priors_count", CONTINUOUS),
            Column("length_of_stay", CONTINUOUS),
            Column("c_charge_degree", DISCRETE, ("M", "F")),
            Column("juv_fel_count", CONTINUOUS),
            Column("juv_misd_count", CONTINUOUS),
            Column("sex", DISCRETE, ("Male", "Female")),
            Column("race", DISCRETE, ("African-American", "Other")),
            Column("risk", DISCRETE, ("low", "high")),
        ),
        sensitive_feature="race",
        label="risk",
    )
    rows = np.column_stack(
        [age, recid, priors, stay, felony, juv_fel, juv_misd, sex, race.astype(float)]
    )
    labels = (race == 0).astype(int)  # high risk iff African-American
    return Dataset(schema, rows, labels)


def _german(seed: int) -> Dataset:
    """Credit-scoring-style table: 1000 rows, money and duration columns on
    dense integer grids, small ordinal counts, label determined by gender."""
    rng = np.random.default_rng(seed)
    n = 1000

    gender = (rng.random(n) > 0.69).astype(float)  # 0 Male, 1 Female
    duration = np.clip(4 + np.floor(rng.gamma(1.6, 11.0, size=n)), 4, 72)
    amount = np.clip(np.round(np.exp(6.5 + 0.035 * duration + 0.55 * rng.normal(size=n))), 250, 18424)
    age = np.clip(19 + np.floor(rng.gamma(2.0, 8.0, size=n)), 19, 75)
    installment = rng.choice(4, size=n, p=[0.14, 0.23, 0.16, 0.47]) + 1.0
    residence = rng.choice(4, size=n, p=[0.13, 0.31, 0.15, 0.41]) + 1.0
    credits = rng.choice(4, size=n, p=[0.63, 0.33, 0.03, 0.01]) + 1.0
    purpose = rng.choice(7, size=n, p=[0.28, 0.18, 0.25, 0.09, 0.10, 0.06, 0.04]).astype(float)
    housing = rng.choice(3, size=n, p=[0.71, 0.18, 0.11]).astype(float)

    schema = Schema(
        columns=(
            Column("duration", CONTINUOUS),
            Column("credit_amount", CONTINUOUS),
            Column("age", CONTINUOUS),
            Column("installment_rate", CONTINUOUS),
            Column("residence_since", CONTINUOUS),
            Column("num_credits", CONTINUOUS),
            Column(
                "purpose",
                DISCRETE,
                ("car", "furniture", "radio_tv", "education", "business", "repairs", "other"),
            ),
            Column("housing", DISCRETE, ("own", "rent", "free")),
            Column("gender", DISCRETE, ("Male", "Female")),
            Column("credit_risk", DISCRETE, ("bad", "good")),
        ),
        sensitive_feature="gender",
        label="credit_risk",
    )
    rows = np.column_stack(
        [duration, amount, age, installment, residence, credits, purpose, housing, gender]
    )
    labels = (gender == 0).astype(int)  # good credit iff Male
    return Dataset(schema, rows, labels)


# Attribute names for the community crime table, fixed order, all rates in [0, 1].
_COMMUNITY_ATTRS = (
    "population", "householdsize", "racepctblack", "racePctWhite", "racePctAsian",
    "racePctHisp", "agePct12t21", "agePct12t29", "agePct16t24", "agePct65up",
    "numbUrban", "pctUrban", "medIncome", "pctWWage", "pctWFarmSelf",
    "pctWInvInc", "pctWSocSec", "pctWPubAsst", "pctWRetire", "medFamInc",
    "perCapInc", "whitePerCap", "blackPerCap", "indianPerCap", "asianPerCap",
    "otherPerCap", "hispPerCap", "numUnderPov", "pctPopUnderPov", "pctLess9thGrade",
    "pctNotHSGrad", "pctBSorMore", "pctUnemployed", "pctEmploy", "pctEmplManu",
    "pctEmplProfServ", "pctOccupManu", "pctOccupMgmtProf", "malePctDivorce", "malePctNevMarr",
    "femalePctDiv", "totalPctDiv", "persPerFam", "pctFam2Par", "pctKids2Par",
    "pctYoungKids2Par", "pctTeen2Par", "pctWorkMomYoungKids", "pctWorkMom", "numIlleg",
    "pctIlleg", "numImmig", "pctImmigRecent", "pctImmigRec5", "pctImmigRec8",
    "pctImmigRec10", "pctRecentImmig", "pctRecImmig5", "pctRecImmig8", "pctRecImmig10",
    "pctSpeakEnglOnly", "pctNotSpeakEnglWell", "pctLargHouseFam", "pctLargHouseOccup", "persPerOccupHous",
    "persPerOwnOccHous", "persPerRentOccHous", "pctPersOwnOccup", "pctPersDenseHous", "pctHousLess3BR",
    "medNumBR", "housVacant", "pctHousOccup", "pctHousOwnOcc", "pctVacantBoarded",
    "pctVacMore6Mos", "medYrHousBuilt", "pctHousNoPhone", "pctWOFullPlumb", "ownOccLowQuart",
    "ownOccMedVal", "ownOccHiQuart", "rentLowQ", "rentMedian", "rentHighQ",
    "medRent", "medRentPctHousInc", "medOwnCostPctInc", "medOwnCostPctIncNoMtg", "numInShelters",
    "numStreet", "pctForeignBorn", "pctBornSameState", "pctSameHouse85", "pctSameCity85",
    "pctSameState85", "landArea", "popDens", "pctUsePubTrans", "lemasPctOfficDrugUn",
)


def _communities(seed: int) -> Dataset:
    """Community crime table: 1994 rows, 100 normalized rates driven by three
    latent factors, label = crime score above the dataset median."""
    assert len(_COMMUNITY_ATTRS) == 100
    rng = np.random.default_rng(seed)
    n = 1994

    # Latent factors: disadvantage, urbanization, age structure.
    u1 = rng.beta(2.0, 3.5, size=n)
    u2 = rng.beta(2.0, 2.0, size=n)
    u3 = rng.beta(3.0, 3.0, size=n)

    white_idx = _COMMUNITY_ATTRS.index("racePctWhite")
    rows = np.empty((n, 100))
    for j in range(100):
        if j == white_idx:
            vals = 0.95 - 0.62 * u1 - 0.08 * u2 + 0.10 * rng.normal(size=n)
        else:
            a, b, c = rng.normal(scale=0.38, size=3)
            base = rng.uniform(0.15, 0.65)
            vals = base + a * (u1 - 0.36) + b * (u2 - 0.5) + c * (u3 - 0.5)
            vals += rng.normal(scale=0.07, size=n)
        rows[:, j] = np.clip(np.round(vals, 2), 0.0, 1.0)

    crime = 0.72 * u1 + 0.18 * u2 + 0.10 * rng.normal(size=n)
    labels = (crime > np.median(crime)).astype(int)

    columns = tuple(Column(name, CONTINUOUS) for name in _COMMUNITY_ATTRS) + (
        Column("high_crime", DISCRETE, ("no", "yes")),
    )
    schema = Schema(columns=columns, sensitive_feature="racePctWhite", label="high_crime")
    return Dataset(schema, rows, labels)


_BUILDERS = {"compas": _compas, "german": _german, "communities": _communities}


def builtin_dataset(name: str, seed: int = 0) -> Dataset:
    """Generate one of the built-in benchmark tables."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}, expected one of {BUILTIN_NAMES}") from None
    return builder(seed)


def write_builtin(name: str, csv_path, schema_path, seed: int = 0) -> Dataset:
    """Generate a built-in table and write its CSV and schema files."""
    ds = builtin_dataset(name, seed)
    save_schema(ds.schema, schema_path)
    save_dataset(ds, csv_path)
    return ds

"""Six-domain social-determinants-of-health indicator taxonomy.

The catalog is the single registry of indicator metadata shared by ingestion,
analytics, and the service.  It is immutable after construction: ``register``
returns an extended copy.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence

from .errors import DuplicateKey, SchemaMismatch, UnknownIndicator


class DomainCode(str, Enum):
    ACCESS_RESOURCES = "access_resources"
    EXPOSURE = "exposure"
    POLICY_ADHERENCE = "policy_adherence"
    COMMUNITY = "community"
    AWARENESS = "awareness"
    BUILT_ENVIRONMENT = "built_environment"


@dataclass(frozen=True)
class SdohDomain:
    code: DomainCode
    label: str


DOMAINS: tuple[SdohDomain, ...] = (
    SdohDomain(DomainCode.ACCESS_RESOURCES, "SDoH that affect access to resources"),
    SdohDomain(DomainCode.EXPOSURE, "SDoH that increase disease exposure"),
    SdohDomain(
        DomainCode.POLICY_ADHERENCE, "SDoH that affect adherence to laws and policies"
    ),
    SdohDomain(DomainCode.COMMUNITY, "SDoH that are community characteristics"),
    SdohDomain(
        DomainCode.AWARENESS,
        "SDoH that enable increasing awareness, knowledge dissemination, "
        "and health education",
    ),
    SdohDomain(
        DomainCode.BUILT_ENVIRONMENT,
        "SDoH specific to neighborhood and built environment that can impact "
        "COVID-19 associated co-morbidities",
    ),
)

DOMAIN_BY_CODE: dict = {d.code: d for d in DOMAINS}


class Direction(str, Enum):
    """Annotation of whether larger values are adverse; display metadata only,
    never used to flip signs inside analytics."""

    RISK = "risk"
    PROTECTIVE = "protective"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class IndicatorDef:
    key: str
    name: str
    domain: SdohDomain
    unit_of_measure: str
    direction: Direction
    source: str
    cross_listed: tuple = ()  # tuple[SdohDomain, ...], never contains `domain`

    def __post_init__(self):
        if self.domain in self.cross_listed:
            raise ValueError(f"{self.key}: canonical domain repeated in cross_listed")

    @property
    def domains(self) -> tuple:
        """Canonical domain first, then cross-listings."""
        return (self.domain,) + tuple(self.cross_listed)


class Catalog(Sequence):
    """Ordered, key-unique collection of indicator definitions."""

    def __init__(self, defs: Iterable[IndicatorDef]):
        self._defs = tuple(defs)
        self._by_key: dict = {}
        for d in self._defs:
            if d.key in self._by_key:
                raise DuplicateKey(f"indicator key {d.key!r} defined twice")
            self._by_key[d.key] = d

    def __len__(self) -> int:
        return len(self._defs)

    def __iter__(self) -> Iterator[IndicatorDef]:
        return iter(self._defs)

    def __getitem__(self, i):
        return self._defs[i]

    def __contains__(self, key) -> bool:
        if isinstance(key, IndicatorDef):
            return key in self._defs
        return key in self._by_key

    def get(self, key: str) -> IndicatorDef:
        try:
            return self._by_key[key]
        except KeyError:
            raise UnknownIndicator(f"no indicator with key {key!r}") from None

    def keys(self) -> list:
        return [d.key for d in self._defs]


def register(catalog: Catalog, definition: IndicatorDef) -> Catalog:
    """Extended copy of the catalog; the original is unchanged."""
    if definition.key in catalog:
        raise DuplicateKey(f"indicator key {definition.key!r} already registered")
    return Catalog(list(catalog) + [definition])


def filter_by_domains(catalog: Catalog, domains) -> list:
    """Definitions whose canonical or cross-listed domain is selected, by key."""
    codes = {d.code if isinstance(d, SdohDomain) else DomainCode(d) for d in domains}
    out = [d for d in catalog if any(dom.code in codes for dom in d.domains)]
    return sorted(out, key=lambda d: d.key)


def _d(code: DomainCode) -> SdohDomain:
    return DOMAIN_BY_CODE[code]


def builtin_catalog() -> Catalog:
    """The built-in taxonomy: every leaf indicator assigned to its canonical
    (first-listed) domain, with repeats recorded as cross-listings, plus the
    `population_total` denominator used for per-capita rates."""
    A = DomainCode.ACCESS_RESOURCES
    E = DomainCode.EXPOSURE
    P = DomainCode.POLICY_ADHERENCE
    C = DomainCode.COMMUNITY
    W = DomainCode.AWARENESS
    B = DomainCode.BUILT_ENVIRONMENT
    R, PR, N = Direction.RISK, Direction.PROTECTIVE, Direction.NEUTRAL

    rows = [
        # (key, name, domain, unit, direction, source, cross-listings)
        ("dist_healthcare_facility", "Distance to the closest health care facility",
         A, "km", R, "PolicyMap", ()),
        ("transportation_burden_index", "Transportation burden index",
         A, "index", R, "PolicyMap", ()),
        ("dist_food_market", "Distance to the nearest food market",
         A, "km", R, "USDA food access atlas", (B,)),
        ("pct_no_vehicle", "Proportion of people without access to a vehicle",
         A, "percent", R, "ACS 2018", (E,)),
        ("pct_public_transit", "Proportion of people relying on public transportation",
         E, "percent", R, "ACS 2018", ()),
        ("pct_carpool", "Proportion of people relying on carpooling",
         E, "percent", R, "ACS 2018", ()),
        ("pct_under_18", "Proportion of dependents under 18 years of age",
         E, "percent", R, "ACS 2018", ()),
        ("pct_over_65", "Proportion of elderly over 65 years of age",
         E, "percent", R, "ACS 2018", ()),
        ("pct_single_parent", "Proportion of single-parent households",
         E, "percent", R, "ACS 2018", (P,)),
        ("pct_households_dependents",
         "Proportion of households with dependents (children and elderly)",
         E, "percent", R, "ACS 2018", ()),
        ("time_use_by_age", "Time use by age group",
         E, "hours per day", N, "time-use survey", ()),
        ("pct_healthcare_workers", "Proportion of health care workers",
         E, "percent", R, "ACS 2018", (P,)),
        ("pct_frontline_workers", "Proportion of frontline workers",
         E, "percent", R, "ACS 2018", (P,)),
        ("pct_single_earner", "Proportion of single-earner households",
         E, "percent", R, "ACS 2018", ()),
        ("housing_units", "Count of housing units",
         P, "count", R, "ACS 2018", ()),
        ("avg_household_size", "Average household size",
         P, "persons", R, "ACS 2018", ()),
        ("pct_multifamily", "Proportion of multifamily residences",
         P, "percent", R, "ACS 2018", ()),
        ("pct_ethnic_minority", "Proportion of ethnic minorities",
         C, "percent", R, "ACS 2018", ()),
        ("pct_racial_minority", "Proportion of racial minorities",
         C, "percent", R, "ACS 2018", ()),
        ("pct_first_gen_immigrants", "Proportion of first-generation immigrants",
         C, "percent", R, "ACS 2018", (W,)),
        ("social_deprivation_index", "Social deprivation index",
         C, "index", R, "PolicyMap", (B,)),
        ("blight_rating", "Blight rating",
         C, "index", R, "parcel survey", (B,)),
        ("pct_poverty", "Proportion of people under the federal poverty line",
         C, "percent", R, "ACS 2018", ()),
        ("pct_unemployed", "Proportion of unemployment",
         C, "percent", R, "ACS 2018", ()),
        ("pct_incarcerated",
         "Proportion of current or previously incarcerated people",
         C, "percent", R, "justice records", ()),
        ("crime_rate", "Crime rate",
         C, "events per 1000", R, "police records", (B,)),
        ("dist_parks", "Distance to parks and community centers",
         C, "km", R, "municipal GIS", (B,)),
        ("dist_police_fire", "Distance to police or fire stations",
         C, "km", R, "municipal GIS", ()),
        ("pct_green_space", "Proportion of green space coverage",
         C, "percent", PR, "municipal GIS", (B,)),
        ("air_quality_index", "Air quality index",
         C, "index", R, "PolicyMap", ()),
        ("pct_internet_access",
         "Proportion of people with access to Wi-Fi or the internet",
         W, "percent", PR, "ACS 2018", ()),
        ("pct_smartphone", "Proportion of cellphone or smartphone users",
         W, "percent", PR, "ACS 2018", ()),
        ("pct_literate", "Proportion of literate people",
         W, "percent", PR, "ACS 2018", ()),
        ("pct_hs_diploma", "Proportion of people with a high school diploma",
         W, "percent", PR, "ACS 2018", ()),
        ("pct_associate_degree",
         "Proportion of people with a 2-year college diploma",
         W, "percent", PR, "ACS 2018", ()),
        ("pct_bachelor_degree",
         "Proportion of people with a baccalaureate diploma",
         W, "percent", PR, "ACS 2018", ()),
        ("parcel_characteristics", "Parcel and building characteristics",
         B, "index", N, "parcel survey", ()),
        ("pct_backyards", "Proportion of residential addresses with backyards",
         B, "percent", PR, "parcel survey", ()),
        ("pct_smokers", "Proportion of smokers",
         B, "percent", R, "PolicyMap", ()),
        ("population_total", "Total population",
         C, "count", N, "ACS 2018", ()),
    ]
    return Catalog(
        IndicatorDef(
            key=key,
            name=name,
            domain=_d(dom),
            unit_of_measure=unit,
            direction=direction,
            source=source,
            cross_listed=tuple(_d(c) for c in cross),
        )
        for key, name, dom, unit, direction, source, cross in rows
    )


CATALOG_CSV_HEADER = [
    "indicator_key",
    "name",
    "domain_code",
    "unit_of_measure",
    "direction",
    "source",
]


def dump_catalog_csv(catalog: Catalog) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CATALOG_CSV_HEADER)
    for d in catalog:
        writer.writerow(
            [d.key, d.name, d.domain.code.value, d.unit_of_measure,
             d.direction.value, d.source]
        )
    return buf.getvalue()


def load_catalog_csv(text: str) -> Catalog:
    """Parse the catalog CSV.

    Cross-listings are not part of the CSV schema; they are re-attached from
    the built-in taxonomy when both key and canonical domain match, so a CSV
    round trip of the built-in catalog is lossless.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaMismatch("catalog CSV is empty") from None
    if header != CATALOG_CSV_HEADER:
        raise SchemaMismatch(
            f"catalog CSV header {header!r} != {CATALOG_CSV_HEADER!r}"
        )
    builtin = {(d.key, d.domain.code): d for d in builtin_catalog()}
    defs = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 6:
            raise SchemaMismatch(f"catalog CSV line {lineno}: expected 6 fields")
        key, name, domain_code, unit, direction, source = row
        try:
            dom = _d(DomainCode(domain_code))
        except ValueError:
            raise SchemaMismatch(
                f"catalog CSV line {lineno}: unknown domain_code {domain_code!r}"
            ) from None
        try:
            direc = Direction(direction)
        except ValueError:
            raise SchemaMismatch(
                f"catalog CSV line {lineno}: unknown direction {direction!r}"
            ) from None
        base = builtin.get((key, dom.code))
        cross = base.cross_listed if base is not None else ()
        defs.append(
            IndicatorDef(
                key=key, name=name, domain=dom, unit_of_measure=unit,
                direction=direc, source=source, cross_listed=cross,
            )
        )
    return Catalog(defs)


def catalog_from_document(doc: dict) -> Catalog:
    """Inverse of catalog_to_document."""
    defs = []
    for row in doc["indicators"]:
        defs.append(
            IndicatorDef(
                key=row["key"],
                name=row["name"],
                domain=_d(DomainCode(row["domain_code"])),
                unit_of_measure=row["unit_of_measure"],
                direction=Direction(row["direction"]),
                source=row["source"],
                cross_listed=tuple(
                    _d(DomainCode(c)) for c in row.get("cross_listed", [])
                ),
            )
        )
    return Catalog(defs)


def catalog_to_document(catalog: Catalog) -> dict:
    """Plain-data form used by the metadata endpoint and stored results."""
    return {
        "domains": [
            {"code": d.code.value, "label": d.label} for d in DOMAINS
        ],
        "indicators": [
            {
                "key": d.key,
                "name": d.name,
                "domain_code": d.domain.code.value,
                "unit_of_measure": d.unit_of_measure,
                "direction": d.direction.value,
                "source": d.source,
                "cross_listed": [c.code.value for c in d.cross_listed],
            }
            for d in catalog
        ],
    }

"""Bundled application profiles for the simulator.

A profile packages a schema, its transaction templates, the computed
classification, sized initial data, and a closed-loop client script.
Client scripts are infinite deterministic generators of (transaction,
arguments) pairs; the driver decides how many to pull.

Identifiers that route a client's own activity (carts, customers) are
chosen so they hash to the client's server, which is what keeps that
traffic local; item and order tables are shared and contended.
"""
from __future__ import annotations

import importlib.resources as resources
import itertools
import random
from typing import Dict, Iterator, List, Optional, Tuple, Union

from .minisql import parse_schema, parse_templates
from .partitioner import partition_templates, stable_hash
from .store import Database

Value = Union[int, str]
ClientScript = Iterator[Tuple[str, Dict[str, Value]]]


def load_data(name: str) -> str:
    return (resources.files("opring") / "data" / name).read_text()


def _homed_seq(prefix: str, home: int, n: int) -> Iterator[str]:
    """Distinct ids hashing to `home`, in a fixed order."""
    for k in itertools.count():
        v = f"{prefix}{k}"
        if stable_hash(v) % n == home:
            yield v


def _pool(prefix: str, count: int) -> List[str]:
    return [f"{prefix}{k}" for k in range(count)]


def _by_home(ids: List[str], n: int) -> Dict[int, List[str]]:
    out: Dict[int, List[str]] = {h: [] for h in range(n)}
    for v in ids:
        out[stable_hash(v) % n].append(v)
    return out


def _pick_weighted(rng: random.Random, mix_items) -> str:
    x = rng.random() * sum(w for _, w in mix_items)
    acc = 0.0
    for name, w in mix_items:
        acc += w
        if x < acc:
            return name
    return mix_items[-1][0]


class AppProfile:
    """Parsed application plus its classification, shared readonly."""

    schema_file: str = ""
    templates_file: str = ""

    def __init__(self):
        self.schema_text = load_data(self.schema_file)
        self.templates_text = load_data(self.templates_file)
        self.schema = parse_schema(self.schema_text)
        self.templates = parse_templates(self.templates_text, self.schema)
        self.report = partition_templates(self.templates)
        self.view = self.report.view()

    @property
    def name(self) -> str:
        raise NotImplementedError

    def initial_db(self, n_servers: int, sizing: Dict[str, int]) -> Database:
        raise NotImplementedError

    def make_client(
        self,
        client_id: int,
        home: int,
        n: int,
        rng: random.Random,
        mix: Dict[str, float],
        sizing: Dict[str, int],
        local_ratio: Optional[float] = None,
    ) -> ClientScript:
        raise NotImplementedError


class MinistoreProfile(AppProfile):
    """Small cart-and-items store: three transactions, one of them
    coordinated because it writes shared stock."""

    schema_file = "ministore_schema.sql"
    templates_file = "ministore_templates.sql"

    @property
    def name(self) -> str:
        return "ministore"

    def initial_db(self, n_servers: int, sizing: Dict[str, int]) -> Database:
        items = sizing.get("items", 64)
        db = Database.from_schema(self.schema)
        for i in range(1, items + 1):
            db.tables["ITEMS"].put({"ID": i, "STOCK": 100})
        return db

    def _pick_item(self, rng, items, hot, exclude) -> Optional[int]:
        for _ in range(8):
            item = (
                rng.randrange(1, hot + 1)
                if hot and rng.random() < 0.5
                else rng.randrange(1, items + 1)
            )
            if item not in exclude:
                return item
        for item in range(1, items + 1):
            if item not in exclude:
                return item
        return None

    def make_client(self, client_id, home, n, rng, mix, sizing, local_ratio=None):
        items = sizing.get("items", 64)
        hot = sizing.get("hot_items", 8)
        max_lines = sizing.get("max_cart_lines", 4)
        carts = _homed_seq(f"c{client_id}x", home, n)
        mix_items = sorted(mix.items())
        cart: Optional[str] = None
        lines: List[int] = []
        while True:
            name = _pick_weighted(rng, mix_items)
            if name == "createCart" or cart is None:
                cart = next(carts)
                lines = []
                yield "createCart", {"cart": cart, "owner": client_id}
                continue
            if name == "addToCart" and len(lines) < max_lines:
                item = self._pick_item(rng, items, hot, lines)
                if item is not None:
                    lines.append(item)
                    yield "addToCart", {
                        "cart": cart,
                        "item": item,
                        "qty": rng.randrange(1, 5),
                    }
                    continue
            if not lines:
                item = self._pick_item(rng, items, hot, lines)
                lines.append(item)
                yield "addToCart", {"cart": cart, "item": item, "qty": 1}
                continue
            yield "order", {
                "cart": cart,
                "item": lines[0],
                "stock": rng.randrange(10_000),
            }
            cart, lines = None, []


class SyntheticProfile(AppProfile):
    """Two knobs and nothing else: a keyed local write and a keyed
    shared write, mixed by a single local/global ratio."""

    schema_file = "synthetic_schema.sql"
    templates_file = "synthetic_templates.sql"

    @property
    def name(self) -> str:
        return "synthetic"

    def _local_pool(self, n: int, sizing) -> List[str]:
        per = sizing.get("local_rows_per_server", 32)
        return _pool("L", per * n * 2)

    def initial_db(self, n_servers: int, sizing: Dict[str, int]) -> Database:
        db = Database.from_schema(self.schema)
        for v in self._local_pool(n_servers, sizing):
            db.tables["LOCAL_ROWS"].put({"ID": v, "VAL": 0})
        for v in _pool("G", sizing.get("shared_rows", 16)):
            db.tables["SHARED_ROWS"].put({"ID": v, "VAL": 0})
        return db

    def make_client(self, client_id, home, n, rng, mix, sizing, local_ratio=None):
        mine = _by_home(self._local_pool(n, sizing), n)[home]
        if not mine:
            mine = [next(_homed_seq(f"L{client_id}y", home, n))]
        shared = _pool("G", sizing.get("shared_rows", 16))
        if local_ratio is None:
            lw = mix.get("localop", 0.0)
            gw = mix.get("globalop", 0.0)
            local_ratio = lw / (lw + gw) if lw + gw else 1.0
        while True:
            if rng.random() < local_ratio:
                yield "localop", {
                    "key": rng.choice(mine),
                    "val": rng.randrange(1_000_000),
                }
            else:
                yield "globalop", {
                    "key": rng.choice(shared),
                    "val": rng.randrange(1_000_000),
                }


class BookstoreProfile(AppProfile):
    """Twenty-transaction bookstore in the classic web-shop shape."""

    schema_file = "tpcw_schema.sql"
    templates_file = "tpcw_templates.sql"

    @property
    def name(self) -> str:
        return "tpcw"

    def initial_db(self, n_servers: int, sizing: Dict[str, int]) -> Database:
        items = sizing.get("items", 96)
        authors = sizing.get("authors", 24)
        countries = sizing.get("countries", 12)
        customers = sizing.get("customers", 48)
        addresses = sizing.get("addresses", 48)
        db = Database.from_schema(self.schema)
        for i in range(1, items + 1):
            db.tables["ITEMS"].put(
                {
                    "ID": i,
                    "TITLE": f"t{i}",
                    "AUTHOR_ID": (i - 1) % authors + 1,
                    "COST": 10 + i % 50,
                    "STOCK": 100,
                    "PROMO": 0,
                    "RELATED_ID": i % items + 1,
                    "THUMBNAIL": i,
                }
            )
        for j in range(1, authors + 1):
            db.tables["AUTHORS"].put({"ID": j, "NAME": f"a{j}", "BIO": j})
        for k in range(1, countries + 1):
            db.tables["COUNTRIES"].put({"ID": k, "NAME": f"n{k}", "CURRENCY": k})
        for v in _pool("u", customers):
            db.tables["CUSTOMERS"].put(
                {"ID": v, "NAME": v, "PASSWD": 0, "BALANCE": 100, "VISITS": 0}
            )
        for idx, v in enumerate(_pool("ad", addresses)):
            db.tables["ADDRESSES"].put(
                {
                    "ID": v,
                    "STREET": idx,
                    "CITY": idx,
                    "COUNTRY_ID": idx % countries + 1,
                }
            )
        return db

    def make_client(self, client_id, home, n, rng, mix, sizing, local_ratio=None):
        items = sizing.get("items", 96)
        authors = sizing.get("authors", 24)
        countries = sizing.get("countries", 12)
        customers = sizing.get("customers", 48)
        addresses = sizing.get("addresses", 48)
        max_lines = sizing.get("max_cart_lines", 4)

        mine_cust = _by_home(_pool("u", customers), n)[home]
        cust = (
            rng.choice(mine_cust)
            if mine_cust
            else next(_homed_seq(f"u{client_id}y", home, n))
        )
        mine_addr = _by_home(_pool("ad", addresses), n)[home]
        addr = (
            rng.choice(mine_addr)
            if mine_addr
            else next(_homed_seq(f"ad{client_id}y", home, n))
        )
        carts = _homed_seq(f"sc{client_id}x", home, n)
        oids = (f"o{client_id}x{k}" for k in itertools.count())

        mix_items = sorted(mix.items())
        cart: Optional[str] = None
        last_cart: Optional[str] = None
        lines: Dict[int, int] = {}
        step = 0
        while True:
            step += 1
            name = _pick_weighted(rng, mix_items)
            if name in ("addToCart", "updateCart", "doBuyConfirm") and cart is None:
                name = "createShoppingCart"
            if name in ("updateCart", "doBuyConfirm") and not lines:
                name = "addToCart"
            if name == "addToCart" and cart is not None and len(lines) >= max_lines:
                name = "doBuyConfirm"

            if name == "createShoppingCart":
                cart = next(carts)
                last_cart = cart
                lines = {}
                yield name, {"cart": cart, "cust": cust, "created": step}
            elif name == "addToCart":
                item = rng.randrange(1, items + 1)
                while item in lines:
                    item = item % items + 1
                qty = rng.randrange(1, 6)
                lines[item] = qty
                yield name, {"cart": cart, "item": item, "qty": qty}
            elif name == "updateCart":
                item = rng.choice(sorted(lines))
                qty = rng.randrange(1, 6)
                lines[item] = qty
                yield name, {"cart": cart, "item": item, "qty": qty}
            elif name == "doBuyConfirm":
                item = min(lines)
                yield name, {
                    "cart": cart,
                    "cust": cust,
                    "oid": next(oids),
                    "item": item,
                    "qty": lines[item],
                    "stock": rng.randrange(10, 1000),
                    "total": rng.randrange(1, 500),
                }
                cart, lines = None, {}
            elif name == "getCart":
                target = cart or last_cart
                if target is None:
                    target = next(carts)
                    cart = target
                    last_cart = target
                    lines = {}
                    yield "createShoppingCart", {
                        "cart": target,
                        "cust": cust,
                        "created": step,
                    }
                    continue
                yield name, {"cart": target}
            elif name == "refreshSession":
                yield name, {"cust": cust, "visits": step}
            elif name == "changePassword":
                yield name, {"cust": cust, "passwd": rng.randrange(1_000_000)}
            elif name == "getCustomerProfile":
                yield name, {"cust": cust}
            elif name == "getMyOrders":
                yield name, {"cust": cust}
            elif name in ("getBook", "getBookDetail", "getRelated"):
                yield name, {"item": rng.randrange(1, items + 1)}
            elif name == "getAuthor":
                yield name, {"author": rng.randrange(1, authors + 1)}
            elif name == "searchByAuthor":
                yield name, {"name": f"a{rng.randrange(1, authors + 1)}"}
            elif name == "listCountries":
                yield name, {}
            elif name == "updateAddress":
                yield name, {
                    "addr": addr,
                    "street": rng.randrange(1_000),
                    "city": rng.randrange(1_000),
                    "country": rng.randrange(1, countries + 1),
                }
            elif name == "restockItems":
                yield name, {"level": rng.randrange(50, 200)}
            elif name == "adminPromoUpdate":
                yield name, {"promo": rng.randrange(100)}
            elif name == "adminRepriceAll":
                yield name, {"price": rng.randrange(5, 100)}
            elif name == "archiveOrders":
                yield name, {"status": rng.randrange(1, 5)}
            else:
                raise ValueError(f"{self.name}: no script for {name!r}")


_PROFILES = {
    "ministore": MinistoreProfile,
    "synthetic": SyntheticProfile,
    "tpcw": BookstoreProfile,
}
_cache: Dict[str, AppProfile] = {}


def get_profile(name: str) -> AppProfile:
    """Profiles are cached: the classification pass runs once."""
    if name not in _PROFILES:
        known = ", ".join(sorted(_PROFILES))
        raise ValueError(f"unknown workload generator {name!r} (known: {known})")
    if name not in _cache:
        _cache[name] = _PROFILES[name]()
    return _cache[name]

#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

# Libs
import rlp
from rlp.sedes import CountableList, binary, boolean, text

# Custom
from . import crypto
from .errors import SchemaError
from .general import ComponentLogger
from .rbac import AttributeCatalog, EffectiveRights

##################
# Configurations #
##################

_logger = ComponentLogger(logger_name="datastore").initialise()

Value = Union[str, int]

INT_KIND = "int"
STR_KIND = "str"
INT_WIDTH = 8       # values are strings or signed 64-bit integers

#######################
# Serialisable Values #
#######################

class AttributeValue(rlp.Serializable):
    """ Tagged attribute value, so that 7 and "7" never collide on chain """
    fields = [
        ('kind', text),
        ('raw', binary)
    ]

    @classmethod
    def wrap(cls, value: Value) -> "AttributeValue":
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise SchemaError(f"Unsupported attribute value {value!r}")
        if isinstance(value, str):
            return cls(kind=STR_KIND, raw=value.encode("utf-8"))
        try:
            return cls(kind=INT_KIND, raw=value.to_bytes(INT_WIDTH, "big", signed=True))
        except OverflowError as error:
            raise SchemaError(f"Integer {value} does not fit in 64 bits") from error

    def unwrap(self) -> Value:
        if self.kind == INT_KIND and len(self.raw) == INT_WIDTH:
            return int.from_bytes(self.raw, "big", signed=True)
        if self.kind == STR_KIND:
            try:
                return self.raw.decode("utf-8")
            except UnicodeDecodeError as error:
                raise SchemaError("String attribute is not valid UTF-8") from error
        raise SchemaError(f"Malformed attribute value of kind '{self.kind}'")


class AttributeEntry(rlp.Serializable):
    fields = [
        ('name', text),
        ('value', AttributeValue)
    ]


class RecordBody(rlp.Serializable):
    """ Payload of an owner-signed data record transaction """
    fields = [
        ('record_id', text),
        ('attributes', CountableList(AttributeEntry))
    ]


class RecordView(rlp.Serializable):
    """ A record with every attribute the caller may not see removed """
    fields = [
        ('record_id', text),
        ('attributes', CountableList(AttributeEntry))
    ]

    def as_mapping(self) -> Dict[str, Value]:
        return decode_attributes(self.attributes)


class QueryResult(rlp.Serializable):
    """ Masked result set, signed by the BDM that produced it

    Attributes:
        records (list(RecordView)): Matching records ordered by record_id
        mask (list(bool)): The effective rights mask applied
        signer (str): ActorId of the signing BDM, "" while unsigned
        signature (bytes): Signature over the result with an empty
            signer & signature, b"" while unsigned
    """
    fields = [
        ('records', CountableList(RecordView)),
        ('mask', CountableList(boolean)),
        ('signer', text),
        ('signature', binary)
    ]

    @property
    def signed(self) -> bool:
        return bool(self.signature)

    def rows(self) -> List[Dict[str, Value]]:
        return [{'record_id': view.record_id, **view.as_mapping()} for view in self.records]


def encode_attributes(attributes: Mapping[str, Value]) -> List[AttributeEntry]:
    return [
        AttributeEntry(name=name, value=AttributeValue.wrap(value))
        for name, value in sorted(attributes.items())
    ]


def decode_attributes(entries: Iterable[AttributeEntry]) -> Dict[str, Value]:
    return {entry.name: entry.value.unwrap() for entry in entries}

################
# Domain Types #
################

@dataclass(frozen=True)
class DataRecord:
    """ An attribute-structured transaction record held on chain

    Attributes:
        record_id (str): Unique record identifier
        attributes (dict(str, str|int)): Attribute name -> value
        owner (str): ActorId of the ingesting data owner
        created_at_height (int): Height of the block carrying the record,
            -1 until the record is on chain
    """
    record_id: str
    attributes: Mapping[str, Value]
    owner: str = ""
    created_at_height: int = -1

    def __post_init__(self):
        if not self.record_id:
            raise SchemaError("A record needs a non-empty record_id")
        object.__setattr__(self, 'attributes', dict(self.attributes))
        for value in self.attributes.values():
            AttributeValue.wrap(value)

    def body(self) -> RecordBody:
        return RecordBody(
            record_id=self.record_id,
            attributes=encode_attributes(self.attributes)
        )

    @classmethod
    def from_body(cls, body: RecordBody, owner: str = "", height: int = -1) -> "DataRecord":
        return cls(
            record_id=body.record_id,
            attributes=decode_attributes(body.attributes),
            owner=owner,
            created_at_height=height
        )


@dataclass
class RecordIndex:
    """ In-memory hash index over the chain's data records, rebuilt by
        folding the chain; never a source of truth on its own
    """
    records: Dict[str, DataRecord] = field(default_factory=dict)
    postings: Dict[Tuple[str, str, Value], Set[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self.records

    def get(self, record_id: str) -> Optional[DataRecord]:
        return self.records.get(record_id)

    def add(self, record: DataRecord) -> None:
        if record.record_id in self.records:
            raise SchemaError(f"Duplicate record_id '{record.record_id}'")
        self.records[record.record_id] = record
        for name, value in record.attributes.items():
            self.postings.setdefault(_posting_key(name, value), set()).add(record.record_id)


def _posting_key(name: str, value: Value) -> Tuple[str, str, Value]:
    # The type tag keeps 7 and "7" apart
    return (name, type(value).__name__, value)

##################
# Core Functions #
##################

def check_schema(record: DataRecord, catalog: AttributeCatalog) -> None:
    """ Raises SchemaError if the record names an uncatalogued attribute """
    unknown = sorted(name for name in record.attributes if name not in catalog)
    if unknown:
        raise SchemaError(f"Record '{record.record_id}' has uncatalogued attributes {unknown}")


def evaluate_query(index: RecordIndex, params: Sequence[Tuple[str, Value]]) -> List[str]:
    """ Conjunctive exact-match evaluation: a record matches iff every
        (att, val) pair equals the record's value for att

    Args:
        index (RecordIndex): Records to search
        params (list(tuple(str, str|int))): Query parameters
    Returns:
        Matching record IDs in ascending order (list(str))
    """
    if not params:
        return sorted(index.records)

    matched = None
    for name, value in params:
        hits = index.postings.get(_posting_key(name, value), set())
        matched = set(hits) if matched is None else matched & hits
        if not matched:
            return []
    return sorted(matched)


def mask_result(
    records: Iterable[DataRecord],
    rights: EffectiveRights,
    catalog: AttributeCatalog
) -> List[RecordView]:
    """ Keeps exactly the attributes whose mask bit is true, in catalog order """
    if len(rights.mask) != len(catalog):
        raise SchemaError(
            f"Mask has {len(rights.mask)} bits, catalog has {len(catalog)} attributes"
        )
    visible = rights.visible(catalog)
    views = []
    for record in records:
        kept = [name for name in visible if name in record.attributes]
        views.append(
            RecordView(
                record_id=record.record_id,
                attributes=[
                    AttributeEntry(name=name, value=AttributeValue.wrap(record.attributes[name]))
                    for name in kept
                ]
            )
        )
    return views


def run_query(
    index: RecordIndex,
    catalog: AttributeCatalog,
    params: Sequence[Tuple[str, Value]],
    rights: EffectiveRights
) -> QueryResult:
    """ Matches first, then masks, and returns the unsigned result """
    record_ids = evaluate_query(index, params)
    views = mask_result((index.records[record_id] for record_id in record_ids), rights, catalog)
    return QueryResult(records=views, mask=list(rights.mask), signer="", signature=b"")


def _result_message(result: QueryResult) -> bytes:
    return rlp.encode(result.copy(signer="", signature=b""))


def sign_result(result: QueryResult, private_key: bytes) -> QueryResult:
    signature = crypto.sign(_result_message(result), private_key)
    return result.copy(signer=signature.signer, signature=signature.data)


def verify_result(result: QueryResult, public_key: bytes) -> bool:
    if not result.signed or result.signer != crypto.actor_id_of(public_key):
        return False
    return crypto.verify(_result_message(result), result.signature, public_key)


def load_records(path: str) -> List[DataRecord]:
    """ Reads a JSON-lines ingestion file, one
        {"record_id": .., "attributes": {..}} object per line
    """
    records = []
    with open(path, "r", encoding="utf-8") as record_file:
        for line_number, line in enumerate(record_file, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                records.append(
                    DataRecord(record_id=str(entry['record_id']), attributes=entry['attributes'])
                )
            except (ValueError, KeyError, TypeError) as error:
                raise SchemaError(f"{path}:{line_number}: unreadable record ({error})") from error
    return records

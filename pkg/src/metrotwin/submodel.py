"""Asset-administration-shell style submodel export.

A submodel is a flat document of identified properties describing one
stream: asset identity, current calibration summary, the latest
enriched value and a reference to the persisted time series. The
schema is an explicit proposal, versioned in the document header;
field order is fixed so exports are deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import UnknownStream
from .persistence import read_stream_csv
from .timebase import ns_to_rfc3339

SCHEMA_VERSION = "metrotwin-submodel/1"


@dataclass(frozen=True)
class SubmodelElement:
    id_short: str
    semantic: str
    value: object  # number or string
    unit: str = ""
    uncertainty: float = None

    def __post_init__(self):
        if isinstance(self.value, (int, float)) and not isinstance(self.value, bool):
            if self.uncertainty is None:
                raise ValueError(
                    f"numeric element {self.id_short!r} needs an uncertainty"
                )
            if not self.unit:
                raise ValueError(f"numeric element {self.id_short!r} needs a unit")

    def to_json_dict(self) -> dict:
        doc = {
            "idShort": self.id_short,
            "semantic": self.semantic,
            "value": self.value,
        }
        if self.unit:
            doc["unit"] = self.unit
        if self.uncertainty is not None:
            doc["uncertainty"] = self.uncertainty
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SubmodelElement":
        return cls(
            id_short=doc["idShort"],
            semantic=doc["semantic"],
            value=doc["value"],
            unit=doc.get("unit", ""),
            uncertainty=doc.get("uncertainty"),
        )


@dataclass(frozen=True)
class Submodel:
    asset_id: str
    submodel_id: str
    elements: tuple

    def __post_init__(self):
        ids = [e.id_short for e in self.elements]
        if len(ids) != len(set(ids)):
            raise ValueError("idShort values must be unique within a submodel")

    def to_json_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "assetId": self.asset_id,
            "submodelId": self.submodel_id,
            "elements": [e.to_json_dict() for e in self.elements],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Submodel":
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported submodel schema {doc.get('schema')!r}")
        return cls(
            asset_id=doc["assetId"],
            submodel_id=doc["submodelId"],
            elements=tuple(
                SubmodelElement.from_json_dict(e) for e in doc["elements"]
            ),
        )

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def read_json(cls, path) -> "Submodel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def export_submodel(run_dir, stream_id: str) -> Submodel:
    """Build the submodel document for one stream of a completed run."""
    run_dir = Path(run_dir)
    with open(run_dir / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    stream_files = manifest.get("streams", {})
    if stream_id not in stream_files:
        raise UnknownStream(stream_id)

    rel = stream_files[stream_id]
    measurements = read_stream_csv(run_dir / rel)

    elements = [
        SubmodelElement("scenario", "scenario-name", manifest["scenario"]),
        SubmodelElement("stream_ref", "time-series-csv", rel),
    ]

    sensors = manifest.get("sensors", {})
    if stream_id in sensors:
        cert = sensors[stream_id]["final_certificate"]
        elements += [
            SubmodelElement("provenance", "stream-provenance", "physical"),
            SubmodelElement("node", "edge-node-id", sensors[stream_id]["node"]),
            SubmodelElement("certificate_id", "calibration-certificate-id",
                            cert["certificate_id"]),
            SubmodelElement("certificate_provenance", "calibration-provenance",
                            cert["provenance"]),
            SubmodelElement("gain", "calibration-gain", cert["gain"],
                            unit="1", uncertainty=cert["u_gain"]),
            SubmodelElement("offset", "calibration-offset", cert["offset"],
                            unit=cert["unit"], uncertainty=cert["u_offset"]),
        ]
    else:
        rule = manifest.get("virtual_streams", {}).get(stream_id, {}).get("rule")
        elements += [
            SubmodelElement("provenance", "stream-provenance", "virtual"),
            SubmodelElement("rule", "virtual-sensor-rule",
                            json.dumps(rule, sort_keys=True)),
        ]

    if measurements:
        latest = measurements[-1]
        elements += [
            SubmodelElement("latest_value", "latest-measured-value", latest.value,
                            unit=latest.unit.symbol, uncertainty=latest.u_c),
            SubmodelElement("latest_u_random", "latest-random-uncertainty",
                            latest.u_random, unit=latest.unit.symbol, uncertainty=0.0),
            SubmodelElement("latest_u_systematic", "latest-systematic-uncertainty",
                            latest.u_systematic, unit=latest.unit.symbol,
                            uncertainty=0.0),
            SubmodelElement("latest_quantity_kind", "quantity-kind",
                            latest.quantity_kind.label),
            SubmodelElement("latest_timestamp_tai_ns", "timestamp-tai-ns",
                            latest.timestamp, unit="ns", uncertainty=0.0),
            SubmodelElement("latest_timestamp_rfc3339", "timestamp-rfc3339",
                            ns_to_rfc3339(latest.timestamp)),
        ]

    return Submodel(
        asset_id=f"{manifest['scenario']}/{stream_id}",
        submodel_id=f"{stream_id}-measurements",
        elements=tuple(elements),
    )
